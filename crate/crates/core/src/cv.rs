//! Leave-one-subject-out cross-validation for the smoothing bandwidth.
//!
//! Each held-out subject's raw cross-products `v_{r,ik}(x_j, x_l)` at lags
//! `|lag| < delta0` are predicted from the remaining subjects, either by the
//! symmetrized covariance estimator (CV1) or by the separable product
//! `G^ * rho^` (CV2). Terms whose lag the remaining subjects cannot support
//! are skipped and counted.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accum::CompensatedSum;
use crate::data::{center_residuals, Dataset};
use crate::error::{Error, Result};
use crate::estimator::{CovarianceEstimate, DEGENERATE_G_RTOL};
use crate::kernel::{BandwidthPolicy, KernelFamily, KernelSpec};

/// Skip fraction above which a candidate is flagged unreliable.
pub const MAX_SKIP_FRACTION: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    /// Unstructured prediction by `V~`.
    Cv1,
    /// Separable prediction by `G^ * rho^`.
    Cv2,
}

impl std::str::FromStr for Criterion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cv1" => Ok(Criterion::Cv1),
            "cv2" => Ok(Criterion::Cv2),
            other => Err(Error::invalid(format!("unknown criterion `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "snake_case")]
pub enum Candidates {
    Global(Vec<f64>),
    /// Cartesian product of near and far bandwidths, switching at `split`.
    TwoRegime {
        near: Vec<f64>,
        far: Vec<f64>,
        split: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    /// Only pairs with `|lag| < delta_cap` enter the criterion.
    pub delta_cap: f64,
    pub candidates: Candidates,
    pub criterion: Criterion,
}

impl CvConfig {
    pub fn global(delta_cap: f64, candidates: Vec<f64>, criterion: Criterion) -> Self {
        Self {
            delta_cap,
            candidates: Candidates::Global(candidates),
            criterion,
        }
    }

    /// 20 log-spaced candidates on `[delta_cap / 50, delta_cap / 2]`.
    pub fn with_default_grid(delta_cap: f64, criterion: Criterion) -> Self {
        Self::global(delta_cap, default_candidates(delta_cap), criterion)
    }

    fn validate(&self) -> Result<()> {
        if !(self.delta_cap.is_finite() && self.delta_cap > 0.0) {
            return Err(Error::invalid("delta0 must be finite and positive"));
        }
        let check = |v: &[f64]| -> Result<()> {
            if v.is_empty() {
                return Err(Error::invalid("candidate bandwidth list is empty"));
            }
            if v.iter().any(|h| !(h.is_finite() && *h > 0.0)) {
                return Err(Error::invalid("candidate bandwidths must be finite and positive"));
            }
            Ok(())
        };
        match &self.candidates {
            Candidates::Global(v) => check(v),
            Candidates::TwoRegime { near, far, split } => {
                check(near)?;
                check(far)?;
                if !(split.is_finite() && *split > 0.0) {
                    return Err(Error::invalid("split must be finite and positive"));
                }
                Ok(())
            }
        }
    }

    fn policies(&self) -> Vec<BandwidthPolicy> {
        let sorted = |v: &[f64]| {
            let mut v = v.to_vec();
            v.sort_by(f64::total_cmp);
            v.dedup();
            v
        };
        match &self.candidates {
            Candidates::Global(v) => sorted(v)
                .into_iter()
                .map(|h| BandwidthPolicy::Global { h })
                .collect(),
            Candidates::TwoRegime { near, far, split } => {
                let far = sorted(far);
                sorted(near)
                    .into_iter()
                    .flat_map(|h_near| {
                        far.iter().map(move |&h_far| BandwidthPolicy::TwoRegime {
                            h_near,
                            h_far,
                            split: *split,
                        })
                    })
                    .collect()
            }
        }
    }
}

pub fn default_candidates(delta_cap: f64) -> Vec<f64> {
    let (lo, hi) = ((delta_cap / 50.0).ln(), (delta_cap / 2.0).ln());
    (0..20)
        .map(|i| (lo + (hi - lo) * i as f64 / 19.0).exp())
        .collect()
}

/// Score of one candidate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CvScore {
    pub score: f64,
    /// `(ordered pair, j, l)` terms in range.
    pub terms: usize,
    /// Terms whose prediction was unsupported.
    pub skipped: usize,
}

impl CvScore {
    pub fn is_empty(&self) -> bool {
        self.terms == 0
    }

    pub fn skip_fraction(&self) -> f64 {
        if self.terms == 0 {
            0.0
        } else {
            self.skipped as f64 / self.terms as f64
        }
    }

    pub fn is_reliable(&self) -> bool {
        self.skip_fraction() <= MAX_SKIP_FRACTION
    }

    /// Eligible for the argmin.
    pub fn is_usable(&self) -> bool {
        self.terms > self.skipped && self.is_reliable()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvRow {
    pub bandwidth: BandwidthPolicy,
    #[serde(flatten)]
    pub score: CvScore,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CvReport {
    pub criterion: Criterion,
    pub delta_cap: f64,
    pub rows: Vec<CvRow>,
    /// Index into `rows` of the minimizer.
    pub best: usize,
}

impl CvReport {
    pub fn best_bandwidth(&self) -> BandwidthPolicy {
        self.rows[self.best].bandwidth
    }

    pub fn min_score(&self) -> f64 {
        self.rows[self.best].score.score
    }

    /// Tab-separated table: candidate(s), score, term count, skip count.
    pub fn to_tsv(&self) -> String {
        let two = matches!(
            self.rows.first().map(|r| r.bandwidth),
            Some(BandwidthPolicy::TwoRegime { .. })
        );
        let mut out = String::new();
        if two {
            out.push_str("h_near\th_far\tscore\tterms\tskipped\n");
        } else {
            out.push_str("h\tscore\tterms\tskipped\n");
        }
        for row in &self.rows {
            match row.bandwidth {
                BandwidthPolicy::Global { h } => {
                    let _ = write!(out, "{h}\t");
                }
                BandwidthPolicy::TwoRegime { h_near, h_far, .. } => {
                    let _ = write!(out, "{h_near}\t{h_far}\t");
                }
            }
            let _ = writeln!(
                out,
                "{}\t{}\t{}",
                row.score.score, row.score.terms, row.score.skipped
            );
        }
        out
    }
}

/// Residuals and pair tables shared by every candidate bandwidth.
#[derive(Debug, Clone)]
pub struct CrossValidator {
    base: CovarianceEstimate,
    family: KernelFamily,
    delta_cap: f64,
}

impl CrossValidator {
    /// `max_bandwidth` bounds every bandwidth later scored.
    pub fn new(data: &Dataset, family: KernelFamily, delta_cap: f64, max_bandwidth: f64) -> Result<Self> {
        if data.n_subjects() < 2 {
            return Err(Error::InsufficientSubjects {
                found: data.n_subjects(),
            });
        }
        let residuals = center_residuals(data)?;
        let kernel = KernelSpec::global(family, max_bandwidth)?;
        let base = CovarianceEstimate::with_lag_cap(residuals, kernel, delta_cap + max_bandwidth);
        Ok(Self {
            base,
            family,
            delta_cap,
        })
    }

    fn estimator(&self, policy: BandwidthPolicy) -> Result<CovarianceEstimate> {
        let kernel = KernelSpec::new(self.family, policy)?;
        let mut est = self.base.clone();
        est.set_kernel(kernel);
        Ok(est)
    }

    /// `V~_(-r)(., ., delta)`; `None` when the other subjects give no support.
    pub fn predict_cv1(&self, policy: BandwidthPolicy, r: usize, delta: f64) -> Result<Option<DMatrix<f64>>> {
        let est = self.estimator(policy)?;
        Ok(est.matrix_sums(delta, Some(r))?.to_matrix(est.n_subunits()))
    }

    /// `G^_(-r) * rho^_(-r)(delta)`; `None` when unsupported or degenerate.
    pub fn predict_cv2(&self, policy: BandwidthPolicy, r: usize, delta: f64) -> Result<Option<DMatrix<f64>>> {
        let est = self.estimator(policy)?;
        let Some(sep) = Separable::fit(&est, r)? else {
            return Ok(None);
        };
        sep.predict(&est, r, delta)
    }

    pub fn score(&self, policy: BandwidthPolicy, criterion: Criterion) -> Result<CvScore> {
        let est = self.estimator(policy)?;
        let m = est.n_subunits();
        let mut total = CompensatedSum::ZERO;
        let mut terms = 0usize;
        let mut skipped = 0usize;
        for r in 0..est.n_subjects() {
            let pairs = est.tables()[r].below(self.delta_cap);
            if pairs.is_empty() {
                continue;
            }
            let per_pair = 2 * m * m;
            terms += per_pair * pairs.len();
            let sep = match criterion {
                Criterion::Cv2 => match Separable::fit(&est, r)? {
                    Some(sep) => Some(sep),
                    None => {
                        skipped += per_pair * pairs.len();
                        continue;
                    }
                },
                Criterion::Cv1 => None,
            };
            let subj = &est.residuals().subjects()[r];
            for p in pairs {
                let pred = match &sep {
                    Some(sep) => sep.predict(&est, r, p.abs_lag)?,
                    None => est.matrix_sums(p.abs_lag, Some(r))?.to_matrix(m),
                };
                let Some(pred) = pred else {
                    skipped += per_pair;
                    continue;
                };
                let ea = subj.row(p.a as usize, m);
                let eb = subj.row(p.b as usize, m);
                // both orderings (a, b) and (b, a) of the pair
                for j in 0..m {
                    for l in 0..m {
                        let v = pred[(j, l)];
                        total.add((ea[j] * eb[l] - v).powi(2));
                        total.add((eb[j] * ea[l] - v).powi(2));
                    }
                }
            }
        }
        Ok(CvScore {
            score: total.value(),
            terms,
            skipped,
        })
    }
}

/// Leave-one-out `G^_(-r)` and the `rho^_(-r)` denominator.
struct Separable {
    g: DMatrix<f64>,
    lower_at_zero: f64,
}

impl Separable {
    fn fit(est: &CovarianceEstimate, r: usize) -> Result<Option<Self>> {
        let m = est.n_subunits();
        let Some(g) = est.matrix_sums(0.0, Some(r))?.to_matrix(m) else {
            return Ok(None);
        };
        let sums = est.lag_sums(0.0, Some(r))?;
        let Some(lower_at_zero) = sums.lower_mean() else {
            return Ok(None);
        };
        let scale = sums.lower_abs.value() / sums.weight.value();
        if lower_at_zero == 0.0 || lower_at_zero.abs() <= DEGENERATE_G_RTOL * scale {
            return Ok(None);
        }
        Ok(Some(Self { g, lower_at_zero }))
    }

    fn predict(&self, est: &CovarianceEstimate, r: usize, delta: f64) -> Result<Option<DMatrix<f64>>> {
        Ok(est
            .lag_sums(delta, Some(r))?
            .lower_mean()
            .map(|num| &self.g * (num / self.lower_at_zero)))
    }
}

fn score_policy(
    data: &Dataset,
    family: KernelFamily,
    policy: BandwidthPolicy,
    delta_cap: f64,
    criterion: Criterion,
) -> Result<CvScore> {
    if !(delta_cap.is_finite() && delta_cap > 0.0) {
        return Err(Error::invalid("delta0 must be finite and positive"));
    }
    CrossValidator::new(data, family, delta_cap, policy.max())?.score(policy, criterion)
}

/// CV1 score of one bandwidth policy.
pub fn cv1_score(data: &Dataset, family: KernelFamily, h: BandwidthPolicy, delta_cap: f64) -> Result<CvScore> {
    score_policy(data, family, h, delta_cap, Criterion::Cv1)
}

/// CV2 score of one bandwidth policy.
pub fn cv2_score(data: &Dataset, family: KernelFamily, h: BandwidthPolicy, delta_cap: f64) -> Result<CvScore> {
    score_policy(data, family, h, delta_cap, Criterion::Cv2)
}

fn select(data: &Dataset, family: KernelFamily, config: &CvConfig) -> Result<CvReport> {
    config.validate()?;
    let policies = config.policies();
    let max_h = policies.iter().fold(0.0f64, |a, p| a.max(p.max()));
    let cv = CrossValidator::new(data, family, config.delta_cap, max_h)?;
    let rows = policies
        .par_iter()
        .map(|&bandwidth| {
            Ok(CvRow {
                bandwidth,
                score: cv.score(bandwidth, config.criterion)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best: Option<usize> = None;
    for (i, row) in rows.iter().enumerate() {
        if !row.score.is_usable() {
            continue;
        }
        // rows are sorted by bandwidth, so strict `<` keeps the smaller on ties
        if best.is_none_or(|b| row.score.score < rows[b].score.score) {
            best = Some(i);
        }
    }
    let best = best.ok_or(Error::NoUsablePairs)?;
    Ok(CvReport {
        criterion: config.criterion,
        delta_cap: config.delta_cap,
        rows,
        best,
    })
}

/// Scores every global candidate and picks the minimizer.
pub fn select_bandwidth(data: &Dataset, family: KernelFamily, config: &CvConfig) -> Result<CvReport> {
    if !matches!(config.candidates, Candidates::Global(_)) {
        return Err(Error::invalid("select_bandwidth needs global candidates"));
    }
    select(data, family, config)
}

/// Scores every `(h_near, h_far)` combination and picks the minimizer.
pub fn select_two_regime(data: &Dataset, family: KernelFamily, config: &CvConfig) -> Result<CvReport> {
    if !matches!(config.candidates, Candidates::TwoRegime { .. }) {
        return Err(Error::invalid("select_two_regime needs paired candidate lists"));
    }
    select(data, family, config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;

    fn tiny(m: usize) -> Dataset {
        let rows = |vals: &[f64]| -> Vec<Vec<f64>> {
            vals.chunks(m).map(|c| c.to_vec()).collect()
        };
        let a = Subject::from_rows(
            "a",
            vec![0.0, 10.0, 25.0],
            &rows(&[1.0, 2.0, -1.0, 0.5, 3.0, 1.5, 0.25, -2.0, 4.0][..3 * m]),
        )
        .unwrap();
        let b = Subject::from_rows(
            "b",
            vec![5.0, 12.0, 30.5, 31.5],
            &rows(&[2.0, 0.0, 1.0, -1.0, 0.5, 2.5, 3.0, 1.0, -0.5, 0.0, 1.0, 2.0][..4 * m]),
        )
        .unwrap();
        Dataset::new(vec![a, b], Dataset::regular_grid(m), 100.0).unwrap()
    }

    #[test]
    fn needs_two_subjects() {
        let d = tiny(1);
        let one = Dataset::new(vec![d.subjects()[0].clone()], vec![0.0], 100.0).unwrap();
        assert!(matches!(
            cv1_score(&one, KernelFamily::Epanechnikov, BandwidthPolicy::Global { h: 5.0 }, 50.0),
            Err(Error::InsufficientSubjects { found: 1 })
        ));
    }

    #[test]
    fn all_lags_beyond_cap_is_empty() {
        let d = tiny(1);
        let s = cv1_score(&d, KernelFamily::Epanechnikov, BandwidthPolicy::Global { h: 5.0 }, 0.5).unwrap();
        assert_eq!(s.score, 0.0);
        assert!(s.is_empty());
        assert!(!s.is_usable());
        let cfg = CvConfig::global(0.5, vec![5.0, 10.0], Criterion::Cv1);
        assert!(matches!(
            select_bandwidth(&d, KernelFamily::Epanechnikov, &cfg),
            Err(Error::NoUsablePairs)
        ));
    }

    #[test]
    fn single_candidate_is_argmin() {
        let d = tiny(2);
        let cfg = CvConfig::global(30.0, vec![12.0], Criterion::Cv2);
        let rep = select_bandwidth(&d, KernelFamily::Epanechnikov, &cfg).unwrap();
        assert_eq!(rep.best, 0);
        assert_eq!(rep.best_bandwidth(), BandwidthPolicy::Global { h: 12.0 });
    }

    #[test]
    fn unsupported_candidate_kept_but_excluded() {
        let d = tiny(1);
        // h = 0.01 supports nothing in the other subject
        let cfg = CvConfig::global(30.0, vec![0.01, 12.0], Criterion::Cv1);
        let rep = select_bandwidth(&d, KernelFamily::Epanechnikov, &cfg).unwrap();
        assert_eq!(rep.rows.len(), 2);
        assert_eq!(rep.rows[0].score.skipped, rep.rows[0].score.terms);
        assert!(rep.rows[0].score.terms > 0);
        assert_eq!(rep.best, 1);
        let tsv = rep.to_tsv();
        assert!(tsv.starts_with("h\tscore\tterms\tskipped\n"));
        assert_eq!(tsv.lines().count(), 3);
    }

    #[test]
    fn default_grid_brackets() {
        let g = default_candidates(500.0);
        assert_eq!(g.len(), 20);
        assert!((g[0] - 10.0).abs() < 1e-12);
        assert!((g[19] - 250.0).abs() < 1e-9);
        assert!(g.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn two_regime_product_table() {
        let d = tiny(1);
        let cfg = CvConfig {
            delta_cap: 30.0,
            candidates: Candidates::TwoRegime {
                near: vec![15.0, 10.0],
                far: vec![20.0, 12.0],
                split: 8.0,
            },
            criterion: Criterion::Cv1,
        };
        let rep = select_two_regime(&d, KernelFamily::Epanechnikov, &cfg).unwrap();
        assert_eq!(rep.rows.len(), 4);
        let tsv = rep.to_tsv();
        assert!(tsv.starts_with("h_near\th_far\t"));
        // brute force argmin over the four rows
        let best = rep
            .rows
            .iter()
            .enumerate()
            .filter(|(_, r)| r.score.is_usable())
            .min_by(|a, b| a.1.score.score.total_cmp(&b.1.score.score))
            .unwrap()
            .0;
        assert_eq!(rep.best, best);
    }
}
