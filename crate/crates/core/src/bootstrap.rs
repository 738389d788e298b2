//! Intensity-weighted block bootstrap for the standard deviation of `rho^`.
//!
//! Each replicate resamples subjects with replacement, keeps one random
//! block of length `L*` from each, and recomputes `rho^*` and the pair
//! weight `A^*` with the point estimate's bandwidth. Replicates are weighted
//! by `A^*_b / A` so blocks drawn from sparsely sampled stretches count less.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accum::CompensatedSum;
use crate::data::{center_residuals, Dataset};
use crate::error::{Error, Result};
use crate::estimator::CovarianceEstimate;
use crate::kernel::KernelSpec;
use crate::rng::{self, StreamRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubjectDraw {
    #[default]
    WithReplacement,
    /// Every subject exactly once, in shuffled order.
    Distinct,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// `L*`, in the data's distance unit.
    pub block_length: f64,
    /// `B`.
    pub replicates: usize,
    pub seed: u64,
    pub delta_grid: Vec<f64>,
    #[serde(default)]
    pub subject_draw: SubjectDraw,
}

impl BootstrapConfig {
    pub fn new(block_length: f64, replicates: usize, seed: u64, delta_grid: Vec<f64>) -> Self {
        Self {
            block_length,
            replicates,
            seed,
            delta_grid,
            subject_draw: SubjectDraw::WithReplacement,
        }
    }

    fn validate(&self, domain_length: f64) -> Result<()> {
        if !(self.block_length > 0.0 && self.block_length <= domain_length) {
            return Err(Error::invalid(format!(
                "block length must lie in (0, {domain_length}], got {}",
                self.block_length
            )));
        }
        if self.replicates < 2 {
            return Err(Error::invalid("at least 2 bootstrap replicates are needed"));
        }
        if self.delta_grid.is_empty() {
            return Err(Error::invalid("lag grid is empty"));
        }
        Ok(())
    }
}

/// Largest `L*` leaving at least two blocks per subject and 24 blocks overall.
pub fn default_block_length(data: &Dataset) -> f64 {
    let l = data.domain_length();
    let r = data.n_subjects().max(1) as f64;
    (l / 2.0).min(r * l / 24.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Block {
    /// Index of the source subject in the original dataset.
    pub source: usize,
    pub start: f64,
    pub end: f64,
}

#[derive(Debug, Clone)]
pub struct Resample {
    /// Subjects keep their original unit locations.
    pub data: Dataset,
    pub blocks: Vec<Block>,
}

/// One bootstrap draw: `R` subjects, one block each.
pub fn resample_once(data: &Dataset, config: &BootstrapConfig, rng: &mut StreamRng) -> Result<Resample> {
    let l = data.domain_length();
    let lb = config.block_length;
    if !(lb > 0.0 && lb <= l) {
        return Err(Error::invalid(format!(
            "block length must lie in (0, {l}], got {lb}"
        )));
    }
    let r = data.n_subjects();
    let sources: Vec<usize> = match config.subject_draw {
        SubjectDraw::WithReplacement => (0..r).map(|_| rng.random_range(0..r)).collect(),
        SubjectDraw::Distinct => {
            let mut v: Vec<usize> = (0..r).collect();
            v.shuffle(rng);
            v
        }
    };
    let mut blocks = Vec::with_capacity(r);
    let mut subjects = Vec::with_capacity(r);
    for source in sources {
        let start = rng.random::<f64>() * (l - lb);
        let end = start + lb;
        subjects.push(data.subjects()[source].filter_units(|s| s >= start && s <= end));
        blocks.push(Block { source, start, end });
    }
    Ok(Resample {
        data: data.with_subjects(subjects),
        blocks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateDiagnostics {
    pub blocks: Vec<Block>,
    /// `A^*_b` per grid point.
    pub weight: Vec<f64>,
    /// `rho^*_b` per grid point; `None` where undefined.
    pub rho: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapReport {
    pub delta_grid: Vec<f64>,
    /// Full-data `rho^`.
    pub rho_hat: Vec<f64>,
    /// Full-data `A`.
    pub weight: Vec<f64>,
    pub sd: Vec<Option<f64>>,
    /// Replicates usable at each grid point.
    pub usable: Vec<usize>,
    /// Replicates skipped at each grid point.
    pub skipped: Vec<usize>,
    pub replicates: Vec<ReplicateDiagnostics>,
}

impl BootstrapReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("delta\tsd\tusable\n");
        for ((d, sd), n) in self.delta_grid.iter().zip(&self.sd).zip(&self.usable) {
            let sd = sd.map_or_else(|| "NA".to_string(), |v| v.to_string());
            let _ = writeln!(out, "{d}\t{sd}\t{n}");
        }
        out
    }
}

fn replicate(
    data: &Dataset,
    kernel: &KernelSpec,
    config: &BootstrapConfig,
    cap: f64,
    b: usize,
) -> Result<ReplicateDiagnostics> {
    let mut rng = rng::stream(config.seed, rng::tag::BOOTSTRAP, b as u64);
    let Resample { data: sample, blocks } = resample_once(data, config, &mut rng)?;
    let sample = sample.without_empty_subjects();
    let n = config.delta_grid.len();
    if sample.n_subjects() == 0 {
        return Ok(ReplicateDiagnostics {
            blocks,
            weight: vec![0.0; n],
            rho: vec![None; n],
        });
    }
    let est = CovarianceEstimate::with_lag_cap(center_residuals(&sample)?, *kernel, cap);
    let mut weight = Vec::with_capacity(n);
    let mut rho = Vec::with_capacity(n);
    for &d in &config.delta_grid {
        weight.push(est.pair_weight(d)?);
        rho.push(match est.rho_hat(d) {
            Ok(v) => Some(v),
            Err(Error::NoSupportAtLag { .. } | Error::DegenerateG { .. }) => None,
            Err(e) => return Err(e),
        });
    }
    Ok(ReplicateDiagnostics { blocks, weight, rho })
}

/// Weighted block-bootstrap standard deviation of `rho^` on the config's grid.
pub fn bootstrap_sd(data: &Dataset, kernel: &KernelSpec, config: &BootstrapConfig) -> Result<BootstrapReport> {
    config.validate(data.domain_length())?;
    let grid = &config.delta_grid;
    let cap = CovarianceEstimate::cap_for_grid(grid, kernel);

    let full = CovarianceEstimate::with_lag_cap(center_residuals(data)?, *kernel, cap);
    let rho_hat = grid
        .iter()
        .map(|&d| full.rho_hat(d))
        .collect::<Result<Vec<_>>>()?;
    let weight = grid
        .iter()
        .map(|&d| full.pair_weight(d))
        .collect::<Result<Vec<_>>>()?;

    let replicates = (0..config.replicates)
        .into_par_iter()
        .map(|b| {
            replicate(data, kernel, config, cap, b).map_err(|e| Error::Replicate {
                index: b,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut sd = Vec::with_capacity(grid.len());
    let mut usable = Vec::with_capacity(grid.len());
    let mut skipped = Vec::with_capacity(grid.len());
    for (k, &a_full) in weight.iter().enumerate() {
        let draws: Vec<(f64, f64)> = replicates
            .iter()
            .filter_map(|rep| rep.rho[k].map(|r| (rep.weight[k], r)))
            .collect();
        usable.push(draws.len());
        skipped.push(replicates.len() - draws.len());
        sd.push(weighted_sd(&draws, a_full));
    }

    Ok(BootstrapReport {
        delta_grid: grid.clone(),
        rho_hat,
        weight,
        sd,
        usable,
        skipped,
        replicates,
    })
}

/// `[A^-1 B^-1 sum_b A*_b (rho*_b - mean rho*)^2]^(1/2)` over `(A*_b, rho*_b)` draws.
pub fn weighted_sd(draws: &[(f64, f64)], full_weight: f64) -> Option<f64> {
    if draws.len() < 2 || full_weight <= 0.0 {
        return None;
    }
    let b = draws.len() as f64;
    let mean = draws.iter().map(|d| d.1).collect::<CompensatedSum>().value() / b;
    let ss = draws
        .iter()
        .map(|&(a, r)| a * (r - mean).powi(2))
        .collect::<CompensatedSum>()
        .value();
    Some((ss / (full_weight * b)).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;
    use crate::kernel::KernelFamily;

    #[test]
    fn block_keeps_units_inside() {
        let s = Subject::from_rows("a", vec![10.0, 20.0, 990.0], &[vec![1.0], vec![2.0], vec![3.0]]).unwrap();
        let d = Dataset::new(vec![s], vec![0.0], 1000.0).unwrap();
        let sub = d.subjects()[0].filter_units(|x| (0.0..=100.0).contains(&x));
        assert_eq!(sub.unit_locations(), &[10.0, 20.0]);
    }

    #[test]
    fn full_length_block_is_a_subject_resample() {
        let subjects: Vec<Subject> = (0..3)
            .map(|i| {
                Subject::from_rows(
                    format!("s{i}"),
                    vec![0.0, 40.0 + i as f64, 100.0],
                    &[vec![1.0], vec![2.0], vec![i as f64]],
                )
                .unwrap()
            })
            .collect();
        let d = Dataset::new(subjects, vec![0.0], 100.0).unwrap();
        let cfg = BootstrapConfig::new(100.0, 5, 3, vec![0.0]);
        let mut rng = rng::stream(3, 0, 0);
        let r = resample_once(&d, &cfg, &mut rng).unwrap();
        for (blk, s) in r.blocks.iter().zip(r.data.subjects()) {
            assert_eq!(blk.start, 0.0);
            assert_eq!(s, &d.subjects()[blk.source]);
        }
    }

    #[test]
    fn fixed_seed_is_bit_identical() {
        let s = Subject::from_rows(
            "a",
            vec![1.0, 5.0, 9.0, 30.0, 44.0],
            &[vec![1.0], vec![3.0], vec![2.0], vec![0.0], vec![5.0]],
        )
        .unwrap();
        let d = Dataset::new(vec![s.clone(), s], vec![0.0], 50.0).unwrap();
        let cfg = BootstrapConfig::new(20.0, 4, 11, vec![0.0]);
        let a = resample_once(&d, &cfg, &mut rng::stream(11, 1, 2)).unwrap();
        let b = resample_once(&d, &cfg, &mut rng::stream(11, 1, 2)).unwrap();
        assert_eq!(a.blocks, b.blocks);
        assert_eq!(a.data, b.data);
    }

    #[test]
    fn identical_replicates_give_zero_sd() {
        let s = Subject::from_rows(
            "a",
            vec![0.0, 10.0, 20.0, 35.0],
            &[vec![1.0], vec![-1.0], vec![2.0], vec![0.5]],
        )
        .unwrap();
        let d = Dataset::new(vec![s], vec![0.0], 35.0).unwrap();
        let k = KernelSpec::global(KernelFamily::Epanechnikov, 12.0).unwrap();
        let cfg = BootstrapConfig::new(35.0, 10, 5, vec![0.0, 10.0]);
        let rep = bootstrap_sd(&d, &k, &cfg).unwrap();
        assert_eq!(rep.sd, vec![Some(0.0), Some(0.0)]);
        assert_eq!(rep.usable, vec![10, 10]);
    }

    #[test]
    fn rejects_bad_config() {
        let s = Subject::from_rows("a", vec![0.0, 10.0], &[vec![1.0], vec![2.0]]).unwrap();
        let d = Dataset::new(vec![s], vec![0.0], 35.0).unwrap();
        let k = KernelSpec::global(KernelFamily::Epanechnikov, 12.0).unwrap();
        for cfg in [
            BootstrapConfig::new(40.0, 10, 5, vec![10.0]),
            BootstrapConfig::new(0.0, 10, 5, vec![10.0]),
            BootstrapConfig::new(10.0, 1, 5, vec![10.0]),
            BootstrapConfig::new(10.0, 10, 5, vec![]),
        ] {
            assert!(bootstrap_sd(&d, &k, &cfg).is_err());
        }
    }

    #[test]
    fn weighted_sd_formula() {
        // equal weights equal to A reduce to the population sd
        let draws = [(2.0, 1.0), (2.0, 3.0)];
        assert_eq!(weighted_sd(&draws, 2.0), Some(1.0));
        assert_eq!(weighted_sd(&draws[..1], 2.0), None);
        assert_eq!(weighted_sd(&draws, 0.0), None);
        // half-weight replicates halve the variance
        let half = [(1.0, 1.0), (1.0, 3.0)];
        assert!((weighted_sd(&half, 2.0).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn default_block_length_heuristic() {
        let s = Subject::from_rows("a", vec![0.0], &[vec![1.0]]).unwrap();
        let d = Dataset::new(vec![s.clone(); 12], vec![0.0], 24000.0).unwrap();
        assert_eq!(default_block_length(&d), 12000.0);
        let d = Dataset::new(vec![s; 3], vec![0.0], 24000.0).unwrap();
        assert_eq!(default_block_length(&d), 3000.0);
    }
}
