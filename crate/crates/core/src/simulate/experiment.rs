//! Monte Carlo harness: sample, estimate, bootstrap, adjust, aggregate.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::correlation::CorrelationSpec;
use super::field::{sample_dataset, RandomFieldModel};
use super::intensity::{IntensityDensity, PointProcess};
use super::oracle::imse;
use crate::accum::CompensatedSum;
use crate::bootstrap::{bootstrap_sd, BootstrapConfig};
use crate::data::{center_residuals, Dataset};
use crate::error::{Error, Result};
use crate::estimator::CovarianceEstimate;
use crate::kernel::{BandwidthPolicy, KernelFamily, KernelSpec};
use crate::psd::{psd_adjust, TaperWeight, TransformGrid};
use crate::rng;

pub const SCHEMA_VERSION: u32 = 1;

/// `0, step, 2 step, ..., max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LagGrid {
    pub step: f64,
    pub max: f64,
}

impl LagGrid {
    pub fn validate(&self) -> Result<()> {
        if !(self.step > 0.0 && self.max >= self.step) {
            return Err(Error::invalid(format!("bad lag grid {self:?}")));
        }
        let n = self.max / self.step;
        if (n - n.round()).abs() > 1e-9 * n {
            return Err(Error::invalid("lag grid max must be a multiple of its step"));
        }
        Ok(())
    }

    pub fn deltas(&self) -> Vec<f64> {
        let n = (self.max / self.step).round() as usize;
        (0..=n).map(|k| k as f64 * self.step).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSettings {
    #[serde(default)]
    pub kernel: KernelFamily,
    pub bandwidth: BandwidthPolicy,
    pub grid: LagGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSettings {
    pub block_length: f64,
    pub replicates: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AdjustSettings {
    /// Defaults to the W2 taper over the last 40% of the grid.
    #[serde(default)]
    pub taper: Option<TaperWeight>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub model: RandomFieldModel,
    pub subjects: usize,
    pub estimator: EstimatorSettings,
    #[serde(default)]
    pub bootstrap: Option<BootstrapSettings>,
    #[serde(default)]
    pub adjustment: Option<AdjustSettings>,
    pub imse_range: (f64, f64),
    pub replications: usize,
    pub seed: u64,
}

/// `exp(-|x1 - x2|)` on an `m`-point regular grid of `[0, 1]`; trace `m`.
pub fn exponential_g(m: usize) -> Vec<Vec<f64>> {
    let x = Dataset::regular_grid(m);
    x.iter()
        .map(|a| x.iter().map(|b| (-(a - b).abs()).exp()).collect())
        .collect()
}

impl ScenarioConfig {
    /// Twelve subjects, uniform locations, Matérn(120, 3/2) correlation.
    pub fn sim1_style() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "sim1-style".into(),
            model: RandomFieldModel {
                g: exponential_g(11),
                rho: CorrelationSpec::Matern { phi: 120.0, kappa: 1.5 },
                sigma_eps: 0.5,
                process: PointProcess {
                    expected_count: 200.0,
                    domain_length: 24_000.0,
                    intensity: IntensityDensity::Uniform,
                },
            },
            subjects: 12,
            estimator: EstimatorSettings {
                kernel: KernelFamily::Epanechnikov,
                bandwidth: BandwidthPolicy::Global { h: 120.0 },
                grid: LagGrid { step: 20.0, max: 500.0 },
            },
            bootstrap: Some(BootstrapSettings {
                block_length: 10_000.0,
                replicates: 200,
            }),
            adjustment: Some(AdjustSettings::default()),
            imse_range: (0.0, 500.0),
            replications: 200,
            seed: 1,
        }
    }

    /// One long subject, truncated-normal locations, the damped-cosine correlation.
    pub fn sim3() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            name: "sim3".into(),
            model: RandomFieldModel {
                g: exponential_g(11),
                rho: CorrelationSpec::Sim3,
                sigma_eps: 0.5,
                process: PointProcess {
                    expected_count: 500.0,
                    domain_length: 50_000.0,
                    intensity: IntensityDensity::TruncatedNormal { mu: 0.5, sigma: 0.2 },
                },
            },
            subjects: 1,
            estimator: EstimatorSettings {
                kernel: KernelFamily::Epanechnikov,
                bandwidth: BandwidthPolicy::Global { h: 35.0 },
                grid: LagGrid { step: 5.0, max: 1000.0 },
            },
            bootstrap: Some(BootstrapSettings {
                block_length: 6000.0,
                replicates: 200,
            }),
            adjustment: Some(AdjustSettings::default()),
            imse_range: (0.0, 500.0),
            replications: 200,
            seed: 1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| Error::invalid(format!("scenario config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::invalid(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.model.validate()?;
        self.estimator.grid.validate()?;
        self.estimator.bandwidth.validate()?;
        if self.subjects == 0 || self.replications == 0 {
            return Err(Error::invalid("subjects and replications must be positive"));
        }
        let (lo, hi) = self.imse_range;
        if !(0.0 <= lo && lo <= hi && hi <= self.estimator.grid.max) {
            return Err(Error::GridCoverage {
                lo,
                hi,
                first: 0.0,
                last: self.estimator.grid.max,
            });
        }
        Ok(())
    }

    pub fn kernel(&self) -> Result<KernelSpec> {
        KernelSpec::new(self.estimator.kernel, self.estimator.bandwidth)
    }

    fn taper(&self) -> Option<TaperWeight> {
        self.adjustment
            .map(|a| a.taper.unwrap_or_else(|| TaperWeight::default_for(self.estimator.grid.max)))
    }

    /// The simulated dataset of replicate `b`.
    pub fn replicate_data(&self, b: usize) -> Result<Dataset> {
        let seed = rng::derive_seed(self.seed, rng::tag::SIMULATION, b as u64);
        let data = sample_dataset(&self.model, self.subjects, seed)?.without_empty_subjects();
        if data.n_subjects() == 0 {
            return Err(Error::invalid("no units were drawn"));
        }
        Ok(data)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicateOutcome {
    pub n_units: usize,
    pub rho_hat: Vec<f64>,
    pub bootstrap_sd: Option<Vec<Option<f64>>>,
    pub rho_tilde: Option<Vec<f64>>,
    pub imse_hat: f64,
    pub imse_tilde: Option<f64>,
}

fn run_replicate(cfg: &ScenarioConfig, kernel: &KernelSpec, grid: &[f64], b: usize) -> Result<ReplicateOutcome> {
    let data = cfg.replicate_data(b)?;
    let cap = CovarianceEstimate::cap_for_grid(grid, kernel);
    let est = CovarianceEstimate::with_lag_cap(center_residuals(&data)?, *kernel, cap);
    let rho_hat = grid.iter().map(|&d| est.rho_hat(d)).collect::<Result<Vec<_>>>()?;
    let bootstrap_sd = match cfg.bootstrap {
        Some(bs) => {
            let seed = rng::derive_seed(cfg.seed, rng::tag::BOOTSTRAP, b as u64);
            let bc = BootstrapConfig::new(bs.block_length, bs.replicates, seed, grid.to_vec());
            Some(bootstrap_sd(&data, kernel, &bc)?.sd)
        }
        None => None,
    };
    let rho_tilde = match cfg.taper() {
        Some(w) => {
            let tg = TransformGrid::for_lags(cfg.estimator.grid.step, cfg.estimator.grid.max)?;
            Some(psd_adjust(&rho_hat, &w, &tg)?.values)
        }
        None => None,
    };
    let imse_hat = imse(grid, &rho_hat, &cfg.model.rho, cfg.imse_range)?;
    let imse_tilde = rho_tilde
        .as_ref()
        .map(|r| imse(grid, r, &cfg.model.rho, cfg.imse_range))
        .transpose()?;
    Ok(ReplicateOutcome {
        n_units: data.total_units(),
        rho_hat,
        bootstrap_sd,
        rho_tilde,
        imse_hat,
        imse_tilde,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentReport {
    pub name: String,
    pub seed: u64,
    pub delta_grid: Vec<f64>,
    pub truth: Vec<f64>,
    pub mean: Vec<f64>,
    pub p05: Vec<f64>,
    pub p95: Vec<f64>,
    /// Across-replicate sd of `rho^`; needs two replicates.
    pub empirical_sd: Vec<Option<f64>>,
    pub mean_bootstrap_sd: Option<Vec<Option<f64>>>,
    pub mean_adjusted: Option<Vec<f64>>,
    pub imse_range: (f64, f64),
    /// Mean per-replicate IMSE of `rho^` and of `rho~`.
    pub imse_hat: f64,
    pub imse_tilde: Option<f64>,
    #[serde(skip)]
    pub replicates: Vec<ReplicateOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSummary {
    pub name: String,
    pub seed: u64,
    pub replications: usize,
    pub imse_range: (f64, f64),
    pub imse_hat: f64,
    pub imse_tilde: Option<f64>,
}

fn mean(v: impl IntoIterator<Item = f64>) -> Option<f64> {
    let mut n = 0usize;
    let s: CompensatedSum = v.into_iter().inspect(|_| n += 1).collect();
    (n > 0).then(|| s.value() / n as f64)
}

/// Linear-interpolation sample quantile on sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

impl ExperimentReport {
    fn aggregate(cfg: &ScenarioConfig, grid: Vec<f64>, replicates: Vec<ReplicateOutcome>) -> Self {
        let n = grid.len();
        let column = |k: usize| -> Vec<f64> { replicates.iter().map(|r| r.rho_hat[k]).collect() };
        let mut mean_curve = Vec::with_capacity(n);
        let mut p05 = Vec::with_capacity(n);
        let mut p95 = Vec::with_capacity(n);
        let mut empirical_sd = Vec::with_capacity(n);
        for k in 0..n {
            let mut col = column(k);
            let mu = mean(col.iter().copied()).expect("at least one replicate");
            mean_curve.push(mu);
            empirical_sd.push((col.len() > 1).then(|| {
                let ss: CompensatedSum = col.iter().map(|v| (v - mu).powi(2)).collect();
                (ss.value() / (col.len() - 1) as f64).sqrt()
            }));
            col.sort_by(f64::total_cmp);
            p05.push(quantile_sorted(&col, 0.05));
            p95.push(quantile_sorted(&col, 0.95));
        }
        let mean_bootstrap_sd = cfg.bootstrap.map(|_| {
            (0..n)
                .map(|k| mean(replicates.iter().filter_map(|r| r.bootstrap_sd.as_ref().and_then(|s| s[k]))))
                .collect()
        });
        let mean_adjusted = cfg.adjustment.map(|_| {
            (0..n)
                .map(|k| mean(replicates.iter().map(|r| r.rho_tilde.as_ref().unwrap()[k])).unwrap())
                .collect()
        });
        let imse_hat = mean(replicates.iter().map(|r| r.imse_hat)).unwrap();
        let imse_tilde = cfg
            .adjustment
            .map(|_| mean(replicates.iter().map(|r| r.imse_tilde.unwrap())).unwrap());
        let truth = grid.iter().map(|&d| cfg.model.rho.eval(d)).collect();
        Self {
            name: cfg.name.clone(),
            seed: cfg.seed,
            delta_grid: grid,
            truth,
            mean: mean_curve,
            p05,
            p95,
            empirical_sd,
            mean_bootstrap_sd,
            mean_adjusted,
            imse_range: cfg.imse_range,
            imse_hat,
            imse_tilde,
            replicates,
        }
    }

    pub fn summary(&self) -> ExperimentSummary {
        ExperimentSummary {
            name: self.name.clone(),
            seed: self.seed,
            replications: self.replicates.len(),
            imse_range: self.imse_range,
            imse_hat: self.imse_hat,
            imse_tilde: self.imse_tilde,
        }
    }

    pub fn to_tsv(&self) -> String {
        let na = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| x.to_string());
        let mut out = String::from("delta\ttruth\tmean\tp05\tp95\tempirical_sd\tbootstrap_sd\tmean_adjusted\n");
        for k in 0..self.delta_grid.len() {
            let boot = self.mean_bootstrap_sd.as_ref().and_then(|s| s[k]);
            let adj = self.mean_adjusted.as_ref().map(|s| s[k]);
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                self.delta_grid[k],
                self.truth[k],
                self.mean[k],
                self.p05[k],
                self.p95[k],
                na(self.empirical_sd[k]),
                na(boot),
                na(adj)
            );
        }
        out
    }
}

/// Runs every replicate; replicate `b` depends only on `(seed, b)`.
pub fn run_experiment(cfg: &ScenarioConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let kernel = cfg.kernel()?;
    let grid = cfg.estimator.grid.deltas();
    let replicates = (0..cfg.replications)
        .into_par_iter()
        .map(|b| {
            run_replicate(cfg, &kernel, &grid, b).map_err(|e| Error::Replicate {
                index: b,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ExperimentReport::aggregate(cfg, grid, replicates))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScenarioConfig {
        let mut cfg = ScenarioConfig::sim1_style();
        cfg.model.g = exponential_g(3);
        cfg.model.process.expected_count = 60.0;
        cfg.model.process.domain_length = 3000.0;
        cfg.subjects = 3;
        cfg.estimator.grid = LagGrid { step: 50.0, max: 400.0 };
        cfg.imse_range = (0.0, 400.0);
        cfg.bootstrap = Some(BootstrapSettings {
            block_length: 1000.0,
            replicates: 10,
        });
        cfg.replications = 3;
        cfg
    }

    #[test]
    fn single_replicate_percentiles_equal_curve() {
        let mut cfg = small();
        cfg.replications = 1;
        let rep = run_experiment(&cfg).unwrap();
        assert_eq!(rep.p05, rep.replicates[0].rho_hat);
        assert_eq!(rep.p95, rep.replicates[0].rho_hat);
        assert_eq!(rep.mean, rep.replicates[0].rho_hat);
        assert!(rep.empirical_sd.iter().all(Option::is_none));
    }

    #[test]
    fn same_seed_same_report() {
        let cfg = small();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_tsv(), b.to_tsv());
        assert_eq!(a.mean[0], 1.0);
        assert!(a.imse_tilde.is_some());
    }

    #[test]
    fn config_json_round_trip() {
        for cfg in [ScenarioConfig::sim1_style(), ScenarioConfig::sim3()] {
            let text = serde_json::to_string_pretty(&cfg).unwrap();
            assert_eq!(ScenarioConfig::from_json(&text).unwrap(), cfg);
        }
        let mut bad = ScenarioConfig::sim3();
        bad.schema_version = 99;
        assert!(ScenarioConfig::from_json(&serde_json::to_string(&bad).unwrap()).is_err());
    }

    #[test]
    fn quantile_type7() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(quantile_sorted(&v, 0.0), 1.0);
        assert_eq!(quantile_sorted(&v, 0.5), 3.0);
        assert!((quantile_sorted(&v, 0.05) - 1.2).abs() < 1e-15);
        assert!((quantile_sorted(&v, 0.95) - 4.8).abs() < 1e-15);
    }
}
