//! Separable Gaussian fields: `Cov = rho(|s_i - s_k|) G(x_j, x_l)` plus nugget noise.

use nalgebra::{Cholesky, DMatrix, Dyn};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::correlation::CorrelationSpec;
use super::intensity::PointProcess;
use crate::data::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::rng;

const JITTER_START: f64 = 1e-10;
const JITTER_LIMIT: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomFieldModel {
    /// Within-unit covariance, one row per subunit.
    pub g: Vec<Vec<f64>>,
    pub rho: CorrelationSpec,
    pub sigma_eps: f64,
    pub process: PointProcess,
}

impl RandomFieldModel {
    pub fn validate(&self) -> Result<()> {
        let m = self.g.len();
        if m == 0 || self.g.iter().any(|r| r.len() != m) {
            return Err(Error::invalid("G must be a non-empty square matrix"));
        }
        let g = self.g_matrix();
        if g.iter().any(|v| !v.is_finite()) || (&g - g.transpose()).amax() > 1e-12 * g.amax().max(1.0) {
            return Err(Error::invalid("G must be finite and symmetric"));
        }
        if !(self.sigma_eps >= 0.0 && self.sigma_eps.is_finite()) {
            return Err(Error::invalid("noise sd must be finite and nonnegative"));
        }
        self.rho.validate()?;
        self.process.validate()?;
        cholesky_with_jitter(g).map(|_| ())
    }

    pub fn n_subunits(&self) -> usize {
        self.g.len()
    }

    pub fn g_matrix(&self) -> DMatrix<f64> {
        let m = self.g.len();
        DMatrix::from_fn(m, m, |i, j| self.g[i][j])
    }
}

/// Lower Cholesky factor, adding `c * trace / n` to the diagonal with
/// `c = 1e-10, 1e-9, ..., 1e-6` until the factorization succeeds.
pub fn cholesky_with_jitter(a: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    let base = a.trace() / n as f64;
    let mut c = JITTER_START;
    loop {
        let mut b = a.clone();
        for i in 0..n {
            b[(i, i)] += c * base;
        }
        if let Some(ch) = Cholesky::<f64, Dyn>::new(b) {
            return Ok(ch.l());
        }
        if c >= JITTER_LIMIT * 0.999 {
            return Err(Error::InvalidCorrelation { jitter: c * base });
        }
        c *= 10.0;
    }
}

/// `N x m` draw of the field at `locations`, plus i.i.d. `N(0, sigma_eps^2)` noise.
pub fn sample_field<R: Rng + ?Sized>(
    model: &RandomFieldModel,
    locations: &[f64],
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = locations.len();
    let m = model.n_subunits();
    if n == 0 {
        return Ok(DMatrix::zeros(0, m));
    }
    let corr = DMatrix::from_fn(n, n, |i, k| model.rho.eval(locations[i] - locations[k]));
    let l_rho = cholesky_with_jitter(corr)?;
    let l_g = cholesky_with_jitter(model.g_matrix())?;
    let z = DMatrix::from_fn(n, m, |_, _| rng.sample::<f64, _>(StandardNormal));
    let mut theta = l_rho * z * l_g.transpose();
    if model.sigma_eps > 0.0 {
        for v in theta.iter_mut() {
            *v += model.sigma_eps * rng.sample::<f64, _>(StandardNormal);
        }
    }
    Ok(theta)
}

/// One subject: locations from the model's process, then the field at them.
pub fn sample_subject(model: &RandomFieldModel, id: impl Into<String>, seed: u64, index: u64) -> Result<Subject> {
    let mut loc_rng = rng::stream(seed, rng::tag::LOCATIONS, index);
    let locations = model.process.sample(&mut loc_rng);
    let mut field_rng = rng::stream(seed, rng::tag::FIELD, index);
    let y = sample_field(model, &locations, &mut field_rng)?;
    let m = model.n_subunits();
    // nalgebra is column-major; subjects are row-major
    let responses = y.transpose().as_slice().to_vec();
    Subject::new(id, locations, responses, m)
}

/// `n_subjects` independent subjects on a regular subunit grid. Subjects
/// that drew no units are kept; callers decide how to treat them.
pub fn sample_dataset(model: &RandomFieldModel, n_subjects: usize, seed: u64) -> Result<Dataset> {
    model.validate()?;
    let subjects = (0..n_subjects)
        .map(|r| sample_subject(model, format!("s{r}"), seed, r as u64))
        .collect::<Result<Vec<_>>>()?;
    Dataset::new(
        subjects,
        Dataset::regular_grid(model.n_subunits()),
        model.process.domain_length,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simulate::intensity::IntensityDensity;

    fn model(g: Vec<Vec<f64>>, rho: CorrelationSpec, sigma_eps: f64) -> RandomFieldModel {
        RandomFieldModel {
            g,
            rho,
            sigma_eps,
            process: PointProcess {
                expected_count: 5.0,
                domain_length: 100.0,
                intensity: IntensityDensity::Uniform,
            },
        }
    }

    fn g3() -> Vec<Vec<f64>> {
        vec![vec![2.0, 0.6, 0.2], vec![0.6, 1.0, 0.3], vec![0.2, 0.3, 0.5]]
    }

    /// Sample second moments over `reps` draws; `E[Y] = 0` is known.
    fn moments(model: &RandomFieldModel, locations: &[f64], reps: usize) -> Vec<DMatrix<f64>> {
        let mut r = rng::stream(5, 0, 0);
        let draws: Vec<DMatrix<f64>> = (0..reps)
            .map(|_| sample_field(model, locations, &mut r).unwrap())
            .collect();
        draws
    }

    fn check(draws: &[DMatrix<f64>], a: (usize, usize), b: (usize, usize), expect: f64, z: f64) {
        let prods: Vec<f64> = draws.iter().map(|y| y[a] * y[b]).collect();
        let n = prods.len() as f64;
        let mean = prods.iter().sum::<f64>() / n;
        let var = prods.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let se = (var / n).sqrt();
        assert!((mean - expect).abs() < z * se + 1e-12, "{a:?} {b:?}: {mean} vs {expect} (se {se})");
    }

    #[test]
    fn single_unit_covariance_is_g() {
        let md = model(g3(), CorrelationSpec::Matern { phi: 10.0, kappa: 1.5 }, 0.0);
        let draws = moments(&md, &[3.0], 10_000);
        for j in 0..3 {
            for l in 0..3 {
                check(&draws, (0, j), (0, l), g3()[j][l], 3.0);
            }
        }
    }

    #[test]
    fn separated_units_uncorrelated() {
        let md = model(g3(), CorrelationSpec::Matern { phi: 1.0, kappa: 0.5 }, 0.0);
        let draws = moments(&md, &[0.0, 60.0], 10_000);
        for j in 0..3 {
            check(&draws, (0, j), (1, j), 0.0, 3.0);
        }
    }

    #[test]
    fn product_form_with_noise() {
        let rho = CorrelationSpec::Matern { phi: 20.0, kappa: 1.5 };
        let md = model(g3(), rho.clone(), 0.4);
        let locs = [0.0, 7.0, 15.0, 31.0, 50.0];
        let draws = moments(&md, &locs, 10_000);
        for i in 0..5 {
            for k in 0..5 {
                for j in 0..3 {
                    for l in 0..3 {
                        let mut expect = g3()[j][l] * rho.eval(locs[i] - locs[k]);
                        if i == k && j == l {
                            expect += 0.16;
                        }
                        // 225 comparisons: Bonferroni-adjusted bound
                        check(&draws, (i, j), (k, l), expect, 4.5);
                    }
                }
            }
        }
    }

    #[test]
    fn invalid_tabulated_correlation_rejected() {
        // a step down to -1 is not a valid correlation on three close points
        let rho = CorrelationSpec::Tabulated {
            grid: vec![0.0, 1.0, 2.0],
            values: vec![1.0, -1.0, -1.0],
        };
        let md = model(g3(), rho, 0.0);
        let mut r = rng::stream(1, 0, 0);
        assert!(matches!(
            sample_field(&md, &[0.0, 1.0, 2.0], &mut r),
            Err(Error::InvalidCorrelation { .. })
        ));
    }

    #[test]
    fn dataset_is_reproducible() {
        let md = model(g3(), CorrelationSpec::Sim3, 0.1);
        let a = sample_dataset(&md, 3, 42).unwrap();
        let b = sample_dataset(&md, 3, 42).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, sample_dataset(&md, 3, 43).unwrap());
    }
}
