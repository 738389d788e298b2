//! Unit-location point processes on `[0, L]`.

use rand::Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::quad::adaptive_simpson;

/// Smallest density value accepted anywhere on `[0, 1]`.
pub const DENSITY_FLOOR: f64 = 1e-6;

/// Shape `g` of the location intensity on the unit interval.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntensityDensity {
    #[default]
    Uniform,
    /// Normal(mu, sigma) restricted to `[0, 1]`.
    TruncatedNormal { mu: f64, sigma: f64 },
    /// Piecewise linear through `(grid, values)`; grid spans `[0, 1]`.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

impl IntensityDensity {
    pub fn validate(&self) -> Result<()> {
        match self {
            IntensityDensity::Uniform => Ok(()),
            IntensityDensity::TruncatedNormal { mu, sigma } => {
                if !(mu.is_finite() && sigma.is_finite() && *sigma > 0.0) {
                    return Err(Error::invalid(format!(
                        "truncated normal needs finite mu and sigma > 0, got ({mu}, {sigma})"
                    )));
                }
                let floor = self.density(0.0).min(self.density(1.0));
                if !(floor >= DENSITY_FLOOR) {
                    return Err(Error::invalid(format!(
                        "truncated normal density falls to {floor:e} on [0, 1]"
                    )));
                }
                Ok(())
            }
            IntensityDensity::Tabulated { grid, values } => {
                if grid.len() < 2 || grid.len() != values.len() {
                    return Err(Error::invalid("tabulated density needs matching grid and values, length >= 2"));
                }
                if grid[0] != 0.0 || *grid.last().unwrap() != 1.0 {
                    return Err(Error::invalid("tabulated density grid must run from 0 to 1"));
                }
                if grid.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::invalid("tabulated density grid must be strictly increasing"));
                }
                if values.iter().any(|v| !(v.is_finite() && *v >= DENSITY_FLOOR)) {
                    return Err(Error::invalid(format!(
                        "tabulated density values must be finite and >= {DENSITY_FLOOR:e}"
                    )));
                }
                let total = crate::quad::trapezoid(grid, values);
                if (total - 1.0).abs() > 1e-8 {
                    return Err(Error::invalid(format!(
                        "tabulated density integrates to {total}, not 1"
                    )));
                }
                Ok(())
            }
        }
    }

    fn normal_parts(mu: f64, sigma: f64) -> (Normal, f64, f64) {
        let n = Normal::new(mu, sigma).expect("validated parameters");
        let lo = n.cdf(0.0);
        let hi = n.cdf(1.0);
        (n, lo, hi)
    }

    /// `g(t)`; zero outside `[0, 1]`.
    pub fn density(&self, t: f64) -> f64 {
        if !(0.0..=1.0).contains(&t) {
            return 0.0;
        }
        match self {
            IntensityDensity::Uniform => 1.0,
            IntensityDensity::TruncatedNormal { mu, sigma } => {
                let (n, lo, hi) = Self::normal_parts(*mu, *sigma);
                n.pdf(t) / (hi - lo)
            }
            IntensityDensity::Tabulated { grid, values } => {
                let j = grid.partition_point(|&x| x <= t).clamp(1, grid.len() - 1);
                let (x0, x1) = (grid[j - 1], grid[j]);
                let w = (t - x0) / (x1 - x0);
                values[j - 1] * (1.0 - w) + values[j] * w
            }
        }
    }

    /// One draw from `g`.
    pub fn sample_unit<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            IntensityDensity::Uniform => rng.random::<f64>(),
            IntensityDensity::TruncatedNormal { mu, sigma } => {
                let (n, lo, hi) = Self::normal_parts(*mu, *sigma);
                let u = lo + (hi - lo) * rng.random::<f64>();
                n.inverse_cdf(u).clamp(0.0, 1.0)
            }
            IntensityDensity::Tabulated { values, .. } => {
                let top = values.iter().cloned().fold(0.0, f64::max);
                loop {
                    let t = rng.random::<f64>();
                    if rng.random::<f64>() * top <= self.density(t) {
                        return t;
                    }
                }
            }
        }
    }

    /// `int_0^1 g(t)^2 dt`.
    pub fn f1_at_zero(&self) -> f64 {
        match self {
            IntensityDensity::Uniform => 1.0,
            IntensityDensity::TruncatedNormal { .. } => {
                adaptive_simpson(&|t: f64| self.density(t).powi(2), 0.0, 1.0, 1e-12)
            }
            IntensityDensity::Tabulated { grid, values } => {
                // exact for piecewise linear g
                grid.windows(2)
                    .zip(values.windows(2))
                    .map(|(x, v)| (x[1] - x[0]) * (v[0] * v[0] + v[0] * v[1] + v[1] * v[1]) / 3.0)
                    .sum()
            }
        }
    }
}

/// Poisson process on `[0, L]` with `expected_count = nu L` and shape `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointProcess {
    pub expected_count: f64,
    pub domain_length: f64,
    #[serde(default)]
    pub intensity: IntensityDensity,
}

impl PointProcess {
    pub fn validate(&self) -> Result<()> {
        if !(self.expected_count > 0.0 && self.expected_count.is_finite()) {
            return Err(Error::invalid("expected unit count must be positive"));
        }
        if !(self.domain_length > 0.0 && self.domain_length.is_finite()) {
            return Err(Error::invalid("domain length must be positive"));
        }
        self.intensity.validate()
    }

    pub fn nu(&self) -> f64 {
        self.expected_count / self.domain_length
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        sample_locations(self.nu(), self.domain_length, &self.intensity, rng)
    }
}

/// Sorted, distinct locations: `Poisson(nu L)` points i.i.d. from `g(s / L) / L`.
pub fn sample_locations<R: Rng + ?Sized>(nu: f64, l: f64, g: &IntensityDensity, rng: &mut R) -> Vec<f64> {
    let count = Poisson::new(nu * l).expect("positive rate").sample(rng) as usize;
    let mut s: Vec<f64> = (0..count).map(|_| l * g.sample_unit(rng)).collect();
    s.sort_by(f64::total_cmp);
    s.dedup();
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use statrs::distribution::ChiSquared;

    fn tn() -> IntensityDensity {
        IntensityDensity::TruncatedNormal { mu: 0.5, sigma: 0.2 }
    }

    #[test]
    fn densities_integrate_to_one() {
        for g in [
            IntensityDensity::Uniform,
            tn(),
            IntensityDensity::Tabulated {
                grid: vec![0.0, 0.5, 1.0],
                values: vec![0.5, 1.5, 0.5],
            },
        ] {
            g.validate().unwrap();
            let total = adaptive_simpson(&|t: f64| g.density(t), 0.0, 1.0, 1e-12);
            assert!((total - 1.0).abs() < 1e-8, "{g:?}: {total}");
        }
    }

    #[test]
    fn rejects_bad_densities() {
        let bad = IntensityDensity::Tabulated {
            grid: vec![0.0, 1.0],
            values: vec![1.0, 2.0],
        };
        assert!(bad.validate().is_err());
        assert!(IntensityDensity::TruncatedNormal { mu: 0.5, sigma: 0.05 }.validate().is_err());
    }

    #[test]
    fn poisson_count_mean() {
        let mut r = rng::stream(11, 0, 0);
        let (nu, l) = (0.02, 1000.0);
        let draws = 10_000;
        let mean = (0..draws)
            .map(|_| sample_locations(nu, l, &IntensityDensity::Uniform, &mut r).len() as f64)
            .sum::<f64>()
            / draws as f64;
        let se = (nu * l / draws as f64).sqrt();
        assert!((mean - nu * l).abs() < 3.0 * se, "{mean}");
    }

    #[test]
    fn uniform_locations_pass_ks() {
        let mut r = rng::stream(12, 0, 0);
        let l = 500.0;
        let s = sample_locations(4.0, l, &IntensityDensity::Uniform, &mut r);
        let n = s.len() as f64;
        let d = s
            .iter()
            .enumerate()
            .map(|(i, x)| {
                let f = x / l;
                (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
            })
            .fold(0.0, f64::max);
        // asymptotic 1% critical value
        assert!(d * n.sqrt() < 1.628, "{}", d * n.sqrt());
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        assert!(s.iter().all(|&x| (0.0..=l).contains(&x)));
    }

    #[test]
    fn truncated_normal_chi_square() {
        let g = tn();
        let mut r = rng::stream(13, 0, 0);
        let s = sample_locations(20.0, 1000.0, &g, &mut r);
        let n = s.len() as f64;
        let bins = 20;
        let mut observed = vec![0.0; bins];
        for x in &s {
            observed[((x / 1000.0 * bins as f64) as usize).min(bins - 1)] += 1.0;
        }
        let stat: f64 = (0..bins)
            .map(|b| {
                let lo = b as f64 / bins as f64;
                let p = adaptive_simpson(&|t: f64| g.density(t), lo, lo + 1.0 / bins as f64, 1e-12);
                (observed[b] - n * p).powi(2) / (n * p)
            })
            .sum();
        let crit = ChiSquared::new((bins - 1) as f64).unwrap().inverse_cdf(0.99);
        assert!(stat < crit, "{stat} >= {crit}");
    }

    #[test]
    fn f1_values() {
        assert_eq!(IntensityDensity::Uniform.f1_at_zero(), 1.0);
        let g = tn();
        let coarse = adaptive_simpson(&|t: f64| g.density(t).powi(2), 0.0, 1.0, 1e-10);
        let fine = adaptive_simpson(&|t: f64| g.density(t).powi(2), 0.0, 1.0, 1e-13);
        assert!((coarse - fine).abs() < 1e-8);
        assert!((g.f1_at_zero() - fine).abs() < 1e-8);
        let tab = IntensityDensity::Tabulated {
            grid: vec![0.0, 0.5, 1.0],
            values: vec![0.5, 1.5, 0.5],
        };
        let xs: Vec<f64> = (0..=20_000).map(|k| k as f64 / 20_000.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&t| tab.density(t).powi(2)).collect();
        assert!((tab.f1_at_zero() - crate::quad::trapezoid(&xs, &ys)).abs() < 1e-8);
    }
}
