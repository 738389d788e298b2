//! Stationary correlation families used to generate fields.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};

/// Correlation `rho(lag)` with `rho(0) = 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorrelationSpec {
    Matern { phi: f64, kappa: f64 },
    /// `cos(lag/60)/(2(1+|lag|/100)) + exp(-|lag|/800)/2`.
    Sim3,
    /// Monotone cubic through `(grid, values)`, flat beyond the last knot.
    Tabulated { grid: Vec<f64>, values: Vec<f64> },
}

impl CorrelationSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            CorrelationSpec::Matern { phi, kappa } => {
                if !(*phi > 0.0 && *kappa > 0.0 && phi.is_finite() && kappa.is_finite()) {
                    return Err(Error::invalid(format!("Matérn needs phi, kappa > 0, got ({phi}, {kappa})")));
                }
                Ok(())
            }
            CorrelationSpec::Sim3 => Ok(()),
            CorrelationSpec::Tabulated { grid, values } => {
                if grid.len() < 2 || grid.len() != values.len() {
                    return Err(Error::invalid("tabulated correlation needs matching grid and values, length >= 2"));
                }
                if grid[0] != 0.0 || values[0] != 1.0 {
                    return Err(Error::invalid("tabulated correlation must start at (0, 1)"));
                }
                if grid.windows(2).any(|w| !(w[0] < w[1])) {
                    return Err(Error::invalid("tabulated correlation grid must be strictly increasing"));
                }
                if values.iter().any(|v| !(v.abs() <= 1.0)) {
                    return Err(Error::invalid("tabulated correlation values must lie in [-1, 1]"));
                }
                Ok(())
            }
        }
    }

    pub fn eval(&self, delta: f64) -> f64 {
        let d = delta.abs();
        match self {
            CorrelationSpec::Matern { phi, kappa } => matern(d, *phi, *kappa),
            CorrelationSpec::Sim3 => sim3_rho(d),
            CorrelationSpec::Tabulated { grid, values } => monotone_cubic(grid, values, d),
        }
    }

    /// Natural length scale, used for finite-difference steps.
    pub fn scale(&self) -> f64 {
        match self {
            CorrelationSpec::Matern { phi, .. } => *phi,
            CorrelationSpec::Sim3 => 60.0,
            CorrelationSpec::Tabulated { grid, .. } => grid[1] - grid[0],
        }
    }

    /// Closed-form `rho''` where one is registered.
    pub fn second_derivative_exact(&self, delta: f64) -> Option<f64> {
        let CorrelationSpec::Matern { phi, kappa } = *self else {
            return None;
        };
        let u = delta.abs() / phi;
        let e = (-u).exp();
        if kappa == 1.5 {
            Some((u - 1.0) * e / (phi * phi))
        } else if kappa == 2.5 {
            Some((u * u - u - 1.0) * e / (3.0 * phi * phi))
        } else {
            None
        }
    }

    /// Whether `rho` is twice differentiable everywhere, including 0.
    pub fn is_smooth(&self) -> bool {
        matches!(self, CorrelationSpec::Matern { kappa, .. } if *kappa > 1.0)
    }

    /// `rho''(lag)`: closed form if registered, else Richardson-extrapolated
    /// central differences.
    pub fn second_derivative(&self, delta: f64) -> Result<f64> {
        if !self.is_smooth() {
            return Err(Error::BiasUndefined { delta });
        }
        Ok(self
            .second_derivative_exact(delta)
            .unwrap_or_else(|| second_derivative_fd(self, delta)))
    }
}

/// Central second difference with step `1e-3 * scale`, Richardson-extrapolated
/// against `O(h)` and `O(h^2)` error terms. The `O(h)` term appears at lag 0
/// when `rho` is only `C^2` there (Matérn 3/2 has a `|lag|^3` term).
pub fn second_derivative_fd(spec: &CorrelationSpec, delta: f64) -> f64 {
    let d2 = |h: f64| (spec.eval(delta + h) - 2.0 * spec.eval(delta) + spec.eval(delta - h)) / (h * h);
    let h = 1e-3 * spec.scale();
    let (a, b, c) = (d2(h), d2(h / 2.0), d2(h / 4.0));
    let r1 = 2.0 * b - a;
    let r2 = 2.0 * c - b;
    (4.0 * r2 - r1) / 3.0
}

/// Modified Bessel function of the second kind, `K_nu(x)` for `x > 0`,
/// from `int_0^inf exp(-x cosh t) cosh(nu t) dt` by the trapezoid rule,
/// which converges geometrically for this integrand.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(x > 0.0);
    let step = 0.05;
    let mut sum = 0.5 * (-x).exp();
    let mut k = 1;
    loop {
        let t = k as f64 * step;
        let term = (-x * t.cosh() + nu * t).exp() * 0.5 * (1.0 + (-2.0 * nu * t).exp());
        sum += term;
        if term <= 1e-18 * sum || k > 100_000 {
            break;
        }
        k += 1;
    }
    sum * step
}

/// Matérn correlation by the Bessel form; closed forms for `kappa` in {1/2, 3/2, 5/2}.
pub fn matern(delta: f64, phi: f64, kappa: f64) -> f64 {
    let u = delta.abs() / phi;
    if u == 0.0 {
        return 1.0;
    }
    let e = (-u).exp();
    match kappa {
        0.5 => e,
        1.5 => (1.0 + u) * e,
        2.5 => (1.0 + u + u * u / 3.0) * e,
        _ => matern_bessel(delta, phi, kappa),
    }
}

/// Matérn correlation through the general Bessel evaluation only.
pub fn matern_bessel(delta: f64, phi: f64, kappa: f64) -> f64 {
    let u = delta.abs() / phi;
    if u == 0.0 {
        return 1.0;
    }
    // exp(-x cosh t) underflows well before u^kappa overflows
    let k = bessel_k(kappa, u);
    (kappa * u.ln() + k.ln() - (kappa - 1.0) * std::f64::consts::LN_2 - gamma(kappa).ln()).exp()
}

pub fn sim3_rho(delta: f64) -> f64 {
    let d = delta.abs();
    0.5 * (d / 60.0).cos() / (1.0 + d / 100.0) + 0.5 * (-d / 800.0).exp()
}

/// Fritsch–Carlson monotone cubic Hermite interpolation; constant beyond the ends.
pub fn monotone_cubic(x: &[f64], y: &[f64], t: f64) -> f64 {
    let n = x.len();
    if t <= x[0] {
        return y[0];
    }
    if t >= x[n - 1] {
        return y[n - 1];
    }
    let secant: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / (x[i + 1] - x[i])).collect();
    let slope = |i: usize| -> f64 {
        if i == 0 {
            return secant[0];
        }
        if i == n - 1 {
            return secant[n - 2];
        }
        let (a, b) = (secant[i - 1], secant[i]);
        if a * b <= 0.0 {
            0.0
        } else {
            // weighted harmonic mean keeps each piece monotone
            let (h0, h1) = (x[i] - x[i - 1], x[i + 1] - x[i]);
            let (w1, w2) = (2.0 * h1 + h0, h1 + 2.0 * h0);
            (w1 + w2) / (w1 / a + w2 / b)
        }
    };
    let i = x.partition_point(|&v| v <= t) - 1;
    let h = x[i + 1] - x[i];
    let s = (t - x[i]) / h;
    let (m0, m1) = (slope(i) * h, slope(i + 1) * h);
    let s2 = s * s;
    let s3 = s2 * s;
    (2.0 * s3 - 3.0 * s2 + 1.0) * y[i] + (s3 - 2.0 * s2 + s) * m0 + (-2.0 * s3 + 3.0 * s2) * y[i + 1] + (s3 - s2) * m1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matern_closed_forms_match_bessel() {
        for k in 1..=200 {
            let d = k as f64 * 3.0;
            for (kappa, closed) in [
                (0.5, (-d / 120.0f64).exp()),
                (1.5, (1.0 + d / 120.0) * (-d / 120.0f64).exp()),
                (2.5, matern(d, 120.0, 2.5)),
            ] {
                let b = matern_bessel(d, 120.0, kappa);
                assert!((b - closed).abs() < 1e-10, "kappa {kappa} d {d}: {b} vs {closed}");
            }
        }
        assert_eq!(matern(0.0, 5.0, 0.7), 1.0);
        assert!((matern(120.0, 120.0, 1.5) - 2.0 / std::f64::consts::E).abs() < 1e-15);
    }

    #[test]
    fn bessel_reference_values() {
        // K_0(1), K_1(1), K_0(0.1)
        assert!((bessel_k(0.0, 1.0) - 0.421_024_438_240_708_3).abs() < 1e-13);
        assert!((bessel_k(1.0, 1.0) - 0.601_907_230_197_234_6).abs() < 1e-13);
        assert!((bessel_k(0.0, 0.1) - 2.427_069_024_702_017).abs() < 1e-12);
    }

    #[test]
    fn sim3_values() {
        assert_eq!(sim3_rho(0.0), 1.0);
        let expect = 0.25 * (5.0f64 / 3.0).cos() + 0.5 * (-0.125f64).exp();
        assert!((sim3_rho(100.0) - expect).abs() < 1e-15);
        assert!((sim3_rho(100.0) - 0.4173).abs() < 1e-4);
        for d in [0.3, 17.0, 950.0] {
            assert_eq!(sim3_rho(-d), sim3_rho(d));
        }
    }

    #[test]
    fn closed_form_second_derivative_matches_fd() {
        for kappa in [1.5, 2.5] {
            let spec = CorrelationSpec::Matern { phi: 120.0, kappa };
            for d in [0.0, 30.0, 120.0, 400.0] {
                let exact = spec.second_derivative_exact(d).unwrap();
                let fd = second_derivative_fd(&spec, d);
                assert!((exact - fd).abs() * 120.0 * 120.0 < 1e-6, "{kappa} {d}: {exact} {fd}");
            }
        }
        assert!(CorrelationSpec::Sim3.second_derivative(10.0).is_err());
        assert!(CorrelationSpec::Matern { phi: 1.0, kappa: 1.0 }.second_derivative(1.0).is_err());
    }

    #[test]
    fn monotone_cubic_interpolates_and_preserves_shape() {
        let x = [0.0, 1.0, 2.0, 4.0];
        let y = [1.0, 0.5, 0.45, 0.0];
        for (a, b) in x.iter().zip(&y) {
            assert!((monotone_cubic(&x, &y, *a) - b).abs() < 1e-15);
        }
        let mut prev = 1.0;
        for k in 0..=400 {
            let v = monotone_cubic(&x, &y, k as f64 * 0.01);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
        assert_eq!(monotone_cubic(&x, &y, 9.0), 0.0);
    }
}
