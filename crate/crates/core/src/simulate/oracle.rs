//! Reference quantities for checking estimates against a known model.

use nalgebra::DMatrix;

use super::correlation::CorrelationSpec;
use crate::accum::CompensatedSum;
use crate::data::{center_residuals, Dataset};
use crate::error::{Error, Result};
use crate::kernel::KernelFamily;

/// Pooled centered second moments `(sum N_r)^-1 sum_r sum_i e_ri e_ri^T`.
pub fn empirical_g(data: &Dataset) -> Result<DMatrix<f64>> {
    let data = data.without_empty_subjects();
    let total = data.total_units();
    if total == 0 {
        return Err(Error::invalid("dataset has no units"));
    }
    let res = center_residuals(&data)?;
    let m = res.n_subunits();
    let mut acc = vec![CompensatedSum::ZERO; m * m];
    for s in res.subjects() {
        for i in 0..s.n_units() {
            let e = s.row(i, m);
            for j in 0..m {
                for l in j..m {
                    acc[j * m + l].add(e[j] * e[l]);
                }
            }
        }
    }
    Ok(DMatrix::from_fn(m, m, |j, l| {
        let (a, b) = if j <= l { (j, l) } else { (l, j) };
        acc[a * m + b].value() / total as f64
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseEstimate {
    pub value: f64,
    /// The diagonal difference came out negative.
    pub negative: bool,
}

impl NoiseEstimate {
    /// Usable as a sampling sd.
    pub fn sd(&self) -> f64 {
        self.value.max(0.0).sqrt()
    }
}

/// Mean of `diag(G* - G^)`.
pub fn noise_variance_estimate(g_star: &DMatrix<f64>, g_hat: &DMatrix<f64>) -> Result<NoiseEstimate> {
    if g_star.shape() != g_hat.shape() || !g_star.is_square() {
        return Err(Error::ShapeMismatch {
            expected: format!("{:?}", g_star.shape()),
            found: format!("{:?}", g_hat.shape()),
        });
    }
    let m = g_star.nrows();
    let value = (0..m).map(|j| g_star[(j, j)] - g_hat[(j, j)]).collect::<CompensatedSum>().value() / m as f64;
    Ok(NoiseEstimate {
        value,
        negative: value < 0.0,
    })
}

/// Leading-order bias of `rho^` at each lag: `(rho''(d) - rho(d) rho''(0)) sigma_K^2 h^2 / 2`.
pub fn asymptotic_bias_rho(
    spec: &CorrelationSpec,
    deltas: &[f64],
    h: f64,
    family: KernelFamily,
) -> Result<Vec<f64>> {
    let (sigma2, _) = family.moments();
    let at_zero = spec.second_derivative(0.0);
    deltas
        .iter()
        .map(|&d| {
            if d == 0.0 && spec.is_smooth() {
                return Ok(0.0);
            }
            let curv = spec.second_derivative(d)?;
            let c0 = at_zero.clone()?;
            Ok((curv - spec.eval(d) * c0) * sigma2 * h * h / 2.0)
        })
        .collect()
}

/// `int (estimate - truth)^2` over `range` by the trapezoid rule, with the
/// estimate linearly interpolated at range endpoints off the grid.
pub fn imse_against(
    delta_grid: &[f64],
    estimate: &[f64],
    truth: impl Fn(f64) -> f64,
    range: (f64, f64),
) -> Result<f64> {
    let (lo, hi) = range;
    if delta_grid.len() != estimate.len() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} values", delta_grid.len()),
            found: format!("{}", estimate.len()),
        });
    }
    if delta_grid.is_empty() || !(lo <= hi) || delta_grid[0] > lo || *delta_grid.last().unwrap() < hi {
        return Err(Error::GridCoverage {
            lo,
            hi,
            first: delta_grid.first().copied().unwrap_or(f64::NAN),
            last: delta_grid.last().copied().unwrap_or(f64::NAN),
        });
    }
    let interp = |t: f64| -> f64 {
        let j = delta_grid.partition_point(|&x| x <= t).clamp(1, delta_grid.len() - 1);
        let (x0, x1) = (delta_grid[j - 1], delta_grid[j]);
        if x1 == x0 {
            return estimate[j];
        }
        let w = (t - x0) / (x1 - x0);
        estimate[j - 1] * (1.0 - w) + estimate[j] * w
    };
    let mut xs = vec![lo];
    let mut ys = vec![interp(lo)];
    for (&x, &y) in delta_grid.iter().zip(estimate) {
        if x > lo && x < hi {
            xs.push(x);
            ys.push(y);
        }
    }
    if hi > lo {
        xs.push(hi);
        ys.push(interp(hi));
    }
    let sq: Vec<f64> = xs.iter().zip(&ys).map(|(&x, &y)| (y - truth(x)).powi(2)).collect();
    Ok(crate::quad::trapezoid(&xs, &sq))
}

pub fn imse(delta_grid: &[f64], estimate: &[f64], truth: &CorrelationSpec, range: (f64, f64)) -> Result<f64> {
    imse_against(delta_grid, estimate, |d| truth.eval(d), range)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Subject;
    use crate::simulate::correlation::second_derivative_fd;

    #[test]
    fn empirical_g_hand_value() {
        let s = Subject::from_rows("a", vec![0.0, 1.0], &[vec![2.0], vec![4.0]]).unwrap();
        let d = Dataset::new(vec![s], vec![0.5], 10.0).unwrap();
        assert_eq!(empirical_g(&d).unwrap()[(0, 0)], 1.0);
        let c = Subject::from_rows("c", vec![0.0, 1.0, 3.0], &vec![vec![1.0, 2.0]; 3]).unwrap();
        let d = Dataset::new(vec![c], vec![0.0, 1.0], 10.0).unwrap();
        assert_eq!(empirical_g(&d).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn noise_estimate_arithmetic() {
        let a = DMatrix::from_diagonal(&nalgebra::dvector![2.0, 4.0, 6.0]);
        let b = DMatrix::from_diagonal(&nalgebra::dvector![1.0, 2.0, 3.0]);
        assert_eq!(noise_variance_estimate(&a, &b).unwrap().value, 2.0);
        assert_eq!(noise_variance_estimate(&a, &a).unwrap().value, 0.0);
        let neg = noise_variance_estimate(&b, &a).unwrap();
        assert!(neg.negative);
        assert_eq!(neg.sd(), 0.0);
        assert!(noise_variance_estimate(&a, &DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn bias_scaling_and_zero() {
        let spec = CorrelationSpec::Matern { phi: 120.0, kappa: 1.5 };
        let d = [0.0, 60.0, 120.0, 240.0];
        let b1 = asymptotic_bias_rho(&spec, &d, 120.0, KernelFamily::Epanechnikov).unwrap();
        let b2 = asymptotic_bias_rho(&spec, &d, 60.0, KernelFamily::Epanechnikov).unwrap();
        assert_eq!(b1[0], 0.0);
        for (x, y) in b1.iter().zip(&b2) {
            assert!((y - x / 4.0).abs() <= 1e-15 * x.abs());
        }
        let fd0 = second_derivative_fd(&spec, 0.0);
        for (x, &delta) in b1.iter().zip(&d).skip(1) {
            let y = (second_derivative_fd(&spec, delta) - spec.eval(delta) * fd0) * 0.2 * 120.0 * 120.0 / 2.0;
            assert!((x - y).abs() < 1e-6, "{x} {y}");
        }
        assert!(matches!(
            asymptotic_bias_rho(&CorrelationSpec::Sim3, &[10.0], 35.0, KernelFamily::Epanechnikov),
            Err(Error::BiasUndefined { .. })
        ));
    }

    #[test]
    fn imse_examples() {
        let grid: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let spec = CorrelationSpec::Matern { phi: 3.0, kappa: 0.5 };
        let truth: Vec<f64> = grid.iter().map(|&d| spec.eval(d)).collect();
        assert_eq!(imse(&grid, &truth, &spec, (0.0, 10.0)).unwrap(), 0.0);
        let off: Vec<f64> = vec![0.1; grid.len()];
        let v = imse_against(&grid, &off, |_| 0.0, (0.0, 10.0)).unwrap();
        assert!((v - 0.1).abs() < 1e-12);
        let whole = imse_against(&grid, &off, |d| d / 10.0, (0.0, 10.0)).unwrap();
        let parts = imse_against(&grid, &off, |d| d / 10.0, (0.0, 3.35)).unwrap()
            + imse_against(&grid, &off, |d| d / 10.0, (3.35, 10.0)).unwrap();
        assert!((whole - parts).abs() < 1e-3);
        assert!(matches!(
            imse(&grid, &truth, &spec, (0.0, 11.0)),
            Err(Error::GridCoverage { .. })
        ));
    }
}
