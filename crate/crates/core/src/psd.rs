//! Positive semidefinite repair of a tabulated correlation estimate.
//!
//! The tapered estimate is cosine-transformed, negative spectral mass is
//! clipped to zero, and the clipped spectrum is transformed back. The
//! result is a nonnegative combination of cosines, hence a valid
//! stationary correlation at every lag, not only on the tabulation grid.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaperWeight {
    #[default]
    None,
    /// `1{|lag| <= d}`.
    W1 { d: f64 },
    /// 1 below `d1`, linear down to 0 at `d2`, 0 beyond.
    W2 { d1: f64, d2: f64 },
}

impl TaperWeight {
    pub fn validate(&self) -> Result<()> {
        match *self {
            TaperWeight::None => Ok(()),
            TaperWeight::W1 { d } if d > 0.0 && d.is_finite() => Ok(()),
            TaperWeight::W2 { d1, d2 } if d1 > 0.0 && d1 <= d2 && d2.is_finite() => Ok(()),
            other => Err(Error::invalid(format!("invalid taper {other:?}"))),
        }
    }

    /// W2 tapering over the last 40% of `[0, delta_max]`.
    pub fn default_for(delta_max: f64) -> Self {
        TaperWeight::W2 {
            d1: 0.6 * delta_max,
            d2: delta_max,
        }
    }
}

pub fn taper_eval(w: &TaperWeight, delta: f64) -> f64 {
    let a = delta.abs();
    match *w {
        TaperWeight::None => 1.0,
        TaperWeight::W1 { d } => {
            if a <= d {
                1.0
            } else {
                0.0
            }
        }
        TaperWeight::W2 { d1, d2 } => {
            if a < d1 {
                1.0
            } else if a <= d2 {
                if d2 == d1 {
                    // degenerate ramp: W1 at d1
                    1.0
                } else {
                    (d2 - a) / (d2 - d1)
                }
            } else {
                0.0
            }
        }
    }
}

/// Uniform lag grid `k * delta_step` on `[0, delta_max]` and frequency grid
/// `k * theta_step` on `[0, theta_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformGrid {
    pub delta_step: f64,
    pub delta_max: f64,
    pub theta_step: f64,
    pub theta_max: f64,
}

impl TransformGrid {
    /// Nyquist frequency cap and a frequency step oversampling the lag range fourfold.
    pub fn for_lags(delta_step: f64, delta_max: f64) -> Result<Self> {
        Self::new(delta_step, delta_max, PI / (4.0 * delta_max), PI / delta_step)
    }

    pub fn new(delta_step: f64, delta_max: f64, theta_step: f64, theta_max: f64) -> Result<Self> {
        let g = Self {
            delta_step,
            delta_max,
            theta_step,
            theta_max,
        };
        g.validate()?;
        Ok(g)
    }

    fn validate(&self) -> Result<()> {
        let vals = [self.delta_step, self.delta_max, self.theta_step, self.theta_max];
        if vals.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(Error::invalid(format!("transform grid must be positive: {self:?}")));
        }
        let slack = 1.0 + 1e-9;
        if self.theta_max * self.delta_step > PI * slack {
            return Err(Error::invalid(
                "theta_max * delta_step exceeds pi; the lag grid cannot resolve that frequency",
            ));
        }
        if self.theta_step * self.delta_max > PI * slack {
            return Err(Error::invalid(
                "theta_step * delta_max exceeds pi; the frequency grid aliases the lag range",
            ));
        }
        Ok(())
    }

    pub fn n_delta(&self) -> usize {
        (self.delta_max / self.delta_step).round() as usize + 1
    }

    pub fn n_theta(&self) -> usize {
        (self.theta_max / self.theta_step).round() as usize + 1
    }

    pub fn deltas(&self) -> Vec<f64> {
        (0..self.n_delta()).map(|k| k as f64 * self.delta_step).collect()
    }

    pub fn thetas(&self) -> Vec<f64> {
        (0..self.n_theta()).map(|k| k as f64 * self.theta_step).collect()
    }

    fn check_table(&self, rho: &[f64]) -> Result<()> {
        if rho.len() != self.n_delta() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} tabulated lags", self.n_delta()),
                found: format!("{}", rho.len()),
            });
        }
        if rho.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("tabulated curve has non-finite values"));
        }
        Ok(())
    }
}

/// Trapezoid weights on `n` uniform nodes.
fn trapezoid_weight(k: usize, n: usize, step: f64) -> f64 {
    if k == 0 || k + 1 == n {
        0.5 * step
    } else {
        step
    }
}

/// `2 * int_0^delta_max rho(lag) w(lag) cos(theta lag) d lag` on the frequency grid.
pub fn cosine_transform(rho: &[f64], w: &TaperWeight, grid: &TransformGrid) -> Result<Vec<f64>> {
    w.validate()?;
    grid.check_table(rho)?;
    if !matches!(w, TaperWeight::None) && taper_eval(w, grid.delta_max) != 0.0 {
        return Err(Error::TaperExceedsGrid {
            delta_max: grid.delta_max,
        });
    }
    let n = rho.len();
    let weighted: Vec<(f64, f64)> = rho
        .iter()
        .enumerate()
        .map(|(k, &r)| {
            let d = k as f64 * grid.delta_step;
            (d, 2.0 * trapezoid_weight(k, n, grid.delta_step) * r * taper_eval(w, d))
        })
        .filter(|&(_, c)| c != 0.0)
        .collect();
    Ok(grid
        .thetas()
        .into_iter()
        .map(|t| weighted.iter().map(|&(d, c)| c * (t * d).cos()).sum())
        .collect())
}

/// A repaired correlation: tabulated values plus the clipped spectrum behind them.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AdjustedCurve {
    pub grid: TransformGrid,
    /// `rho~` on the input lag grid.
    pub values: Vec<f64>,
    /// Transform of the tapered input before clipping.
    pub spectrum: Vec<f64>,
    /// `max(spectrum, 0)`.
    pub clipped: Vec<f64>,
}

impl AdjustedCurve {
    /// `rho~(lag)` at any lag.
    pub fn eval(&self, delta: f64) -> f64 {
        inverse_at(&self.clipped, self.grid.theta_step, delta)
    }

    /// `rho~ / rho~(0)`.
    pub fn renormalized(&self) -> Vec<f64> {
        let v0 = self.values[0];
        self.values.iter().map(|v| v / v0).collect()
    }

    /// `rho~` tabulated out to half the period of the frequency grid, where
    /// the lag and frequency grids form an exact discrete cosine pair.
    pub fn extended(&self) -> Result<(TransformGrid, Vec<f64>)> {
        let n = (PI / (self.grid.theta_step * self.grid.delta_step)).round() as usize;
        let delta_max = n as f64 * self.grid.delta_step;
        let grid = TransformGrid::new(self.grid.delta_step, delta_max, self.grid.theta_step, self.grid.theta_max)?;
        let values = grid.deltas().into_iter().map(|d| self.eval(d)).collect();
        Ok((grid, values))
    }
}

fn inverse_at(clipped: &[f64], theta_step: f64, delta: f64) -> f64 {
    let n = clipped.len();
    clipped
        .iter()
        .enumerate()
        .filter(|&(_, &c)| c != 0.0)
        .map(|(k, &c)| trapezoid_weight(k, n, theta_step) * c * (k as f64 * theta_step * delta).cos())
        .sum::<f64>()
        / PI
}

/// Transform, clip the negative spectrum, transform back onto the lag grid.
pub fn psd_adjust(rho: &[f64], w: &TaperWeight, grid: &TransformGrid) -> Result<AdjustedCurve> {
    let spectrum = cosine_transform(rho, w, grid)?;
    let clipped: Vec<f64> = spectrum.iter().map(|&s| s.max(0.0)).collect();
    let values = grid
        .deltas()
        .into_iter()
        .map(|d| inverse_at(&clipped, grid.theta_step, d))
        .collect();
    Ok(AdjustedCurve {
        grid: *grid,
        values,
        spectrum,
        clipped,
    })
}
