//! Smoothing kernels on [-1, 1] and bandwidth policies.
//!
//! Every kernel is a symmetric continuous density supported on [-1, 1].
//! Bandwidths and lags share whatever distance unit the data uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelFamily {
    #[default]
    Epanechnikov,
    Quartic,
    Triangular,
}

impl KernelFamily {
    /// K(u); zero outside [-1, 1].
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        let a = u.abs();
        if a >= 1.0 {
            return 0.0;
        }
        match self {
            KernelFamily::Epanechnikov => 0.75 * (1.0 - a * a),
            KernelFamily::Quartic => {
                let t = 1.0 - a * a;
                0.9375 * t * t
            }
            KernelFamily::Triangular => 1.0 - a,
        }
    }

    /// (sigma_K^2, R_K) = (int u^2 K, int K^2).
    pub fn moments(self) -> (f64, f64) {
        match self {
            KernelFamily::Epanechnikov => (0.2, 0.6),
            KernelFamily::Quartic => (1.0 / 7.0, 5.0 / 7.0),
            KernelFamily::Triangular => (1.0 / 6.0, 2.0 / 3.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            KernelFamily::Epanechnikov => "epanechnikov",
            KernelFamily::Quartic => "quartic",
            KernelFamily::Triangular => "triangular",
        }
    }
}

impl std::str::FromStr for KernelFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" => Ok(KernelFamily::Epanechnikov),
            "quartic" | "biweight" => Ok(KernelFamily::Quartic),
            "triangular" => Ok(KernelFamily::Triangular),
            other => Err(Error::invalid(format!("unknown kernel family `{other}`"))),
        }
    }
}

/// Which bandwidth applies at a given lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BandwidthPolicy {
    Global { h: f64 },
    /// `h_near` for |lag| <= `split`, `h_far` beyond; a hard switch.
    TwoRegime { h_near: f64, h_far: f64, split: f64 },
}

impl BandwidthPolicy {
    #[inline]
    pub fn at(&self, delta: f64) -> f64 {
        match *self {
            BandwidthPolicy::Global { h } => h,
            BandwidthPolicy::TwoRegime { h_near, h_far, split } => {
                if delta.abs() <= split {
                    h_near
                } else {
                    h_far
                }
            }
        }
    }

    /// Largest bandwidth the policy can use.
    pub fn max(&self) -> f64 {
        match *self {
            BandwidthPolicy::Global { h } => h,
            BandwidthPolicy::TwoRegime { h_near, h_far, .. } => h_near.max(h_far),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |h: f64| h.is_finite() && h > 0.0;
        match *self {
            BandwidthPolicy::Global { h } if ok(h) => Ok(()),
            BandwidthPolicy::TwoRegime { h_near, h_far, split }
                if ok(h_near) && ok(h_far) && ok(split) =>
            {
                Ok(())
            }
            other => Err(Error::invalid(format!(
                "bandwidths and split must be finite and positive: {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: BandwidthPolicy,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: BandwidthPolicy) -> Result<Self> {
        bandwidth.validate()?;
        Ok(Self { family, bandwidth })
    }

    pub fn global(family: KernelFamily, h: f64) -> Result<Self> {
        Self::new(family, BandwidthPolicy::Global { h })
    }

    pub fn two_regime(family: KernelFamily, h_near: f64, h_far: f64, split: f64) -> Result<Self> {
        Self::new(family, BandwidthPolicy::TwoRegime { h_near, h_far, split })
    }

    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        self.family.eval(u)
    }

    pub fn moments(&self) -> (f64, f64) {
        self.family.moments()
    }

    #[inline]
    pub fn bandwidth_at(&self, delta: f64) -> f64 {
        self.bandwidth.at(delta)
    }

    /// K_h(x) = K(x / h) / h.
    #[inline]
    pub fn scaled(&self, x: f64, h: f64) -> f64 {
        self.family.eval(x / h) / h
    }
}

/// K(u) for the spec's family.
pub fn kernel_eval(spec: &KernelSpec, u: f64) -> f64 {
    spec.eval(u)
}

/// (sigma_K^2, R_K) for the spec's family.
pub fn kernel_moments(spec: &KernelSpec) -> (f64, f64) {
    spec.moments()
}
