//! Kernel estimation of separable covariance for functional data observed
//! at irregular spatial locations.
//!
//! Each subject contributes units at locations `s` on `[0, L]`, each unit a
//! response vector on a shared subunit grid. The covariance between units
//! at lag `Δ` is modelled as `ρ(Δ) G(x1, x2)`; this crate estimates the
//! surface, the correlation `ρ`, its bootstrap spread, and a positive
//! semidefinite repair of the estimate, and provides a simulation harness.

// `!(a < b)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod accum;
pub mod bootstrap;
pub mod cv;
pub mod data;
pub mod error;
pub mod estimator;
pub mod kernel;
pub mod pairs;
pub mod psd;
pub mod quad;
pub mod rng;
pub mod simulate;

pub use bootstrap::{bootstrap_sd, BootstrapConfig, BootstrapReport};
pub use cv::{cv1_score, cv2_score, select_bandwidth, select_two_regime, CvConfig, CvReport, Criterion};
pub use data::{center_residuals, Dataset, ResidualSet, Subject};
pub use error::{Error, Result};
pub use estimator::{
    g_hat, raw_covariance, render_surface, rho_hat, sym_covariance, CorrelationCurve, CovarianceEstimate,
    CovarianceSurface,
};
pub use kernel::{kernel_eval, kernel_moments, BandwidthPolicy, KernelFamily, KernelSpec};
pub use psd::{cosine_transform, psd_adjust, taper_eval, AdjustedCurve, TaperWeight, TransformGrid};
