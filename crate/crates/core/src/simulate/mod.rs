//! Synthetic data from the separable model, with oracles for checking estimates.

pub mod correlation;
pub mod experiment;
pub mod field;
pub mod intensity;
pub mod oracle;

pub use correlation::{bessel_k, matern, matern_bessel, sim3_rho, CorrelationSpec};
pub use experiment::{run_experiment, ExperimentReport, LagGrid, ScenarioConfig};
pub use field::{sample_dataset, sample_field, RandomFieldModel};
pub use intensity::{sample_locations, IntensityDensity, PointProcess};
pub use oracle::{asymptotic_bias_rho, empirical_g, imse, noise_variance_estimate};
