//! Command-line front end for `kcorr`: reads CSV data, runs the estimators and
//! writes plot-ready TSV tables plus a `manifest.json` into an output directory.

pub mod commands;
pub mod ingest;
pub mod manifest;
pub mod options;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};
use kcorr::cv::Criterion;
use kcorr::kernel::{BandwidthPolicy, KernelFamily};
use kcorr::psd::TaperWeight;

use crate::options::RunOptions;

#[derive(Debug, Parser)]
#[command(name = "kcorr", version, about = "Kernel estimation of unit-level correlation in hierarchical spatial data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Correlation curve, G and (optionally) the covariance surface.
    Estimate(EstimateArgs),
    /// Leave-one-subject-out bandwidth selection.
    Cv(CvArgs),
    /// Weighted block-bootstrap standard deviations.
    Bootstrap(BootstrapArgs),
    /// Positive semidefinite adjustment of a correlation curve.
    Adjust(AdjustArgs),
    /// Monte Carlo study of a simulation scenario.
    Simulate(SimulateArgs),
    /// Estimate, bootstrap band and adjusted curve in one table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataFlags {
    /// CSV with header `subject,unit_location,subunit,response`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    /// Versioned JSON run options; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Domain length L; defaults to the largest unit location.
    #[arg(long)]
    pub domain_length: Option<f64>,
    #[arg(long)]
    pub kernel: Option<KernelFamily>,
}

#[derive(Debug, Clone, Default, Args)]
pub struct BandwidthFlags {
    /// Global bandwidth h.
    #[arg(long, conflicts_with_all = ["bandwidth_near", "bandwidth_far", "split"])]
    pub bandwidth: Option<f64>,
    /// Bandwidth for |lag| <= split.
    #[arg(long, requires_all = ["bandwidth_far", "split"])]
    pub bandwidth_near: Option<f64>,
    /// Bandwidth for |lag| > split.
    #[arg(long, requires_all = ["bandwidth_near", "split"])]
    pub bandwidth_far: Option<f64>,
    #[arg(long, requires_all = ["bandwidth_near", "bandwidth_far"])]
    pub split: Option<f64>,
}

impl BandwidthFlags {
    pub fn policy(&self) -> Option<BandwidthPolicy> {
        match (self.bandwidth, self.bandwidth_near, self.bandwidth_far, self.split) {
            (Some(h), ..) => Some(BandwidthPolicy::Global { h }),
            (None, Some(h_near), Some(h_far), Some(split)) => Some(BandwidthPolicy::TwoRegime { h_near, h_far, split }),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub bandwidth: BandwidthFlags,
    /// Largest lag of the 101-point output grid.
    #[arg(long)]
    pub delta_max: Option<f64>,
    /// Also write the symmetrized covariance surface.
    #[arg(long)]
    pub surface: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataFlags,
    /// Only pairs with |lag| < delta0 enter the criterion.
    #[arg(long)]
    pub delta0: Option<f64>,
    #[arg(long)]
    pub criterion: Option<Criterion>,
    /// Comma-separated candidate bandwidths (default: 20 log-spaced on [delta0/50, delta0/2]).
    #[arg(long, value_delimiter = ',')]
    pub candidates: Option<Vec<f64>>,
    /// Search near/far bandwidth pairs switching at this lag.
    #[arg(long)]
    pub split: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct BootstrapArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub bandwidth: BandwidthFlags,
    #[arg(long)]
    pub delta_max: Option<f64>,
    #[arg(long)]
    pub seed: u64,
    /// Block length L* (default: the largest leaving 2 blocks per subject and 24 overall).
    #[arg(long)]
    pub block_length: Option<f64>,
    /// Bootstrap replicates B.
    #[arg(long)]
    pub replicates: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AdjustArgs {
    /// TSV curve with a `delta` column and a `rho` column on an even grid from 0.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `none`, `w1:D` or `w2:D1:D2` (default: w2 over the last 40% of the grid).
    #[arg(long, value_parser = options::parse_taper)]
    pub taper: Option<TaperWeight>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    Sim1,
    Sim3,
}

#[derive(Debug, Clone, Args)]
#[command(group(clap::ArgGroup::new("scenario").required(true).args(["config", "preset"])))]
pub struct SimulateArgs {
    /// Scenario JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long)]
    pub output_dir: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Override the scenario's replication count.
    #[arg(long)]
    pub replications: Option<usize>,
    /// Also export replicate 0's data set as `data.csv`.
    #[arg(long)]
    pub write_data: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub data: DataFlags,
    #[command(flatten)]
    pub bandwidth: BandwidthFlags,
    #[arg(long)]
    pub delta_max: Option<f64>,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub block_length: Option<f64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long, value_parser = options::parse_taper)]
    pub taper: Option<TaperWeight>,
}

/// Options file (if any) overlaid with flags.
pub(crate) fn resolve(config: Option<&PathBuf>, flags: RunOptions) -> Result<RunOptions> {
    let base = match config {
        Some(p) => RunOptions::load(p)?,
        None => RunOptions::default(),
    };
    Ok(base.overlay(flags))
}

pub fn run(cli: &Cli) -> Result<manifest::RunManifest> {
    match &cli.command {
        Command::Estimate(a) => commands::estimate(a),
        Command::Cv(a) => commands::cv(a),
        Command::Bootstrap(a) => commands::bootstrap(a),
        Command::Adjust(a) => commands::adjust(a),
        Command::Simulate(a) => commands::simulate(a),
        Command::Report(a) => commands::report(a),
    }
}
