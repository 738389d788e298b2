use std::fmt::Write as _;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use kcorr::bootstrap::{bootstrap_sd, default_block_length, BootstrapConfig, BootstrapReport};
use kcorr::cv::{select_bandwidth, select_two_regime, Candidates, CvConfig, CvReport};
use kcorr::data::Dataset;
use kcorr::estimator::{CorrelationCurve, CovarianceEstimate, CovarianceSurface};
use kcorr::kernel::KernelSpec;
use kcorr::psd::{psd_adjust, AdjustedCurve, TaperWeight, TransformGrid};
use kcorr::simulate::experiment::{run_experiment, ScenarioConfig};
use serde::Serialize;

use crate::ingest::{export, ingest};
use crate::manifest::{InputDigest, OutputDir, RunManifest};
use crate::options::{RunOptions, DEFAULT_REPLICATES};
use crate::{
    resolve, AdjustArgs, BandwidthFlags, BootstrapArgs, CvArgs, DataFlags, EstimateArgs, Preset, ReportArgs,
    SimulateArgs,
};

/// Multiplier on the bootstrap sd for the band in `report.tsv`.
pub const BAND_SDS: f64 = 2.0;

pub fn fmt(v: f64) -> String {
    v.to_string()
}

pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), fmt)
}

fn data_flags(d: &DataFlags, b: Option<&BandwidthFlags>) -> RunOptions {
    RunOptions {
        kernel: d.kernel,
        bandwidth: b.and_then(BandwidthFlags::policy),
        domain_length: d.domain_length,
        ..Default::default()
    }
}

/// Like `resolve`, recording the default kernel so the manifest names it.
fn resolve_data(d: &DataFlags, flags: RunOptions) -> Result<RunOptions> {
    let mut opts = resolve(d.config.as_ref(), flags)?;
    opts.kernel.get_or_insert_default();
    Ok(opts)
}

fn load(d: &DataFlags, opts: &RunOptions) -> Result<(Dataset, InputDigest)> {
    let data = ingest(&d.input, opts.domain_length)?;
    Ok((data, InputDigest::of(&d.input)?))
}

fn fit(data: &Dataset, kernel: KernelSpec, grid: &[f64]) -> Result<CovarianceEstimate> {
    let cap = CovarianceEstimate::cap_for_grid(grid, &kernel);
    Ok(CovarianceEstimate::from_dataset(data, kernel, Some(cap))?)
}

pub fn curve_tsv(curve: &CorrelationCurve) -> String {
    let mut out = String::from("delta\trho\n");
    for (d, r) in curve.delta_grid.iter().zip(&curve.rho) {
        let _ = writeln!(out, "{}\t{}", fmt(*d), fmt_opt(*r));
    }
    out
}

pub fn g_hat_tsv(curve: &CorrelationCurve, grid: &[f64]) -> String {
    let mut out = String::from("x1\tx2\tg\n");
    for (i, x1) in grid.iter().enumerate() {
        for (j, x2) in grid.iter().enumerate() {
            let _ = writeln!(out, "{}\t{}\t{}", fmt(*x1), fmt(*x2), fmt(curve.g_hat[(i, j)]));
        }
    }
    out
}

pub fn surface_tsv(surface: &CovarianceSurface, grid: &[f64]) -> String {
    let mut out = String::from("delta\tx1\tx2\tvalue\tweight\n");
    for (k, d) in surface.delta_grid.iter().enumerate() {
        for (i, x1) in grid.iter().enumerate() {
            for (j, x2) in grid.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}",
                    fmt(*d),
                    fmt(*x1),
                    fmt(*x2),
                    fmt_opt(surface.get(i, j, k)),
                    fmt(surface.effective_weight[k])
                );
            }
        }
    }
    out
}

pub fn estimate(a: &EstimateArgs) -> Result<RunManifest> {
    let opts = resolve_data(
        &a.data,
        RunOptions {
            delta_max: a.delta_max,
            ..data_flags(&a.data, Some(&a.bandwidth))
        },
    )?;
    let kernel = opts.kernel_spec()?;
    let grid = opts.delta_grid()?;
    let (data, input) = load(&a.data, &opts)?;
    let est = fit(&data, kernel, &grid)?;
    let curve = est.correlation_curve(&grid)?;

    let mut out = OutputDir::create(&a.data.output_dir)?;
    out.write("curve.tsv", curve_tsv(&curve).as_bytes())?;
    out.write("g_hat.tsv", g_hat_tsv(&curve, data.subunit_grid()).as_bytes())?;
    if a.surface {
        let surface = est.render_surface(&grid)?;
        out.write("surface.tsv", surface_tsv(&surface, data.subunit_grid()).as_bytes())?;
    }

    #[derive(Serialize)]
    struct Effective<'a> {
        #[serde(flatten)]
        opts: &'a RunOptions,
        surface: bool,
    }
    out.finish("estimate", None, &Effective { opts: &opts, surface: a.surface }, Some(input))
}

#[derive(Debug, Serialize)]
pub struct Selection<'a> {
    pub criterion: kcorr::cv::Criterion,
    pub delta0: f64,
    pub bandwidth: kcorr::kernel::BandwidthPolicy,
    pub score: f64,
    pub candidates: &'a Candidates,
}

pub fn cv_config(opts: &RunOptions, split: Option<f64>) -> Result<CvConfig> {
    let Some(delta0) = opts.delta0 else {
        bail!("--delta0 is required");
    };
    let criterion = opts.criterion.unwrap_or(kcorr::cv::Criterion::Cv2);
    let list = opts
        .candidates
        .clone()
        .unwrap_or_else(|| kcorr::cv::default_candidates(delta0));
    let candidates = match split {
        None => Candidates::Global(list),
        Some(split) => Candidates::TwoRegime {
            near: list.clone(),
            far: list,
            split,
        },
    };
    Ok(CvConfig {
        delta_cap: delta0,
        candidates,
        criterion,
    })
}

pub fn run_cv(data: &Dataset, opts: &RunOptions, split: Option<f64>) -> Result<(CvConfig, CvReport)> {
    let config = cv_config(opts, split)?;
    let family = opts.kernel.unwrap_or_default();
    let report = match config.candidates {
        Candidates::Global(_) => select_bandwidth(data, family, &config)?,
        Candidates::TwoRegime { .. } => select_two_regime(data, family, &config)?,
    };
    Ok((config, report))
}

pub fn cv(a: &CvArgs) -> Result<RunManifest> {
    let opts = resolve_data(
        &a.data,
        RunOptions {
            delta0: a.delta0,
            criterion: a.criterion,
            candidates: a.candidates.clone(),
            ..data_flags(&a.data, None)
        },
    )?;
    let (data, input) = load(&a.data, &opts)?;
    let (config, report) = run_cv(&data, &opts, a.split)?;

    let mut out = OutputDir::create(&a.data.output_dir)?;
    out.write("cv.tsv", report.to_tsv().as_bytes())?;
    let selection = Selection {
        criterion: report.criterion,
        delta0: report.delta_cap,
        bandwidth: report.best_bandwidth(),
        score: report.min_score(),
        candidates: &config.candidates,
    };
    let mut text = serde_json::to_string_pretty(&selection)?;
    text.push('\n');
    out.write("selected.json", text.as_bytes())?;

    #[derive(Serialize)]
    struct Effective<'a> {
        #[serde(flatten)]
        opts: &'a RunOptions,
        cv: &'a CvConfig,
    }
    out.finish("cv", None, &Effective { opts: &opts, cv: &config }, Some(input))
}

fn bootstrap_flags(
    d: &DataFlags,
    b: &BandwidthFlags,
    delta_max: Option<f64>,
    block_length: Option<f64>,
    replicates: Option<usize>,
) -> RunOptions {
    RunOptions {
        delta_max,
        block_length,
        replicates,
        ..data_flags(d, Some(b))
    }
}

/// Fills in the default block length and replicate count.
fn bootstrap_config(data: &Dataset, opts: &mut RunOptions, seed: u64, grid: Vec<f64>) -> BootstrapConfig {
    let block_length = *opts.block_length.get_or_insert_with(|| default_block_length(data));
    let replicates = *opts.replicates.get_or_insert(DEFAULT_REPLICATES);
    BootstrapConfig::new(block_length, replicates, seed, grid)
}

pub fn bootstrap_tsv(report: &BootstrapReport) -> String {
    let mut out = String::from("delta\trho\tsd\tusable\n");
    for k in 0..report.delta_grid.len() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            fmt(report.delta_grid[k]),
            fmt(report.rho_hat[k]),
            fmt_opt(report.sd[k]),
            report.usable[k]
        );
    }
    out
}

pub fn bootstrap(a: &BootstrapArgs) -> Result<RunManifest> {
    let mut opts = resolve_data(
        &a.data,
        bootstrap_flags(&a.data, &a.bandwidth, a.delta_max, a.block_length, a.replicates),
    )?;
    let kernel = opts.kernel_spec()?;
    let grid = opts.delta_grid()?;
    let (data, input) = load(&a.data, &opts)?;
    let config = bootstrap_config(&data, &mut opts, a.seed, grid);
    let report = bootstrap_sd(&data, &kernel, &config)?;

    let mut out = OutputDir::create(&a.data.output_dir)?;
    out.write("bootstrap.tsv", bootstrap_tsv(&report).as_bytes())?;
    out.write("bootstrap.json", serde_json::to_string(&report)?.as_bytes())?;
    out.finish("bootstrap", Some(a.seed), &opts, Some(input))
}

/// Reads a `delta`/`rho` TSV and checks that the lags form `0, s, 2s, ...`.
pub fn read_curve(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h == name);
    let di = col("delta").ok_or_else(|| anyhow!("{}: no `delta` column", path.display()))?;
    let ri = col("rho")
        .or_else(|| col("rho_hat"))
        .ok_or_else(|| anyhow!("{}: no `rho` column", path.display()))?;
    let (mut deltas, mut rho) = (Vec::new(), Vec::new());
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let num = |k: usize| -> Result<f64> {
            let s = rec.get(k).unwrap_or("");
            let v: f64 = s
                .parse()
                .map_err(|_| anyhow!("{}: line {line}: `{s}` is not a number", path.display()))?;
            if !v.is_finite() {
                bail!("{}: line {line}: non-finite value", path.display());
            }
            Ok(v)
        };
        deltas.push(num(di)?);
        rho.push(num(ri)?);
    }
    if deltas.len() < 2 {
        bail!("{}: need at least two rows", path.display());
    }
    let step = deltas[1] - deltas[0];
    let max = *deltas.last().unwrap();
    let even = deltas[0] == 0.0
        && step > 0.0
        && deltas
            .iter()
            .enumerate()
            .all(|(k, d)| (d - k as f64 * step).abs() <= 1e-9 * max);
    if !even {
        bail!("{}: lags must be evenly spaced from 0", path.display());
    }
    Ok((deltas, rho))
}

fn adjust_curve(deltas: &[f64], rho: &[f64], taper: TaperWeight) -> Result<AdjustedCurve> {
    let max = *deltas.last().unwrap();
    let step = max / (deltas.len() - 1) as f64;
    let grid = TransformGrid::for_lags(step, max)?;
    Ok(psd_adjust(rho, &taper, &grid)?)
}

pub fn adjusted_tsv(deltas: &[f64], rho: &[f64], adj: &AdjustedCurve) -> String {
    let mut out = String::from("delta\trho_hat\trho_tilde\trho_tilde_renormalized\n");
    let renorm = adj.renormalized();
    for k in 0..deltas.len() {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}",
            fmt(deltas[k]),
            fmt(rho[k]),
            fmt(adj.values[k]),
            fmt(renorm[k])
        );
    }
    out
}

pub fn spectrum_tsv(adj: &AdjustedCurve) -> String {
    let mut out = String::from("theta\ttransform\tclipped\n");
    for (k, t) in adj.grid.thetas().iter().enumerate() {
        let _ = writeln!(out, "{}\t{}\t{}", fmt(*t), fmt(adj.spectrum[k]), fmt(adj.clipped[k]));
    }
    out
}

pub fn adjust(a: &AdjustArgs) -> Result<RunManifest> {
    let mut opts = resolve(
        a.config.as_ref(),
        RunOptions {
            taper: a.taper,
            ..Default::default()
        },
    )?;
    let (deltas, rho) = read_curve(&a.input)?;
    let taper = *opts
        .taper
        .get_or_insert_with(|| TaperWeight::default_for(*deltas.last().unwrap()));
    let adj = adjust_curve(&deltas, &rho, taper)?;

    let mut out = OutputDir::create(&a.output_dir)?;
    out.write("adjusted.tsv", adjusted_tsv(&deltas, &rho, &adj).as_bytes())?;
    out.write("spectrum.tsv", spectrum_tsv(&adj).as_bytes())?;
    out.finish("adjust", None, &opts, Some(InputDigest::of(&a.input)?))
}

pub fn scenario(a: &SimulateArgs) -> Result<ScenarioConfig> {
    let mut cfg = match (&a.config, a.preset) {
        (Some(path), _) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ScenarioConfig::from_json(&text).with_context(|| format!("parsing scenario {}", path.display()))?
        }
        (None, Some(Preset::Sim1)) => ScenarioConfig::sim1_style(),
        (None, Some(Preset::Sim3)) => ScenarioConfig::sim3(),
        (None, None) => bail!("pass --config or --preset"),
    };
    cfg.seed = a.seed;
    if let Some(n) = a.replications {
        cfg.replications = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn simulate(a: &SimulateArgs) -> Result<RunManifest> {
    let cfg = scenario(a)?;
    let report = run_experiment(&cfg)?;

    let mut out = OutputDir::create(&a.output_dir)?;
    out.write("simulation.tsv", report.to_tsv().as_bytes())?;
    let mut text = serde_json::to_string_pretty(&report.summary())?;
    text.push('\n');
    out.write("summary.json", text.as_bytes())?;
    if a.write_data {
        out.write("data.csv", &export(&cfg.replicate_data(0)?)?)?;
    }
    let input = match &a.config {
        Some(p) => Some(InputDigest::of(p)?),
        None => None,
    };
    out.finish("simulate", Some(a.seed), &cfg, input)
}

pub fn report_tsv(boot: &BootstrapReport, adj: &AdjustedCurve) -> String {
    let mut out = String::from("delta\trho_hat\tsd\tlower\tupper\trho_tilde\trho_tilde_renormalized\n");
    let renorm = adj.renormalized();
    for k in 0..boot.delta_grid.len() {
        let r = boot.rho_hat[k];
        let sd = boot.sd[k];
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            fmt(boot.delta_grid[k]),
            fmt(r),
            fmt_opt(sd),
            fmt_opt(sd.map(|s| r - BAND_SDS * s)),
            fmt_opt(sd.map(|s| r + BAND_SDS * s)),
            fmt(adj.values[k]),
            fmt(renorm[k])
        );
    }
    out
}

pub fn report(a: &ReportArgs) -> Result<RunManifest> {
    let mut opts = resolve_data(
        &a.data,
        RunOptions {
            taper: a.taper,
            ..bootstrap_flags(&a.data, &a.bandwidth, a.delta_max, a.block_length, a.replicates)
        },
    )?;
    let kernel = opts.kernel_spec()?;
    let grid = opts.delta_grid()?;
    let (data, input) = load(&a.data, &opts)?;
    let config = bootstrap_config(&data, &mut opts, a.seed, grid.clone());
    let boot = bootstrap_sd(&data, &kernel, &config)?;
    let taper = *opts
        .taper
        .get_or_insert_with(|| TaperWeight::default_for(*grid.last().unwrap()));
    let adj = adjust_curve(&grid, &boot.rho_hat, taper)?;

    let mut out = OutputDir::create(&a.data.output_dir)?;
    out.write("report.tsv", report_tsv(&boot, &adj).as_bytes())?;
    out.finish("report", Some(a.seed), &opts, Some(input))
}
