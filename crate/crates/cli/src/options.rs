//! Run options: an optional versioned JSON file overlaid by command-line flags.

use std::path::Path;

use anyhow::{bail, Context, Result};
use kcorr::cv::Criterion;
use kcorr::kernel::{BandwidthPolicy, KernelFamily, KernelSpec};
use kcorr::psd::TaperWeight;
use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

/// Points in the default lag grid `0, delta_max / 100, ..., delta_max`.
pub const DEFAULT_GRID_POINTS: usize = 101;

pub const DEFAULT_REPLICATES: usize = 200;

/// Everything a non-simulation command may be configured with. Absent fields
/// fall back to command defaults; the resolved set is what the manifest records.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunOptions {
    #[serde(default)]
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelFamily>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bandwidth: Option<BandwidthPolicy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta_max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub candidates: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<Criterion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block_length: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taper: Option<TaperWeight>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub domain_length: Option<f64>,
}

impl RunOptions {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let opts: RunOptions =
            serde_json::from_str(&text).with_context(|| format!("parsing options {}", path.display()))?;
        if opts.schema_version != SCHEMA_VERSION {
            bail!(
                "{}: unsupported schema_version {} (expected {SCHEMA_VERSION})",
                path.display(),
                opts.schema_version
            );
        }
        Ok(opts)
    }

    /// Fields set in `flags` win over fields set here.
    pub fn overlay(mut self, flags: RunOptions) -> Self {
        macro_rules! take {
            ($($f:ident),*) => {$( if flags.$f.is_some() { self.$f = flags.$f; } )*};
        }
        take!(kernel, bandwidth, delta_max, delta0, candidates, criterion, block_length, replicates, taper, domain_length);
        self.schema_version = SCHEMA_VERSION;
        self
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec> {
        let Some(bandwidth) = self.bandwidth else {
            bail!("a bandwidth is required: pass --bandwidth, or --bandwidth-near/--bandwidth-far/--split");
        };
        Ok(KernelSpec::new(self.kernel.unwrap_or_default(), bandwidth)?)
    }

    pub fn delta_grid(&self) -> Result<Vec<f64>> {
        let Some(max) = self.delta_max else {
            bail!("--delta-max is required");
        };
        default_grid(max)
    }
}

pub fn default_grid(delta_max: f64) -> Result<Vec<f64>> {
    if !(delta_max.is_finite() && delta_max > 0.0) {
        bail!("--delta-max must be finite and positive, got {delta_max}");
    }
    let n = DEFAULT_GRID_POINTS - 1;
    Ok((0..=n).map(|k| delta_max * k as f64 / n as f64).collect())
}

/// `none`, `w1:D` or `w2:D1:D2`.
pub fn parse_taper(s: &str) -> Result<TaperWeight, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let num = |t: &str| t.parse::<f64>().map_err(|e| format!("bad number `{t}` in taper: {e}"));
    let w = match parts.as_slice() {
        ["none"] => TaperWeight::None,
        ["w1", d] => TaperWeight::W1 { d: num(d)? },
        ["w2", d1, d2] => TaperWeight::W2 {
            d1: num(d1)?,
            d2: num(d2)?,
        },
        _ => return Err(format!("expected none, w1:D or w2:D1:D2, got `{s}`")),
    };
    w.validate().map_err(|e| e.to_string())?;
    Ok(w)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_has_101_points() {
        let g = default_grid(500.0).unwrap();
        assert_eq!(g.len(), 101);
        assert_eq!(g[0], 0.0);
        assert_eq!(g[100], 500.0);
        assert_eq!(g[1], 5.0);
    }

    #[test]
    fn flags_win() {
        let file = RunOptions {
            delta_max: Some(100.0),
            replicates: Some(10),
            ..Default::default()
        };
        let flags = RunOptions {
            delta_max: Some(300.0),
            ..Default::default()
        };
        let o = file.overlay(flags);
        assert_eq!(o.delta_max, Some(300.0));
        assert_eq!(o.replicates, Some(10));
    }

    #[test]
    fn taper_syntax() {
        assert_eq!(parse_taper("none").unwrap(), TaperWeight::None);
        assert_eq!(parse_taper("w2:300:500").unwrap(), TaperWeight::W2 { d1: 300.0, d2: 500.0 });
        assert!(parse_taper("w2:500:300").is_err());
        assert!(parse_taper("w3").is_err());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<RunOptions>(r#"{"schema_version":1,"bandwith":3}"#).is_err());
    }
}
