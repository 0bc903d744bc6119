//! Benchmark run configuration (TOML).
//!
//! ```toml
//! seed = 1
//! relaxation = "both"        # lr | nfr | both
//! periods = [4, 8]
//! cases = ["../cases/A_gen.toml"]   # relative to the config file
//! single_core = true
//!
//! [tolerances]
//! feasibility = 1e-6
//!
//! [output]
//! csv = "results.csv"
//! markdown = "results.md"
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RelaxationSelector {
    Lr,
    Nfr,
    Both,
}

impl RelaxationSelector {
    pub fn wants_lr(self) -> bool {
        matches!(self, Self::Lr | Self::Both)
    }

    pub fn wants_nfr(self) -> bool {
        matches!(self, Self::Nfr | Self::Both)
    }
}

impl std::str::FromStr for RelaxationSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lr" => Ok(Self::Lr),
            "nfr" => Ok(Self::Nfr),
            "both" => Ok(Self::Both),
            other => Err(Error::Config(format!("unknown relaxation {other:?} (expected lr, nfr or both)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Acceptance tolerance of primal points.
    pub feasibility: f64,
    pub qp: f64,
    pub sdp: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-6,
            qp: 1e-8,
            sdp: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BundleConfig {
    pub max_iter: usize,
    pub descent_fraction: f64,
    pub initial_weight: f64,
    pub min_weight: f64,
    pub max_weight: f64,
    pub max_cuts: usize,
    pub tol: f64,
}

impl Default for BundleConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            descent_fraction: 0.1,
            initial_weight: 1.0,
            min_weight: 1e-4,
            max_weight: 1e6,
            max_cuts: 100,
            tol: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SdpConfig {
    pub max_iter: usize,
    /// Add `w ≥ x²` tangent cuts to the flow relaxation.
    pub tangent_cuts: bool,
}

impl Default for SdpConfig {
    fn default() -> Self {
        Self {
            max_iter: 200,
            tangent_cuts: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrimalConfig {
    pub starts: usize,
}

impl Default for PrimalConfig {
    fn default() -> Self {
        Self { starts: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub csv: Option<PathBuf>,
    pub markdown: Option<PathBuf>,
    /// Directory receiving one box dump per instance.
    pub boxes_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_relaxation")]
    pub relaxation: RelaxationSelector,
    #[serde(default = "default_periods")]
    pub periods: Vec<usize>,
    pub cases: Vec<PathBuf>,
    #[serde(default)]
    pub single_core: bool,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub bundle: BundleConfig,
    #[serde(default)]
    pub sdp: SdpConfig,
    #[serde(default)]
    pub primal: PrimalConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

fn default_relaxation() -> RelaxationSelector {
    RelaxationSelector::Both
}

fn default_periods() -> Vec<usize> {
    vec![4, 8]
}

impl RunConfig {
    /// Parses a config; relative case and output paths resolve against `base`.
    pub fn from_toml_str(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.cases.is_empty() {
            return Err(Error::Config("no cases listed".into()));
        }
        if cfg.periods.is_empty() || cfg.periods.contains(&0) {
            return Err(Error::Config("periods must be a non-empty list of positive integers".into()));
        }
        let t = &cfg.tolerances;
        if !(t.feasibility > 0.0 && t.qp > 0.0 && t.sdp > 0.0) {
            return Err(Error::Config("tolerances must be positive".into()));
        }
        let b = &cfg.bundle;
        if !(b.descent_fraction > 0.0 && b.descent_fraction < 1.0)
            || !(0.0 < b.min_weight && b.min_weight <= b.initial_weight && b.initial_weight <= b.max_weight)
            || b.max_cuts < 2
        {
            return Err(Error::Config("invalid bundle parameters".into()));
        }
        if cfg.primal.starts == 0 {
            return Err(Error::Config("primal.starts must be at least 1".into()));
        }
        let rebase = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        cfg.cases.iter_mut().for_each(rebase);
        for p in [&mut cfg.output.csv, &mut cfg.output.markdown, &mut cfg.output.boxes_dir].into_iter().flatten() {
            rebase(p);
        }
        Ok(cfg)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml_str(&text, base)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_rebasing() {
        let cfg = RunConfig::from_toml_str("cases = [\"x.toml\"]\n", Path::new("/tmp/run")).unwrap();
        assert_eq!(cfg.periods, vec![4, 8]);
        assert_eq!(cfg.relaxation, RelaxationSelector::Both);
        assert_eq!(cfg.cases[0], PathBuf::from("/tmp/run/x.toml"));
        assert_eq!(cfg.tolerances.feasibility, 1e-6);
        assert_eq!(cfg.primal.starts, 5);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(RunConfig::from_toml_str("cases = []\n", Path::new(".")).is_err());
        assert!(RunConfig::from_toml_str("cases = [\"a\"]\nperiods = [0]\n", Path::new(".")).is_err());
        assert!(RunConfig::from_toml_str("cases = [\"a\"]\nrelaxation = \"sdp\"\n", Path::new(".")).is_err());
        assert!(RunConfig::from_toml_str("cases = [\"a\"]\nbogus = 1\n", Path::new(".")).is_err());
    }
}
