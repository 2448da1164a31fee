//! Run configuration: a JSON file describing one experiment.
//!
//! Relative paths are resolved against the directory holding the config
//! file. [`RunConfig::violations`] reports every problem at once.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use herdsim_core::agents::{GatewayLimits, SyntheticParams};
use herdsim_core::protocols::{ControlCondition, DyadicCondition};
use herdsim_core::{PresentationFormat, PresentationOrder};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    Dyadic,
    Grid,
    Control,
}

impl std::fmt::Display for Experiment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Experiment::Dyadic => "dyadic",
            Experiment::Grid => "grid",
            Experiment::Control => "control",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayBackend {
    pub model_id: String,
    #[serde(default)]
    pub limits: GatewayLimits,
}

/// Exactly one agent backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Backend {
    Synthetic(SyntheticParams),
    Gateway(GatewayBackend),
}

impl Backend {
    pub fn model_id(&self) -> &str {
        match self {
            Backend::Synthetic(p) => &p.model_id,
            Backend::Gateway(g) => &g.model_id,
        }
    }
}

fn default_grid_max() -> usize {
    5
}

fn default_bins() -> usize {
    10
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    pub benchmarks: Vec<PathBuf>,
    pub backend: Backend,
    pub seed: u64,
    /// Dyadic conditions; all of them when absent.
    #[serde(default)]
    pub conditions: Option<Vec<DyadicCondition>>,
    #[serde(default)]
    pub formats: Option<Vec<PresentationFormat>>,
    #[serde(default)]
    pub orders: Option<Vec<PresentationOrder>>,
    #[serde(default)]
    pub control_conditions: Option<Vec<ControlCondition>>,
    #[serde(default = "default_grid_max")]
    pub grid_max: usize,
    #[serde(default = "default_bins")]
    pub n_bins: usize,
    /// Questions drawn per benchmark after filtering; all when absent.
    #[serde(default)]
    pub sample_size: Option<usize>,
    /// Keep only questions whose top original probability is below this.
    #[serde(default)]
    pub contentious_threshold: Option<f64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// JSONL file caching generated reasons (gateway backend).
    #[serde(default)]
    pub reason_cache: Option<PathBuf>,
}

/// A parsed config together with its exact bytes and location.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub bytes: Vec<u8>,
    pub base_dir: PathBuf,
}

impl LoadedConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn benchmark_paths(&self) -> Vec<PathBuf> {
        self.config.benchmarks.iter().map(|p| self.resolve(p)).collect()
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output_dir)
    }
}

fn duplicates<T: Ord + Clone>(items: &[T]) -> bool {
    items.iter().cloned().collect::<BTreeSet<_>>().len() != items.len()
}

impl RunConfig {
    pub fn dyadic_conditions(&self) -> Vec<DyadicCondition> {
        self.conditions.clone().unwrap_or_else(|| DyadicCondition::ALL.to_vec())
    }

    pub fn grid_formats(&self) -> Vec<PresentationFormat> {
        self.formats.clone().unwrap_or_else(|| PresentationFormat::ALL.to_vec())
    }

    pub fn grid_orders(&self) -> Vec<PresentationOrder> {
        self.orders.clone().unwrap_or_else(|| PresentationOrder::ALL.to_vec())
    }

    pub fn control(&self) -> Vec<ControlCondition> {
        self.control_conditions.clone().unwrap_or_else(|| ControlCondition::ALL.to_vec())
    }

    /// Every violated constraint, each naming its field.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.benchmarks.is_empty() {
            out.push("benchmarks: at least one path required".to_string());
        }
        match &self.backend {
            Backend::Synthetic(p) => {
                out.extend(p.violations().into_iter().map(|v| format!("backend.synthetic.{v}")));
            }
            Backend::Gateway(g) => {
                if g.model_id.trim().is_empty() {
                    out.push("backend.gateway.model_id must not be empty".to_string());
                }
                out.extend(g.limits.violations().into_iter().map(|v| format!("backend.gateway.limits.{v}")));
            }
        }
        let empty_or_dup = |name: &str, len: Option<usize>, dup: bool, out: &mut Vec<String>| {
            if len == Some(0) {
                out.push(format!("{name}: must not be empty when given"));
            }
            if dup {
                out.push(format!("{name}: duplicate entries"));
            }
        };
        empty_or_dup(
            "conditions",
            self.conditions.as_ref().map(Vec::len),
            self.conditions.as_deref().is_some_and(duplicates),
            &mut out,
        );
        empty_or_dup(
            "formats",
            self.formats.as_ref().map(Vec::len),
            self.formats.as_deref().is_some_and(duplicates),
            &mut out,
        );
        empty_or_dup(
            "orders",
            self.orders.as_ref().map(Vec::len),
            self.orders.as_deref().is_some_and(duplicates),
            &mut out,
        );
        empty_or_dup(
            "control_conditions",
            self.control_conditions.as_ref().map(Vec::len),
            self.control_conditions.as_deref().is_some_and(duplicates),
            &mut out,
        );
        if !(1..=13).contains(&self.grid_max) {
            out.push(format!("grid_max must be in 1..=13, got {}", self.grid_max));
        }
        if self.n_bins < 2 {
            out.push(format!("n_bins must be >= 2, got {}", self.n_bins));
        }
        if self.sample_size == Some(0) {
            out.push("sample_size must be >= 1".to_string());
        }
        if let Some(t) = self.contentious_threshold {
            if !(t > 0.0 && t <= 1.0) {
                out.push(format!("contentious_threshold must be in (0, 1], got {t}"));
            }
        }
        out
    }
}

/// Reads and validates a config file.
pub fn load(path: &Path) -> Result<LoadedConfig> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let config: RunConfig = serde_json::from_slice(&bytes)
        .with_context(|| format!("parsing {}", path.display()))?;
    let violations = config.violations();
    if !violations.is_empty() {
        bail!(
            "{} has {} invalid field(s):\n  {}",
            path.display(),
            violations.len(),
            violations.join("\n  ")
        );
    }
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(LoadedConfig { config, bytes, base_dir })
}
