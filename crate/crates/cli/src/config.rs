use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use llmrank::{SplitSpec, TrainConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Resolved settings of one run. Loaded from `--config` when given, then
/// overridden field by field by explicit flags, and echoed into the output
/// directory as `run_config.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub pool: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub hash_dim: Option<usize>,
    pub split: SplitSpec,
    pub train: TrainConfig,
    pub lambdas: Vec<f64>,
    /// sha256 of every input file, keyed by path.
    pub input_hashes: BTreeMap<String, String>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    pub fn record_input(&mut self, path: &Path) -> Result<()> {
        let bytes = fs::read(path).with_context(|| format!("hashing {}", path.display()))?;
        let digest = Sha256::digest(&bytes);
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.input_hashes.insert(path.display().to_string(), hex);
        Ok(())
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        write_json(&dir.join("run_config.json"), self)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Accepts a number (scientific notation allowed) or one of the presets
/// `perf` (0), `balanced` (1e3) and `cost` (1e5).
pub fn parse_lambda(s: &str) -> Result<f64, String> {
    let value = match s.trim().to_ascii_lowercase().as_str() {
        "perf" => 0.0,
        "balanced" => 1e3,
        "cost" => 1e5,
        other => other.parse::<f64>().map_err(|_| format!("invalid lambda {s:?}"))?,
    };
    if !(value >= 0.0 && value.is_finite()) {
        return Err(format!("lambda must be finite and >= 0, got {s}"));
    }
    Ok(value)
}

pub fn parse_lambdas(s: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = s
        .split(',')
        .filter(|t| !t.trim().is_empty())
        .map(parse_lambda)
        .collect::<Result<_, _>>()
        .map_err(anyhow::Error::msg)?;
    if values.is_empty() {
        bail!("--lambdas needs at least one value");
    }
    Ok(values)
}
