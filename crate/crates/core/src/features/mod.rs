//! Interpretable prompt features.
//!
//! A [`FeatureSchema`] fixes the name, group and range of every coordinate of
//! the feature vector. Version 1 holds 28 heuristic text features followed by a
//! proxy block with one probability per benchmark category predicted by a
//! [`ProxyModel`]. All values lie in `[0, 1]` and are rounded to `f32`
//! precision so binary feature files reproduce them exactly.

mod extract;
mod matrix;
mod proxy;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::hex;
use crate::error::{Error, Result};

pub use extract::extract_features;
pub use matrix::{featurize_dataset, FeatureManifest, FeatureMatrix};
pub use proxy::{train_proxy, ProxyModel};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureGroup {
    Difficulty,
    TaskType,
    Knowledge,
    OutputFormat,
    ScenarioComplexity,
    RoutingHints,
    QualityIndicators,
    Proxy,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 8] = [
        FeatureGroup::Difficulty,
        FeatureGroup::TaskType,
        FeatureGroup::Knowledge,
        FeatureGroup::OutputFormat,
        FeatureGroup::ScenarioComplexity,
        FeatureGroup::RoutingHints,
        FeatureGroup::QualityIndicators,
        FeatureGroup::Proxy,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            FeatureGroup::Difficulty => "difficulty",
            FeatureGroup::TaskType => "task_type",
            FeatureGroup::Knowledge => "knowledge",
            FeatureGroup::OutputFormat => "output_format",
            FeatureGroup::ScenarioComplexity => "scenario_complexity",
            FeatureGroup::RoutingHints => "routing_hints",
            FeatureGroup::QualityIndicators => "quality_indicators",
            FeatureGroup::Proxy => "proxy",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureEntry {
    pub name: String,
    pub group: FeatureGroup,
    pub range: [f64; 2],
}

/// Names of the heuristic (non-proxy) features, in schema order.
pub(crate) const BASE_FEATURES: [(&str, FeatureGroup); 28] = [
    ("char_length", FeatureGroup::Difficulty),
    ("sentence_count", FeatureGroup::Difficulty),
    ("mean_word_length", FeatureGroup::Difficulty),
    ("digit_density", FeatureGroup::Difficulty),
    ("nesting_depth", FeatureGroup::Difficulty),
    ("multiple_choice", FeatureGroup::TaskType),
    ("what_happens_next", FeatureGroup::TaskType),
    ("narrative", FeatureGroup::TaskType),
    ("math", FeatureGroup::TaskType),
    ("code", FeatureGroup::TaskType),
    ("world_knowledge", FeatureGroup::Knowledge),
    ("temporal", FeatureGroup::Knowledge),
    ("domain_science", FeatureGroup::Knowledge),
    ("domain_biology", FeatureGroup::Knowledge),
    ("domain_law", FeatureGroup::Knowledge),
    ("domain_history", FeatureGroup::Knowledge),
    ("domain_medicine", FeatureGroup::Knowledge),
    ("single_char_answer", FeatureGroup::OutputFormat),
    ("free_form", FeatureGroup::OutputFormat),
    ("deterministic_output", FeatureGroup::OutputFormat),
    ("option_count", FeatureGroup::ScenarioComplexity),
    ("ambiguity", FeatureGroup::ScenarioComplexity),
    ("context_length", FeatureGroup::ScenarioComplexity),
    ("reasoning_needed", FeatureGroup::RoutingHints),
    ("context_needed", FeatureGroup::RoutingHints),
    ("knowledge_needed", FeatureGroup::RoutingHints),
    ("length_normalized", FeatureGroup::QualityIndicators),
    ("is_english", FeatureGroup::QualityIndicators),
];

const PROXY_PREFIX: &str = "proxy.";

/// Ordered, versioned list of feature coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub entries: Vec<FeatureEntry>,
}

impl FeatureSchema {
    /// Version-1 schema with one proxy slot per category, in the given order.
    pub fn v1<S: AsRef<str>>(proxy_categories: &[S]) -> Result<Self> {
        let mut entries: Vec<FeatureEntry> = BASE_FEATURES
            .iter()
            .map(|(name, group)| FeatureEntry {
                name: (*name).to_string(),
                group: *group,
                range: [0.0, 1.0],
            })
            .collect();
        entries.extend(proxy_categories.iter().map(|c| FeatureEntry {
            name: format!("{PROXY_PREFIX}{}", c.as_ref()),
            group: FeatureGroup::Proxy,
            range: [0.0, 1.0],
        }));
        let schema = Self {
            version: SCHEMA_VERSION,
            entries,
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != SCHEMA_VERSION {
            return Err(Error::Format(format!(
                "unsupported feature schema version {}",
                self.version
            )));
        }
        let base_ok = self.entries.len() >= BASE_FEATURES.len()
            && self
                .entries
                .iter()
                .zip(BASE_FEATURES.iter())
                .all(|(e, (name, group))| e.name == *name && e.group == *group);
        if !base_ok {
            return Err(Error::Format(
                "schema does not start with the version-1 base features".into(),
            ));
        }
        let mut names = std::collections::HashSet::new();
        for e in &self.entries {
            if !names.insert(e.name.as_str()) {
                return Err(Error::Format(format!("duplicate feature name {:?}", e.name)));
            }
        }
        if self.entries[BASE_FEATURES.len()..]
            .iter()
            .any(|e| e.group != FeatureGroup::Proxy || !e.name.starts_with(PROXY_PREFIX))
        {
            return Err(Error::Format("non-proxy entry after the base features".into()));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.entries.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.name == name)
    }

    pub fn group_indices(&self, group: FeatureGroup) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.group == group)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn proxy_categories(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter_map(|e| e.name.strip_prefix(PROXY_PREFIX))
            .collect()
    }

    /// SHA-256 over the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_vec(self).expect("schema serializes");
        hex(&Sha256::digest(&json))
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let schema: Self = serde_json::from_str(&text)?;
        schema.validate()?;
        Ok(schema)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// The feature vector of one prompt under a schema version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub schema_version: u32,
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Range and finiteness check against a schema.
    pub fn check(&self, schema: &FeatureSchema) -> Result<()> {
        if self.schema_version != schema.version {
            return Err(Error::FingerprintMismatch(format!(
                "feature vector version {} vs schema version {}",
                self.schema_version, schema.version
            )));
        }
        if self.values.len() != schema.dim() {
            return Err(Error::DimMismatch {
                what: "feature vector",
                expected: schema.dim(),
                actual: self.values.len(),
            });
        }
        for (v, e) in self.values.iter().zip(&schema.entries) {
            if !v.is_finite() || *v < e.range[0] || *v > e.range[1] {
                return Err(Error::Format(format!("feature {} = {v} outside {:?}", e.name, e.range)));
            }
        }
        Ok(())
    }
}
