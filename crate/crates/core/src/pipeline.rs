//! Glue between datasets, feature extraction, embedding providers and the ranker.

use crate::dataset::{Dataset, ModelPool};
use crate::embeddings::{embed_dataset, EmbeddingProvider};
use crate::error::Result;
use crate::features::{featurize_dataset, FeatureMatrix, FeatureSchema, ProxyModel};
use crate::ranker::{self, Fingerprints, RankerParams, TrainConfig, TrainingLog, TrainingSet};

/// A dataset together with its aligned model inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct PreparedSplit {
    pub dataset: Dataset,
    pub features: FeatureMatrix,
    pub inputs: TrainingSet,
}

impl PreparedSplit {
    /// Extracts features and embeddings for every record of `dataset`.
    pub fn build(
        dataset: &Dataset,
        schema: &FeatureSchema,
        proxy: Option<&ProxyModel>,
        provider: &dyn EmbeddingProvider,
    ) -> Result<Self> {
        let (features, _) = featurize_dataset(dataset, schema, proxy)?;
        Self::with_features(dataset, &features, provider)
    }

    /// Uses precomputed features, reordered to follow `dataset`.
    pub fn with_features(dataset: &Dataset, features: &FeatureMatrix, provider: &dyn EmbeddingProvider) -> Result<Self> {
        let features = features.aligned_to(dataset)?;
        let embeddings = embed_dataset(provider, dataset)?;
        let inputs = TrainingSet::new(
            features.values.clone(),
            embeddings,
            dataset.quality_matrix(),
            dataset.cost_matrix(),
        )?;
        Ok(Self {
            dataset: dataset.clone(),
            features,
            inputs,
        })
    }
}

pub fn fingerprints(schema: &FeatureSchema, pool: &ModelPool) -> Fingerprints {
    Fingerprints {
        feature_schema_version: schema.version,
        schema: schema.fingerprint(),
        pool: pool.fingerprint(),
    }
}

/// Trains a ranker on prepared splits.
pub fn train_router(
    train: &PreparedSplit,
    val: &PreparedSplit,
    schema: &FeatureSchema,
    config: &TrainConfig,
) -> Result<(RankerParams, TrainingLog)> {
    ranker::train(&train.inputs, &val.inputs, config, &fingerprints(schema, &train.dataset.pool))
}
