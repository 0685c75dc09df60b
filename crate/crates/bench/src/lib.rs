//! Shared fixtures for the criterion benches.

use llmrank::features::FeatureSchema;
use llmrank::pipeline::PreparedSplit;
use llmrank::synthetic::KeywordCorpus;
use llmrank::HashEmbedder;

/// Schema without a proxy block.
pub fn base_schema() -> FeatureSchema {
    FeatureSchema::v1::<&str>(&[]).expect("base schema")
}

/// Keyword corpus of `n` prompts with features and 256-dim hash embeddings.
pub fn prepared(n: usize, seed: u64) -> PreparedSplit {
    let d = KeywordCorpus::new(n, seed).generate().expect("corpus");
    let embedder = HashEmbedder::new(256).expect("dim");
    PreparedSplit::build(&d, &base_schema(), None, &embedder).expect("prepare")
}
