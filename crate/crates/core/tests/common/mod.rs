#![allow(dead_code)]

use llmrank::dataset::{stratified_split, SplitSpec};
use llmrank::features::{train_proxy, FeatureSchema};
use llmrank::pipeline::PreparedSplit;
use llmrank::synthetic::KeywordCorpus;
use llmrank::{Dataset, HashEmbedder};

pub struct Prepared {
    pub schema: FeatureSchema,
    pub train: PreparedSplit,
    pub val: PreparedSplit,
    pub test: PreparedSplit,
}

/// Runs the full preparation pipeline on `d`: stratified split, proxy
/// classifier fit on the training split, features and hash embeddings.
pub fn prepare(d: &Dataset, split_seed: u64, hash_dim: usize) -> Prepared {
    let spec = SplitSpec {
        seed: split_seed,
        ..SplitSpec::default()
    };
    let splits = stratified_split(d, &spec).expect("split");
    let proxy = train_proxy(&splits.train, 256, 30).expect("proxy");
    let schema = FeatureSchema::v1(&proxy.category_names).expect("schema");
    let embedder = HashEmbedder::new(hash_dim).expect("embedder");
    let build = |part: &Dataset| PreparedSplit::build(part, &schema, Some(&proxy), &embedder).expect("prepare");
    Prepared {
        train: build(&splits.train),
        val: build(&splits.val),
        test: build(&splits.test),
        schema,
    }
}

pub fn keyword_corpus(n: usize, seed: u64) -> Prepared {
    prepare(&KeywordCorpus::new(n, seed).generate().expect("corpus"), seed, 256)
}
