//! Seeded synthetic corpora for tests, benchmarks and demos.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dataset::{Dataset, ModelPool, PromptRecord};
use crate::error::{Error, Result};

/// Per-prompt base cost of each tier, cheapest first.
pub const TIER_COSTS: [f64; 5] = [1e-5, 3e-5, 1e-4, 3e-4, 1e-3];

const TOPICS: [&[&str]; 5] = [
    &["recipe", "garden", "holiday", "furniture", "weekend", "picnic"],
    &["sum", "product", "integer", "fraction", "equation", "divisor"],
    &["function", "compile", "python", "variable", "loop", "pointer"],
    &["court", "contract", "statute", "plaintiff", "verdict", "tenant"],
    &["patient", "diagnosis", "symptom", "therapy", "dosage", "clinic"],
];

const FILLER: &[&str] = &[
    "the", "a", "one", "about", "with", "please", "explain", "describe", "some", "our", "this", "that", "and",
    "for", "into", "quick", "simple", "note", "idea", "question", "thing", "part", "way", "kind", "often",
    "there", "here", "might", "could", "would", "under", "over", "after", "before", "also",
];

const SUITES: [&str; 4] = ["alpha", "beta", "gamma", "delta"];

/// Keyword-routed corpus with five models of increasing cost.
///
/// Every prompt belongs to one of five topics, signalled by two topic
/// keywords among neutral filler. Tier `k` is the only model that fully solves
/// topic `k`; tier 0 gets half credit on every other topic, the rest score 0.
/// Costs keep the tier order and scale with prompt length.
#[derive(Debug, Clone, PartialEq)]
pub struct KeywordCorpus {
    pub n: usize,
    pub seed: u64,
}

impl KeywordCorpus {
    pub fn new(n: usize, seed: u64) -> Self {
        Self { n, seed }
    }

    pub fn pool() -> ModelPool {
        ModelPool::new((0..TIER_COSTS.len()).map(|k| format!("tier-{k}"))).expect("distinct names")
    }

    pub fn generate(&self) -> Result<Dataset> {
        if self.n == 0 {
            return Err(Error::InvalidConfig("synthetic corpus needs at least one prompt".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let m = TIER_COSTS.len();
        let records = (0..self.n)
            .map(|i| {
                let topic = rng.random_range(0..m);
                let filler = rng.random_range(10..=25);
                let mut words: Vec<&str> = (0..filler).map(|_| *FILLER.choose(&mut rng).unwrap()).collect();
                for _ in 0..2 {
                    let at = rng.random_range(0..=words.len());
                    words.insert(at, TOPICS[topic].choose(&mut rng).unwrap());
                }
                let scale = 0.5 + words.len() as f64 / 30.0;
                let quality = (0..m)
                    .map(|j| match (j == topic, j) {
                        (true, _) => 1.0,
                        (false, 0) => 0.5,
                        _ => 0.0,
                    })
                    .collect();
                PromptRecord {
                    sample_id: format!("synth.{i:06}"),
                    prompt: format!("{}?", words.join(" ")),
                    benchmark: SUITES.choose(&mut rng).unwrap().to_string(),
                    quality,
                    cost: TIER_COSTS.iter().map(|c| c * scale).collect(),
                    language: "en".into(),
                }
            })
            .collect();
        Dataset::new(Self::pool(), records, format!("synthetic:keywords:n={}:seed={}", self.n, self.seed))
    }
}

/// Unstructured labels: `n` prompts over `m` models, quality drawn from
/// `{0, 0.5, 1}` or uniformly, costs uniform in `[1e-6, 1e-3)`.
pub fn random_dataset(n: usize, m: usize, seed: u64) -> Result<Dataset> {
    if n == 0 || m < 2 {
        return Err(Error::InvalidConfig("need n >= 1 and m >= 2".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let discrete = rng.random_bool(0.5);
    let pool = ModelPool::new((0..m).map(|j| format!("model-{j}")))?;
    let records = (0..n)
        .map(|i| {
            let quality = (0..m)
                .map(|_| {
                    if discrete {
                        f64::from(rng.random_range(0..3u8)) / 2.0
                    } else {
                        rng.random::<f64>()
                    }
                })
                .collect();
            let cost = (0..m).map(|_| rng.random_range(1e-6..1e-3)).collect();
            PromptRecord {
                sample_id: format!("rand.{i:05}"),
                prompt: format!("random prompt number {i}"),
                benchmark: SUITES[i % SUITES.len()].to_string(),
                quality,
                cost,
                language: "en".into(),
            }
        })
        .collect();
    Dataset::new(pool, records, format!("synthetic:random:n={n}:m={m}:seed={seed}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keyword_corpus_is_seeded() {
        let a = KeywordCorpus::new(200, 3).generate().unwrap();
        let b = KeywordCorpus::new(200, 3).generate().unwrap();
        let c = KeywordCorpus::new(200, 4).generate().unwrap();
        assert_eq!(a, b);
        assert_ne!(a.records, c.records);
    }

    #[test]
    fn best_model_matches_topic_keyword() {
        let d = KeywordCorpus::new(300, 1).generate().unwrap();
        for r in &d.records {
            let best = r.quality.iter().position(|&q| q == 1.0).unwrap();
            assert!(TOPICS[best].iter().any(|kw| r.prompt.split([' ', '?']).any(|w| w == *kw)));
            for w in r.cost.windows(2) {
                assert!(w[0] < w[1]);
            }
        }
    }

    #[test]
    fn random_dataset_shapes() {
        let d = random_dataset(30, 4, 9).unwrap();
        assert_eq!((d.len(), d.num_models()), (30, 4));
        assert!(random_dataset(0, 4, 9).is_err());
    }
}
