use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{hex, Dataset};
use crate::error::{Error, Result};
use crate::text::{hash_token, tokens};

const LEARNING_RATE: f64 = 2.0;
const L2: f64 = 1e-5;

/// Multinomial logistic classifier over hashed bag-of-words that predicts the
/// benchmark category of a prompt. Its probabilities fill the proxy block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyModel {
    pub vocab_hash_dim: usize,
    /// `num_categories × vocab_hash_dim`, row-major.
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
    pub category_names: Vec<String>,
    /// Id hash of the split the model was fit on.
    pub trained_on: String,
}

/// Sparse L2-normalized term counts.
fn hashed_bow(prompt: &str, dim: usize) -> Vec<(usize, f64)> {
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    for t in tokens(prompt) {
        *counts.entry((hash_token(b'p', &t) % dim as u64) as usize).or_insert(0.0) += 1.0;
    }
    let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
    if norm > 0.0 {
        counts.values_mut().for_each(|v| *v /= norm);
    }
    counts.into_iter().collect()
}

fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for l in logits.iter_mut() {
        *l = (*l - max).exp();
        sum += *l;
    }
    logits.iter_mut().for_each(|l| *l /= sum);
}

impl ProxyModel {
    fn logits(&self, x: &[(usize, f64)]) -> Vec<f64> {
        self.weights
            .iter()
            .zip(&self.bias)
            .map(|(row, b)| b + x.iter().map(|&(i, v)| row[i] * v).sum::<f64>())
            .collect()
    }

    /// Category probabilities, summing to one.
    pub fn predict_proba(&self, prompt: &str) -> Vec<f64> {
        let mut p = self.logits(&hashed_bow(prompt, self.vocab_hash_dim));
        softmax_in_place(&mut p);
        p
    }

    /// Most probable category; lowest index on ties.
    pub fn predict(&self, prompt: &str) -> usize {
        let p = self.predict_proba(prompt);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        best
    }

    /// SHA-256 of the JSON encoding.
    pub fn fingerprint(&self) -> String {
        hex(&Sha256::digest(serde_json::to_vec(self).expect("proxy serializes")))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Fits the proxy classifier by full-batch gradient descent on cross-entropy.
///
/// Categories are ordered by name. Only `train` is read, and its id hash is recorded.
pub fn train_proxy(train: &Dataset, hash_dim: usize, epochs: usize) -> Result<ProxyModel> {
    if hash_dim < 64 {
        return Err(Error::InvalidConfig(format!("proxy hash_dim must be >= 64, got {hash_dim}")));
    }
    if train.is_empty() {
        return Err(Error::InvalidDataset("proxy training set is empty".into()));
    }
    let categories: Vec<String> = train.category_counts().into_keys().collect();
    if categories.len() < 2 {
        return Err(Error::InvalidDataset(format!(
            "proxy needs at least two categories, found {categories:?}"
        )));
    }
    let index: BTreeMap<&str, usize> = categories.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let xs: Vec<Vec<(usize, f64)>> = train.records.iter().map(|r| hashed_bow(&r.prompt, hash_dim)).collect();
    let ys: Vec<usize> = train.records.iter().map(|r| index[r.benchmark.as_str()]).collect();

    let k = categories.len();
    let n = xs.len() as f64;
    let mut model = ProxyModel {
        vocab_hash_dim: hash_dim,
        weights: vec![vec![0.0; hash_dim]; k],
        bias: vec![0.0; k],
        category_names: categories,
        trained_on: train.id_hash(),
    };
    let mut grad_w = vec![vec![0.0; hash_dim]; k];
    let mut grad_b = vec![0.0; k];
    for _ in 0..epochs {
        grad_w.iter_mut().for_each(|row| row.fill(0.0));
        grad_b.fill(0.0);
        for (x, &y) in xs.iter().zip(&ys) {
            let mut p = model.logits(x);
            softmax_in_place(&mut p);
            p[y] -= 1.0;
            for (c, delta) in p.iter().enumerate() {
                grad_b[c] += delta;
                for &(i, v) in x {
                    grad_w[c][i] += delta * v;
                }
            }
        }
        for c in 0..k {
            model.bias[c] -= LEARNING_RATE * grad_b[c] / n;
            for (w, g) in model.weights[c].iter_mut().zip(&grad_w[c]) {
                *w -= LEARNING_RATE * (g / n + L2 * *w);
            }
        }
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{ModelPool, PromptRecord};

    fn dataset(prompts: &[(&str, &str)]) -> Dataset {
        let records = prompts
            .iter()
            .enumerate()
            .map(|(i, (p, b))| PromptRecord {
                sample_id: format!("s{i}"),
                prompt: p.to_string(),
                benchmark: b.to_string(),
                quality: vec![1.0, 0.0],
                cost: vec![0.0, 0.0],
                language: "en".into(),
            })
            .collect();
        Dataset::new(ModelPool::new(["a", "b"]).unwrap(), records, "t").unwrap()
    }

    #[test]
    fn rejects_small_hash_dim_and_single_category() {
        let d = dataset(&[("x", "one"), ("y", "two")]);
        assert!(train_proxy(&d, 63, 1).is_err());
        let single = dataset(&[("x", "one"), ("y", "one")]);
        assert!(train_proxy(&single, 64, 1).is_err());
    }

    #[test]
    fn probabilities_sum_to_one() {
        let d = dataset(&[("alpha beta", "one"), ("gamma delta", "two"), ("eps", "three")]);
        let model = train_proxy(&d, 64, 20).unwrap();
        for prompt in ["alpha", "gamma delta zeta", "unseen words only", "???"] {
            let p = model.predict_proba(prompt);
            assert_eq!(p.len(), 3);
            assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn records_training_split_hash() {
        let d = dataset(&[("alpha", "one"), ("gamma", "two")]);
        let model = train_proxy(&d, 64, 1).unwrap();
        assert_eq!(model.trained_on, d.id_hash());
        assert_eq!(model.category_names, vec!["one", "two"]);
    }
}
