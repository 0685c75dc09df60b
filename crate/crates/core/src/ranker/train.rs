use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::loss_parts;
use super::network::{forward_batch, loss_and_gradients, DropoutMasks};
use super::optim::{adamw_step, clip_gradients, AdamWConfig, AdamWState};
use super::params::{ParamSet, RankerDims, RankerParams};
use super::{utilities, TrainConfig};
use crate::error::{Error, Result};

const EVAL_CHUNK: usize = 4096;

/// Aligned model inputs and labels for one split.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub features: Array2<f64>,
    pub embeddings: Array2<f64>,
    pub quality: Array2<f64>,
    pub cost: Array2<f64>,
}

impl TrainingSet {
    pub fn new(features: Array2<f64>, embeddings: Array2<f64>, quality: Array2<f64>, cost: Array2<f64>) -> Result<Self> {
        let n = features.nrows();
        for (what, rows) in [
            ("embedding rows", embeddings.nrows()),
            ("quality rows", quality.nrows()),
            ("cost rows", cost.nrows()),
        ] {
            if rows != n {
                return Err(Error::DimMismatch {
                    what,
                    expected: n,
                    actual: rows,
                });
            }
        }
        if quality.ncols() != cost.ncols() {
            return Err(Error::DimMismatch {
                what: "cost columns",
                expected: quality.ncols(),
                actual: cost.ncols(),
            });
        }
        Ok(Self {
            features,
            embeddings,
            quality,
            cost,
        })
    }

    pub fn len(&self) -> usize {
        self.features.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn num_models(&self) -> usize {
        self.quality.ncols()
    }
}

/// Identifies the feature schema and model pool a ranker is trained against.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprints {
    pub feature_schema_version: u32,
    pub schema: String,
    pub pool: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_mse: f64,
    pub val_listwise: f64,
    /// Mean cost-adjusted utility of the routed model on the validation split.
    pub val_routed_utility: f64,
    pub val_routed_quality: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub stop_reason: StopReason,
}

/// Patience counter on a minimized metric. Training stops once the metric has
/// failed to improve on its best value for more than `patience` consecutive epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    stale: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observation {
    Improved,
    NoImprovement,
    Stop,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            stale: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, loss: f64) -> Observation {
        if loss < self.best {
            self.best = loss;
            self.best_epoch = epoch;
            self.stale = 0;
            Observation::Improved
        } else {
            self.stale += 1;
            if self.stale > self.patience {
                Observation::Stop
            } else {
                Observation::NoImprovement
            }
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

/// Inference-mode scores for every row.
pub fn predict_scores(p: &ParamSet, features: ArrayView2<f64>, embeddings: ArrayView2<f64>) -> Result<Array2<f64>> {
    let n = features.nrows();
    let mut out = Array2::zeros((n, p.dims().models));
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_CHUNK).min(n);
        let fwd = forward_batch(
            p,
            features.slice(ndarray::s![start..end, ..]),
            embeddings.slice(ndarray::s![start..end, ..]),
            DropoutMasks::none(),
        )?;
        out.slice_mut(ndarray::s![start..end, ..]).assign(&fwd.scores);
        start = end;
    }
    Ok(out)
}

/// Index of the largest value; lowest index on ties.
pub(crate) fn argmax(row: impl IntoIterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in row.into_iter().enumerate() {
        if v > best.1 {
            best = (i, v);
        }
    }
    best.0
}

/// Mini-batch training with per-epoch shuffling, dropout, global-norm clipping and
/// AdamW. Keeps the parameters of the epoch with the lowest validation loss.
pub fn train(
    train_set: &TrainingSet,
    val_set: &TrainingSet,
    config: &TrainConfig,
    fingerprints: &Fingerprints,
) -> Result<(RankerParams, TrainingLog)> {
    config.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::InvalidDataset("training and validation splits must be nonempty".into()));
    }
    let dims = RankerDims {
        features: train_set.features.ncols(),
        text: train_set.embeddings.ncols(),
        hidden: config.hidden,
        models: train_set.num_models(),
    };
    for (what, expected, actual) in [
        ("validation features", dims.features, val_set.features.ncols()),
        ("validation embeddings", dims.text, val_set.embeddings.ncols()),
        ("validation models", dims.models, val_set.num_models()),
    ] {
        if expected != actual {
            return Err(Error::DimMismatch { what, expected, actual });
        }
    }
    let u_train = utilities(&train_set.quality, &train_set.cost, config.lambda)?;
    let u_val = utilities(&val_set.quality, &val_set.cost, config.lambda)?;

    let mut weights = ParamSet::he_uniform(dims, config.seed);
    let mut state = AdamWState::new(&weights);
    let adam = AdamWConfig::new(config.lr, config.weight_decay);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(config.seed);
    shuffle_rng.set_stream(1);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(config.seed);
    dropout_rng.set_stream(2);

    let mut stopper = EarlyStopping::new(config.patience);
    let mut best_weights = weights.clone();
    let mut records = Vec::new();
    let mut stop_reason = StopReason::MaxEpochs;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(config.batch_size).enumerate() {
            let x_feat = train_set.features.select(Axis(0), idx);
            let x_text = train_set.embeddings.select(Axis(0), idx);
            let targets = u_train.select(Axis(0), idx);
            let masks = DropoutMasks::sample(&mut dropout_rng, idx.len(), dims.hidden, config.dropout);
            let (parts, mut grads) =
                loss_and_gradients(&weights, x_feat.view(), x_text.view(), targets.view(), config.tau, masks)?;
            let loss = parts.total();
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: b + 1 });
            }
            clip_gradients(&mut grads, config.clip_norm);
            adamw_step(&mut weights, &grads, &mut state, &adam);
            loss_sum += loss * idx.len() as f64;
        }

        let scores = predict_scores(&weights, val_set.features.view(), val_set.embeddings.view())?;
        let val = loss_parts(scores.view(), u_val.view(), config.tau)?;
        let (mut routed_u, mut routed_q) = (0.0, 0.0);
        for (i, row) in scores.rows().into_iter().enumerate() {
            let j = argmax(row.iter().copied());
            routed_u += u_val[[i, j]];
            routed_q += val_set.quality[[i, j]];
        }
        let n_val = val_set.len() as f64;
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss: val.total(),
            val_mse: val.mse,
            val_listwise: val.listwise,
            val_routed_utility: routed_u / n_val,
            val_routed_quality: routed_q / n_val,
        });
        log::debug!(
            "epoch {epoch}: train {:.5} val {:.5} routed quality {:.4}",
            loss_sum / train_set.len() as f64,
            val.total(),
            routed_q / n_val
        );

        match stopper.observe(epoch, val.total()) {
            Observation::Improved => best_weights.clone_from(&weights),
            Observation::NoImprovement => {}
            Observation::Stop => {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }

    let baseline: Array1<f64> = train_set
        .features
        .mean_axis(Axis(0))
        .expect("training set is nonempty");
    let mut params = RankerParams {
        weights: best_weights,
        lambda: config.lambda,
        tau: config.tau,
        dropout: config.dropout,
        feature_schema_version: fingerprints.feature_schema_version,
        schema_fingerprint: fingerprints.schema.clone(),
        pool_fingerprint: fingerprints.pool.clone(),
        feature_baseline: baseline,
    };
    params.round_to_f32();
    let log = TrainingLog {
        stopped_epoch: records.len(),
        best_epoch: stopper.best_epoch(),
        epochs: records,
        stop_reason,
    };
    Ok((params, log))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patience_one_stops_two_epochs_after_the_best() {
        // best at epoch 1, strictly worse from epoch 2 on
        let mut stopper = EarlyStopping::new(1);
        let losses = [1.0, 1.1, 1.2, 1.3];
        let mut stopped = None;
        for (i, l) in losses.iter().enumerate() {
            if stopper.observe(i + 1, *l) == Observation::Stop {
                stopped = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped, Some(3));
        assert_eq!(stopper.best_epoch(), 1);
    }

    #[test]
    fn improvement_resets_patience() {
        let mut s = EarlyStopping::new(2);
        assert_eq!(s.observe(1, 5.0), Observation::Improved);
        assert_eq!(s.observe(2, 6.0), Observation::NoImprovement);
        assert_eq!(s.observe(3, 6.0), Observation::NoImprovement);
        assert_eq!(s.observe(4, 4.0), Observation::Improved);
        assert_eq!(s.observe(5, 4.0), Observation::NoImprovement);
        assert_eq!(s.observe(6, f64::NAN), Observation::NoImprovement);
        assert_eq!(s.observe(7, 4.5), Observation::Stop);
        assert_eq!(s.best_epoch(), 4);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax([0.1, 0.9, 0.3]), 1);
        assert_eq!(argmax([0.5, 0.5]), 0);
        assert_eq!(argmax([f64::NAN, 0.2]), 1);
    }
}
