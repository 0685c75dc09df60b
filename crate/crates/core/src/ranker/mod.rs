//! Dual-branch utility ranker.
//!
//! Two MLP branches encode the interpretable features and the text embedding,
//! and a fusion MLP maps their concatenation to one utility score per model:
//!
//! ```text
//! z_feat = W2f · drop(relu(W1f · x_feat + b1f)) + b2f
//! z_text = W2t · drop(relu(W1t · x_text + b1t)) + b2t
//! s      = W2u · drop(relu(W1u · [z_feat; z_text] + b1u)) + b2u
//! ```
//!
//! Training minimizes `MSE(s, u) + KL(softmax(u/τ) ‖ softmax(s/τ))` against the
//! cost-adjusted utilities `u = q - λ·c`, with AdamW, global-norm gradient
//! clipping and early stopping on validation loss.

mod loss;
mod network;
mod optim;
mod params;
mod train;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};

pub use loss::{loss_listwise, loss_mse, loss_total, score_gradient, LossParts};
pub use network::{backward, forward, forward_batch, loss_and_gradients, DropoutMasks, Forward};
pub use optim::{adamw_step, clip_gradients, global_norm, AdamWConfig, AdamWState};
pub use params::{ParamSet, RankerDims, RankerParams, CHECKPOINT_VERSION, TENSOR_NAMES};
pub use train::{
    predict_scores, train, EarlyStopping, EpochRecord, Fingerprints, Observation, StopReason, TrainingLog,
    TrainingSet,
};
pub(crate) use train::argmax;

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub patience: usize,
    pub clip_norm: f64,
    pub dropout: f64,
    pub tau: f64,
    pub seed: u64,
    pub hidden: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 0.0,
            lr: 3e-4,
            weight_decay: 1e-2,
            epochs: 100,
            batch_size: 256,
            patience: 10,
            clip_norm: 1.0,
            dropout: 0.1,
            tau: 0.5,
            seed: 0,
            hidden: 256,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad(format!("lambda must be finite and >= 0, got {}", self.lambda));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be > 0, got {}", self.tau));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        let positive = |x: f64| x > 0.0;
        if !positive(self.lr) || !non_negative(self.weight_decay) || !positive(self.clip_norm) {
            return bad("lr and clip_norm must be > 0 and weight_decay >= 0".into());
        }
        if self.epochs == 0 || self.batch_size == 0 || self.hidden == 0 {
            return bad("epochs, batch_size and hidden must be positive".into());
        }
        Ok(())
    }
}

/// Cost-adjusted utilities `u_ij = q_ij - λ·c_ij`, one row per record.
#[derive(Debug, Clone, PartialEq)]
pub struct UtilityTargets {
    pub lambda: f64,
    pub u: Array2<f64>,
}

pub fn compute_targets(d: &Dataset, lambda: f64) -> Result<UtilityTargets> {
    Ok(UtilityTargets {
        lambda,
        u: utilities(&d.quality_matrix(), &d.cost_matrix(), lambda)?,
    })
}

pub(crate) fn utilities(quality: &Array2<f64>, cost: &Array2<f64>, lambda: f64) -> Result<Array2<f64>> {
    if !non_negative(lambda) {
        return Err(Error::InvalidConfig(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(quality - &(cost * lambda))
}

/// False for NaN as well as negatives.
pub(crate) fn non_negative(x: f64) -> bool {
    x >= 0.0
}
