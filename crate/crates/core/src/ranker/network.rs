use ndarray::{concatenate, s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::loss::{loss_parts, score_gradient, LossParts};
use super::params::{ParamSet, RankerParams};
use crate::embeddings::EmbeddingVector;
use crate::error::{Error, Result};
use crate::features::FeatureVector;

/// One inverted-dropout mask per dropout site (entries `0` or `1/(1-p)`).
/// `None` means the site is the identity.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DropoutMasks {
    pub feat: Option<Array2<f64>>,
    pub text: Option<Array2<f64>>,
    pub fuse: Option<Array2<f64>>,
}

impl DropoutMasks {
    pub fn none() -> Self {
        Self::default()
    }

    /// Draws masks for a batch, in the order feature, text, fusion.
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, batch: usize, hidden: usize, rate: f64) -> Self {
        if rate <= 0.0 {
            return Self::none();
        }
        let keep = 1.0 - rate;
        let scale = 1.0 / keep;
        let mut draw = || Some(Array2::from_shape_simple_fn((batch, hidden), || if rng.random::<f64>() < keep { scale } else { 0.0 }));
        Self {
            feat: draw(),
            text: draw(),
            fuse: draw(),
        }
    }
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub scores: Array2<f64>,
    feat_hidden: Array2<f64>,
    feat_dropped: Array2<f64>,
    text_hidden: Array2<f64>,
    text_dropped: Array2<f64>,
    fused: Array2<f64>,
    fuse_hidden: Array2<f64>,
    fuse_dropped: Array2<f64>,
    masks: DropoutMasks,
}

fn linear(x: &ArrayView2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(&w.t()) + b
}

fn relu(mut x: Array2<f64>) -> Array2<f64> {
    x.mapv_inplace(|v| v.max(0.0));
    x
}

fn apply_mask(h: &Array2<f64>, mask: &Option<Array2<f64>>) -> Array2<f64> {
    match mask {
        Some(m) => h * m,
        None => h.clone(),
    }
}

fn check_input(what: &'static str, x: &ArrayView2<f64>, expected: usize) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::DimMismatch {
            what,
            expected,
            actual: x.ncols(),
        });
    }
    Ok(())
}

/// Batched forward pass. Rows of `x_feat` and `x_text` are samples.
pub fn forward_batch(p: &ParamSet, x_feat: ArrayView2<f64>, x_text: ArrayView2<f64>, masks: DropoutMasks) -> Result<Forward> {
    let dims = p.dims();
    check_input("feature input", &x_feat, dims.features)?;
    check_input("text input", &x_text, dims.text)?;
    if x_feat.nrows() != x_text.nrows() {
        return Err(Error::DimMismatch {
            what: "text batch rows",
            expected: x_feat.nrows(),
            actual: x_text.nrows(),
        });
    }
    for m in [&masks.feat, &masks.text, &masks.fuse].into_iter().flatten() {
        if m.dim() != (x_feat.nrows(), dims.hidden) {
            return Err(Error::DimMismatch {
                what: "dropout mask rows",
                expected: x_feat.nrows(),
                actual: m.nrows(),
            });
        }
    }

    let feat_hidden = relu(linear(&x_feat, &p.feat_w1, &p.feat_b1));
    let feat_dropped = apply_mask(&feat_hidden, &masks.feat);
    let z_feat = linear(&feat_dropped.view(), &p.feat_w2, &p.feat_b2);

    let text_hidden = relu(linear(&x_text, &p.text_w1, &p.text_b1));
    let text_dropped = apply_mask(&text_hidden, &masks.text);
    let z_text = linear(&text_dropped.view(), &p.text_w2, &p.text_b2);

    let fused = concatenate![Axis(1), z_feat, z_text];
    let fuse_hidden = relu(linear(&fused.view(), &p.fuse_w1, &p.fuse_b1));
    let fuse_dropped = apply_mask(&fuse_hidden, &masks.fuse);
    let scores = linear(&fuse_dropped.view(), &p.fuse_w2, &p.fuse_b2);

    Ok(Forward {
        scores,
        feat_hidden,
        feat_dropped,
        text_hidden,
        text_dropped,
        fused,
        fuse_hidden,
        fuse_dropped,
        masks,
    })
}

/// Scores for a single prompt. Dropout is drawn from `rng` only in train mode.
pub fn forward<R: Rng + ?Sized>(
    params: &RankerParams,
    x_j: &FeatureVector,
    x_t: &EmbeddingVector,
    train_mode: bool,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let x_feat = Array2::from_shape_vec((1, x_j.dim()), x_j.values.clone()).expect("row vector");
    let x_text = Array2::from_shape_fn((1, x_t.dim()), |(_, j)| f64::from(x_t.values[j]));
    let masks = if train_mode {
        DropoutMasks::sample(rng, 1, params.dims().hidden, params.dropout)
    } else {
        DropoutMasks::none()
    };
    let out = forward_batch(&params.weights, x_feat.view(), x_text.view(), masks)?;
    Ok(out.scores.row(0).to_vec())
}

/// Gradient of the branch `W2 · (mask ⊙ relu(W1 x + b1)) + b2`, given the
/// upstream gradient `dz` of its output.
#[allow(clippy::too_many_arguments)]
fn branch_backward(
    x: &ArrayView2<f64>,
    hidden: &Array2<f64>,
    dropped: &Array2<f64>,
    mask: &Option<Array2<f64>>,
    w2: &Array2<f64>,
    dz: &ArrayView2<f64>,
    g_w1: &mut Array2<f64>,
    g_b1: &mut Array1<f64>,
    g_w2: &mut Array2<f64>,
    g_b2: &mut Array1<f64>,
) -> Array2<f64> {
    g_w2.assign(&dz.t().dot(dropped));
    *g_b2 = dz.sum_axis(Axis(0));
    let mut d_hidden = dz.dot(w2);
    if let Some(m) = mask {
        d_hidden *= m;
    }
    ndarray::Zip::from(&mut d_hidden).and(hidden).for_each(|d, &h| {
        if h <= 0.0 {
            *d = 0.0;
        }
    });
    g_w1.assign(&d_hidden.t().dot(x));
    *g_b1 = d_hidden.sum_axis(Axis(0));
    d_hidden
}

/// Parameter gradients given `d_scores = ∂L/∂s`, reusing the masks recorded in `fwd`.
pub fn backward(
    p: &ParamSet,
    x_feat: ArrayView2<f64>,
    x_text: ArrayView2<f64>,
    fwd: &Forward,
    d_scores: ArrayView2<f64>,
) -> ParamSet {
    let h = p.dims().hidden;
    let mut g = ParamSet::zeros(p.dims());
    let d_fused_hidden = branch_backward(
        &fwd.fused.view(),
        &fwd.fuse_hidden,
        &fwd.fuse_dropped,
        &fwd.masks.fuse,
        &p.fuse_w2,
        &d_scores,
        &mut g.fuse_w1,
        &mut g.fuse_b1,
        &mut g.fuse_w2,
        &mut g.fuse_b2,
    );
    let d_fused = d_fused_hidden.dot(&p.fuse_w1);
    let d_z_feat = d_fused.slice(s![.., ..h]);
    let d_z_text = d_fused.slice(s![.., h..]);
    branch_backward(
        &x_feat,
        &fwd.feat_hidden,
        &fwd.feat_dropped,
        &fwd.masks.feat,
        &p.feat_w2,
        &d_z_feat,
        &mut g.feat_w1,
        &mut g.feat_b1,
        &mut g.feat_w2,
        &mut g.feat_b2,
    );
    branch_backward(
        &x_text,
        &fwd.text_hidden,
        &fwd.text_dropped,
        &fwd.masks.text,
        &p.text_w2,
        &d_z_text,
        &mut g.text_w1,
        &mut g.text_b1,
        &mut g.text_w2,
        &mut g.text_b2,
    );
    g
}

/// Forward, hybrid loss and exact gradients for one batch.
pub fn loss_and_gradients(
    p: &ParamSet,
    x_feat: ArrayView2<f64>,
    x_text: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    tau: f64,
    masks: DropoutMasks,
) -> Result<(LossParts, ParamSet)> {
    let fwd = forward_batch(p, x_feat, x_text, masks)?;
    let parts = loss_parts(fwd.scores.view(), targets, tau)?;
    let d_scores = score_gradient(fwd.scores.view(), targets, tau)?;
    let grads = backward(p, x_feat, x_text, &fwd, d_scores.view());
    Ok((parts, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ranker::params::RankerDims;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims2() -> RankerDims {
        RankerDims {
            features: 2,
            text: 2,
            hidden: 2,
            models: 2,
        }
    }

    #[test]
    fn zero_params_output_fusion_bias() {
        let mut p = ParamSet::zeros(dims2());
        p.fuse_b2 = array![0.25, -1.5];
        let out = forward_batch(&p, array![[3.0, -1.0]].view(), array![[0.5, 2.0]].view(), DropoutMasks::none()).unwrap();
        assert_eq!(out.scores, array![[0.25, -1.5]]);
    }

    #[test]
    fn hand_computed_two_dim_instance() {
        let mut p = ParamSet::zeros(dims2());
        p.feat_w1 = array![[1.0, 0.0], [0.0, 1.0]];
        p.feat_b1 = array![0.0, -1.0];
        p.feat_w2 = array![[1.0, 1.0], [0.0, 2.0]];
        p.feat_b2 = array![0.5, 0.0];
        p.text_w1 = array![[1.0, -1.0], [0.5, 0.5]];
        p.text_b1 = array![0.0, 0.0];
        p.text_w2 = array![[1.0, 0.0], [0.0, 1.0]];
        p.text_b2 = array![0.0, 1.0];
        p.fuse_w1 = array![[1.0, 0.0, 1.0, 0.0], [0.0, 1.0, 0.0, -1.0]];
        p.fuse_b1 = array![0.0, 0.0];
        p.fuse_w2 = array![[1.0, 0.0], [1.0, 1.0]];
        p.fuse_b2 = array![0.0, 0.1];
        // x_feat = [2, 3]: h = relu([2, 2]) = [2, 2]; z_feat = [2+2+0.5, 4] = [4.5, 4]
        // x_text = [1, 3]: h = relu([-2, 2]) = [0, 2]; z_text = [0, 3]
        // c = [4.5, 4, 0, 3]: h = relu([4.5, 1]) = [4.5, 1]
        // s = [4.5, 5.5 + 0.1]
        let out = forward_batch(&p, array![[2.0, 3.0]].view(), array![[1.0, 3.0]].view(), DropoutMasks::none()).unwrap();
        assert!((out.scores[[0, 0]] - 4.5).abs() < 1e-12);
        assert!((out.scores[[0, 1]] - 5.6).abs() < 1e-12);
    }

    #[test]
    fn dim_mismatch_is_reported() {
        let p = ParamSet::zeros(dims2());
        let err = forward_batch(&p, array![[1.0, 2.0, 3.0]].view(), array![[1.0, 2.0]].view(), DropoutMasks::none());
        assert!(matches!(err, Err(Error::DimMismatch { what: "feature input", .. })));
    }

    #[test]
    fn masks_have_inverted_scaling() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let masks = DropoutMasks::sample(&mut rng, 200, 50, 0.2);
        let m = masks.feat.unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
        let mean = m.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.05, "mask mean {mean}");
        assert!(DropoutMasks::sample(&mut rng, 2, 2, 0.0).feat.is_none());
    }

    #[test]
    fn stationary_at_exact_fit() {
        // Scores equal targets when the fusion bias equals the (constant) target row.
        let mut p = ParamSet::he_uniform(
            RankerDims {
                features: 3,
                text: 4,
                hidden: 5,
                models: 3,
            },
            2,
        );
        p.fuse_w2.fill(0.0);
        p.fuse_b2 = array![0.2, -0.1, 0.7];
        let x_feat = array![[0.1, 0.2, 0.3], [0.3, 0.1, 0.0]];
        let x_text = array![[1.0, 0.0, -1.0, 0.5], [0.0, 0.2, 0.1, 0.0]];
        let u = array![[0.2, -0.1, 0.7], [0.2, -0.1, 0.7]];
        let (loss, g) = loss_and_gradients(&p, x_feat.view(), x_text.view(), u.view(), 0.5, DropoutMasks::none()).unwrap();
        assert!(loss.total().abs() < 1e-15);
        for s in g.slices() {
            assert!(s.iter().all(|v| v.abs() < 1e-8));
        }
    }
}
