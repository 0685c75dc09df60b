use ndarray::{Array2, ArrayView1, ArrayView2, Zip};

use crate::error::{Error, Result};

fn check_shapes(s: &ArrayView2<f64>, u: &ArrayView2<f64>) -> Result<()> {
    if s.nrows() != u.nrows() {
        return Err(Error::DimMismatch {
            what: "score batch rows",
            expected: u.nrows(),
            actual: s.nrows(),
        });
    }
    if s.ncols() != u.ncols() {
        return Err(Error::DimMismatch {
            what: "score batch columns",
            expected: u.ncols(),
            actual: s.ncols(),
        });
    }
    if s.nrows() == 0 {
        return Err(Error::InvalidConfig("empty batch".into()));
    }
    Ok(())
}

/// `(1/N) Σ_i (1/m) Σ_j (s_ij - u_ij)²`.
pub fn loss_mse(s: ArrayView2<f64>, u: ArrayView2<f64>) -> Result<f64> {
    check_shapes(&s, &u)?;
    let (n, m) = s.dim();
    let sum: f64 = Zip::from(&s).and(&u).fold(0.0, |acc, a, b| acc + (a - b).powi(2));
    Ok(sum / (n * m) as f64)
}

/// `log softmax(x / tau)` via log-sum-exp.
fn log_softmax(x: ArrayView1<f64>, tau: f64) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max) / tau;
    let lse = max + x.iter().map(|v| (v / tau - max).exp()).sum::<f64>().ln();
    x.iter().map(|v| v / tau - lse).collect()
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("tau must be > 0, got {tau}")))
    }
}

/// `(1/N) Σ_i KL(softmax(u_i/τ) ‖ softmax(s_i/τ))`, target distribution first.
pub fn loss_listwise(s: ArrayView2<f64>, u: ArrayView2<f64>, tau: f64) -> Result<f64> {
    check_shapes(&s, &u)?;
    check_tau(tau)?;
    let mut total = 0.0;
    for (s_row, u_row) in s.rows().into_iter().zip(u.rows()) {
        let log_p = log_softmax(u_row, tau);
        let log_q = log_softmax(s_row, tau);
        total += log_p
            .iter()
            .zip(&log_q)
            .map(|(lp, lq)| {
                let p = lp.exp();
                if p == 0.0 {
                    0.0
                } else {
                    p * (lp - lq)
                }
            })
            .sum::<f64>();
    }
    Ok(total / s.nrows() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub mse: f64,
    pub listwise: f64,
}

impl LossParts {
    pub fn total(&self) -> f64 {
        self.mse + self.listwise
    }
}

/// The unweighted sum `loss_mse + loss_listwise`.
pub fn loss_total(s: ArrayView2<f64>, u: ArrayView2<f64>, tau: f64) -> Result<f64> {
    Ok(loss_parts(s, u, tau)?.total())
}

pub(crate) fn loss_parts(s: ArrayView2<f64>, u: ArrayView2<f64>, tau: f64) -> Result<LossParts> {
    Ok(LossParts {
        mse: loss_mse(s, u)?,
        listwise: loss_listwise(s, u, tau)?,
    })
}

/// Gradient of `loss_total` with respect to the scores:
/// `2(s - u)/(N m) + (softmax(s/τ) - softmax(u/τ)) / (τ N)`.
pub fn score_gradient(s: ArrayView2<f64>, u: ArrayView2<f64>, tau: f64) -> Result<Array2<f64>> {
    check_shapes(&s, &u)?;
    check_tau(tau)?;
    let (n, m) = s.dim();
    let mse_scale = 2.0 / (n * m) as f64;
    let kl_scale = 1.0 / (tau * n as f64);
    let mut grad = Array2::zeros((n, m));
    for ((mut g, s_row), u_row) in grad.rows_mut().into_iter().zip(s.rows()).zip(u.rows()) {
        let log_p = log_softmax(u_row, tau);
        let log_q = log_softmax(s_row, tau);
        for j in 0..m {
            g[j] = mse_scale * (s_row[j] - u_row[j]) + kl_scale * (log_q[j].exp() - log_p[j].exp());
        }
    }
    Ok(grad)
}
