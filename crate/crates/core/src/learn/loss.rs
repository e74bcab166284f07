use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use super::Real;
use crate::error::{Error, Result};

/// Numerically stable softmax of one logit vector.
pub fn softmax<T: Real>(logits: ArrayView1<T>) -> Array1<T> {
    let max = logits.fold(T::neg_infinity(), |m, &v| m.max(v));
    let e = logits.mapv(|v| (v - max).exp());
    let z = e.sum();
    e / z
}

/// Cross-entropy of `softmax(logits)` at `target`, with its gradient.
pub fn softmax_xent<T: Real>(logits: ArrayView1<T>, target: usize) -> (T, Array1<T>) {
    let p = softmax(logits);
    let loss = -p[target].max(T::min_positive_value()).ln();
    let mut g = p;
    g[target] -= T::one();
    (loss, g)
}

#[derive(Debug, Clone)]
pub struct NceOutput<T> {
    pub loss: T,
    /// Gradient with respect to the transition (query) embeddings.
    pub d_queries: Array2<T>,
    /// Gradient with respect to the instruction (key) embeddings.
    pub d_keys: Array2<T>,
}

/// Row-direction InfoNCE: each query row is scored against every key row,
/// the diagonal being the positive. Returns the mean loss and
/// `d loss / d logits` (`[n, n]`).
fn directional<T: Real>(logits: &Array2<T>) -> (T, Array2<T>) {
    let n = logits.nrows();
    let scale = T::lit(1.0 / n as f64);
    let mut total = T::zero();
    let mut grad = Array2::<T>::zeros(logits.raw_dim());
    for (i, row) in logits.rows().into_iter().enumerate() {
        let (l, g) = softmax_xent(row, i);
        total += l;
        grad.row_mut(i).assign(&(g * scale));
    }
    (total * scale, grad)
}

/// Noise-contrastive loss over `n` matched pairs:
/// `mean_i -log( exp(x_i.y_i / tau) / sum_j exp(x_i.y_j / tau) )`.
/// With `symmetric`, the key-to-query direction is averaged in.
pub fn nce_loss<T: Real>(
    queries: ArrayView2<T>,
    keys: ArrayView2<T>,
    tau: f64,
    symmetric: bool,
) -> Result<NceOutput<T>> {
    if queries.nrows() == 0 || queries.raw_dim() != keys.raw_dim() {
        return Err(Error::Contract(format!(
            "nce needs matching non-empty batches, got {:?} and {:?}",
            queries.shape(),
            keys.shape()
        )));
    }
    if !(queries.iter().all(|v| v.is_finite()) && keys.iter().all(|v| v.is_finite())) {
        return Err(Error::Numeric("non-finite embedding in nce input".into()));
    }
    let inv_tau = T::lit(1.0 / tau);
    let logits = queries.dot(&keys.t()) * inv_tau;
    let (mut loss, mut d_logits) = directional(&logits);
    if symmetric {
        let (l2, g2) = directional(&logits.t().to_owned());
        let half = T::lit(0.5);
        loss = (loss + l2) * half;
        d_logits = (d_logits + g2.t()) * half;
    }
    let d_queries = d_logits.dot(&keys) * inv_tau;
    let d_keys = d_logits.t().dot(&queries) * inv_tau;
    Ok(NceOutput {
        loss,
        d_queries,
        d_keys,
    })
}

/// Log-sum-exp per row, used by diagnostics.
pub fn row_logsumexp<T: Real>(x: ArrayView2<T>) -> Array1<T> {
    x.map_axis(Axis(1), |row| {
        let m = row.fold(T::neg_infinity(), |a, &b| a.max(b));
        m + row.mapv(|v| (v - m).exp()).sum().ln()
    })
}
