use super::Tensor;
use crate::{Error, Result};

/// Row-wise softmax of a `(b, K)` tensor, shifted by the row max.
pub fn softmax_rows(logits: &Tensor) -> Tensor {
    let k = logits.cols();
    let mut out = logits.data().to_vec();
    if k == 0 {
        return logits.clone();
    }
    for row in out.chunks_exact_mut(k) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    Tensor::new(logits.shape().to_vec(), out).expect("same shape")
}

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / b`.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, k) = (logits.rows(), logits.cols());
    if logits.shape().len() != 2 || labels.len() != b {
        return Err(Error::dim(
            "loss",
            format!("({}, K) logits", labels.len()),
            format!("{:?}", logits.shape()),
        ));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
        return Err(Error::input(format!("label {bad} outside [0, {k})")));
    }
    if b == 0 {
        return Ok((0.0, logits.clone()));
    }
    let mut grad = logits.data().to_vec();
    let mut loss = 0.0;
    for (row, &y) in grad.chunks_exact_mut(k).zip(labels) {
        let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = row.iter().map(|v| (v - m).exp()).sum();
        let log_z = m + sum.ln();
        loss += log_z - row[y];
        for v in row.iter_mut() {
            *v = (*v - log_z).exp() / b as f64;
        }
        row[y] -= 1.0 / b as f64;
    }
    Ok((loss / b as f64, Tensor::new(logits.shape().to_vec(), grad)?))
}
