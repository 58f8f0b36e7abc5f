use super::ops::softmax_in_place;
use crate::error::{FocusError, Result};

/// Softmax cross-entropy for one example.
///
/// Returns the loss `-log softmax(logits)[label]` and its gradient with
/// respect to the logits, `softmax(logits) - onehot(label)`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    let classes = logits.len();
    if classes < 2 {
        return Err(FocusError::config(format!(
            "cross-entropy needs at least 2 classes, got {classes}"
        )));
    }
    if label >= classes {
        return Err(FocusError::LabelOutOfRange { label, classes });
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_sum_exp = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    let loss = log_sum_exp - logits[label];
    if !loss.is_finite() {
        return Err(FocusError::NonFiniteValue { op: "cross_entropy" });
    }
    let mut grad = logits.to_vec();
    softmax_in_place(&mut grad);
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Softmax probabilities of a logit vector.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut p = logits.to_vec();
    softmax_in_place(&mut p);
    p
}
