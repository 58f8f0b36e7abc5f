//! Balanced accuracy, macro F1 and macro one-vs-rest AUC.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{FocusError, Result};

/// Class probabilities for `M` bags with their true labels.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalBatch {
    pub probs: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub num_classes: usize,
}

impl EvalBatch {
    pub fn new(probs: Vec<Vec<f64>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if probs.len() != labels.len() {
            return Err(FocusError::ShapeMismatch {
                op: "EvalBatch::new",
                lhs: (probs.len(), num_classes),
                rhs: (labels.len(), 1),
            });
        }
        for (row, &label) in probs.iter().zip(&labels) {
            if row.len() != num_classes {
                return Err(FocusError::ShapeMismatch {
                    op: "EvalBatch::new",
                    lhs: (1, row.len()),
                    rhs: (1, num_classes),
                });
            }
            if label >= num_classes {
                return Err(FocusError::LabelOutOfRange {
                    label,
                    classes: num_classes,
                });
            }
            if (row.iter().sum::<f64>() - 1.0).abs() > 1e-6 {
                return Err(FocusError::config("probability rows must sum to 1"));
            }
        }
        Ok(Self {
            probs,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.probs.iter().map(|r| argmax(r)).collect()
    }

    fn check_all_present(&self) -> Result<()> {
        let mut seen = vec![false; self.num_classes];
        for &l in &self.labels {
            seen[l] = true;
        }
        match seen.iter().position(|s| !s) {
            Some(id) => Err(FocusError::MissingClass { id }),
            None => Ok(()),
        }
    }
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn confusion(batch: &EvalBatch) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; batch.num_classes]; batch.num_classes];
    for (&y, p) in batch.labels.iter().zip(batch.predictions()) {
        m[y][p] += 1;
    }
    m
}

/// Mean per-class recall.
pub fn balanced_accuracy(batch: &EvalBatch) -> Result<f64> {
    batch.check_all_present()?;
    let m = confusion(batch);
    let s = batch.num_classes;
    Ok((0..s)
        .map(|c| m[c][c] as f64 / m[c].iter().sum::<usize>() as f64)
        .sum::<f64>()
        / s as f64)
}

/// Mean recall over the classes that occur in `batch`, or `None` if it is
/// empty. Used for model selection on small validation splits.
pub fn balanced_accuracy_present(batch: &EvalBatch) -> Option<f64> {
    let m = confusion(batch);
    let recalls: Vec<f64> = (0..batch.num_classes)
        .filter_map(|c| {
            let n: usize = m[c].iter().sum();
            (n > 0).then(|| m[c][c] as f64 / n as f64)
        })
        .collect();
    (!recalls.is_empty()).then(|| recalls.iter().sum::<f64>() / recalls.len() as f64)
}

/// Unweighted mean of per-class F1. A class never predicted and never
/// present also scores 0.
pub fn macro_f1(batch: &EvalBatch) -> Result<f64> {
    batch.check_all_present()?;
    let m = confusion(batch);
    let s = batch.num_classes;
    let total: f64 = (0..s)
        .map(|c| {
            let tp = m[c][c] as f64;
            let fn_: f64 = m[c].iter().sum::<usize>() as f64 - tp;
            let fp: f64 = (0..s).map(|r| m[r][c]).sum::<usize>() as f64 - tp;
            if tp == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            }
        })
        .sum();
    Ok(total / s as f64)
}

/// Binary AUC of `scores` against `positive`, by the rank statistic with
/// ties counted as one half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap_or(Ordering::Equal));
    // Average 1-based ranks over tied groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        rank_sum_pos += avg * order[i..=j].iter().filter(|&&k| positive[k]).count() as f64;
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Some((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// Macro one-vs-rest AUC over the probability columns.
pub fn auc(batch: &EvalBatch) -> Result<f64> {
    let mut total = 0.0;
    for c in 0..batch.num_classes {
        let scores: Vec<f64> = batch.probs.iter().map(|r| r[c]).collect();
        let pos: Vec<bool> = batch.labels.iter().map(|&l| l == c).collect();
        total += binary_auc(&scores, &pos).ok_or(FocusError::DegenerateAuc { class: c })?;
    }
    Ok(total / batch.num_classes as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub balanced_acc: f64,
    pub auc: f64,
    pub f1: f64,
}

impl Metrics {
    pub fn compute(batch: &EvalBatch) -> Result<Self> {
        Ok(Self {
            balanced_acc: balanced_accuracy(batch)?,
            auc: auc(batch)?,
            f1: macro_f1(batch)?,
        })
    }
}
