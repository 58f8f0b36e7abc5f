//! Global redundancy removal over non-overlapping 1-D windows.
//!
//! Inside each window of `w` consecutive tokens the cosine similarity matrix
//! `S` is formed, the dynamic threshold is `τ = mean(S) + std(S)` over all
//! `w′²` entries (diagonal included, population deviation), and a token is
//! dropped when its mean similarity `R_i` exceeds `τ`. A trailing window of a
//! single token passes through unchanged. If every token of a window would be
//! dropped, the one with the smallest `R_i` survives.

use rayon::prelude::*;

use crate::bag::{FeatureBag, StageRecord};
use crate::error::{FocusError, Result};
use crate::numerics::ops::dot;
use crate::numerics::Tensor2;

pub const STAGE_NAME: &str = "global_redundancy";

/// Rows with a smaller L2 norm count as zero.
pub const MIN_ROW_NORM: f64 = 1e-12;

/// `R_i` must exceed `τ` by more than this to count as redundant. Absorbs
/// rounding when a window is made of identical vectors.
pub const REDUNDANCY_MARGIN: f64 = 1e-12;

/// Similarity statistics for one window.
#[derive(Clone, Debug)]
pub struct WindowStats {
    pub similarities: Tensor2,
    pub mu: f64,
    pub sigma: f64,
    pub tau_g: f64,
    pub mean_sim: Vec<f64>,
}

impl WindowStats {
    /// Positions (within the window) that survive.
    pub fn kept(&self) -> Vec<usize> {
        let kept: Vec<usize> = self
            .mean_sim
            .iter()
            .enumerate()
            .filter(|(_, &r)| r <= self.tau_g + REDUNDANCY_MARGIN)
            .map(|(i, _)| i)
            .collect();
        if !kept.is_empty() {
            return kept;
        }
        let mut best = 0;
        for (i, &r) in self.mean_sim.iter().enumerate() {
            if r < self.mean_sim[best] {
                best = i;
            }
        }
        vec![best]
    }
}

fn unit_row(row: &[f64], index: usize) -> Result<Vec<f64>> {
    let norm = dot(row, row).sqrt();
    if !(norm >= MIN_ROW_NORM) {
        return Err(FocusError::ZeroNormRow { index });
    }
    Ok(row.iter().map(|v| v / norm).collect())
}

/// Scales every row to unit L2 norm.
pub fn normalize_rows(features: &Tensor2) -> Result<Tensor2> {
    let mut out = Tensor2::zeros(features.rows(), features.cols());
    for r in 0..features.rows() {
        let u = unit_row(features.row(r), r)?;
        out.row_mut(r).copy_from_slice(&u);
    }
    Ok(out)
}

/// Statistics of rows `[start, start + len)` of `features`.
pub fn window_stats(features: &Tensor2, start: usize, len: usize) -> Result<WindowStats> {
    let units: Vec<Vec<f64>> = (start..start + len)
        .map(|i| unit_row(features.row(i), i))
        .collect::<Result<_>>()?;
    let mut s = Tensor2::zeros(len, len);
    for i in 0..len {
        for j in i..len {
            let v = dot(&units[i], &units[j]);
            s.set(i, j, v);
            s.set(j, i, v);
        }
    }
    let count = (len * len) as f64;
    let mu = s.data().iter().sum::<f64>() / count;
    let sigma = (s.data().iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / count).sqrt();
    let mean_sim = (0..len)
        .map(|i| s.row(i).iter().sum::<f64>() / len as f64)
        .collect();
    Ok(WindowStats {
        similarities: s,
        mu,
        sigma,
        tau_g: mu + sigma,
        mean_sim,
    })
}

fn window_ranges(n: usize, w: usize) -> Vec<(usize, usize)> {
    (0..n).step_by(w).map(|s| (s, w.min(n - s))).collect()
}

fn kept_in_window(features: &Tensor2, start: usize, len: usize) -> Result<Vec<usize>> {
    if len == 1 {
        return Ok(vec![start]);
    }
    Ok(window_stats(features, start, len)?
        .kept()
        .into_iter()
        .map(|i| start + i)
        .collect())
}

/// Positions kept by the filter, ascending.
pub fn redundancy_keep(features: &Tensor2, w: usize) -> Result<Vec<usize>> {
    check_window(w)?;
    let mut out = Vec::new();
    for (start, len) in window_ranges(features.rows(), w) {
        out.extend(kept_in_window(features, start, len)?);
    }
    Ok(out)
}

/// Same as [`redundancy_keep`], with windows evaluated on the rayon pool.
pub fn redundancy_keep_par(features: &Tensor2, w: usize) -> Result<Vec<usize>> {
    check_window(w)?;
    let per_window: Vec<Vec<usize>> = window_ranges(features.rows(), w)
        .into_par_iter()
        .map(|(start, len)| kept_in_window(features, start, len))
        .collect::<Result<_>>()?;
    Ok(per_window.concat())
}

fn check_window(w: usize) -> Result<()> {
    if w < 2 {
        return Err(FocusError::config(format!("window size must be at least 2, got {w}")));
    }
    Ok(())
}

/// Applies the filter to a bag. Scoring uses normalized copies; the
/// original features are what flow onward.
pub fn remove_global_redundancy(bag: &FeatureBag, w: usize) -> Result<(FeatureBag, StageRecord)> {
    let kept = redundancy_keep(bag.features(), w)?;
    Ok(finish(bag, kept))
}

pub fn remove_global_redundancy_par(bag: &FeatureBag, w: usize) -> Result<(FeatureBag, StageRecord)> {
    let kept = redundancy_keep_par(bag.features(), w)?;
    Ok(finish(bag, kept))
}

fn finish(bag: &FeatureBag, kept: Vec<usize>) -> (FeatureBag, StageRecord) {
    let out = bag.retain_positions(&kept);
    let record = StageRecord {
        stage_name: STAGE_NAME.to_string(),
        threshold_used: None,
        input_len: bag.len(),
        retained_len: out.len(),
        ratio: out.len() as f64 / bag.len() as f64,
        retained_original_indices: out.patch_indices().to_vec(),
        bypassed: false,
    };
    (out, record)
}
