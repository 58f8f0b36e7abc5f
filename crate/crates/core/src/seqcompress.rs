//! Sequential neighbor-similarity compression.
//!
//! Each stage drops tokens that are similar to both neighbors: token `j` is
//! kept iff the smaller of its available neighbor cosines is below the
//! stage threshold. Endpoints have one neighbor. Similarities are recomputed
//! on the survivors before the next, stricter, stage.

use crate::bag::{FeatureBag, StageRecord};
use crate::error::{FocusError, Result};
use crate::numerics::ops::dot;
use crate::numerics::Tensor2;
use crate::redundancy::MIN_ROW_NORM;

pub const STAGE_PREFIX: &str = "sequential";

/// Strictly increasing thresholds `θ_i = θ_base + i·Δθ`.
#[derive(Clone, Debug, PartialEq)]
pub struct StageSchedule {
    thresholds: Vec<f64>,
}

impl StageSchedule {
    pub fn new(theta_base: f64, delta_theta: f64, n_stages: usize) -> Result<Self> {
        Self::from_thresholds(
            (0..n_stages)
                .map(|i| theta_base + i as f64 * delta_theta)
                .collect(),
        )
    }

    pub fn from_thresholds(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(FocusError::config("stage schedule is empty"));
        }
        if thresholds.iter().any(|&t| !(t > 0.0 && t <= 1.0 + 1e-12)) {
            return Err(FocusError::config(format!(
                "stage thresholds must lie in (0, 1]: {thresholds:?}"
            )));
        }
        if thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(FocusError::config(format!(
                "stage thresholds must increase strictly: {thresholds:?}"
            )));
        }
        Ok(Self { thresholds })
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.thresholds
    }
}

fn row_norms(tokens: &Tensor2) -> Result<Vec<f64>> {
    (0..tokens.rows())
        .map(|i| {
            let n = dot(tokens.row(i), tokens.row(i)).sqrt();
            if n >= MIN_ROW_NORM {
                Ok(n)
            } else {
                Err(FocusError::ZeroNormRow { index: i })
            }
        })
        .collect()
}

/// Cosine similarity of each adjacent pair; empty for a single token.
pub fn neighbor_similarities(tokens: &Tensor2) -> Result<Vec<f64>> {
    let norms = row_norms(tokens)?;
    Ok((0..tokens.rows().saturating_sub(1))
        .map(|j| dot(tokens.row(j), tokens.row(j + 1)) / (norms[j] * norms[j + 1]))
        .collect())
}

/// Positions kept by one stage at threshold `theta`.
pub fn stage_keep(tokens: &Tensor2, theta: f64) -> Result<Vec<usize>> {
    let k = tokens.rows();
    if k <= 1 {
        return Ok((0..k).collect());
    }
    let s = neighbor_similarities(tokens)?;
    let left = |j: usize| if j > 0 { Some(s[j - 1]) } else { None };
    let right = |j: usize| if j + 1 < k { Some(s[j]) } else { None };

    let kept: Vec<usize> = (0..k)
        .filter(|&j| {
            let m = match (left(j), right(j)) {
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) | (None, Some(a)) => a,
                (None, None) => unreachable!(),
            };
            m < theta
        })
        .collect();
    if !kept.is_empty() {
        return Ok(kept);
    }
    // Keep the token least similar to its most similar neighbor.
    let max_sim = |j: usize| match (left(j), right(j)) {
        (Some(a), Some(b)) => a.max(b),
        (Some(a), None) | (None, Some(a)) => a,
        (None, None) => unreachable!(),
    };
    let mut best = 0;
    for j in 1..k {
        if max_sim(j) < max_sim(best) {
            best = j;
        }
    }
    Ok(vec![best])
}

/// One stage: the surviving tokens and the keep mask.
pub fn compress_stage(tokens: &Tensor2, theta: f64) -> Result<(Tensor2, Vec<bool>)> {
    let kept = stage_keep(tokens, theta)?;
    let mut mask = vec![false; tokens.rows()];
    for &j in &kept {
        mask[j] = true;
    }
    Ok((tokens.select_rows(&kept), mask))
}

/// Runs every stage of `schedule` on a bag.
pub fn compress_sequential(
    bag: &FeatureBag,
    schedule: &StageSchedule,
) -> Result<(FeatureBag, Vec<StageRecord>)> {
    let mut current = bag.clone();
    let mut records = Vec::with_capacity(schedule.thresholds().len());
    for (i, &theta) in schedule.thresholds().iter().enumerate() {
        let kept = stage_keep(current.features(), theta)?;
        let next = current.retain_positions(&kept);
        records.push(StageRecord {
            stage_name: format!("{STAGE_PREFIX}_{i}"),
            threshold_used: Some(theta),
            input_len: current.len(),
            retained_len: next.len(),
            ratio: next.len() as f64 / current.len() as f64,
            retained_original_indices: next.patch_indices().to_vec(),
            bypassed: false,
        });
        current = next;
    }
    Ok((current, records))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn similarities_of_simple_pairs() {
        let t = Tensor2::from_rows(&[[1.0, 0.0], [2.0, 0.0], [0.0, 3.0]]);
        let s = neighbor_similarities(&t).unwrap();
        assert!((s[0] - 1.0).abs() < 1e-15);
        assert_eq!(s[1], 0.0);
        assert!(neighbor_similarities(&Tensor2::from_rows(&[[1.0]])).unwrap().is_empty());
    }

    #[test]
    fn single_token_always_kept() {
        let t = Tensor2::from_rows(&[[1.0, 1.0]]);
        assert_eq!(stage_keep(&t, 0.01).unwrap(), vec![0]);
    }

    #[test]
    fn two_cluster_example() {
        let a = [1.0, 0.0];
        let b = [0.0, 1.0];
        let t = Tensor2::from_rows(&[a, a, b, b, a]);
        assert_eq!(neighbor_similarities(&t).unwrap(), vec![1.0, 0.0, 1.0, 0.0]);
        let (out, mask) = compress_stage(&t, 0.7).unwrap();
        assert_eq!(mask, vec![false, true, true, true, true]);
        assert_eq!(out, Tensor2::from_rows(&[a, b, b, a]));
    }

    #[test]
    fn identical_run_keeps_first_token() {
        let t = Tensor2::from_rows(&[[0.2, 0.9]; 5]);
        assert_eq!(stage_keep(&t, 0.7).unwrap(), vec![0]);
    }

    #[test]
    fn orthogonal_sequence_survives_all_stages() {
        let bag = FeatureBag::from_features("o", Tensor2::identity(6), Some(0)).unwrap();
        let sched = StageSchedule::new(0.7, 0.05, 3).unwrap();
        let (out, recs) = compress_sequential(&bag, &sched).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(recs.len(), 3);
        assert!(recs.iter().all(|r| r.ratio == 1.0));
    }

    #[test]
    fn default_schedule() {
        let s = StageSchedule::new(0.7, 0.05, 3).unwrap();
        let expected = [0.7, 0.75, 0.8];
        for (a, b) in s.thresholds().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn bad_schedules_rejected() {
        assert!(StageSchedule::from_thresholds(vec![]).is_err());
        assert!(StageSchedule::from_thresholds(vec![0.8, 0.7]).is_err());
        assert!(StageSchedule::from_thresholds(vec![0.0, 0.5]).is_err());
        assert!(StageSchedule::from_thresholds(vec![0.9, 1.1]).is_err());
        assert!(StageSchedule::new(0.7, 0.0, 2).is_err());
    }

    #[test]
    fn zero_norm_row_rejected() {
        let t = Tensor2::from_rows(&[[1.0, 0.0], [0.0, 0.0]]);
        assert!(matches!(stage_keep(&t, 0.5), Err(FocusError::ZeroNormRow { index: 1 })));
    }
}
