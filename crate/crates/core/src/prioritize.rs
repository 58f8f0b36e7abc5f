//! Language-guided token prioritization.
//!
//! Prompt rows attend over the tokens, `A = softmax((T·Wq)(B·Wk)ᵀ / √d)` with
//! the softmax taken over tokens, and each token's relevance is its column
//! mean of `A`. The top `k = min(M_max, max(1, ⌊γ·N′⌋))` tokens survive, in
//! their original order.

use std::cmp::Ordering;

use crate::bag::{FeatureBag, PromptSet, StageRecord};
use crate::error::{FocusError, Result};
use crate::numerics::{matmul, matmul_nt, row_softmax, Tensor2};

pub const STAGE_NAME: &str = "language_prioritization";

#[derive(Clone, Debug)]
pub struct RelevanceScores {
    /// `(t1 + t2) × N′`, rows sum to one.
    pub attention: Tensor2,
    pub relevance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SelectionResult {
    pub k: usize,
    /// Positions in the scored sequence, ascending.
    pub selected: Vec<usize>,
}

/// Number of tokens kept out of `n`.
pub fn keep_count(n: usize, gamma: f64, m_max: usize) -> usize {
    // The small offset keeps e.g. 0.29 * 100 from flooring to 28.
    let scaled = (gamma * n as f64 + 1e-9).floor() as usize;
    scaled.max(1).min(m_max).min(n.max(1))
}

/// Relevance of each token to the stacked prompt matrix of `prompts`.
pub fn score_relevance(
    tokens: &Tensor2,
    prompts: &PromptSet,
    wq: &Tensor2,
    wk: &Tensor2,
) -> Result<RelevanceScores> {
    score_relevance_with(tokens, &prompts.stacked(), wq, wk)
}

/// As [`score_relevance`], taking the prompt matrix `T` directly.
pub fn score_relevance_with(
    tokens: &Tensor2,
    prompt_matrix: &Tensor2,
    wq: &Tensor2,
    wk: &Tensor2,
) -> Result<RelevanceScores> {
    let d = tokens.cols();
    if prompt_matrix.cols() != d {
        return Err(FocusError::ShapeMismatch {
            op: "score_relevance",
            lhs: tokens.shape(),
            rhs: prompt_matrix.shape(),
        });
    }
    if prompt_matrix.rows() == 0 {
        return Err(FocusError::config("relevance scoring needs at least one prompt row"));
    }
    // (T Wq)(B Wk)ᵀ = ((T Wq) Wkᵀ) Bᵀ, which avoids projecting every token.
    let q = matmul(prompt_matrix, wq)?;
    let qk = matmul_nt(&q, wk)?;
    let logits = matmul_nt(&qk, tokens)?.scale(1.0 / (d as f64).sqrt());
    let attention = row_softmax(&logits)?;
    let rows = attention.rows() as f64;
    let relevance = (0..attention.cols())
        .map(|j| (0..attention.rows()).map(|i| attention.get(i, j)).sum::<f64>() / rows)
        .collect();
    Ok(RelevanceScores {
        attention,
        relevance,
    })
}

/// Ranks by descending relevance, lower position first on ties.
pub fn select_topk(scores: &RelevanceScores, gamma: f64, m_max: usize) -> SelectionResult {
    let r = &scores.relevance;
    let k = keep_count(r.len(), gamma, m_max);
    let mut order: Vec<usize> = (0..r.len()).collect();
    order.sort_by(|&a, &b| {
        r[b].partial_cmp(&r[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order.sort_unstable();
    SelectionResult { k, selected: order }
}

/// Scores and prunes a bag.
pub fn prioritize(
    bag: &FeatureBag,
    prompt_matrix: &Tensor2,
    wq: &Tensor2,
    wk: &Tensor2,
    gamma: f64,
    m_max: usize,
) -> Result<(FeatureBag, StageRecord)> {
    let scores = score_relevance_with(bag.features(), prompt_matrix, wq, wk)?;
    let sel = select_topk(&scores, gamma, m_max);
    let out = bag.retain_positions(&sel.selected);
    let record = StageRecord {
        stage_name: STAGE_NAME.to_string(),
        threshold_used: None,
        input_len: bag.len(),
        retained_len: out.len(),
        ratio: out.len() as f64 / bag.len() as f64,
        retained_original_indices: out.patch_indices().to_vec(),
        bypassed: false,
    };
    Ok((out, record))
}
