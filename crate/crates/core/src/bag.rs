//! Bags of patch tokens, prompt embeddings and compression traces.

use serde::{Deserialize, Serialize};

use crate::error::{FocusError, Result};
use crate::numerics::Tensor2;

/// One slide: an `N × d` token matrix in scan order.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBag {
    pub id: String,
    features: Tensor2,
    patch_indices: Vec<u64>,
    pub label: Option<usize>,
}

impl FeatureBag {
    pub fn new(
        id: impl Into<String>,
        features: Tensor2,
        patch_indices: Vec<u64>,
        label: Option<usize>,
    ) -> Result<Self> {
        let id = id.into();
        let invalid = |reason: String| FocusError::InvalidBag {
            id: id.clone(),
            reason,
        };
        if features.rows() == 0 {
            return Err(invalid("bag has no tokens".into()));
        }
        if features.cols() == 0 {
            return Err(invalid("feature dimension is zero".into()));
        }
        if patch_indices.len() != features.rows() {
            return Err(invalid(format!(
                "{} patch indices for {} tokens",
                patch_indices.len(),
                features.rows()
            )));
        }
        if let Some(pos) = patch_indices.windows(2).position(|w| w[0] >= w[1]) {
            return Err(invalid(format!(
                "patch indices not strictly increasing at position {}",
                pos + 1
            )));
        }
        if !features.all_finite() {
            return Err(FocusError::NonFiniteValue { op: "FeatureBag::new" });
        }
        Ok(Self {
            id,
            features: features.frozen(),
            patch_indices,
            label,
        })
    }

    /// Bag whose patch indices are `0..N`.
    pub fn from_features(id: impl Into<String>, features: Tensor2, label: Option<usize>) -> Result<Self> {
        let n = features.rows() as u64;
        Self::new(id, features, (0..n).collect(), label)
    }

    pub fn len(&self) -> usize {
        self.features.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.features.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn features(&self) -> &Tensor2 {
        &self.features
    }

    pub fn patch_indices(&self) -> &[u64] {
        &self.patch_indices
    }

    /// Keeps the tokens at the given (strictly increasing) positions.
    pub fn retain_positions(&self, positions: &[usize]) -> FeatureBag {
        debug_assert!(positions.windows(2).all(|w| w[0] < w[1]));
        debug_assert!(!positions.is_empty());
        FeatureBag {
            id: self.id.clone(),
            features: self.features.select_rows(positions),
            patch_indices: positions.iter().map(|&p| self.patch_indices[p]).collect(),
            label: self.label,
        }
    }
}

/// Text-side embeddings: frozen knowledge rows plus learnable rows.
///
/// The stacked prompt matrix is `[learnable; knowledge]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PromptSet {
    pub knowledge: Tensor2,
    pub learnable: Tensor2,
    pub class_names: Vec<String>,
}

impl PromptSet {
    pub fn new(knowledge: Tensor2, learnable: Tensor2, class_names: Vec<String>) -> Result<Self> {
        if knowledge.rows() == 0 {
            return Err(FocusError::config("prompt set needs at least one knowledge row"));
        }
        if learnable.rows() > 0 && learnable.cols() != knowledge.cols() {
            return Err(FocusError::ShapeMismatch {
                op: "PromptSet::new",
                lhs: knowledge.shape(),
                rhs: learnable.shape(),
            });
        }
        if !knowledge.all_finite() || !learnable.all_finite() {
            return Err(FocusError::NonFiniteValue { op: "PromptSet::new" });
        }
        let learnable = if learnable.rows() == 0 {
            Tensor2::zeros(0, knowledge.cols())
        } else {
            learnable
        };
        Ok(Self {
            knowledge,
            learnable,
            class_names,
        })
    }

    /// Knowledge rows only.
    pub fn knowledge_only(knowledge: Tensor2, class_names: Vec<String>) -> Result<Self> {
        let d = knowledge.cols();
        Self::new(knowledge, Tensor2::zeros(0, d), class_names)
    }

    pub fn dim(&self) -> usize {
        self.knowledge.cols()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn total_rows(&self) -> usize {
        self.knowledge.rows() + self.learnable.rows()
    }

    pub fn stacked(&self) -> Tensor2 {
        self.learnable
            .vstack(&self.knowledge)
            .expect("dimensions checked at construction")
    }

    /// Same knowledge rows with different learnable rows.
    pub fn with_learnable(&self, learnable: Tensor2) -> Result<Self> {
        Self::new(self.knowledge.clone(), learnable, self.class_names.clone())
    }

    /// Per-class text features: the mean of each class's knowledge rows.
    ///
    /// Knowledge rows are grouped in contiguous blocks of `t1 / S` rows, in
    /// class order, so `t1` must be a multiple of the class count.
    pub fn class_text_features(&self) -> Result<Tensor2> {
        let s = self.num_classes();
        let t1 = self.knowledge.rows();
        if s == 0 || t1 % s != 0 {
            return Err(FocusError::config(format!(
                "{t1} knowledge prompt rows cannot be split evenly over {s} classes"
            )));
        }
        let per = t1 / s;
        let mut out = Tensor2::zeros(s, self.dim());
        for c in 0..s {
            let rows: Vec<usize> = (c * per..(c + 1) * per).collect();
            let mean = self.knowledge.select_rows(&rows).mean_rows();
            out.row_mut(c).copy_from_slice(mean.row(0));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage_name: String,
    /// Fixed threshold of the stage, when it has one.
    pub threshold_used: Option<f64>,
    pub input_len: usize,
    pub retained_len: usize,
    /// `retained_len / input_len`.
    pub ratio: f64,
    pub retained_original_indices: Vec<u64>,
    /// Set when the stage was switched off and passed its input through.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub bypassed: bool,
}

/// Retained original patch indices after each compression stage.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CompressionTrace {
    pub input_len: usize,
    pub stage_records: Vec<StageRecord>,
    #[serde(skip)]
    input_indices: Vec<u64>,
}

impl CompressionTrace {
    pub fn new(input_indices: &[u64]) -> Self {
        Self {
            input_len: input_indices.len(),
            stage_records: Vec::new(),
            input_indices: input_indices.to_vec(),
        }
    }

    fn last_indices(&self) -> &[u64] {
        self.stage_records
            .last()
            .map_or(&self.input_indices, |r| &r.retained_original_indices)
    }

    /// Appends a stage, checking that its indices are a strictly increasing
    /// subsequence of the previous stage's.
    pub fn push(
        &mut self,
        stage_name: impl Into<String>,
        threshold_used: Option<f64>,
        retained: &[u64],
    ) -> Result<()> {
        let stage_name = stage_name.into();
        let prev = self.last_indices();
        if !is_strict_subsequence(retained, prev) {
            return Err(FocusError::config(format!(
                "stage `{stage_name}` retained indices are not a subsequence of the previous stage"
            )));
        }
        let input_len = prev.len();
        self.stage_records.push(StageRecord {
            stage_name,
            threshold_used,
            input_len,
            retained_len: retained.len(),
            ratio: retained.len() as f64 / input_len.max(1) as f64,
            retained_original_indices: retained.to_vec(),
            bypassed: false,
        });
        Ok(())
    }

    /// Appends a record produced by a stage, after the same subsequence check
    /// as [`CompressionTrace::push`].
    pub fn push_record(&mut self, record: StageRecord) -> Result<()> {
        let prev = self.last_indices();
        if record.input_len != prev.len()
            || !is_strict_subsequence(&record.retained_original_indices, prev)
        {
            return Err(FocusError::config(format!(
                "stage `{}` retained indices are not a subsequence of the previous stage",
                record.stage_name
            )));
        }
        self.stage_records.push(record);
        Ok(())
    }

    /// Records a switched-off stage as an identity step.
    pub fn push_bypass(&mut self, stage_name: impl Into<String>) {
        let prev = self.last_indices().to_vec();
        self.stage_records.push(StageRecord {
            stage_name: stage_name.into(),
            threshold_used: None,
            input_len: prev.len(),
            retained_len: prev.len(),
            ratio: 1.0,
            retained_original_indices: prev,
            bypassed: true,
        });
    }

    /// Re-checks the subset chain over all records.
    pub fn validate(&self) -> Result<()> {
        for (i, rec) in self.stage_records.iter().enumerate() {
            if !rec
                .retained_original_indices
                .windows(2)
                .all(|w| w[0] < w[1])
            {
                return Err(FocusError::config(format!(
                    "stage `{}` indices not strictly increasing",
                    rec.stage_name
                )));
            }
            if i > 0 {
                let prev = &self.stage_records[i - 1].retained_original_indices;
                if !is_strict_subsequence(&rec.retained_original_indices, prev) {
                    return Err(FocusError::config(format!(
                        "stage `{}` is not a subset of stage `{}`",
                        rec.stage_name,
                        self.stage_records[i - 1].stage_name
                    )));
                }
            }
            if rec.retained_len != rec.retained_original_indices.len() || rec.retained_len == 0 {
                return Err(FocusError::config(format!(
                    "stage `{}` has inconsistent length",
                    rec.stage_name
                )));
            }
        }
        Ok(())
    }

    pub fn final_len(&self) -> usize {
        self.stage_records
            .last()
            .map_or(self.input_len, |r| r.retained_len)
    }

    /// Final length over input length.
    pub fn overall_ratio(&self) -> f64 {
        self.final_len() as f64 / self.input_len.max(1) as f64
    }

    pub fn final_indices(&self) -> &[u64] {
        self.last_indices()
    }
}

fn is_strict_subsequence(sub: &[u64], sup: &[u64]) -> bool {
    if !sub.windows(2).all(|w| w[0] < w[1]) {
        return false;
    }
    if sup.is_empty() {
        // Trace built without input indices (deserialized); only order is checked.
        return true;
    }
    let mut it = sup.iter();
    sub.iter().all(|s| it.any(|p| p == s))
}
