//! Run configuration and dotted-key overrides.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{FocusError, Result};

/// Which pipeline components are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Ablation {
    /// Language prompt branch.
    pub prompt: bool,
    /// Global redundancy removal + language-guided prioritization.
    pub kavtc: bool,
    /// Sequential neighbor-similarity compression.
    pub svtc: bool,
    /// Cross-modal multi-head aggregation head.
    pub crossagg: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self::full()
    }
}

impl Ablation {
    pub const fn full() -> Self {
        Self {
            prompt: true,
            kavtc: true,
            svtc: true,
            crossagg: true,
        }
    }

    pub const fn base_mil() -> Self {
        Self {
            prompt: false,
            kavtc: false,
            svtc: false,
            crossagg: false,
        }
    }

    /// The five cumulative variants, from attention-pooling baseline to the
    /// full model.
    pub fn cumulative_variants() -> [(&'static str, Ablation); 5] {
        let mut v = Self::base_mil();
        let base = v;
        v.prompt = true;
        let prompt = v;
        v.kavtc = true;
        let kavtc = v;
        v.svtc = true;
        let svtc = v;
        v.crossagg = true;
        [
            ("BaseMIL", base),
            ("+Prompt", prompt),
            ("+KAVTC", kavtc),
            ("+SVTC", svtc),
            ("+CrossAgg", v),
        ]
    }
}

/// Projection used by the language-guided scoring stage.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreProjection {
    /// Dedicated frozen `d × d` projections initialised to the identity.
    Identity,
    /// Reuse the first aggregation head's query/key projections.
    SharedHead,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Redundancy-removal window size.
    pub w: usize,
    /// Fraction of tokens kept by prioritization.
    pub gamma: f64,
    /// Cap on tokens kept by prioritization.
    pub m_max: usize,
    pub theta_base: f64,
    pub delta_theta: f64,
    pub n_stages: usize,
    /// Attention heads in the aggregator.
    pub heads: usize,
    /// Learnable prompt rows.
    pub learnable_prompts: usize,
    pub score_projection: ScoreProjection,
    pub k_shot: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub n_folds: usize,
    pub init_std: f64,
    pub seed: u64,
    /// Train/val/test proportions.
    pub split: [f64; 3],
    pub ablation: Ablation,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            w: 32,
            gamma: 0.8,
            m_max: 4096,
            theta_base: 0.7,
            delta_theta: 0.05,
            n_stages: 3,
            heads: 8,
            learnable_prompts: 4,
            score_projection: ScoreProjection::Identity,
            k_shot: 4,
            lr: 1e-4,
            weight_decay: 0.01,
            max_epochs: 80,
            patience: 10,
            n_folds: 10,
            init_std: 0.02,
            seed: 0,
            split: [0.6, 0.2, 0.2],
            ablation: Ablation::full(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(FocusError::Config(m));
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return fail(format!("gamma must lie in (0, 1), got {}", self.gamma));
        }
        if self.w < 2 {
            return fail(format!("window size must be at least 2, got {}", self.w));
        }
        if self.m_max < 1 {
            return fail("m_max must be at least 1".into());
        }
        if self.n_stages < 1 {
            return fail("n_stages must be at least 1".into());
        }
        if self.theta_base <= 0.0 || self.delta_theta <= 0.0 {
            return fail("theta_base and delta_theta must be positive".into());
        }
        if self.theta_base + self.n_stages as f64 * self.delta_theta > 1.0 + 1e-12 {
            return fail(format!(
                "theta_base + n_stages * delta_theta = {} exceeds 1",
                self.theta_base + self.n_stages as f64 * self.delta_theta
            ));
        }
        if self.heads < 1 {
            return fail("heads must be at least 1".into());
        }
        if self.k_shot < 1 {
            return fail("k_shot must be at least 1".into());
        }
        if !(self.lr > 0.0) || self.weight_decay < 0.0 {
            return fail("lr must be positive and weight_decay non-negative".into());
        }
        if self.max_epochs < 1 {
            return fail("max_epochs must be at least 1".into());
        }
        if self.n_folds < 1 {
            return fail("n_folds must be at least 1".into());
        }
        if !(self.init_std >= 0.0) {
            return fail("init_std must be non-negative".into());
        }
        if self.split.iter().any(|&s| !(s >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return fail(format!("split proportions must be non-negative and sum to 1, got {:?}", self.split));
        }
        let a = self.ablation;
        if (a.kavtc || a.crossagg) && !a.prompt {
            return fail("kavtc and crossagg need the prompt branch enabled".into());
        }
        Ok(())
    }

    /// Checks constraints that depend on the feature dimension.
    pub fn validate_for_dim(&self, d: usize) -> Result<()> {
        self.validate()?;
        if d % self.heads != 0 {
            return Err(FocusError::Config(format!(
                "feature dimension {d} is not divisible by {} heads",
                self.heads
            )));
        }
        Ok(())
    }

    pub fn head_dim(&self, d: usize) -> usize {
        d / self.heads
    }

    /// `θ_i = θ_base + i·Δθ` for each stage.
    pub fn thresholds(&self) -> Vec<f64> {
        (0..self.n_stages)
            .map(|i| self.theta_base + i as f64 * self.delta_theta)
            .collect()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Applies `dotted.key=value` overrides; see [`apply_overrides`].
    pub fn with_overrides<S: AsRef<str>>(&self, overrides: &[S]) -> Result<Self> {
        apply_overrides(self, overrides)
    }
}

/// Applies `dotted.key=value` overrides to any serializable settings value.
/// Values parse as JSON, falling back to a bare string. Unknown keys are
/// rejected.
pub fn apply_overrides<T, S>(value: &T, overrides: &[S]) -> Result<T>
where
    T: Serialize + DeserializeOwned,
    S: AsRef<str>,
{
    let mut doc = serde_json::to_value(value)?;
    for ov in overrides {
        let ov = ov.as_ref();
        let (key, raw) = ov
            .split_once('=')
            .ok_or_else(|| FocusError::config(format!("override `{ov}` is not key=value")))?;
        let parsed: Value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let mut slot = &mut doc;
        for part in key.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|m| m.get_mut(part))
                .ok_or_else(|| FocusError::config(format!("unknown config key `{key}`")))?;
        }
        *slot = parsed;
    }
    serde_json::from_value(doc).map_err(|e| FocusError::config(format!("bad override value: {e}")))
}
