//! Model parameters for one ablation variant, with forward and backward.

use crate::aggregator::{self, normal_init};
use crate::bag::{CompressionTrace, FeatureBag, PromptSet};
use crate::config::{RunConfig, ScoreProjection};
use crate::error::{FocusError, Result};
use crate::numerics::{cross_entropy, ParamStore, Tensor2};
use crate::pipeline::{self, Stage1Output};
use crate::pooling;
use crate::rng::{derive_seed, rng_from_seed, stream};

pub const LEARNABLE_PROMPTS: &str = "prompt.learnable";

/// Classification head selected by the ablation flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    /// Attention pooling and a linear classifier.
    Linear,
    /// Attention pooling scored against per-class prompt features.
    PromptSimilarity,
    /// Cross-modal multi-head aggregation.
    CrossModal,
}

#[derive(Clone, Debug)]
pub struct FocusModel {
    config: RunConfig,
    d: usize,
    num_classes: usize,
    head: HeadKind,
    pub params: ParamStore,
}

impl FocusModel {
    /// Fresh parameters drawn from `seed`'s init stream.
    pub fn new(config: &RunConfig, d: usize, num_classes: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if num_classes < 2 {
            return Err(FocusError::config("at least two classes are needed"));
        }
        let a = config.ablation;
        let head = if a.crossagg {
            HeadKind::CrossModal
        } else if a.prompt {
            HeadKind::PromptSimilarity
        } else {
            HeadKind::Linear
        };
        let mut rng = rng_from_seed(derive_seed(seed, stream::INIT));
        let mut params = ParamStore::new();
        let std = config.init_std;
        match head {
            HeadKind::Linear => pooling::register_linear(&mut params, d, num_classes, std, &mut rng)?,
            HeadKind::PromptSimilarity => {
                pooling::register_prompt(&mut params, d, num_classes, std, &mut rng)?
            }
            HeadKind::CrossModal => {
                config.validate_for_dim(d)?;
                aggregator::register_params(&mut params, d, config.heads, num_classes, std, &mut rng)?;
                if config.learnable_prompts > 0 {
                    params.register(
                        LEARNABLE_PROMPTS,
                        normal_init(config.learnable_prompts, d, std, &mut rng),
                    )?;
                }
            }
        }
        Ok(Self {
            config: config.clone(),
            d,
            num_classes,
            head,
            params,
        })
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn head(&self) -> HeadKind {
        self.head
    }

    /// Learnable prompt rows `t2` in use.
    pub fn learnable_rows(&self) -> usize {
        self.params
            .get(LEARNABLE_PROMPTS)
            .map_or(0, |t| t.rows())
    }

    /// `[T^L; T^P]`. Without learnable rows this is just the knowledge rows.
    pub fn prompt_matrix(&self, prompts: &PromptSet) -> Result<Tensor2> {
        if prompts.dim() != self.d {
            return Err(FocusError::ShapeMismatch {
                op: "prompt_matrix",
                lhs: (prompts.knowledge.rows(), prompts.dim()),
                rhs: (0, self.d),
            });
        }
        match self.params.get(LEARNABLE_PROMPTS) {
            Ok(l) => l.vstack(&prompts.knowledge),
            Err(_) => Ok(prompts.knowledge.clone()),
        }
    }

    /// `(Wq, Wk)` of the prioritization stage.
    pub fn score_projections(&self) -> Result<(Tensor2, Tensor2)> {
        if self.config.score_projection == ScoreProjection::SharedHead && self.head == HeadKind::CrossModal {
            let [q, k, _] = aggregator::head_names(0);
            return Ok((self.params.get(&q)?.clone(), self.params.get(&k)?.clone()));
        }
        Ok((Tensor2::identity(self.d), Tensor2::identity(self.d)))
    }

    fn require_prompts<'a>(&self, prompts: Option<&'a PromptSet>) -> Result<&'a PromptSet> {
        prompts.ok_or_else(|| FocusError::config("this variant needs prompt embeddings"))
    }

    /// Stages 2 and 3 on top of a stage-1 result.
    pub fn compress(
        &self,
        s1: &Stage1Output,
        prompts: Option<&PromptSet>,
    ) -> Result<(FeatureBag, CompressionTrace)> {
        if !self.config.ablation.kavtc {
            return pipeline::stages_2_3(s1, None, &self.config);
        }
        let t = self.prompt_matrix(self.require_prompts(prompts)?)?;
        let (wq, wk) = self.score_projections()?;
        pipeline::stages_2_3(s1, Some((&t, &wq, &wk)), &self.config)
    }

    /// Class logits for already-compressed tokens.
    pub fn logits(&self, tokens: &Tensor2, prompts: Option<&PromptSet>) -> Result<Vec<f64>> {
        match self.head {
            HeadKind::Linear => {
                let c = pooling::attention_pool(tokens, &self.params)?;
                pooling::linear_logits(&c.pooled, &self.params)
            }
            HeadKind::PromptSimilarity => {
                let ct = self.require_prompts(prompts)?.class_text_features()?;
                let c = pooling::attention_pool(tokens, &self.params)?;
                pooling::prompt_logits(&c.pooled, &ct, &self.params)
            }
            HeadKind::CrossModal => {
                let t = self.prompt_matrix(self.require_prompts(prompts)?)?;
                let (o, _) = aggregator::aggregate(tokens, &t, &self.params, self.config.heads)?;
                Ok(aggregator::classify(&o, &self.params)?.0)
            }
        }
    }

    /// Cross-entropy loss on compressed tokens; gradients are added to the
    /// parameter store. Returns `(loss, logits)`.
    pub fn loss_and_backward(
        &mut self,
        tokens: &Tensor2,
        prompts: Option<&PromptSet>,
        label: usize,
    ) -> Result<(f64, Vec<f64>)> {
        let p = &self.params;
        let (loss, logits, grads) = match self.head {
            HeadKind::Linear => {
                let c = pooling::attention_pool(tokens, p)?;
                let logits = pooling::linear_logits(&c.pooled, p)?;
                let (loss, dl) = cross_entropy(&logits, label)?;
                let (mut g, dp) = pooling::linear_backward(&c.pooled, p, &dl)?;
                g.push((pooling::ATTENTION.into(), pooling::attention_pool_backward(tokens, &c, &dp)?));
                (loss, logits, g)
            }
            HeadKind::PromptSimilarity => {
                let ct = self.require_prompts(prompts)?.class_text_features()?;
                let c = pooling::attention_pool(tokens, p)?;
                let logits = pooling::prompt_logits(&c.pooled, &ct, p)?;
                let (loss, dl) = cross_entropy(&logits, label)?;
                let (mut g, dp) = pooling::prompt_backward(&c.pooled, &ct, p, &dl)?;
                g.push((pooling::ATTENTION.into(), pooling::attention_pool_backward(tokens, &c, &dp)?));
                (loss, logits, g)
            }
            HeadKind::CrossModal => {
                let t = self.prompt_matrix(self.require_prompts(prompts)?)?;
                let (o, cache) = aggregator::aggregate(tokens, &t, p, self.config.heads)?;
                let (logits, pooled) = aggregator::classify(&o, p)?;
                let (loss, dl) = cross_entropy(&logits, label)?;
                let (mut g, d_o) = aggregator::classify_backward(&pooled, o.rows(), p, &dl)?;
                let (g2, dt) = aggregator::aggregate_backward(&cache, p, &d_o)?;
                g.extend(g2);
                if let Ok(l) = p.get(LEARNABLE_PROMPTS) {
                    let rows: Vec<usize> = (0..l.rows()).collect();
                    g.push((LEARNABLE_PROMPTS.into(), dt.select_rows(&rows)));
                }
                (loss, logits, g)
            }
        };
        for (name, g) in &grads {
            self.params.accumulate(name, g)?;
        }
        Ok((loss, logits))
    }
}
