//! Compression stages wired in order, with ablation bypasses, followed by
//! the classification head.

use crate::bag::{CompressionTrace, FeatureBag, PromptSet};
use crate::config::RunConfig;
use crate::error::Result;
use crate::model::FocusModel;
use crate::numerics::Tensor2;
use crate::seqcompress::StageSchedule;
use crate::{prioritize, redundancy, seqcompress};

/// A bag after global redundancy removal, with its trace so far.
///
/// Stage 1 does not depend on any parameter, so this can be computed once per
/// bag and reused across epochs.
#[derive(Clone, Debug)]
pub struct Stage1Output {
    pub bag: FeatureBag,
    pub trace: CompressionTrace,
}

pub fn stage1(bag: &FeatureBag, config: &RunConfig) -> Result<Stage1Output> {
    Ok(stage1_plan(bag, config)?.apply(bag))
}

/// Which positions stage 1 keeps, without copying the bag. `kept` is `None`
/// when every token survives.
#[derive(Clone, Debug)]
pub struct Stage1Plan {
    pub kept: Option<Vec<usize>>,
    pub trace: CompressionTrace,
}

impl Stage1Plan {
    pub fn apply(&self, bag: &FeatureBag) -> Stage1Output {
        let bag = match &self.kept {
            Some(k) => bag.retain_positions(k),
            None => bag.clone(),
        };
        Stage1Output {
            bag,
            trace: self.trace.clone(),
        }
    }
}

pub fn stage1_plan(bag: &FeatureBag, config: &RunConfig) -> Result<Stage1Plan> {
    let mut trace = CompressionTrace::new(bag.patch_indices());
    if !config.ablation.kavtc {
        trace.push_bypass(redundancy::STAGE_NAME);
        return Ok(Stage1Plan { kept: None, trace });
    }
    let kept = redundancy::redundancy_keep(bag.features(), config.w)?;
    let retained: Vec<u64> = kept.iter().map(|&p| bag.patch_indices()[p]).collect();
    trace.push(redundancy::STAGE_NAME, None, &retained)?;
    let kept = (kept.len() < bag.len()).then_some(kept);
    Ok(Stage1Plan { kept, trace })
}

/// Prioritization and sequential compression. `scoring` holds the prompt
/// matrix and the `Wq`, `Wk` projections; it is only read when the
/// prioritization stage is active.
pub fn stages_2_3(
    s1: &Stage1Output,
    scoring: Option<(&Tensor2, &Tensor2, &Tensor2)>,
    config: &RunConfig,
) -> Result<(FeatureBag, CompressionTrace)> {
    let mut trace = s1.trace.clone();
    let mut bag = match (config.ablation.kavtc, scoring) {
        (true, Some((t, wq, wk))) => {
            let (out, rec) = prioritize::prioritize(&s1.bag, t, wq, wk, config.gamma, config.m_max)?;
            trace.push_record(rec)?;
            out
        }
        (true, None) => {
            return Err(crate::error::FocusError::config(
                "prioritization is enabled but no prompt embeddings were given",
            ))
        }
        (false, _) => {
            trace.push_bypass(prioritize::STAGE_NAME);
            s1.bag.clone()
        }
    };
    let schedule = StageSchedule::new(config.theta_base, config.delta_theta, config.n_stages)?;
    if config.ablation.svtc {
        let (out, recs) = seqcompress::compress_sequential(&bag, &schedule)?;
        for rec in recs {
            trace.push_record(rec)?;
        }
        bag = out;
    } else {
        for i in 0..schedule.thresholds().len() {
            trace.push_bypass(format!("{}_{i}", seqcompress::STAGE_PREFIX));
        }
    }
    Ok((bag, trace))
}

/// Runs every compression stage on a bag.
pub fn compress_bag(
    bag: &FeatureBag,
    scoring: Option<(&Tensor2, &Tensor2, &Tensor2)>,
    config: &RunConfig,
) -> Result<(FeatureBag, CompressionTrace)> {
    stages_2_3(&stage1(bag, config)?, scoring, config)
}

/// Compression followed by aggregation and classification.
pub fn forward_pipeline(
    bag: &FeatureBag,
    prompts: Option<&PromptSet>,
    model: &FocusModel,
) -> Result<(Vec<f64>, CompressionTrace)> {
    let (compressed, trace) = model.compress(&stage1(bag, model.config())?, prompts)?;
    let logits = model.logits(compressed.features(), prompts)?;
    Ok((logits, trace))
}
