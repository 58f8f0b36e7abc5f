//! Seeded property checks shared by the proptest target and the acceptance
//! summary. Each returns `Err` with a description on the first violation.

use focus_core::metrics::{binary_auc, EvalBatch, Metrics};
use focus_core::numerics::{row_softmax, softmax};
use focus_core::pipeline::compress_bag;
use focus_core::prioritize::{keep_count, score_relevance_with};
use focus_core::redundancy::redundancy_keep;
use focus_core::rng::rng_from_seed;
use focus_core::seqcompress::stage_keep;
use focus_core::{FeatureBag, RunConfig, Tensor2};
use rand::Rng;

use super::{instance, random_tokens, Layout};

pub type Check = fn(u64) -> Result<(), String>;

pub const ALL: [(&str, Check); 10] = [
    ("subset_chain", subset_chain),
    ("length_monotonicity", length_monotonicity),
    ("threshold_monotonicity", threshold_monotonicity),
    ("softmax_normalization", softmax_normalization),
    ("scale_invariance", scale_invariance),
    ("shift_invariance", shift_invariance),
    ("metric_bounds", metric_bounds),
    ("auc_monotone_transform", auc_monotone_transform),
    ("window_locality", window_locality),
    ("guard_keeps_one", guard_keeps_one),
];

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn pipeline_config(seed: u64) -> RunConfig {
    let mut rng = rng_from_seed(seed ^ 0x5eed);
    RunConfig {
        w: rng.random_range(2..=40),
        gamma: rng.random_range(0.05..1.0),
        m_max: rng.random_range(1..=300),
        theta_base: rng.random_range(0.1..0.8),
        delta_theta: rng.random_range(0.01..0.06),
        n_stages: rng.random_range(1..=4),
        ..Default::default()
    }
}

fn compressed(seed: u64) -> Result<(FeatureBag, focus_core::CompressionTrace, RunConfig), String> {
    let inst = instance(seed);
    let cfg = pipeline_config(seed);
    let bag = FeatureBag::from_features("b", inst.tokens, None).map_err(|e| e.to_string())?;
    let (out, trace) =
        compress_bag(&bag, Some((&inst.prompts, &inst.wq, &inst.wk)), &cfg).map_err(|e| e.to_string())?;
    Ok((out, trace, cfg))
}

/// Every stage retains a strictly increasing subsequence of the previous
/// stage's patch indices, and the final bag carries exactly those indices.
pub fn subset_chain(seed: u64) -> Result<(), String> {
    let (out, trace, _) = compressed(seed)?;
    trace.validate().map_err(|e| e.to_string())?;
    let mut prev: Vec<u64> = (0..trace.input_len as u64).collect();
    for r in &trace.stage_records {
        let mut it = prev.iter();
        ensure(
            r.retained_original_indices.iter().all(|i| it.any(|p| p == i)),
            || format!("{} is not a subsequence", r.stage_name),
        )?;
        ensure(!r.retained_original_indices.is_empty(), || format!("{} emptied the bag", r.stage_name))?;
        prev = r.retained_original_indices.clone();
    }
    ensure(out.patch_indices() == prev.as_slice(), || "final indices differ from trace".into())
}

/// Lengths never grow, and prioritization keeps exactly `keep_count`.
pub fn length_monotonicity(seed: u64) -> Result<(), String> {
    let (_, trace, cfg) = compressed(seed)?;
    let mut len = trace.input_len;
    for r in &trace.stage_records {
        ensure(r.input_len == len && r.retained_len <= len, || {
            format!("{}: {} -> {}", r.stage_name, r.input_len, r.retained_len)
        })?;
        if r.stage_name == focus_core::prioritize::STAGE_NAME {
            let k = keep_count(r.input_len, cfg.gamma, cfg.m_max);
            ensure(r.retained_len == k, || format!("kept {} not {k}", r.retained_len))?;
        }
        len = r.retained_len;
    }
    Ok(())
}

/// Raising the threshold never drops a token that a lower threshold kept.
pub fn threshold_monotonicity(seed: u64) -> Result<(), String> {
    let inst = instance(seed);
    let mut rng = rng_from_seed(seed ^ 0x7e7a);
    let lo = rng.random_range(-0.2..0.9);
    let hi = lo + rng.random_range(0.0..0.3);
    let k = inst.tokens.rows();
    let sims = focus_core::seqcompress::neighbor_similarities(&inst.tokens).map_err(|e| e.to_string())?;
    let below = |theta: f64| (0..k).any(|j| {
        (j > 0 && sims[j - 1] < theta) || (j + 1 < k && sims[j] < theta)
    });
    let a = stage_keep(&inst.tokens, lo).map_err(|e| e.to_string())?;
    let b = stage_keep(&inst.tokens, hi).map_err(|e| e.to_string())?;
    // The guard fallback is a different rule; only compare threshold picks.
    if k > 1 && below(lo) {
        ensure(a.iter().all(|j| b.contains(j)), || format!("θ {lo} kept {a:?}, θ {hi} kept {b:?}"))?;
    }
    Ok(())
}

/// Attention rows and the relevance vector each sum to one.
pub fn softmax_normalization(seed: u64) -> Result<(), String> {
    let inst = instance(seed);
    let s = score_relevance_with(&inst.tokens, &inst.prompts, &inst.wq, &inst.wk).map_err(|e| e.to_string())?;
    for (i, row) in s.attention.iter_rows().enumerate() {
        let total: f64 = row.iter().sum();
        ensure((total - 1.0).abs() < 1e-12, || format!("row {i} sums to {total}"))?;
        ensure(row.iter().all(|&v| v >= 0.0), || format!("row {i} has a negative weight"))?;
    }
    let total: f64 = s.relevance.iter().sum();
    ensure((total - 1.0).abs() < 1e-12, || format!("relevance sums to {total}"))?;
    let mut rng = rng_from_seed(seed);
    let logits = focus_core::aggregator::normal_init(4, 7, 30.0, &mut rng);
    let p = row_softmax(&logits).map_err(|e| e.to_string())?;
    for row in p.iter_rows() {
        let total: f64 = row.iter().sum();
        ensure((total - 1.0).abs() < 1e-12, || format!("softmax row sums to {total}"))?;
    }
    Ok(())
}

/// Redundancy removal and sequential compression depend on directions only.
pub fn scale_invariance(seed: u64) -> Result<(), String> {
    let inst = instance(seed);
    let mut rng = rng_from_seed(seed ^ 0x5ca1e);
    let mut scaled = inst.tokens.clone();
    for r in 0..scaled.rows() {
        let s: f64 = rng.random_range(0.1..10.0);
        scaled.row_mut(r).iter_mut().for_each(|v| *v *= s);
    }
    let w = rng.random_range(2..=40);
    let a = redundancy_keep(&inst.tokens, w).map_err(|e| e.to_string())?;
    let b = redundancy_keep(&scaled, w).map_err(|e| e.to_string())?;
    ensure(a == b, || format!("stage 1 changed under scaling: {a:?} vs {b:?}"))?;
    // Exact invariance holds up to rounding: decisions within an ulp-sized
    // band of θ, and ties among guard candidates, may go either way.
    let sims = focus_core::seqcompress::neighbor_similarities(&inst.tokens).map_err(|e| e.to_string())?;
    let k = inst.tokens.rows();
    let max_sim = |j: usize| {
        let l = if j > 0 { sims[j - 1] } else { f64::NEG_INFINITY };
        let r = if j + 1 < k { sims[j] } else { f64::NEG_INFINITY };
        l.max(r)
    };
    for &theta in &inst.thresholds {
        if sims.iter().any(|s| (s - theta).abs() < 1e-9) {
            continue;
        }
        let a = stage_keep(&inst.tokens, theta).map_err(|e| e.to_string())?;
        let b = stage_keep(&scaled, theta).map_err(|e| e.to_string())?;
        if k > 1 && sims.iter().all(|&s| s >= theta) {
            let best = (0..k).map(max_sim).fold(f64::INFINITY, f64::min);
            ensure(b.len() == 1 && max_sim(b[0]) <= best + 1e-12, || {
                format!("θ {theta}: guard picked {b:?} after scaling")
            })?;
        } else {
            ensure(a == b, || format!("θ {theta} changed under scaling"))?;
        }
    }
    Ok(())
}

/// Adding a constant to logits changes neither probabilities nor the
/// predicted class.
pub fn shift_invariance(seed: u64) -> Result<(), String> {
    let mut rng = rng_from_seed(seed);
    let s = rng.random_range(2..=6);
    let logits: Vec<f64> = (0..s).map(|_| rng.random_range(-5.0..5.0)).collect();
    let c: f64 = rng.random_range(-100.0..100.0);
    let shifted: Vec<f64> = logits.iter().map(|l| l + c).collect();
    let (p, q) = (softmax(&logits), softmax(&shifted));
    for (a, b) in p.iter().zip(&q) {
        ensure((a - b).abs() < 1e-12, || format!("{p:?} vs {q:?}"))?;
    }
    ensure(
        focus_core::metrics::argmax(&p) == focus_core::metrics::argmax(&q),
        || "argmax moved under a shift".into(),
    )
}

fn random_batch(seed: u64) -> EvalBatch {
    let mut rng = rng_from_seed(seed);
    let s = rng.random_range(2..=5);
    let n = rng.random_range(s..=40);
    // Every class appears at least once.
    let labels: Vec<usize> = (0..n).map(|i| if i < s { i } else { rng.random_range(0..s) }).collect();
    let probs = labels
        .iter()
        .map(|_| {
            let l: Vec<f64> = (0..s).map(|_| rng.random_range(-3.0..3.0)).collect();
            softmax(&l)
        })
        .collect();
    EvalBatch::new(probs, labels, s).unwrap()
}

pub fn metric_bounds(seed: u64) -> Result<(), String> {
    let m = Metrics::compute(&random_batch(seed)).map_err(|e| e.to_string())?;
    for (name, v) in [("balanced_acc", m.balanced_acc), ("auc", m.auc), ("f1", m.f1)] {
        ensure((0.0..=1.0).contains(&v), || format!("{name} = {v}"))?;
    }
    Ok(())
}

/// AUC depends on ranks only.
pub fn auc_monotone_transform(seed: u64) -> Result<(), String> {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(2..=60);
    let mut positive: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
    positive[0] = true;
    positive[1] = false;
    // Coarse grid so that ties occur.
    let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..10) as f64 / 10.0).collect();
    let base = binary_auc(&scores, &positive).unwrap();
    for f in [|x: f64| x.exp(), |x: f64| x * x * x + 2.0 * x - 7.0, |x: f64| (x + 1.0).ln()] {
        let t: Vec<f64> = scores.iter().map(|&x| f(x)).collect();
        let v = binary_auc(&t, &positive).unwrap();
        ensure(v == base, || format!("AUC {base} became {v}"))?;
    }
    Ok(())
}

/// Changing tokens in one window leaves every other window's decisions alone.
pub fn window_locality(seed: u64) -> Result<(), String> {
    let mut rng = rng_from_seed(seed);
    let w = rng.random_range(2..=16);
    let n = rng.random_range(2 * w..=8 * w);
    let d = rng.random_range(2..=8);
    let a = random_tokens(n, d, Layout::Hubs, &mut rng);
    let win = rng.random_range(0..n.div_ceil(w));
    let mut b = a.clone();
    let replacement = random_tokens(n, d, Layout::Iid, &mut rng);
    for r in win * w..((win + 1) * w).min(n) {
        b.row_mut(r).copy_from_slice(replacement.row(r));
    }
    let outside = |k: Vec<usize>| -> Vec<usize> {
        k.into_iter().filter(|&p| p / w != win).collect()
    };
    let ka = outside(redundancy_keep(&a, w).map_err(|e| e.to_string())?);
    let kb = outside(redundancy_keep(&b, w).map_err(|e| e.to_string())?);
    ensure(ka == kb, || format!("window {win} edit leaked: {ka:?} vs {kb:?}"))
}

/// A threshold no similarity can fall below keeps exactly one token, the
/// one whose most similar neighbour is least similar.
pub fn guard_keeps_one(seed: u64) -> Result<(), String> {
    let mut rng = rng_from_seed(seed);
    let n = rng.random_range(2..=64);
    let d = rng.random_range(2..=8);
    let t = random_tokens(n, d, Layout::Iid, &mut rng).map(f64::abs);
    let kept = stage_keep(&t, 0.0).map_err(|e| e.to_string())?;
    ensure(kept.len() == 1, || format!("kept {kept:?}"))?;
    let sims = focus_core::seqcompress::neighbor_similarities(&t).map_err(|e| e.to_string())?;
    let worst = |j: usize| {
        let l = if j > 0 { sims[j - 1] } else { f64::NEG_INFINITY };
        let r = if j + 1 < n { sims[j] } else { f64::NEG_INFINITY };
        l.max(r)
    };
    let j = kept[0];
    ensure((0..n).all(|i| worst(j) <= worst(i)), || format!("guard picked {j}"))?;
    let one = Tensor2::from_rows(&[t.row(0)]);
    ensure(redundancy_keep(&one, 4).map_err(|e| e.to_string())? == vec![0], || "singleton dropped".into())
}
