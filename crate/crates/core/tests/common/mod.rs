#![allow(dead_code)]

pub mod invariants;
pub mod oracle;

use focus_core::aggregator::normal_init;
use focus_core::dataio::synth::orthonormal_rows;
use focus_core::rng::{rng_from_seed, FocusRng};
use focus_core::Tensor2;
use rand::seq::SliceRandom;
use rand::Rng;

pub fn rows(t: &Tensor2) -> Vec<Vec<f64>> {
    t.iter_rows().map(|r| r.to_vec()).collect()
}

fn gaussian(d: usize, rng: &mut FocusRng) -> Vec<f64> {
    normal_init(1, d, 1.0, rng).row(0).to_vec()
}

/// How a random bag is laid out.
#[derive(Clone, Copy, Debug)]
pub enum Layout {
    /// Independent Gaussian tokens.
    Iid,
    /// Runs of near duplicates; `exact` runs repeat one vector bit for bit.
    Runs { exact: bool },
    /// Spokes around a shared direction with one token per block sitting on
    /// that direction, which is what makes the redundancy filter fire.
    Hubs,
}

pub const LAYOUTS: [Layout; 4] = [
    Layout::Iid,
    Layout::Runs { exact: false },
    Layout::Runs { exact: true },
    Layout::Hubs,
];

pub fn random_tokens(n: usize, d: usize, layout: Layout, rng: &mut FocusRng) -> Tensor2 {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(n);
    match layout {
        Layout::Iid => {
            for _ in 0..n {
                out.push(gaussian(d, rng));
            }
        }
        Layout::Runs { exact } => {
            while out.len() < n {
                let base = gaussian(d, rng);
                let len = rng.random_range(1..=12).min(n - out.len());
                for _ in 0..len {
                    let row = if exact {
                        base.clone()
                    } else {
                        base.iter().map(|v| v + 1e-3 * gaussian(1, rng)[0]).collect()
                    };
                    out.push(row);
                }
            }
        }
        Layout::Hubs => {
            // Blocks of `d` tokens: the hub `c` and spokes `c + q_k` over the
            // rest of an orthonormal basis, shuffled. Spokes sit at 0.5 to each
            // other and 0.71 to the hub; the filter fires once d ≥ 12.
            let q = orthonormal_rows(d, d, rng);
            while out.len() < n {
                let mut block: Vec<usize> = (0..d).collect();
                block.shuffle(rng);
                for k in block.into_iter().take(n - out.len()) {
                    let mut row = q.row(0).to_vec();
                    if k > 0 {
                        row.iter_mut().zip(q.row(k)).for_each(|(a, b)| *a += b);
                    }
                    out.push(row.iter().map(|v| v + 0.01 * gaussian(1, rng)[0]).collect());
                }
            }
        }
    }
    Tensor2::from_rows(&out)
}

/// One randomised instance for the oracle comparisons.
pub struct Instance {
    pub layout: Layout,
    pub tokens: Tensor2,
    pub prompts: Tensor2,
    pub wq: Tensor2,
    pub wk: Tensor2,
    /// Redundancy window; equal to `d` for hub layouts so windows align
    /// with blocks.
    pub w: usize,
    pub gamma: f64,
    pub thresholds: Vec<f64>,
}

pub fn instance(seed: u64) -> Instance {
    let mut rng = rng_from_seed(seed);
    let layout = LAYOUTS[(seed % LAYOUTS.len() as u64) as usize];
    let n = rng.random_range(1..=256);
    let d = match layout {
        Layout::Hubs => rng.random_range(12..=16),
        _ => rng.random_range(2..=16),
    };
    let w = match layout {
        Layout::Hubs => d,
        _ => rng.random_range(2..=48),
    };
    let tokens = random_tokens(n, d, layout, &mut rng);
    let t = rng.random_range(1..=6);
    let prompts = normal_init(t, d, 1.0, &mut rng);
    let wq = normal_init(d, d, 0.5, &mut rng);
    let wk = normal_init(d, d, 0.5, &mut rng);
    let gamma = rng.random_range(0.05..1.0);
    let mut thresholds: Vec<f64> = (0..rng.random_range(1..=4))
        .map(|_| rng.random_range(-0.5..1.0))
        .collect();
    thresholds.sort_by(f64::total_cmp);
    Instance {
        layout,
        tokens,
        prompts,
        wq,
        wk,
        w,
        gamma,
        thresholds,
    }
}

/// Which stages actually removed tokens in an oracle comparison.
#[derive(Clone, Copy, Debug, Default)]
pub struct Fired {
    pub stage1: bool,
    pub stage2: bool,
    pub stage3: bool,
}

/// Compares each stage against the naive reference on one instance.
pub fn oracle_case(seed: u64) -> Result<Fired, String> {
    use focus_core::prioritize::{score_relevance_with, select_topk};
    use focus_core::redundancy::redundancy_keep;
    use focus_core::seqcompress::stage_keep;

    let inst = instance(seed);
    let t = rows(&inst.tokens);
    let n = t.len();
    let mut rng = rng_from_seed(seed ^ 0xa11ce);
    let w = inst.w;
    let m_max = rng.random_range(1..=300);
    let mut fired = Fired::default();

    let got = redundancy_keep(&inst.tokens, w).map_err(|e| e.to_string())?;
    let want = oracle::stage1(&t, w);
    if got != want {
        return Err(format!("stage 1 (w = {w}, {:?}): {got:?} vs {want:?}", inst.layout));
    }
    fired.stage1 = got.len() < n;

    let scores = score_relevance_with(&inst.tokens, &inst.prompts, &inst.wq, &inst.wk).map_err(|e| e.to_string())?;
    let r = oracle::relevance(&t, &rows(&inst.prompts), &rows(&inst.wq), &rows(&inst.wk));
    let got = select_topk(&scores, inst.gamma, m_max).selected;
    let want = oracle::select(&r, inst.gamma, m_max);
    if got != want {
        return Err(format!("stage 2 (γ = {}, m_max = {m_max}): {got:?} vs {want:?}", inst.gamma));
    }
    fired.stage2 = got.len() < n;

    let want = oracle::stage3(&t, &inst.thresholds);
    let mut current = inst.tokens.clone();
    let mut positions: Vec<usize> = (0..n).collect();
    for (theta, want) in inst.thresholds.iter().zip(want) {
        let kept = stage_keep(&current, *theta).map_err(|e| e.to_string())?;
        fired.stage3 |= kept.len() < current.rows();
        positions = kept.iter().map(|&p| positions[p]).collect();
        current = current.select_rows(&kept);
        if positions != want {
            return Err(format!("stage 3 (θ = {theta}): {positions:?} vs {want:?}"));
        }
    }
    Ok(fired)
}
