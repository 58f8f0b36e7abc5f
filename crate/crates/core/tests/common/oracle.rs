//! Naive reference implementations of the three compression stages.
//!
//! Written directly from the stage rules, with no shared code: similarities
//! are formed per pair from raw vectors, statistics are summed in plain
//! loops, and ranking counts how many tokens beat each token.

#![allow(dead_code)]

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    ab / (aa.sqrt() * bb.sqrt())
}

/// Global redundancy removal: positions kept.
pub fn stage1(tokens: &[Vec<f64>], w: usize) -> Vec<usize> {
    let n = tokens.len();
    let mut kept = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + w).min(n);
        let len = end - start;
        if len == 1 {
            kept.push(start);
            break;
        }
        let mut s = vec![vec![0.0; len]; len];
        for i in 0..len {
            for j in 0..len {
                s[i][j] = cosine(&tokens[start + i], &tokens[start + j]);
            }
        }
        let count = (len * len) as f64;
        let mut total = 0.0;
        for row in &s {
            for v in row {
                total += v;
            }
        }
        let mu = total / count;
        let mut sq = 0.0;
        for row in &s {
            for v in row {
                sq += (v - mu) * (v - mu);
            }
        }
        let tau = mu + (sq / count).sqrt();
        let r: Vec<f64> = s.iter().map(|row| row.iter().sum::<f64>() / len as f64).collect();
        let mut window_kept: Vec<usize> = (0..len).filter(|&i| !(r[i] > tau + 1e-12)).collect();
        if window_kept.is_empty() {
            let mut best = 0;
            for i in 0..len {
                if r[i] < r[best] {
                    best = i;
                }
            }
            window_kept.push(best);
        }
        kept.extend(window_kept.into_iter().map(|i| start + i));
        start = end;
    }
    kept
}

fn matmul(a: &[Vec<f64>], b: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let inner = b.len();
    let cols = b[0].len();
    a.iter()
        .map(|row| {
            (0..cols)
                .map(|j| (0..inner).map(|k| row[k] * b[k][j]).sum())
                .collect()
        })
        .collect()
}

/// Relevance `r` from direct evaluation of `(T·Wq)(B·Wk)ᵀ/√d`.
pub fn relevance(tokens: &[Vec<f64>], prompts: &[Vec<f64>], wq: &[Vec<f64>], wk: &[Vec<f64>]) -> Vec<f64> {
    let d = tokens[0].len() as f64;
    let q = matmul(prompts, wq);
    let k = matmul(tokens, wk);
    let mut r = vec![0.0; tokens.len()];
    for qi in &q {
        let logits: Vec<f64> = k
            .iter()
            .map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum::<f64>() / d.sqrt())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for j in 0..r.len() {
            r[j] += e[j] / z / prompts.len() as f64;
        }
    }
    r
}

/// Top-k by descending relevance, lower position winning ties.
pub fn select(r: &[f64], gamma: f64, m_max: usize) -> Vec<usize> {
    let n = r.len();
    let k = ((gamma * n as f64 + 1e-9).floor() as usize).max(1).min(m_max);
    (0..n)
        .filter(|&i| {
            let better = (0..n)
                .filter(|&j| r[j] > r[i] || (r[j] == r[i] && j < i))
                .count();
            better < k
        })
        .collect()
}

/// One sequential compression stage: positions kept.
pub fn stage3_once(tokens: &[Vec<f64>], theta: f64) -> Vec<usize> {
    let k = tokens.len();
    if k == 1 {
        return vec![0];
    }
    let sim = |a: usize, b: usize| cosine(&tokens[a], &tokens[b]);
    let mut kept = Vec::new();
    for j in 0..k {
        let mut m = f64::INFINITY;
        if j > 0 {
            m = m.min(sim(j - 1, j));
        }
        if j + 1 < k {
            m = m.min(sim(j, j + 1));
        }
        if m < theta {
            kept.push(j);
        }
    }
    if kept.is_empty() {
        let worst = |j: usize| {
            let mut m = f64::NEG_INFINITY;
            if j > 0 {
                m = m.max(sim(j - 1, j));
            }
            if j + 1 < k {
                m = m.max(sim(j, j + 1));
            }
            m
        };
        let mut best = 0;
        for j in 1..k {
            if worst(j) < worst(best) {
                best = j;
            }
        }
        kept.push(best);
    }
    kept
}

/// All sequential stages; positions (into the input) kept after each stage.
pub fn stage3(tokens: &[Vec<f64>], thresholds: &[f64]) -> Vec<Vec<usize>> {
    let mut current: Vec<usize> = (0..tokens.len()).collect();
    let mut out = Vec::new();
    for &theta in thresholds {
        let sub: Vec<Vec<f64>> = current.iter().map(|&i| tokens[i].clone()).collect();
        current = stage3_once(&sub, theta).into_iter().map(|p| current[p]).collect();
        out.push(current.clone());
    }
    out
}

/// The whole compression chain with identity projections. Returns the
/// retained original positions after stage 1, stage 2 and each stage-3 step.
pub fn full_chain(
    tokens: &[Vec<f64>],
    prompts: &[Vec<f64>],
    w: usize,
    gamma: f64,
    m_max: usize,
    thresholds: &[f64],
) -> Vec<Vec<usize>> {
    let d = tokens[0].len();
    let eye: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let s1 = stage1(tokens, w);
    let t1: Vec<Vec<f64>> = s1.iter().map(|&i| tokens[i].clone()).collect();
    let sel = select(&relevance(&t1, prompts, &eye, &eye), gamma, m_max);
    let s2: Vec<usize> = sel.iter().map(|&p| s1[p]).collect();
    let t2: Vec<Vec<f64>> = s2.iter().map(|&i| tokens[i].clone()).collect();
    let mut out = vec![s1, s2.clone()];
    for stage in stage3(&t2, thresholds) {
        out.push(stage.into_iter().map(|p| s2[p]).collect());
    }
    out
}
