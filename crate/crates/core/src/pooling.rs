//! Attention pooling heads used by the ablation variants without the
//! cross-modal aggregator.
//!
//! Pooling: `α = softmax(B·u)`, `p = αᵀ·B`. Two classifiers sit on `p`:
//! a linear layer (`p·W_c + β_c`), and a prompt-similarity layer that
//! projects `p` and scores it against per-class text features `C`
//! (`(p·W_p)·Cᵀ + β_c`).

use crate::aggregator::{normal_init, NamedGrads, CLS_BIAS, CLS_WEIGHT};
use crate::error::Result;
use crate::numerics::ops::{dot, softmax_in_place};
use crate::numerics::{matmul, matmul_nt, matmul_tn, ParamStore, Tensor2};
use crate::rng::FocusRng;

pub const ATTENTION: &str = "pool.attention";
pub const PROMPT_PROJ: &str = "prompt.proj";

pub fn register_linear(
    params: &mut ParamStore,
    d: usize,
    num_classes: usize,
    init_std: f64,
    rng: &mut FocusRng,
) -> Result<()> {
    params.register(ATTENTION, normal_init(d, 1, init_std, rng))?;
    params.register(CLS_WEIGHT, normal_init(d, num_classes, init_std, rng))?;
    params.register(CLS_BIAS, Tensor2::zeros(1, num_classes).trainable())?;
    Ok(())
}

pub fn register_prompt(
    params: &mut ParamStore,
    d: usize,
    num_classes: usize,
    init_std: f64,
    rng: &mut FocusRng,
) -> Result<()> {
    params.register(ATTENTION, normal_init(d, 1, init_std, rng))?;
    params.register(PROMPT_PROJ, normal_init(d, d, init_std, rng))?;
    params.register(CLS_BIAS, Tensor2::zeros(1, num_classes).trainable())?;
    Ok(())
}

pub struct PoolCache {
    pub weights: Vec<f64>,
    pub pooled: Tensor2,
}

pub fn attention_pool(tokens: &Tensor2, params: &ParamStore) -> Result<PoolCache> {
    let mut weights = matmul(tokens, params.get(ATTENTION)?)?.into_data();
    softmax_in_place(&mut weights);
    let mut pooled = Tensor2::zeros(1, tokens.cols());
    for (row, &a) in tokens.iter_rows().zip(&weights) {
        for (p, &x) in pooled.data_mut().iter_mut().zip(row) {
            *p += a * x;
        }
    }
    Ok(PoolCache { weights, pooled })
}

/// Gradient of `u` given `dp`.
pub fn attention_pool_backward(tokens: &Tensor2, cache: &PoolCache, dpooled: &Tensor2) -> Result<Tensor2> {
    let dalpha: Vec<f64> = tokens.iter_rows().map(|r| dot(r, dpooled.row(0))).collect();
    let inner = dot(&cache.weights, &dalpha);
    let dscore: Vec<f64> = cache
        .weights
        .iter()
        .zip(&dalpha)
        .map(|(a, g)| a * (g - inner))
        .collect();
    matmul_tn(tokens, &Tensor2::from_vec(tokens.rows(), 1, dscore)?)
}

fn add_bias(mut logits: Tensor2, params: &ParamStore) -> Result<Vec<f64>> {
    logits.add_assign(params.get(CLS_BIAS)?)?;
    Ok(logits.into_data())
}

pub fn linear_logits(pooled: &Tensor2, params: &ParamStore) -> Result<Vec<f64>> {
    add_bias(matmul(pooled, params.get(CLS_WEIGHT)?)?, params)
}

/// Returns parameter gradients and `dp`.
pub fn linear_backward(pooled: &Tensor2, params: &ParamStore, dlogits: &[f64]) -> Result<(NamedGrads, Tensor2)> {
    let dl = Tensor2::from_vec(1, dlogits.len(), dlogits.to_vec())?;
    let dpooled = matmul_nt(&dl, params.get(CLS_WEIGHT)?)?;
    Ok((
        vec![
            (CLS_WEIGHT.into(), matmul_tn(pooled, &dl)?),
            (CLS_BIAS.into(), dl),
        ],
        dpooled,
    ))
}

pub fn prompt_logits(pooled: &Tensor2, class_text: &Tensor2, params: &ParamStore) -> Result<Vec<f64>> {
    let z = matmul(pooled, params.get(PROMPT_PROJ)?)?;
    add_bias(matmul_nt(&z, class_text)?, params)
}

pub fn prompt_backward(
    pooled: &Tensor2,
    class_text: &Tensor2,
    params: &ParamStore,
    dlogits: &[f64],
) -> Result<(NamedGrads, Tensor2)> {
    let dl = Tensor2::from_vec(1, dlogits.len(), dlogits.to_vec())?;
    let dz = matmul(&dl, class_text)?;
    let dpooled = matmul_nt(&dz, params.get(PROMPT_PROJ)?)?;
    Ok((
        vec![
            (PROMPT_PROJ.into(), matmul_tn(pooled, &dz)?),
            (CLS_BIAS.into(), dl),
        ],
        dpooled,
    ))
}
