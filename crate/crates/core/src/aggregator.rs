//! Cross-modal multi-head aggregation and its classification head.
//!
//! Prompt rows `T` query the compressed tokens `B`:
//!
//! ```text
//! Head_i = softmax((T·Wq_i)(B·Wk_i)ᵀ / √d_k) · (B·Wv_i)
//! O      = LayerNorm(Concat(Head_1..Head_h) · W_o)
//! logits = mean_rows(O) · W_c + β_c
//! ```
//!
//! Backward mirrors the forward by hand and returns gradients keyed by
//! parameter name, plus the gradient with respect to `T`.

use rand_distr::{Distribution, Normal};

use crate::error::{FocusError, Result};
use crate::numerics::{
    layer_norm, layer_norm_backward, matmul, matmul_nt, matmul_tn, row_softmax,
    row_softmax_backward, LayerNormCache, ParamStore, Tensor2,
};
use crate::rng::FocusRng;

pub const WO: &str = "agg.wo";
pub const LN_SCALE: &str = "agg.ln_scale";
pub const LN_SHIFT: &str = "agg.ln_shift";
pub const CLS_WEIGHT: &str = "cls.weight";
pub const CLS_BIAS: &str = "cls.bias";

/// Names of head `i`'s query, key and value projections.
pub fn head_names(i: usize) -> [String; 3] {
    ["wq", "wk", "wv"].map(|p| format!("agg.head{i}.{p}"))
}

/// Gradients keyed by parameter name.
pub type NamedGrads = Vec<(String, Tensor2)>;

/// A `rows × cols` tensor drawn from `N(0, std²)`, marked trainable.
pub fn normal_init(rows: usize, cols: usize, std: f64, rng: &mut FocusRng) -> Tensor2 {
    let mut t = Tensor2::zeros(rows, cols);
    if std > 0.0 {
        let dist = Normal::new(0.0, std).expect("finite std");
        for v in t.data_mut() {
            *v = dist.sample(rng);
        }
    }
    t.trainable()
}

/// Registers the aggregation parameters and the linear classifier.
pub fn register_params(
    params: &mut ParamStore,
    d: usize,
    heads: usize,
    num_classes: usize,
    init_std: f64,
    rng: &mut FocusRng,
) -> Result<()> {
    if heads == 0 || d % heads != 0 {
        return Err(FocusError::config(format!(
            "feature dimension {d} is not divisible by {heads} heads"
        )));
    }
    let dk = d / heads;
    for i in 0..heads {
        for name in head_names(i) {
            params.register(name, normal_init(d, dk, init_std, rng))?;
        }
    }
    params.register(WO, normal_init(heads * dk, d, init_std, rng))?;
    params.register(LN_SCALE, Tensor2::filled(1, d, 1.0).trainable())?;
    params.register(LN_SHIFT, Tensor2::zeros(1, d).trainable())?;
    params.register(CLS_WEIGHT, normal_init(d, num_classes, init_std, rng))?;
    params.register(CLS_BIAS, Tensor2::zeros(1, num_classes).trainable())?;
    Ok(())
}

struct HeadCache {
    q: Tensor2,
    k: Tensor2,
    v: Tensor2,
    attn: Tensor2,
}

/// Forward values kept for [`aggregate_backward`].
pub struct AggregatorCache {
    prompts: Tensor2,
    tokens: Tensor2,
    heads: Vec<HeadCache>,
    concat: Tensor2,
    ln: LayerNormCache,
}

impl AggregatorCache {
    /// Attention weights of head `i`, `(t1 + t2) × N_c`.
    pub fn attention(&self, i: usize) -> &Tensor2 {
        &self.heads[i].attn
    }
}

/// Returns `O`, `(t1 + t2) × d`.
pub fn aggregate(
    tokens: &Tensor2,
    prompt_matrix: &Tensor2,
    params: &ParamStore,
    heads: usize,
) -> Result<(Tensor2, AggregatorCache)> {
    let d = tokens.cols();
    if prompt_matrix.cols() != d {
        return Err(FocusError::ShapeMismatch {
            op: "aggregate",
            lhs: tokens.shape(),
            rhs: prompt_matrix.shape(),
        });
    }
    if tokens.rows() == 0 || prompt_matrix.rows() == 0 {
        return Err(FocusError::config("aggregation needs at least one token and one prompt row"));
    }
    let dk = d / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut concat = Tensor2::zeros(prompt_matrix.rows(), heads * dk);
    let mut caches = Vec::with_capacity(heads);
    for i in 0..heads {
        let [nq, nk, nv] = head_names(i);
        let q = matmul(prompt_matrix, params.get(&nq)?)?;
        let k = matmul(tokens, params.get(&nk)?)?;
        let v = matmul(tokens, params.get(&nv)?)?;
        let attn = row_softmax(&matmul_nt(&q, &k)?.scale(scale))?;
        let h = matmul(&attn, &v)?;
        concat.set_column_block(i * dk, &h);
        caches.push(HeadCache { q, k, v, attn });
    }
    let z = matmul(&concat, params.get(WO)?)?;
    let (o, ln) = layer_norm(&z, params.get(LN_SCALE)?, params.get(LN_SHIFT)?)?;
    Ok((
        o,
        AggregatorCache {
            prompts: prompt_matrix.clone(),
            tokens: tokens.clone(),
            heads: caches,
            concat,
            ln,
        },
    ))
}

/// Gradients of the aggregation given `dO`: parameter gradients and `dT`.
pub fn aggregate_backward(
    cache: &AggregatorCache,
    params: &ParamStore,
    d_out: &Tensor2,
) -> Result<(NamedGrads, Tensor2)> {
    let heads = cache.heads.len();
    let dk = cache.concat.cols() / heads;
    let scale = 1.0 / (dk as f64).sqrt();
    let mut grads = NamedGrads::new();

    let (dz, dscale, dshift) = layer_norm_backward(&cache.ln, params.get(LN_SCALE)?, d_out)?;
    grads.push((LN_SCALE.into(), dscale));
    grads.push((LN_SHIFT.into(), dshift));
    let wo = params.get(WO)?;
    grads.push((WO.into(), matmul_tn(&cache.concat, &dz)?));
    let dconcat = matmul_nt(&dz, wo)?;

    let mut d_prompts = Tensor2::zeros(cache.prompts.rows(), cache.prompts.cols());
    for (i, hc) in cache.heads.iter().enumerate() {
        let [nq, nk, nv] = head_names(i);
        let dh = dconcat.column_block(i * dk, dk);
        let dattn = matmul_nt(&dh, &hc.v)?;
        let dv = matmul_tn(&hc.attn, &dh)?;
        let dlogits = row_softmax_backward(&hc.attn, &dattn)?.scale(scale);
        let dq = matmul(&dlogits, &hc.k)?;
        let dkey = matmul_tn(&dlogits, &hc.q)?;
        grads.push((nq.clone(), matmul_tn(&cache.prompts, &dq)?));
        grads.push((nk, matmul_tn(&cache.tokens, &dkey)?));
        grads.push((nv, matmul_tn(&cache.tokens, &dv)?));
        d_prompts.add_assign(&matmul_nt(&dq, params.get(&nq)?)?)?;
    }
    Ok((grads, d_prompts))
}

/// Mean-pools `O` over prompt rows and applies the linear classifier.
/// Returns `(logits, pooled)`.
pub fn classify(o: &Tensor2, params: &ParamStore) -> Result<(Vec<f64>, Tensor2)> {
    let pooled = o.mean_rows();
    let mut logits = matmul(&pooled, params.get(CLS_WEIGHT)?)?;
    logits.add_assign(params.get(CLS_BIAS)?)?;
    Ok((logits.into_data(), pooled))
}

/// Gradients of [`classify`]: parameter gradients and `dO`.
pub fn classify_backward(
    pooled: &Tensor2,
    rows: usize,
    params: &ParamStore,
    dlogits: &[f64],
) -> Result<(NamedGrads, Tensor2)> {
    let dl = Tensor2::from_vec(1, dlogits.len(), dlogits.to_vec())?;
    let grads = vec![
        (CLS_WEIGHT.to_string(), matmul_tn(pooled, &dl)?),
        (CLS_BIAS.to_string(), dl.clone()),
    ];
    let dpooled = matmul_nt(&dl, params.get(CLS_WEIGHT)?)?.scale(1.0 / rows as f64);
    let mut d_o = Tensor2::zeros(rows, pooled.cols());
    for r in 0..rows {
        d_o.row_mut(r).copy_from_slice(dpooled.row(0));
    }
    Ok((grads, d_o))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{cross_entropy, grad_check};
    use crate::rng::rng_from_seed;

    fn setup(d: usize, heads: usize, s: usize, seed: u64) -> ParamStore {
        let mut p = ParamStore::new();
        register_params(&mut p, d, heads, s, 0.5, &mut rng_from_seed(seed)).unwrap();
        p
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Tensor2 {
        normal_init(rows, cols, 1.0, &mut rng_from_seed(seed)).frozen()
    }

    #[test]
    fn single_token_heads_are_its_value_projection() {
        let p = setup(4, 2, 3, 1);
        let b = random(1, 4, 2);
        let t = random(3, 4, 3);
        let (_, cache) = aggregate(&b, &t, &p, 2).unwrap();
        for i in 0..2 {
            assert!(cache.attention(i).data().iter().all(|&a| a == 1.0));
            let v = matmul(&b, p.get(&head_names(i)[2]).unwrap()).unwrap();
            for r in 0..3 {
                let h = cache.concat.column_block(i * 2, 2);
                assert_eq!(h.row(r), v.row(0));
            }
        }
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let p = setup(8, 2, 3, 4);
        let (_, cache) = aggregate(&random(7, 8, 5), &random(4, 8, 6), &p, 2).unwrap();
        for i in 0..2 {
            for r in cache.attention(i).iter_rows() {
                assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn bias_only_classifier() {
        let mut p = setup(4, 1, 2, 7);
        p.get_mut(CLS_WEIGHT).unwrap().data_mut().fill(0.0);
        p.get_mut(CLS_BIAS).unwrap().data_mut().copy_from_slice(&[0.3, -0.1]);
        let (logits, _) = classify(&random(3, 4, 8), &p).unwrap();
        assert_eq!(logits, vec![0.3, -0.1]);
    }

    #[test]
    fn token_permutation_leaves_output_unchanged() {
        let p = setup(8, 4, 3, 9);
        let b = random(6, 8, 10);
        let t = random(3, 8, 11);
        let (o1, _) = aggregate(&b, &t, &p, 4).unwrap();
        let (o2, _) = aggregate(&b.select_rows(&[3, 0, 5, 1, 4, 2]), &t, &p, 4).unwrap();
        for (a, b) in o1.data().iter().zip(o2.data()) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut p = setup(8, 2, 3, 12);
        let b = random(5, 8, 13);
        let t = random(3, 8, 14);
        let report = grad_check(&mut p, 1e-6, |p| {
            let (o, cache) = aggregate(&b, &t, p, 2)?;
            let (logits, pooled) = classify(&o, p)?;
            let (loss, dl) = cross_entropy(&logits, 1)?;
            let (g1, d_o) = classify_backward(&pooled, o.rows(), p, &dl)?;
            let (g2, _) = aggregate_backward(&cache, p, &d_o)?;
            for (name, g) in g1.iter().chain(&g2) {
                p.accumulate(name, g)?;
            }
            Ok(loss)
        })
        .unwrap();
        assert!(report.passed, "{:?}", report.failures().collect::<Vec<_>>());
        assert_eq!(report.tensors.len(), 2 * 3 + 5);
    }

    #[test]
    fn prompt_gradient_matches_finite_differences() {
        let p = setup(4, 2, 2, 15);
        let b = random(3, 4, 16);
        let t = random(2, 4, 17);
        let loss = |t: &Tensor2| {
            let (o, _) = aggregate(&b, t, &p, 2).unwrap();
            let (logits, _) = classify(&o, &p).unwrap();
            cross_entropy(&logits, 0).unwrap().0
        };
        let (o, cache) = aggregate(&b, &t, &p, 2).unwrap();
        let (logits, pooled) = classify(&o, &p).unwrap();
        let (_, dl) = cross_entropy(&logits, 0).unwrap();
        let (_, d_o) = classify_backward(&pooled, o.rows(), &p, &dl).unwrap();
        let (_, dt) = aggregate_backward(&cache, &p, &d_o).unwrap();
        let h = 1e-5;
        for idx in 0..t.len() {
            let mut plus = t.clone();
            plus.data_mut()[idx] += h;
            let mut minus = t.clone();
            minus.data_mut()[idx] -= h;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            assert!((numeric - dt.data()[idx]).abs() < 1e-7, "coord {idx}");
        }
    }
}
