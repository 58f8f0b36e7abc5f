//! Forward kernels and their hand-written backward rules.
//!
//! Every backward function takes the upstream gradient of the forward output
//! and returns gradients for the forward inputs. Callers accumulate them.

use super::Tensor2;
use crate::error::{FocusError, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

fn mismatch(op: &'static str, a: &Tensor2, b: &Tensor2) -> FocusError {
    FocusError::ShapeMismatch {
        op,
        lhs: a.shape(),
        rhs: b.shape(),
    }
}

/// `A · B`.
pub fn matmul(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.cols() != b.rows() {
        return Err(mismatch("matmul", a, b));
    }
    let (n, k, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor2::zeros(n, m);
    let bd = b.data();
    for i in 0..n {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (p, &av) in arow.iter().enumerate().take(k) {
            if av == 0.0 {
                continue;
            }
            let brow = &bd[p * m..(p + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out.ensure_finite("matmul")
}

/// `A · Bᵀ`.
pub fn matmul_nt(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.cols() != b.cols() {
        return Err(mismatch("matmul_nt", a, b));
    }
    let mut out = Tensor2::zeros(a.rows(), b.rows());
    for i in 0..a.rows() {
        let arow = a.row(i);
        for j in 0..b.rows() {
            out.set(i, j, dot(arow, b.row(j)));
        }
    }
    out.ensure_finite("matmul_nt")
}

/// `Aᵀ · B`.
pub fn matmul_tn(a: &Tensor2, b: &Tensor2) -> Result<Tensor2> {
    if a.rows() != b.rows() {
        return Err(mismatch("matmul_tn", a, b));
    }
    let (k, n, m) = (a.rows(), a.cols(), b.cols());
    let mut out = Tensor2::zeros(n, m);
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            let orow = &mut out.data_mut()[i * m..(i + 1) * m];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    debug_assert_eq!(out.shape(), (n, m));
    out.ensure_finite("matmul_tn")
}

/// Gradients of `C = A · B` given `dC`: returns `(dA, dB)`.
pub fn matmul_backward(a: &Tensor2, b: &Tensor2, dout: &Tensor2) -> Result<(Tensor2, Tensor2)> {
    if dout.shape() != (a.rows(), b.cols()) {
        return Err(mismatch("matmul_backward", a, dout));
    }
    Ok((matmul_nt(dout, b)?, matmul_tn(a, dout)?))
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Numerically stable softmax applied independently to each row.
pub fn row_softmax(a: &Tensor2) -> Result<Tensor2> {
    let mut out = a.clone().frozen();
    for r in 0..out.rows() {
        softmax_in_place(out.row_mut(r));
    }
    out.ensure_finite("row_softmax")
}

pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Backward of [`row_softmax`] given its output `y` and upstream `dy`.
pub fn row_softmax_backward(y: &Tensor2, dy: &Tensor2) -> Result<Tensor2> {
    if y.shape() != dy.shape() {
        return Err(mismatch("row_softmax_backward", y, dy));
    }
    let mut dx = Tensor2::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let yr = y.row(r);
        let dyr = dy.row(r);
        let inner = dot(yr, dyr);
        for ((d, &yv), &g) in dx.row_mut(r).iter_mut().zip(yr).zip(dyr) {
            *d = yv * (g - inner);
        }
    }
    Ok(dx)
}

/// Values cached by [`layer_norm`] for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    pub normalized: Tensor2,
    pub inv_std: Vec<f64>,
}

/// Layer normalization over each row with learnable `scale` and `shift`
/// (both `1 × cols`). Variance is the biased (population) estimate.
pub fn layer_norm(
    x: &Tensor2,
    scale: &Tensor2,
    shift: &Tensor2,
) -> Result<(Tensor2, LayerNormCache)> {
    let d = x.cols();
    if scale.shape() != (1, d) {
        return Err(mismatch("layer_norm(scale)", x, scale));
    }
    if shift.shape() != (1, d) {
        return Err(mismatch("layer_norm(shift)", x, shift));
    }
    let mut normalized = Tensor2::zeros(x.rows(), d);
    let mut out = Tensor2::zeros(x.rows(), d);
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let istd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(istd);
        let nrow = normalized.row_mut(r);
        for (n, &v) in nrow.iter_mut().zip(row) {
            *n = (v - mean) * istd;
        }
        let nrow = normalized.row(r).to_vec();
        for (c, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = nrow[c] * scale.data()[c] + shift.data()[c];
        }
    }
    Ok((
        out.ensure_finite("layer_norm")?,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

/// Backward of [`layer_norm`]: returns `(dx, dscale, dshift)`.
pub fn layer_norm_backward(
    cache: &LayerNormCache,
    scale: &Tensor2,
    dy: &Tensor2,
) -> Result<(Tensor2, Tensor2, Tensor2)> {
    let (rows, d) = cache.normalized.shape();
    if dy.shape() != (rows, d) {
        return Err(mismatch("layer_norm_backward", &cache.normalized, dy));
    }
    let mut dx = Tensor2::zeros(rows, d);
    let mut dscale = Tensor2::zeros(1, d);
    let mut dshift = Tensor2::zeros(1, d);
    let n = d as f64;
    for r in 0..rows {
        let xhat = cache.normalized.row(r);
        let g = dy.row(r);
        let mut dxhat = vec![0.0; d];
        for c in 0..d {
            dscale.data_mut()[c] += g[c] * xhat[c];
            dshift.data_mut()[c] += g[c];
            dxhat[c] = g[c] * scale.data()[c];
        }
        let sum_dxhat: f64 = dxhat.iter().sum();
        let sum_dxhat_xhat = dot(&dxhat, xhat);
        let istd = cache.inv_std[r];
        for (c, o) in dx.row_mut(r).iter_mut().enumerate() {
            *o = istd / n * (n * dxhat[c] - sum_dxhat - xhat[c] * sum_dxhat_xhat);
        }
    }
    Ok((dx, dscale, dshift))
}
