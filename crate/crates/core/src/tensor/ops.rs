//! Differentiable operations: forward passes paired with explicit backward
//! passes. The architecture is fixed, so there is no tape; callers keep the
//! small per-op caches and chain backwards by hand.
//!
//! Matrix products are written saxpy-style (accumulate a scaled row into the
//! output row) so the inner loop vectorizes, and they parallelize over
//! disjoint output rows, which keeps results independent of thread count.

use super::parallel::{for_each_block, for_each_row};
use super::{transpose2, Scalar, Tensor};
use crate::{Error, Result};

/// `out[m,:] += sum_k a[m,k] * b[k,:]` with `a` as `[M,K]`, `b` as `[K,N]`.
/// `out` must already hold the additive base (zeros or a broadcast bias).
fn matmul_accumulate<T: Scalar>(a: &[T], k_dim: usize, b: &[T], n: usize, out: &mut [T]) {
    for_each_row(out, n, |m, out_row| {
        let a_row = &a[m * k_dim..(m + 1) * k_dim];
        for (kk, &s) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + s * bv;
            }
        }
    });
}

/// `a [M,K] x b [K,N] -> [M,N]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k_a, k_b) = (a.last_dim(), b.shape()[0]);
    if a.shape().len() < 2 || b.shape().len() != 2 || k_a != k_b {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let m = a.rows();
    let n = b.last_dim();
    let mut out = Tensor::zeros(vec![m, n]);
    matmul_accumulate(a.data(), k_a, b.data(), n, out.data_mut());
    Ok(out)
}

/// `y[..,o] = sum_i x[..,i] w[i,o] + b[o]` over any leading dimensions.
pub fn linear_forward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
) -> Result<Tensor<T>> {
    let in_dim = x.last_dim();
    if w.shape().len() != 2 || w.shape()[0] != in_dim {
        return Err(Error::ShapeMismatch {
            op: "linear_forward",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    let out_dim = w.shape()[1];
    if b.shape() != [out_dim] {
        return Err(Error::ShapeMismatch {
            op: "linear_forward",
            lhs: w.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let mut out_shape = x.shape().to_vec();
    *out_shape.last_mut().unwrap() = out_dim;
    let mut out = Tensor::zeros(out_shape);
    let bias = b.data();
    for_each_row(out.data_mut(), out_dim, |_, row| row.copy_from_slice(bias));
    matmul_accumulate(x.data(), in_dim, w.data(), out_dim, out.data_mut());
    Ok(out)
}

/// Exact gradients for [`linear_forward`]: returns `(dx, dw, db)`.
pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let in_dim = x.last_dim();
    let out_dim = w.shape()[1];
    let m = x.rows();
    if dy.rows() != m || dy.last_dim() != out_dim {
        return Err(Error::ShapeMismatch {
            op: "linear_backward",
            lhs: dy.shape().to_vec(),
            rhs: vec![m, out_dim],
        });
    }

    // dx = dy . w^T
    let w_t = transpose2(w)?;
    let mut dx = Tensor::zeros(x.shape().to_vec());
    matmul_accumulate(dy.data(), out_dim, w_t.data(), in_dim, dx.data_mut());

    // dw = x^T . dy
    let x_flat = x.clone().reshape(vec![m, in_dim])?;
    let x_t = transpose2(&x_flat)?;
    let mut dw = Tensor::zeros(vec![in_dim, out_dim]);
    matmul_accumulate(x_t.data(), m, dy.data(), out_dim, dw.data_mut());

    // db = column sums of dy, in fixed row order
    let mut db = Tensor::zeros(vec![out_dim]);
    for r in 0..m {
        let dy_row = &dy.data()[r * out_dim..(r + 1) * out_dim];
        for (d, &g) in db.data_mut().iter_mut().zip(dy_row) {
            *d += g;
        }
    }
    Ok((dx, dw, db))
}

/// Per-row statistics kept for the layer-norm backward pass.
pub struct LayerNormCache<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
}

/// Normalize each last-axis slice to zero mean and unit variance (divisor H),
/// then scale and shift: `y = gain * (x - mean)/sqrt(var + eps) + bias`.
pub fn layer_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, LayerNormCache<T>)> {
    let h = x.last_dim();
    if h < 2 {
        return Err(Error::Config(format!(
            "layer_norm needs a last axis of at least 2, got {h}"
        )));
    }
    if gain.shape() != [h] || bias.shape() != [h] {
        return Err(Error::ShapeMismatch {
            op: "layer_norm",
            lhs: x.shape().to_vec(),
            rhs: gain.shape().to_vec(),
        });
    }
    if eps <= T::zero() {
        return Err(Error::Config("layer_norm eps must be positive".into()));
    }
    let rows = x.rows();
    let mut y = Tensor::zeros(x.shape().to_vec());
    let hf = T::cast(h as f64);
    let xd = x.data();
    let g = gain.data();
    let b = bias.data();
    let mut means = vec![T::zero(); rows];
    let mut inv_stds = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &xd[r * h..(r + 1) * h];
        let mut sum = T::zero();
        for &v in row {
            sum += v;
        }
        let mean = sum / hf;
        let mut var = T::zero();
        for &v in row {
            let d = v - mean;
            var += d * d;
        }
        var = var / hf;
        means[r] = mean;
        inv_stds[r] = T::one() / (var + eps).sqrt();
    }
    for_each_row(y.data_mut(), h, |r, out_row| {
        let row = &xd[r * h..(r + 1) * h];
        let (mean, inv_std) = (means[r], inv_stds[r]);
        for i in 0..h {
            out_row[i] = g[i] * (row[i] - mean) * inv_std + b[i];
        }
    });
    let cache = LayerNormCache {
        mean: means,
        inv_std: inv_stds,
    };
    Ok((y, cache))
}

/// Gradients for [`layer_norm_forward`]: returns `(dx, dgain, dbias)`.
pub fn layer_norm_backward<T: Scalar>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    cache: &LayerNormCache<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let h = x.last_dim();
    let rows = x.rows();
    if dy.shape() != x.shape() {
        return Err(Error::ShapeMismatch {
            op: "layer_norm_backward",
            lhs: dy.shape().to_vec(),
            rhs: x.shape().to_vec(),
        });
    }
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut dgain = Tensor::zeros(vec![h]);
    let mut dbias = Tensor::zeros(vec![h]);
    let hf = T::cast(h as f64);
    let (xd, g, dyd) = (x.data(), gain.data(), dy.data());

    for_each_row(dx.data_mut(), h, |r, dx_row| {
        let x_row = &xd[r * h..(r + 1) * h];
        let dy_row = &dyd[r * h..(r + 1) * h];
        let (mean, inv_std) = (cache.mean[r], cache.inv_std[r]);
        // dxhat = dy * gain; dx = inv_std * (dxhat - mean(dxhat) - xhat * mean(dxhat*xhat))
        let mut sum_dxhat = T::zero();
        let mut sum_dxhat_xhat = T::zero();
        for i in 0..h {
            let xhat = (x_row[i] - mean) * inv_std;
            let dxhat = dy_row[i] * g[i];
            sum_dxhat += dxhat;
            sum_dxhat_xhat += dxhat * xhat;
        }
        let m1 = sum_dxhat / hf;
        let m2 = sum_dxhat_xhat / hf;
        for i in 0..h {
            let xhat = (x_row[i] - mean) * inv_std;
            let dxhat = dy_row[i] * g[i];
            dx_row[i] = inv_std * (dxhat - m1 - xhat * m2);
        }
    });

    // Parameter grads accumulate over rows in fixed order.
    for r in 0..rows {
        let x_row = &xd[r * h..(r + 1) * h];
        let dy_row = &dyd[r * h..(r + 1) * h];
        let (mean, inv_std) = (cache.mean[r], cache.inv_std[r]);
        for i in 0..h {
            let xhat = (x_row[i] - mean) * inv_std;
            dgain.data_mut()[i] += dy_row[i] * xhat;
            dbias.data_mut()[i] += dy_row[i];
        }
    }
    Ok((dx, dgain, dbias))
}

/// Max-shifted softmax on one row; `mask[i] == true` excludes position `i`.
/// Returns `false` when every position is masked.
fn softmax_row<T: Scalar>(row: &mut [T], mask: Option<&[bool]>) -> bool {
    let mut max = T::neg_infinity();
    match mask {
        None => {
            for &v in row.iter() {
                if v > max {
                    max = v;
                }
            }
        }
        Some(m) => {
            for (&v, &excluded) in row.iter().zip(m) {
                if !excluded && v > max {
                    max = v;
                }
            }
        }
    }
    if max == T::neg_infinity() {
        return false;
    }
    let mut sum = T::zero();
    match mask {
        None => {
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
        }
        Some(m) => {
            for (v, &excluded) in row.iter_mut().zip(m) {
                if excluded {
                    *v = T::zero();
                } else {
                    *v = (*v - max).exp();
                    sum += *v;
                }
            }
        }
    }
    let inv = T::one() / sum;
    for v in row.iter_mut() {
        *v = *v * inv;
    }
    true
}

/// Softmax over the last axis. `mask` (same shape, `true` = excluded) forces
/// masked positions to exactly zero; each slice sums to one over the rest.
pub fn softmax<T: Scalar>(x: &Tensor<T>, mask: Option<&[bool]>) -> Result<Tensor<T>> {
    let k = x.last_dim();
    if k < 1 {
        return Err(Error::Config("softmax needs a non-empty last axis".into()));
    }
    if let Some(m) = mask {
        if m.len() != x.len() {
            return Err(Error::ShapeMismatch {
                op: "softmax",
                lhs: x.shape().to_vec(),
                rhs: vec![m.len()],
            });
        }
    }
    let mut y = x.clone();
    use std::sync::atomic::{AtomicUsize, Ordering};
    let bad = AtomicUsize::new(usize::MAX);
    for_each_row(y.data_mut(), k, |r, row| {
        let row_mask = mask.map(|m| &m[r * k..(r + 1) * k]);
        if !softmax_row(row, row_mask) {
            bad.fetch_min(r, Ordering::Relaxed);
        }
    });
    let bad = bad.load(Ordering::Relaxed);
    if bad != usize::MAX {
        return Err(Error::AllMasked { slice: bad });
    }
    Ok(y)
}

/// `dx = y * (dy - sum(dy * y))` per slice; zero at masked positions.
pub fn softmax_backward<T: Scalar>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    if y.shape() != dy.shape() {
        return Err(Error::ShapeMismatch {
            op: "softmax_backward",
            lhs: y.shape().to_vec(),
            rhs: dy.shape().to_vec(),
        });
    }
    let k = y.last_dim();
    let mut dx = Tensor::zeros(y.shape().to_vec());
    let (yd, dyd) = (y.data(), dy.data());
    for_each_row(dx.data_mut(), k, |r, dx_row| {
        let y_row = &yd[r * k..(r + 1) * k];
        let dy_row = &dyd[r * k..(r + 1) * k];
        let mut dot = T::zero();
        for i in 0..k {
            dot += y_row[i] * dy_row[i];
        }
        for i in 0..k {
            dx_row[i] = y_row[i] * (dy_row[i] - dot);
        }
    });
    Ok(dx)
}

/// Tanh-form GELU.
pub fn gelu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    let c = T::cast(0.7978845608028654); // sqrt(2/pi)
    let a = T::cast(0.044715);
    let half = T::cast(0.5);
    for_each_row(y.data_mut(), y_row_width(x), |_, row| {
        for v in row.iter_mut() {
            let x = *v;
            let u = c * (x + a * x * x * x);
            *v = half * x * (T::one() + u.tanh());
        }
    });
    y
}

pub fn gelu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    let c = T::cast(0.7978845608028654);
    let a = T::cast(0.044715);
    let half = T::cast(0.5);
    let three = T::cast(3.0);
    let xd = x.data();
    let w = y_row_width(x);
    for_each_row(dx.data_mut(), w, |r, row| {
        for (i, g) in row.iter_mut().enumerate() {
            let x = xd[r * w + i];
            let u = c * (x + a * x * x * x);
            let t = u.tanh();
            let sech2 = T::one() - t * t;
            let du = c * (T::one() + three * a * x * x);
            let d = half * (T::one() + t) + half * x * sech2 * du;
            *g = *g * d;
        }
    });
    dx
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    y
}

pub fn relu_backward<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    let mut dx = dy.clone();
    for (g, &xv) in dx.data_mut().iter_mut().zip(x.data()) {
        if xv <= T::zero() {
            *g = T::zero();
        }
    }
    dx
}

fn y_row_width<T: Scalar>(x: &Tensor<T>) -> usize {
    // Chunk elementwise work into rows of the last axis, or the whole buffer
    // for rank-1 tensors.
    x.last_dim().max(1)
}

/// Cache for the attention backward pass: head-major projections and weights.
#[derive(Debug)]
pub struct AttentionCache<T> {
    pub q_heads: Tensor<T>,    // [B, heads, T, dh]
    pub k_heads: Tensor<T>,    // [B, heads, T, dh]
    pub v_heads: Tensor<T>,    // [B, heads, T, dh]
    pub attn: Tensor<T>,       // [B, heads, T, T]
    pub ctx_merged: Tensor<T>, // [B, T, H]
}

pub struct AttentionParams<'a, T> {
    pub wq: &'a Tensor<T>,
    pub bq: &'a Tensor<T>,
    pub wk: &'a Tensor<T>,
    pub wv: &'a Tensor<T>,
    pub bv: &'a Tensor<T>,
    pub wo: &'a Tensor<T>,
    pub bo: &'a Tensor<T>,
}

/// Gradients produced by [`attention_backward`], in the same layout.
pub struct AttentionGrads<T> {
    pub dx: Tensor<T>,
    pub dwq: Tensor<T>,
    pub dbq: Tensor<T>,
    pub dwk: Tensor<T>,
    pub dwv: Tensor<T>,
    pub dbv: Tensor<T>,
    pub dwo: Tensor<T>,
    pub dbo: Tensor<T>,
}

/// `[B,T,H] -> [B,heads,T,dh]` head split (copy).
fn split_heads<T: Scalar>(x: &Tensor<T>, b: usize, t: usize, heads: usize, dh: usize) -> Tensor<T> {
    let h = heads * dh;
    let mut out = Tensor::zeros(vec![b, heads, t, dh]);
    let xd = x.data();
    for_each_block(out.data_mut(), t * dh, |bh, block| {
        let (bi, hi) = (bh / heads, bh % heads);
        for ti in 0..t {
            let src = &xd[(bi * t + ti) * h + hi * dh..(bi * t + ti) * h + (hi + 1) * dh];
            block[ti * dh..(ti + 1) * dh].copy_from_slice(src);
        }
    });
    out
}

/// `[B,heads,T,dh] -> [B,T,H]` head merge (copy).
fn merge_heads<T: Scalar>(x: &Tensor<T>, b: usize, t: usize, heads: usize, dh: usize) -> Tensor<T> {
    let h = heads * dh;
    let mut out = Tensor::zeros(vec![b, t, h]);
    let xd = x.data();
    for_each_row(out.data_mut(), h, |bt, row| {
        let (bi, ti) = (bt / t, bt % t);
        for hi in 0..heads {
            let src = &xd[((bi * heads + hi) * t + ti) * dh..((bi * heads + hi) * t + ti + 1) * dh];
            row[hi * dh..(hi + 1) * dh].copy_from_slice(src);
        }
    });
    out
}

/// Bidirectional scaled dot-product self-attention with per-head projections.
/// `pad_mask[b*T + t] == true` marks position `t` of batch `b` as padding:
/// padded keys receive exactly zero attention weight everywhere.
pub fn attention_forward<T: Scalar>(
    x: &Tensor<T>,
    params: &AttentionParams<'_, T>,
    heads: usize,
    pad_mask: &[bool],
) -> Result<(Tensor<T>, AttentionCache<T>)> {
    let dims = x.shape();
    if dims.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "attention_forward",
            lhs: dims.to_vec(),
            rhs: vec![0, 0, 0],
        });
    }
    let (b, t, h) = (dims[0], dims[1], dims[2]);
    if h % heads != 0 {
        return Err(Error::Config(format!(
            "hidden size {h} not divisible by {heads} heads"
        )));
    }
    if pad_mask.len() != b * t {
        return Err(Error::ShapeMismatch {
            op: "attention_forward",
            lhs: vec![pad_mask.len()],
            rhs: vec![b, t],
        });
    }
    let dh = h / heads;
    let scale = T::cast(1.0 / (dh as f64).sqrt());

    let q = linear_forward(x, params.wq, params.bq)?;
    // No key bias: softmax shift invariance makes it a dead parameter.
    let k = matmul(x, params.wk)?.reshape(x.shape().to_vec())?;
    let v = linear_forward(x, params.wv, params.bv)?;
    let q_heads = split_heads(&q, b, t, heads, dh);
    let k_heads = split_heads(&k, b, t, heads, dh);
    let v_heads = split_heads(&v, b, t, heads, dh);

    let mut attn = Tensor::zeros(vec![b, heads, t, t]);
    {
        let (qd, kd) = (q_heads.data(), k_heads.data());
        for_each_block(attn.data_mut(), t * t, |bh, scores| {
            let bi = bh / heads;
            let base = bh * t * dh;
            // k^T block for saxpy over the head dim
            let mut k_t = vec![T::zero(); dh * t];
            for u in 0..t {
                for d in 0..dh {
                    k_t[d * t + u] = kd[base + u * dh + d];
                }
            }
            let key_mask = &pad_mask[bi * t..(bi + 1) * t];
            for ti in 0..t {
                let q_row = &qd[base + ti * dh..base + (ti + 1) * dh];
                let s_row = &mut scores[ti * t..(ti + 1) * t];
                for (d, &qraw) in q_row.iter().enumerate() {
                    let qv = qraw * scale;
                    let k_row = &k_t[d * t..(d + 1) * t];
                    for (s, &kv) in s_row.iter_mut().zip(k_row) {
                        *s = *s + qv * kv;
                    }
                }
                softmax_row(s_row, Some(key_mask));
            }
        });
    }

    let mut ctx = Tensor::zeros(vec![b, heads, t, dh]);
    {
        let (ad, vd) = (attn.data(), v_heads.data());
        for_each_block(ctx.data_mut(), t * dh, |bh, ctx_block| {
            let a_block = &ad[bh * t * t..(bh + 1) * t * t];
            let v_block = &vd[bh * t * dh..(bh + 1) * t * dh];
            matmul_seq(a_block, t, t, v_block, dh, ctx_block);
        });
    }

    let ctx_merged = merge_heads(&ctx, b, t, heads, dh);
    let out = linear_forward(&ctx_merged, params.wo, params.bo)?;
    Ok((
        out,
        AttentionCache {
            q_heads,
            k_heads,
            v_heads,
            attn,
            ctx_merged,
        },
    ))
}

/// Sequential `[M,K] x [K,N]` accumulate used inside already-parallel blocks.
fn matmul_seq<T: Scalar>(a: &[T], m: usize, k_dim: usize, b: &[T], n: usize, out: &mut [T]) {
    for mi in 0..m {
        let out_row = &mut out[mi * n..(mi + 1) * n];
        for kk in 0..k_dim {
            let s = a[mi * k_dim + kk];
            let b_row = &b[kk * n..(kk + 1) * n];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + s * bv;
            }
        }
    }
}

pub fn attention_backward<T: Scalar>(
    x: &Tensor<T>,
    params: &AttentionParams<'_, T>,
    heads: usize,
    cache: &AttentionCache<T>,
    dy: &Tensor<T>,
) -> Result<AttentionGrads<T>> {
    let dims = x.shape();
    let (b, t, h) = (dims[0], dims[1], dims[2]);
    let dh = h / heads;
    let scale = T::cast(1.0 / (dh as f64).sqrt());

    // Output projection.
    let (dctx_merged, dwo, dbo) = linear_backward(&cache.ctx_merged, params.wo, dy)?;
    let dctx = split_heads(&dctx_merged, b, t, heads, dh);

    // dv and dscores per (batch, head) block.
    let mut dv_heads = Tensor::zeros(vec![b, heads, t, dh]);
    {
        let (ad, dcd) = (cache.attn.data(), dctx.data());
        for_each_block(dv_heads.data_mut(), t * dh, |bh, dv_block| {
            // dv[u,:] = sum_t attn[t,u] * dctx[t,:]
            let a_block = &ad[bh * t * t..(bh + 1) * t * t];
            let dc_block = &dcd[bh * t * dh..(bh + 1) * t * dh];
            for ti in 0..t {
                let dc_row = &dc_block[ti * dh..(ti + 1) * dh];
                let a_row = &a_block[ti * t..(ti + 1) * t];
                for (u, &w) in a_row.iter().enumerate() {
                    let dv_row = &mut dv_block[u * dh..(u + 1) * dh];
                    for (o, &dc) in dv_row.iter_mut().zip(dc_row) {
                        *o = *o + w * dc;
                    }
                }
            }
        });
    }

    let mut dscores = Tensor::zeros(vec![b, heads, t, t]);
    {
        let (ad, dcd, vd) = (cache.attn.data(), dctx.data(), cache.v_heads.data());
        for_each_block(dscores.data_mut(), t * t, |bh, ds_block| {
            let a_block = &ad[bh * t * t..(bh + 1) * t * t];
            let dc_block = &dcd[bh * t * dh..(bh + 1) * t * dh];
            let v_block = &vd[bh * t * dh..(bh + 1) * t * dh];
            for ti in 0..t {
                let dc_row = &dc_block[ti * dh..(ti + 1) * dh];
                let da_row = &mut ds_block[ti * t..(ti + 1) * t];
                // dattn[t,u] = dot(dctx[t,:], v[u,:])
                for (da, v_row) in da_row.iter_mut().zip(v_block.chunks_exact(dh)) {
                    let mut acc = T::zero();
                    for (&dc, &vv) in dc_row.iter().zip(v_row) {
                        acc += dc * vv;
                    }
                    *da = acc;
                }
                // softmax backward in place on this row
                let a_row = &a_block[ti * t..(ti + 1) * t];
                let mut dot = T::zero();
                for (&a, &da) in a_row.iter().zip(da_row.iter()) {
                    dot += a * da;
                }
                for (da, &a) in da_row.iter_mut().zip(a_row) {
                    *da = a * (*da - dot);
                }
            }
        });
    }

    // dq = dscores . k * scale ; dk = dscores^T . q * scale
    let mut dq_heads = Tensor::zeros(vec![b, heads, t, dh]);
    let mut dk_heads = Tensor::zeros(vec![b, heads, t, dh]);
    {
        let (dsd, kd, qd) = (dscores.data(), cache.k_heads.data(), cache.q_heads.data());
        for_each_block(dq_heads.data_mut(), t * dh, |bh, dq_block| {
            let ds_block = &dsd[bh * t * t..(bh + 1) * t * t];
            let k_block = &kd[bh * t * dh..(bh + 1) * t * dh];
            matmul_seq(ds_block, t, t, k_block, dh, dq_block);
            for v in dq_block.iter_mut() {
                *v = *v * scale;
            }
        });
        for_each_block(dk_heads.data_mut(), t * dh, |bh, dk_block| {
            let ds_block = &dsd[bh * t * t..(bh + 1) * t * t];
            let q_block = &qd[bh * t * dh..(bh + 1) * t * dh];
            // dk[u,:] = sum_t dscores[t,u] * q[t,:]
            for ti in 0..t {
                let q_row = &q_block[ti * dh..(ti + 1) * dh];
                let ds_row = &ds_block[ti * t..(ti + 1) * t];
                for (&sv, dk_row) in ds_row.iter().zip(dk_block.chunks_exact_mut(dh)) {
                    let s = sv * scale;
                    for (o, &q) in dk_row.iter_mut().zip(q_row) {
                        *o = *o + s * q;
                    }
                }
            }
        });
    }

    let dq = merge_heads(&dq_heads, b, t, heads, dh);
    let dk = merge_heads(&dk_heads, b, t, heads, dh);
    let dv = merge_heads(&dv_heads, b, t, heads, dh);

    let (dxq, dwq, dbq) = linear_backward(x, params.wq, &dq)?;
    let (dxk, dwk, _) = linear_backward(x, params.wk, &dk)?;
    let (dxv, dwv, dbv) = linear_backward(x, params.wv, &dv)?;
    let mut dx = dxq;
    dx.add_assign(&dxk)?;
    dx.add_assign(&dxv)?;

    Ok(AttentionGrads {
        dx,
        dwq,
        dbq,
        dwk,
        dwv,
        dbv,
        dwo,
        dbo,
    })
}

/// Same-length 1-D cross-correlation over the time axis with zero padding.
/// `x [B,T,Cin]`, `kernels [W,Cin,Cout]` (W odd), `bias [Cout]`.
pub fn conv1d_forward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (b, t, c_in) = conv_dims(x)?;
    let kd = kernels.shape();
    if kd.len() != 3 || kd[1] != c_in {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: x.shape().to_vec(),
            rhs: kd.to_vec(),
        });
    }
    let (w, c_out) = (kd[0], kd[2]);
    if w % 2 == 0 {
        return Err(Error::Config(format!("conv window must be odd, got {w}")));
    }
    if bias.shape() != [c_out] {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: kd.to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let pad = (w - 1) / 2;
    let mut y = Tensor::zeros(vec![b, t, c_out]);
    let (xd, kn, bd) = (x.data(), kernels.data(), bias.data());
    for_each_row(y.data_mut(), c_out, |bt, out_row| {
        let (bi, ti) = (bt / t, bt % t);
        out_row.copy_from_slice(bd);
        for wi in 0..w {
            let tt = ti as isize + wi as isize - pad as isize;
            if tt < 0 || tt >= t as isize {
                continue;
            }
            let x_row = &xd[(bi * t + tt as usize) * c_in..(bi * t + tt as usize + 1) * c_in];
            let k_plane = &kn[wi * c_in * c_out..(wi + 1) * c_in * c_out];
            for (ci, &xv) in x_row.iter().enumerate() {
                let k_row = &k_plane[ci * c_out..(ci + 1) * c_out];
                for (o, &kv) in out_row.iter_mut().zip(k_row) {
                    *o = *o + xv * kv;
                }
            }
        }
    });
    Ok(y)
}

/// Gradients for [`conv1d_forward`]: returns `(dx, dkernels, dbias)`.
pub fn conv1d_backward<T: Scalar>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, t, c_in) = conv_dims(x)?;
    let kd = kernels.shape();
    let (w, c_out) = (kd[0], kd[2]);
    if dy.shape() != [b, t, c_out] {
        return Err(Error::ShapeMismatch {
            op: "conv1d_backward",
            lhs: dy.shape().to_vec(),
            rhs: vec![b, t, c_out],
        });
    }
    let pad = (w - 1) / 2;
    let (xd, kn, dyd) = (x.data(), kernels.data(), dy.data());

    // k transposed per tap: [W, Cout, Cin]
    let mut k_t = vec![T::zero(); w * c_out * c_in];
    for wi in 0..w {
        for ci in 0..c_in {
            for co in 0..c_out {
                k_t[(wi * c_out + co) * c_in + ci] = kn[(wi * c_in + ci) * c_out + co];
            }
        }
    }

    let mut dx = Tensor::zeros(vec![b, t, c_in]);
    for_each_row(dx.data_mut(), c_in, |bt, dx_row| {
        let (bi, si) = (bt / t, bt % t);
        for wi in 0..w {
            // y position that read x[si] through tap wi
            let ti = si as isize - (wi as isize - pad as isize);
            if ti < 0 || ti >= t as isize {
                continue;
            }
            let dy_row = &dyd[(bi * t + ti as usize) * c_out..(bi * t + ti as usize + 1) * c_out];
            let kt_plane = &k_t[wi * c_out * c_in..(wi + 1) * c_out * c_in];
            for (co, &g) in dy_row.iter().enumerate() {
                let kt_row = &kt_plane[co * c_in..(co + 1) * c_in];
                for (o, &kv) in dx_row.iter_mut().zip(kt_row) {
                    *o = *o + g * kv;
                }
            }
        }
    });

    // x transposed to [Cin, B*T] so per-(tap, channel) reads are contiguous.
    let mut x_t = vec![T::zero(); c_in * b * t];
    for bt in 0..b * t {
        for ci in 0..c_in {
            x_t[ci * b * t + bt] = xd[bt * c_in + ci];
        }
    }
    let mut dk = Tensor::zeros(vec![w, c_in, c_out]);
    for_each_row(dk.data_mut(), c_out, |wc, dk_row| {
        let (wi, ci) = (wc / c_in, wc % c_in);
        let x_col = &x_t[ci * b * t..(ci + 1) * b * t];
        for bi in 0..b {
            for ti in 0..t {
                let tt = ti as isize + wi as isize - pad as isize;
                if tt < 0 || tt >= t as isize {
                    continue;
                }
                let xv = x_col[bi * t + tt as usize];
                if xv == T::zero() {
                    continue;
                }
                let dy_row = &dyd[(bi * t + ti) * c_out..(bi * t + ti + 1) * c_out];
                for (o, &g) in dk_row.iter_mut().zip(dy_row) {
                    *o = *o + xv * g;
                }
            }
        }
    });

    let mut db = Tensor::zeros(vec![c_out]);
    for r in 0..b * t {
        let dy_row = &dyd[r * c_out..(r + 1) * c_out];
        for (o, &g) in db.data_mut().iter_mut().zip(dy_row) {
            *o += g;
        }
    }
    Ok((dx, dk, db))
}

fn conv_dims<T: Scalar>(x: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let d = x.shape();
    if d.len() != 3 {
        return Err(Error::ShapeMismatch {
            op: "conv1d",
            lhs: d.to_vec(),
            rhs: vec![0, 0, 0],
        });
    }
    Ok((d[0], d[1], d[2]))
}

/// Mean negative log-likelihood with optional class weights and an ignored
/// target id. Returns the loss and `dlogits` in one pass; the gradient is
/// exactly zero on ignored rows.
pub fn cross_entropy_loss<T: Scalar>(
    logits: &Tensor<T>,
    targets: &[i32],
    class_weights: Option<&[T]>,
    ignore_index: Option<i32>,
) -> Result<(T, Tensor<T>)> {
    let k = logits.last_dim();
    let n = logits.rows();
    if targets.len() != n {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: logits.shape().to_vec(),
            rhs: vec![targets.len()],
        });
    }
    if let Some(w) = class_weights {
        if w.len() != k {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: vec![k],
                rhs: vec![w.len()],
            });
        }
    }
    for (r, &t) in targets.iter().enumerate() {
        let ignored = ignore_index.map_or(false, |ig| t == ig);
        if !ignored && (t < 0 || t as usize >= k) {
            return Err(Error::Data(format!(
                "cross_entropy target {t} out of range 0..{k} at row {r}"
            )));
        }
    }

    // Pass 1: softmax every row into the gradient buffer.
    let mut dlogits = logits.clone();
    for_each_row(dlogits.data_mut(), k, |_, row| {
        softmax_row(row, None);
    });

    // Fixed-order reduction of the weighted mean, log-sum-exp form.
    let logit_data = logits.data();
    let mut loss_sum = T::zero();
    let mut weight_sum = T::zero();
    let mut counted = 0usize;
    for (r, &t) in targets.iter().enumerate() {
        if ignore_index.map_or(false, |ig| t == ig) {
            continue;
        }
        let l_row = &logit_data[r * k..(r + 1) * k];
        let mut max = T::neg_infinity();
        for &v in l_row {
            if v > max {
                max = v;
            }
        }
        let mut lse = T::zero();
        for &v in l_row {
            lse += (v - max).exp();
        }
        let nll = max + lse.ln() - l_row[t as usize];
        let w = class_weights.map_or(T::one(), |cw| cw[t as usize]);
        loss_sum += w * nll;
        weight_sum += w;
        counted += 1;
    }
    if counted == 0 {
        return Err(Error::EmptyBatch);
    }
    let loss = loss_sum / weight_sum;

    // Pass 2: scale rows into gradients.
    for_each_row(dlogits.data_mut(), k, |r, row| {
        let t = targets[r];
        if ignore_index.map_or(false, |ig| t == ig) {
            row.fill(T::zero());
            return;
        }
        let w = class_weights.map_or(T::one(), |cw| cw[t as usize]) / weight_sum;
        for v in row.iter_mut() {
            *v = *v * w;
        }
        row[t as usize] = row[t as usize] - w;
    });

    Ok((loss, dlogits))
}

/// Inverted dropout: kept positions are scaled by `1/(1-rate)`. The mask is
/// drawn sequentially from `rng` so results never depend on thread count.
pub fn dropout_mask<T: Scalar>(len: usize, rate: f64, rng: &mut impl rand::Rng) -> Vec<T> {
    debug_assert!((0.0..1.0).contains(&rate));
    let keep_scale = T::cast(1.0 / (1.0 - rate));
    let threshold = (rate * (u32::MAX as f64 + 1.0)) as u64;
    (0..len)
        .map(|_| {
            if (rng.next_u32() as u64) < threshold {
                T::zero()
            } else {
                keep_scale
            }
        })
        .collect()
}

pub fn apply_mask<T: Scalar>(x: &mut Tensor<T>, mask: &[T]) {
    for (v, &m) in x.data_mut().iter_mut().zip(mask) {
        *v *= m;
    }
}
