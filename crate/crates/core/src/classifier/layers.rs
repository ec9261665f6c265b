//! Forward pass, its cached variant and the hand-derived backward pass.

use std::ops::Range;

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rayon::prelude::*;

use super::{Arch, BranchParams, LayerNormParams, Model, Params, EMBED, LN_EPS, N_CLASSES};
use crate::error::{Error, Result};
use crate::features::FeatureStack;
use crate::signal_io::MurmurClass;

/// Samples per gradient work unit. Fixed so that the summation order, and
/// therefore every bit of the result, does not depend on the thread count.
const GRAD_CHUNK: usize = 4;

/// Layer-normalized tokens of one stack.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMatrix {
    /// `N x 32`.
    pub tokens: Array2<f64>,
    /// Token rows of each branch, ascending `j`.
    pub boundaries: Vec<Range<usize>>,
}

fn check_finite(a: &Array2<f64>, stage: &'static str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numerical { stage })
    }
}

/// Zero-padded non-overlapping `h x w` patches of `a`, one per row, in
/// row-major patch order.
fn extract_patches(a: &Array2<f64>, h: usize, w: usize) -> Array2<f64> {
    let (rows, cols) = a.dim();
    let (ph, pw) = (rows.div_ceil(h), cols.div_ceil(w));
    let mut out = Array2::zeros((ph * pw, h * w));
    for p in 0..ph {
        for q in 0..pw {
            let mut row = out.row_mut(p * pw + q);
            for da in 0..h {
                let r = p * h + da;
                if r >= rows {
                    break;
                }
                for db in 0..w {
                    let c = q * w + db;
                    if c < cols {
                        row[da * w + db] = a[[r, c]];
                    }
                }
            }
        }
    }
    out
}

fn affine(x: &Array2<f64>, w: &Array2<f64>, b: &Array1<f64>) -> Array2<f64> {
    x.dot(w) + b
}

/// Tokens of branch `j` before layer normalization: convolution over
/// padded patches, then the per-token projection.
pub fn patch_embed(a: &Array2<f64>, j: u32, branch: &BranchParams, arch: &Arch) -> Result<Array2<f64>> {
    if j == 0 || j > arch.levels {
        return Err(Error::InvalidResolution(format!("branch {j} outside 1..={}", arch.levels)));
    }
    let shape = arch.branch_shape(j);
    if a.dim() != shape {
        return Err(Error::Dim(format!("branch {j} matrix is {:?}, expected {shape:?}", a.dim())));
    }
    let (h, w) = arch.kernels[j as usize - 1];
    let patches = extract_patches(a, h, w);
    let conv = affine(&patches, &branch.conv_w, &branch.conv_b);
    Ok(affine(&conv, &branch.proj_w, &branch.proj_b))
}

struct LnCache {
    xhat: Array2<f64>,
    inv_std: Array1<f64>,
}

fn ln_forward(x: &Array2<f64>, p: &LayerNormParams) -> (Array2<f64>, LnCache) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv_std = Array1::zeros(x.nrows());
    for (mut row, is) in xhat.rows_mut().into_iter().zip(inv_std.iter_mut()) {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        *is = 1.0 / (var + LN_EPS).sqrt();
        let k = *is;
        row.mapv_inplace(|v| v * k);
    }
    let y = &xhat * &p.gain + &p.bias;
    (y, LnCache { xhat, inv_std })
}

fn ln_backward(dy: &Array2<f64>, cache: &LnCache, p: &LayerNormParams, grad: &mut LayerNormParams) -> Array2<f64> {
    grad.gain += &(dy * &cache.xhat).sum_axis(Axis(0));
    grad.bias += &dy.sum_axis(Axis(0));
    let n = dy.ncols() as f64;
    let dxhat = dy * &p.gain;
    let mut dx = Array2::zeros(dy.dim());
    for (i, mut out) in dx.rows_mut().into_iter().enumerate() {
        let g = dxhat.row(i);
        let xh = cache.xhat.row(i);
        let mean_g = g.sum() / n;
        let mean_gx = g.dot(&xh) / n;
        let k = cache.inv_std[i];
        for ((o, &gi), &xi) in out.iter_mut().zip(g).zip(xh) {
            *o = k * (gi - mean_g - xi * mean_gx);
        }
    }
    dx
}

/// Row-wise layer normalization with gain and bias.
pub fn layer_norm(x: &Array2<f64>, p: &LayerNormParams) -> Array2<f64> {
    ln_forward(x, p).0
}

pub fn tokenize_stack(stack: &FeatureStack, model: &Model) -> Result<TokenMatrix> {
    let (g, _) = embed(stack, &model.params, &model.arch)?;
    Ok(g)
}

struct EmbedCache {
    patches: Vec<Array2<f64>>,
    conv: Vec<Array2<f64>>,
    ln: LnCache,
}

fn embed(stack: &FeatureStack, params: &Params, arch: &Arch) -> Result<(TokenMatrix, EmbedCache)> {
    if stack.matrices.len() != arch.levels as usize {
        return Err(Error::Dim(format!(
            "stack {:?} has {} matrices, the model expects J={}",
            stack.segment_ref,
            stack.matrices.len(),
            arch.levels
        )));
    }
    let n = arch.n_tokens();
    let mut e = Array2::zeros((n, EMBED));
    let mut boundaries = Vec::with_capacity(arch.levels as usize);
    let mut patches = Vec::with_capacity(arch.levels as usize);
    let mut convs = Vec::with_capacity(arch.levels as usize);
    let mut start = 0;
    for (i, (a, branch)) in stack.matrices.iter().zip(&params.branches).enumerate() {
        let j = i as u32 + 1;
        let shape = arch.branch_shape(j);
        if a.dim() != shape {
            return Err(Error::Dim(format!("branch {j} matrix is {:?}, expected {shape:?}", a.dim())));
        }
        let (h, w) = arch.kernels[i];
        let p = extract_patches(a, h, w);
        let conv = affine(&p, &branch.conv_w, &branch.conv_b);
        let tok = affine(&conv, &branch.proj_w, &branch.proj_b);
        let end = start + tok.nrows();
        e.slice_mut(s![start..end, ..]).assign(&tok);
        boundaries.push(start..end);
        patches.push(p);
        convs.push(conv);
        start = end;
    }
    check_finite(&e, "patch_embed")?;
    let (g, ln) = ln_forward(&e, &params.embed_norm);
    check_finite(&g, "tokenize")?;
    Ok((
        TokenMatrix { tokens: g, boundaries },
        EmbedCache {
            patches,
            conv: convs,
            ln,
        },
    ))
}

fn softmax_rows(s: &mut Array2<f64>) {
    for mut row in s.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
}

fn attention_weights(q: ArrayView2<f64>, k: ArrayView2<f64>) -> Array2<f64> {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut s = q.dot(&k.t()) * scale;
    softmax_rows(&mut s);
    s
}

/// `softmax(Q K^T / sqrt(d)) V` with row-wise softmax.
pub fn attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Result<Array2<f64>> {
    if q.ncols() != k.ncols() || k.nrows() != v.nrows() || q.ncols() == 0 {
        return Err(Error::Dim(format!(
            "attention with Q {:?}, K {:?}, V {:?}",
            q.dim(),
            k.dim(),
            v.dim()
        )));
    }
    let out = attention_weights(q.view(), k.view()).dot(v);
    check_finite(&out, "attention")?;
    Ok(out)
}

struct HeadCache {
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    a: Array2<f64>,
}

fn multihead_cached(g: &Array2<f64>, params: &Params) -> (Array2<f64>, Vec<HeadCache>, Array2<f64>) {
    let d = params.heads[0].wq.ncols();
    let mut concat = Array2::zeros((g.nrows(), d * params.heads.len()));
    let mut caches = Vec::with_capacity(params.heads.len());
    for (h, head) in params.heads.iter().enumerate() {
        let q = g.dot(&head.wq);
        let k = g.dot(&head.wk);
        let v = g.dot(&head.wv);
        let a = attention_weights(q.view(), k.view());
        concat.slice_mut(s![.., h * d..(h + 1) * d]).assign(&a.dot(&v));
        caches.push(HeadCache { q, k, v, a });
    }
    let out = concat.dot(&params.wo);
    (out, caches, concat)
}

/// Concatenated per-head attention, projected by `W^O`.
pub fn multihead(g: &Array2<f64>, params: &Params) -> Result<Array2<f64>> {
    if g.ncols() != EMBED {
        return Err(Error::Dim(format!("token matrix has {} channels, expected {EMBED}", g.ncols())));
    }
    let out = multihead_cached(g, params).0;
    check_finite(&out, "multihead")?;
    Ok(out)
}

struct EncoderCache {
    heads: Vec<HeadCache>,
    concat: Array2<f64>,
    ln1: LnCache,
    z1: Array2<f64>,
    ffn_pre: Array2<f64>,
    ln2: LnCache,
}

fn encoder_cached(g: &Array2<f64>, params: &Params) -> (Array2<f64>, EncoderCache) {
    let (mh, heads, concat) = multihead_cached(g, params);
    let (z1, ln1) = ln_forward(&(g + &mh), &params.norm1);
    let ffn_pre = affine(&z1, &params.ffn_w, &params.ffn_b);
    let ffn = ffn_pre.mapv(|v| v.max(0.0));
    let (out, ln2) = ln_forward(&(&z1 + &ffn), &params.norm2);
    (
        out,
        EncoderCache {
            heads,
            concat,
            ln1,
            z1,
            ffn_pre,
            ln2,
        },
    )
}

/// `Z1 = LN(G + MHA(G))`, `out = LN(Z1 + relu(Z1 W + b))`.
pub fn encoder_layer(g: &Array2<f64>, params: &Params) -> Result<Array2<f64>> {
    if g.ncols() != EMBED {
        return Err(Error::Dim(format!("token matrix has {} channels, expected {EMBED}", g.ncols())));
    }
    let out = encoder_cached(g, params).0;
    check_finite(&out, "encoder_layer")?;
    Ok(out)
}

/// Smallest `|Z1 W + b|` over every token and hidden unit of the feedforward
/// ReLU. The loss is smooth in the parameters within a neighbourhood that
/// scales with this margin, which matters for finite-difference checks.
pub fn relu_margin(stack: &FeatureStack, model: &Model) -> Result<f64> {
    let (tm, _) = embed(stack, &model.params, &model.arch)?;
    let (_, enc) = encoder_cached(&tm.tokens, &model.params);
    Ok(enc.ffn_pre.fold(f64::INFINITY, |m, &v| m.min(v.abs())))
}

fn softmax(logits: &Array1<f64>) -> [f64; N_CLASSES] {
    let max = logits.fold(f64::NEG_INFINITY, |a, &v| a.max(v));
    let mut p = [0.0; N_CLASSES];
    for (pi, &l) in p.iter_mut().zip(logits) {
        *pi = (l - max).exp();
    }
    let sum: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= sum);
    p
}

struct HeadOut {
    pooled: Array1<f64>,
    probs: [f64; N_CLASSES],
}

fn classify(out: &Array2<f64>, params: &Params) -> Result<HeadOut> {
    let pooled = out.mean_axis(Axis(0)).ok_or(Error::Numerical { stage: "pool" })?;
    let logits = pooled.dot(&params.head_w) + &params.head_b;
    let probs = softmax(&logits);
    if probs.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical { stage: "head" });
    }
    Ok(HeadOut { pooled, probs })
}

/// Class probabilities from already normalized tokens.
pub fn forward_tokens(tokens: &Array2<f64>, model: &Model) -> Result<[f64; N_CLASSES]> {
    let out = encoder_layer(tokens, &model.params)?;
    Ok(classify(&out, &model.params)?.probs)
}

pub fn forward(stack: &FeatureStack, model: &Model) -> Result<[f64; N_CLASSES]> {
    let g = tokenize_stack(stack, model)?;
    forward_tokens(&g.tokens, model)
}

/// Most probable class (lowest index on ties) and the probabilities.
pub fn predict(stack: &FeatureStack, model: &Model) -> Result<(MurmurClass, [f64; N_CLASSES])> {
    let p = forward(stack, model)?;
    Ok((argmax(&p), p))
}

pub(crate) fn argmax(p: &[f64; N_CLASSES]) -> MurmurClass {
    let mut best = 0;
    for i in 1..N_CLASSES {
        if p[i] > p[best] {
            best = i;
        }
    }
    MurmurClass::from_index(best).expect("index below class count")
}

struct SampleCache {
    embed: EmbedCache,
    g: Array2<f64>,
    enc: EncoderCache,
    head: HeadOut,
}

fn sample_forward(stack: &FeatureStack, params: &Params, arch: &Arch) -> Result<SampleCache> {
    let (tm, embed) = embed(stack, params, arch)?;
    let (out, enc) = encoder_cached(&tm.tokens, params);
    check_finite(&out, "encoder_layer")?;
    let head = classify(&out, params)?;
    Ok(SampleCache {
        embed,
        g: tm.tokens,
        enc,
        head,
    })
}

fn add_outer(dst: &mut Array2<f64>, x: &Array2<f64>, dy: &Array2<f64>) {
    ndarray::linalg::general_mat_mul(1.0, &x.t(), dy, 1.0, dst);
}

/// Accumulates the gradient of `sum_c dlogits[c] * logit_c` into `grad`.
fn sample_backward(c: &SampleCache, dlogits: &Array1<f64>, params: &Params, arch: &Arch, grad: &mut Params) {
    // head and mean pool
    let pooled = c.head.pooled.view().insert_axis(Axis(1));
    let dl = dlogits.view().insert_axis(Axis(0));
    ndarray::linalg::general_mat_mul(1.0, &pooled, &dl, 1.0, &mut grad.head_w);
    grad.head_b += dlogits;
    let dpooled = params.head_w.dot(dlogits);
    let n = c.g.nrows();
    let dout = Array2::from_shape_fn((n, EMBED), |(_, ch)| dpooled[ch] / n as f64);

    // second residual block
    let e = &c.enc;
    let ds2 = ln_backward(&dout, &e.ln2, &params.norm2, &mut grad.norm2);
    let dffn_pre = &ds2 * &e.ffn_pre.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
    add_outer(&mut grad.ffn_w, &e.z1, &dffn_pre);
    grad.ffn_b += &dffn_pre.sum_axis(Axis(0));
    let dz1 = ds2 + dffn_pre.dot(&params.ffn_w.t());

    // first residual block
    let ds1 = ln_backward(&dz1, &e.ln1, &params.norm1, &mut grad.norm1);
    let mut dg = ds1.clone();
    add_outer(&mut grad.wo, &e.concat, &ds1);
    let dconcat = ds1.dot(&params.wo.t());
    let d = params.heads[0].wq.ncols();
    let scale = 1.0 / (d as f64).sqrt();
    for (h, (hc, hp)) in e.heads.iter().zip(&params.heads).enumerate() {
        let dhead = dconcat.slice(s![.., h * d..(h + 1) * d]);
        let dv = hc.a.t().dot(&dhead);
        let da = dhead.dot(&hc.v.t());
        let mut ds = da;
        for (mut drow, arow) in ds.rows_mut().into_iter().zip(hc.a.rows()) {
            let inner = drow.dot(&arow);
            drow.zip_mut_with(&arow, |x, &a| *x = a * (*x - inner) * scale);
        }
        let dq = ds.dot(&hc.k);
        let dk = ds.t().dot(&hc.q);
        let gh = &mut grad.heads[h];
        add_outer(&mut gh.wq, &c.g, &dq);
        add_outer(&mut gh.wk, &c.g, &dk);
        add_outer(&mut gh.wv, &c.g, &dv);
        dg = dg + dq.dot(&hp.wq.t()) + dk.dot(&hp.wk.t()) + dv.dot(&hp.wv.t());
    }

    // embedding
    let de = ln_backward(&dg, &c.embed.ln, &params.embed_norm, &mut grad.embed_norm);
    let counts = arch.tokens_per_branch();
    let mut start = 0;
    for (i, (bp, bg)) in params.branches.iter().zip(grad.branches.iter_mut()).enumerate() {
        let rows = counts[i];
        let de_j = de.slice(s![start..start + rows, ..]).to_owned();
        start += rows;
        add_outer(&mut bg.proj_w, &c.embed.conv[i], &de_j);
        bg.proj_b += &de_j.sum_axis(Axis(0));
        let dconv = de_j.dot(&bp.proj_w.t());
        add_outer(&mut bg.conv_w, &c.embed.patches[i], &dconv);
        bg.conv_b += &dconv.sum_axis(Axis(0));
    }
}

pub(crate) struct BatchResult {
    pub loss_sum: f64,
    pub correct: usize,
    /// Gradient of the summed (not averaged) loss.
    pub grad_sum: Params,
}

fn chunk_pass(items: &[(&FeatureStack, usize)], model: &Model) -> Result<BatchResult> {
    let mut grad = Params::zeroed(&model.arch);
    let mut loss_sum = 0.0;
    let mut correct = 0;
    for &(stack, label) in items {
        let cache = sample_forward(stack, &model.params, &model.arch)?;
        let p = cache.head.probs;
        loss_sum -= p[label].ln();
        if argmax(&p).index() == label {
            correct += 1;
        }
        let mut dlogits = Array1::from_iter(p);
        dlogits[label] -= 1.0;
        sample_backward(&cache, &dlogits, &model.params, &model.arch, &mut grad);
    }
    Ok(BatchResult {
        loss_sum,
        correct,
        grad_sum: grad,
    })
}

pub(crate) fn batch_pass(batch: &[(&FeatureStack, usize)], model: &Model) -> Result<BatchResult> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("empty training batch".into()));
    }
    if let Some(&(s, l)) = batch.iter().find(|(_, l)| *l >= N_CLASSES) {
        return Err(Error::InvalidLabel {
            label: format!("{l} (segment {:?})", s.segment_ref),
            row: None,
        });
    }
    let parts: Vec<Result<BatchResult>> = batch.par_chunks(GRAD_CHUNK).map(|c| chunk_pass(c, model)).collect();
    let mut total: Option<BatchResult> = None;
    for part in parts {
        let part = part?;
        match total.as_mut() {
            None => total = Some(part),
            Some(t) => {
                t.loss_sum += part.loss_sum;
                t.correct += part.correct;
                t.grad_sum.add_assign(&part.grad_sum);
            }
        }
    }
    Ok(total.expect("nonempty batch"))
}

/// Mean cross-entropy over the batch and its exact gradient.
pub fn loss_and_grads(batch: &[(&FeatureStack, usize)], model: &Model) -> Result<(f64, Params)> {
    let r = batch_pass(batch, model)?;
    let n = batch.len() as f64;
    let mut grad = r.grad_sum;
    grad.scale(1.0 / n);
    Ok((r.loss_sum / n, grad))
}
