use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};

use super::attention::{attention_weights, project_qkv};
use super::{LayerParams, ModelConfig, ModelError, ModelParams, Tensor2D};
use crate::train::{bce_with_logits_grad, bce_with_logits_weighted};

const LAYER_NORM_EPS: f64 = 1e-12;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// One tokenized training example.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub ids: Vec<u32>,
    pub mask: Vec<u8>,
    pub targets: Vec<f64>,
}

struct LayerNormCache {
    xhat: Tensor2D,
    inv_std: Vec<f64>,
}

struct LayerCache {
    x_in: Tensor2D,
    q: Tensor2D,
    k: Tensor2D,
    v: Tensor2D,
    probs: Vec<Tensor2D>,
    concat: Tensor2D,
    drop_attn: Option<Vec<f64>>,
    ln1: LayerNormCache,
    y1: Tensor2D,
    ff_pre: Tensor2D,
    ff_act: Tensor2D,
    drop_ff: Option<Vec<f64>>,
    ln2: LayerNormCache,
}

struct HeadCache {
    pooled: Vec<f64>,
    pre: Vec<f64>,
    drop: Option<Vec<f64>>,
    dropped: Vec<f64>,
}

/// Intermediates of one forward pass, consumed by [`backward`].
pub struct ForwardCache {
    ids: Vec<u32>,
    layers: Vec<LayerCache>,
    head: HeadCache,
    pub logits: Vec<f64>,
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2))
}

fn gelu_grad(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x * core::f64::consts::FRAC_1_SQRT_2)) + x * FRAC_1_SQRT_2PI * libm::exp(-0.5 * x * x)
}

fn layer_norm(x: &Tensor2D, gamma: &Tensor2D, beta: &Tensor2D) -> (Tensor2D, LayerNormCache) {
    let (rows, cols) = x.shape();
    let mut xhat = Tensor2D::zeros(rows, cols);
    let mut out = Tensor2D::zeros(rows, cols);
    let mut inv_std = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / cols as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
        let inv = 1.0 / libm::sqrt(var + LAYER_NORM_EPS);
        inv_std.push(inv);
        for c in 0..cols {
            let h = (row[c] - mean) * inv;
            xhat[(r, c)] = h;
            out[(r, c)] = gamma.data()[c] * h + beta.data()[c];
        }
    }
    (out, LayerNormCache { xhat, inv_std })
}

/// Returns the input gradient and accumulates into `dgamma`/`dbeta`.
fn layer_norm_backward(
    dy: &Tensor2D,
    cache: &LayerNormCache,
    gamma: &Tensor2D,
    dgamma: &mut Tensor2D,
    dbeta: &mut Tensor2D,
) -> Tensor2D {
    let (rows, cols) = dy.shape();
    let mut dx = Tensor2D::zeros(rows, cols);
    let mut dxhat = vec![0.0; cols];
    for r in 0..rows {
        let xhat = cache.xhat.row(r);
        let dyr = dy.row(r);
        for c in 0..cols {
            dgamma.data_mut()[c] += dyr[c] * xhat[c];
            dbeta.data_mut()[c] += dyr[c];
            dxhat[c] = dyr[c] * gamma.data()[c];
        }
        let mean_d = dxhat.iter().sum::<f64>() / cols as f64;
        let mean_dx = dxhat.iter().zip(xhat).map(|(a, b)| a * b).sum::<f64>() / cols as f64;
        let inv = cache.inv_std[r];
        for c in 0..cols {
            dx[(r, c)] = inv * (dxhat[c] - mean_d - xhat[c] * mean_dx);
        }
    }
    dx
}

/// Inverted dropout in place; returns the per-element multipliers.
fn dropout(values: &mut [f64], rate: f64, rng: Option<&mut (dyn RngCore + 'static)>) -> Option<Vec<f64>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - rate);
    let scales: Vec<f64> = values
        .iter()
        .map(|_| if rng.random::<f64>() < rate { 0.0 } else { keep })
        .collect();
    for (v, s) in values.iter_mut().zip(&scales) {
        *v *= s;
    }
    Some(scales)
}

fn apply_scales(t: &mut Tensor2D, scales: &Option<Vec<f64>>) {
    if let Some(s) = scales {
        for (v, m) in t.data_mut().iter_mut().zip(s) {
            *v *= m;
        }
    }
}

fn layer_forward(
    layer: &LayerParams,
    x: &Tensor2D,
    mask: &[u8],
    heads: usize,
    rate: f64,
    mut rng: Option<&mut (dyn RngCore + 'static)>,
) -> Result<(Tensor2D, LayerCache), ModelError> {
    let (q, k, v) = project_qkv(x, &layer.w_query, &layer.w_key, &layer.w_value)?;
    let dk = q.cols() / heads;
    let mut concat = Tensor2D::zeros(x.rows(), q.cols());
    let mut probs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dk, (h + 1) * dk);
        let p = attention_weights(&q.columns(lo, hi), &k.columns(lo, hi), mask)?;
        concat.set_columns(lo, &p.matmul(&v.columns(lo, hi))?);
        probs.push(p);
    }
    let mut attn = concat.matmul(&layer.w_out)?;
    let drop_attn = dropout(attn.data_mut(), rate, rng.as_deref_mut());
    let mut r1 = x.clone();
    r1.add_assign(&attn)?;
    let (y1, ln1) = layer_norm(&r1, &layer.ln1_gamma, &layer.ln1_beta);

    let mut ff_pre = y1.matmul(&layer.ff_in)?;
    ff_pre.add_row_assign(&layer.ff_in_bias)?;
    let mut ff_act = ff_pre.clone();
    for v in ff_act.data_mut() {
        *v = gelu(*v);
    }
    let mut ff = ff_act.matmul(&layer.ff_out)?;
    ff.add_row_assign(&layer.ff_out_bias)?;
    let drop_ff = dropout(ff.data_mut(), rate, rng);
    let mut r2 = y1.clone();
    r2.add_assign(&ff)?;
    let (out, ln2) = layer_norm(&r2, &layer.ln2_gamma, &layer.ln2_beta);

    Ok((
        out,
        LayerCache {
            x_in: x.clone(),
            q,
            k,
            v,
            probs,
            concat,
            drop_attn,
            ln1,
            y1,
            ff_pre,
            ff_act,
            drop_ff,
            ln2,
        },
    ))
}

fn layer_backward(
    layer: &LayerParams,
    cache: &LayerCache,
    dout: &Tensor2D,
    heads: usize,
    grads: &mut LayerParams,
) -> Result<Tensor2D, ModelError> {
    let dr2 = layer_norm_backward(dout, &cache.ln2, &layer.ln2_gamma, &mut grads.ln2_gamma, &mut grads.ln2_beta);
    let mut dy1 = dr2.clone();
    let mut dff = dr2;
    apply_scales(&mut dff, &cache.drop_ff);
    grads.ff_out.add_assign(&cache.ff_act.t_matmul(&dff)?)?;
    grads.ff_out_bias.add_assign(&dff.col_sums())?;
    let mut dpre = dff.matmul_t(&layer.ff_out)?;
    for (d, &x) in dpre.data_mut().iter_mut().zip(cache.ff_pre.data()) {
        *d *= gelu_grad(x);
    }
    grads.ff_in.add_assign(&cache.y1.t_matmul(&dpre)?)?;
    grads.ff_in_bias.add_assign(&dpre.col_sums())?;
    dy1.add_assign(&dpre.matmul_t(&layer.ff_in)?)?;

    let dr1 = layer_norm_backward(&dy1, &cache.ln1, &layer.ln1_gamma, &mut grads.ln1_gamma, &mut grads.ln1_beta);
    let mut dx = dr1.clone();
    let mut dattn = dr1;
    apply_scales(&mut dattn, &cache.drop_attn);
    grads.w_out.add_assign(&cache.concat.t_matmul(&dattn)?)?;
    let dconcat = dattn.matmul_t(&layer.w_out)?;

    let width = cache.q.cols();
    let dk = width / heads;
    let scale = 1.0 / libm::sqrt(dk as f64);
    let rows = dout.rows();
    let mut dq = Tensor2D::zeros(rows, width);
    let mut dkey = Tensor2D::zeros(rows, width);
    let mut dv = Tensor2D::zeros(rows, width);
    for h in 0..heads {
        let (lo, hi) = (h * dk, (h + 1) * dk);
        let p = &cache.probs[h];
        let dh = dconcat.columns(lo, hi);
        let mut ds = dh.matmul_t(&cache.v.columns(lo, hi))?;
        dv.set_columns(lo, &p.t_matmul(&dh)?);
        for r in 0..ds.rows() {
            let prow = p.row(r);
            let dot: f64 = ds.row(r).iter().zip(prow).map(|(a, b)| a * b).sum();
            for (d, &pv) in ds.row_mut(r).iter_mut().zip(prow) {
                *d = pv * (*d - dot) * scale;
            }
        }
        dq.set_columns(lo, &ds.matmul(&cache.k.columns(lo, hi))?);
        dkey.set_columns(lo, &ds.t_matmul(&cache.q.columns(lo, hi))?);
    }
    grads.w_query.add_assign(&cache.x_in.t_matmul(&dq)?)?;
    grads.w_key.add_assign(&cache.x_in.t_matmul(&dkey)?)?;
    grads.w_value.add_assign(&cache.x_in.t_matmul(&dv)?)?;
    dx.add_assign(&dq.matmul_t(&layer.w_query)?)?;
    dx.add_assign(&dkey.matmul_t(&layer.w_key)?)?;
    dx.add_assign(&dv.matmul_t(&layer.w_value)?)?;
    Ok(dx)
}

fn check_input(ids: &[u32], mask: &[u8], config: &ModelConfig) -> Result<(), ModelError> {
    if ids.len() != mask.len() {
        return Err(ModelError::Dimension {
            op: "ids/mask",
            lhs: (ids.len(), 1),
            rhs: (mask.len(), 1),
        });
    }
    if ids.is_empty() {
        return Err(ModelError::InvalidInput("empty sequence".into()));
    }
    if ids.len() > config.max_positions {
        return Err(ModelError::InvalidInput(format!(
            "sequence length {} exceeds max_positions {}",
            ids.len(),
            config.max_positions
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&id| id as usize >= config.vocab_size) {
        return Err(ModelError::InvalidInput(format!(
            "token id {bad} outside vocabulary of {}",
            config.vocab_size
        )));
    }
    Ok(())
}

/// Forward pass over every position in `ids`, recording intermediates.
/// Dropout is applied only when `rng` is given and the rate is positive.
pub fn forward_cached(
    params: &ModelParams,
    config: &ModelConfig,
    ids: &[u32],
    mask: &[u8],
    mut rng: Option<&mut (dyn RngCore + 'static)>,
) -> Result<ForwardCache, ModelError> {
    check_input(ids, mask, config)?;
    let d = config.d_model;
    let mut x = Tensor2D::zeros(ids.len(), d);
    for (t, &id) in ids.iter().enumerate() {
        let tok = params.token_embedding.row(id as usize);
        let pos = params.position_embedding.row(t);
        for ((o, a), b) in x.row_mut(t).iter_mut().zip(tok).zip(pos) {
            *o = a + b;
        }
    }

    let mut layers = Vec::with_capacity(params.layers.len());
    for (i, layer) in params.layers.iter().enumerate() {
        let (out, cache) = layer_forward(layer, &x, mask, config.heads, config.dropout_rate, rng.as_deref_mut())?;
        if !out.is_finite() {
            return Err(ModelError::NonFinite(format!("encoder layer {i} forward")));
        }
        layers.push(cache);
        x = out;
    }

    let pooled = x.row(0).to_vec();
    let pooled_t = Tensor2D::from_vec(1, d, pooled.clone())?;
    let mut pre_t = pooled_t.matmul(&params.pre_classifier)?;
    pre_t.add_assign(&params.pre_classifier_bias)?;
    let pre = pre_t.data().to_vec();
    let mut dropped: Vec<f64> = pre.iter().map(|&u| u.max(0.0)).collect();
    let drop = dropout(&mut dropped, config.dropout_rate, rng);
    let mut logits_t = Tensor2D::from_vec(1, d, dropped.clone())?.matmul(&params.classifier)?;
    logits_t.add_assign(&params.classifier_bias)?;
    let logits = logits_t.into_data();
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(ModelError::NonFinite("classifier head forward".into()));
    }

    Ok(ForwardCache {
        ids: ids.to_vec(),
        layers,
        head: HeadCache {
            pooled,
            pre,
            drop,
            dropped,
        },
        logits,
    })
}

/// Reverse pass from `dlogits`, accumulating into `grads`.
pub fn backward(
    params: &ModelParams,
    config: &ModelConfig,
    cache: &ForwardCache,
    dlogits: &[f64],
    grads: &mut ModelParams,
) -> Result<(), ModelError> {
    let d = config.d_model;
    let labels = config.num_labels;
    if dlogits.len() != labels {
        return Err(ModelError::Dimension {
            op: "dlogits",
            lhs: (1, dlogits.len()),
            rhs: (1, labels),
        });
    }
    let head = &cache.head;
    for (i, &h) in head.dropped.iter().enumerate() {
        for (j, &g) in dlogits.iter().enumerate() {
            grads.classifier[(i, j)] += h * g;
        }
    }
    for (b, &g) in grads.classifier_bias.data_mut().iter_mut().zip(dlogits) {
        *b += g;
    }
    let mut dpre = vec![0.0; d];
    for (i, dp) in dpre.iter_mut().enumerate() {
        let mut acc: f64 = params.classifier.row(i).iter().zip(dlogits).map(|(w, g)| w * g).sum();
        if let Some(scales) = &head.drop {
            acc *= scales[i];
        }
        *dp = if head.pre[i] > 0.0 { acc } else { 0.0 };
    }
    for (i, &z) in head.pooled.iter().enumerate() {
        for (j, &g) in dpre.iter().enumerate() {
            grads.pre_classifier[(i, j)] += z * g;
        }
    }
    for (b, &g) in grads.pre_classifier_bias.data_mut().iter_mut().zip(&dpre) {
        *b += g;
    }
    let seq = cache.ids.len();
    let mut dx = Tensor2D::zeros(seq, d);
    for (i, slot) in dx.row_mut(0).iter_mut().enumerate() {
        *slot = params.pre_classifier.row(i).iter().zip(&dpre).map(|(w, g)| w * g).sum();
    }

    for (i, (layer, lcache)) in params.layers.iter().zip(&cache.layers).enumerate().rev() {
        dx = layer_backward(layer, lcache, &dx, config.heads, &mut grads.layers[i])?;
        if !dx.is_finite() {
            return Err(ModelError::NonFinite(format!("encoder layer {i} backward")));
        }
    }

    for (t, &id) in cache.ids.iter().enumerate() {
        let g = dx.row(t);
        for (o, v) in grads.token_embedding.row_mut(id as usize).iter_mut().zip(g) {
            *o += v;
        }
        for (o, v) in grads.position_embedding.row_mut(t).iter_mut().zip(g) {
            *o += v;
        }
    }
    Ok(())
}

/// Length of the sequence once trailing masked positions are dropped.
fn active_prefix(mask: &[u8]) -> usize {
    mask.iter().rposition(|&m| m != 0).map_or(mask.len().min(1), |i| i + 1)
}

/// Raw label logits in inference mode. Trailing padding cannot reach the
/// pooled first token, so it is dropped before the encoder runs.
pub fn encoder_forward(
    ids: &[u32],
    mask: &[u8],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<f64>, ModelError> {
    check_input(ids, mask, config)?;
    let n = active_prefix(mask);
    Ok(forward_cached(params, config, &ids[..n], &mask[..n], None)?.logits)
}

/// Like [`encoder_forward`] but runs every padded position through the stack.
pub fn encoder_forward_untrimmed(
    ids: &[u32],
    mask: &[u8],
    params: &ModelParams,
    config: &ModelConfig,
) -> Result<Vec<f64>, ModelError> {
    Ok(forward_cached(params, config, ids, mask, None)?.logits)
}

/// Mean BCE-with-logits loss over `batch × labels` and its exact gradient.
pub fn loss_and_gradients(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &[Example],
    pos_weight: Option<&[f64]>,
    mut rng: Option<&mut (dyn RngCore + 'static)>,
) -> Result<(f64, ModelParams), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::InvalidInput("empty batch".into()));
    }
    let labels = config.num_labels;
    let denom = (batch.len() * labels) as f64;
    let mut grads = params.zeros_like();
    let mut loss = 0.0;
    for ex in batch {
        if ex.targets.len() != labels {
            return Err(ModelError::Dimension {
                op: "targets",
                lhs: (1, ex.targets.len()),
                rhs: (1, labels),
            });
        }
        check_input(&ex.ids, &ex.mask, config)?;
        let n = active_prefix(&ex.mask);
        let cache = forward_cached(params, config, &ex.ids[..n], &ex.mask[..n], rng.as_deref_mut())?;
        let mut dlogits = Vec::with_capacity(labels);
        for (j, (&x, &y)) in cache.logits.iter().zip(&ex.targets).enumerate() {
            let w = pos_weight.map_or(1.0, |p| p[j]);
            loss += bce_with_logits_weighted(x, y, w);
            dlogits.push(bce_with_logits_grad(x, y, w) / denom);
        }
        backward(params, config, &cache, &dlogits, &mut grads)?;
    }
    Ok((loss / denom, grads))
}
