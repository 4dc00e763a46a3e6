use alloc::vec::Vec;

use super::{LayerParams, ModelError, Tensor2D};

/// Additive score bias for masked key positions; small enough that the
/// softmax weight underflows to exactly zero.
pub const MASK_BIAS: f64 = -1e9;

/// `(X·Wq, X·Wk, X·Wv)`
pub fn project_qkv(
    x: &Tensor2D,
    wq: &Tensor2D,
    wk: &Tensor2D,
    wv: &Tensor2D,
) -> Result<(Tensor2D, Tensor2D, Tensor2D), ModelError> {
    Ok((x.matmul(wq)?, x.matmul(wk)?, x.matmul(wv)?))
}

/// Row-wise `softmax(Q·Kᵀ/√d_k + bias)`, where `bias` is [`MASK_BIAS`] on
/// key positions with `mask == 0`.
pub fn attention_weights(q: &Tensor2D, k: &Tensor2D, mask: &[u8]) -> Result<Tensor2D, ModelError> {
    if q.cols() != k.cols() {
        return Err(ModelError::Dimension {
            op: "attention q·kᵀ",
            lhs: q.shape(),
            rhs: k.shape(),
        });
    }
    if mask.len() != k.rows() {
        return Err(ModelError::Dimension {
            op: "attention mask",
            lhs: k.shape(),
            rhs: (mask.len(), 1),
        });
    }
    if !mask.iter().any(|&m| m != 0) {
        return Err(ModelError::DegenerateMask { row: 0 });
    }
    let scale = 1.0 / libm::sqrt(q.cols() as f64);
    let mut scores = q.matmul_t(k)?;
    for r in 0..scores.rows() {
        let row = scores.row_mut(r);
        let mut max = f64::NEG_INFINITY;
        for (s, &m) in row.iter_mut().zip(mask) {
            *s *= scale;
            if m == 0 {
                *s += MASK_BIAS;
            }
            max = max.max(*s);
        }
        let mut sum = 0.0;
        for s in row.iter_mut() {
            *s = libm::exp(*s - max);
            sum += *s;
        }
        for s in row.iter_mut() {
            *s /= sum;
        }
    }
    Ok(scores)
}

pub fn scaled_dot_attention(
    q: &Tensor2D,
    k: &Tensor2D,
    v: &Tensor2D,
    mask: &[u8],
) -> Result<Tensor2D, ModelError> {
    attention_weights(q, k, mask)?.matmul(v)
}

/// `Concat(head_1, …, head_h)·W^O`; head `i` uses column block `i` of the
/// packed projection matrices.
pub fn multi_head(x: &Tensor2D, layer: &LayerParams, heads: usize, mask: &[u8]) -> Result<Tensor2D, ModelError> {
    let (q, k, v) = project_qkv(x, &layer.w_query, &layer.w_key, &layer.w_value)?;
    let width = q.cols();
    if heads == 0 || width % heads != 0 {
        return Err(ModelError::InvalidConfig(alloc::format!(
            "projection width {width} not divisible by {heads} heads"
        )));
    }
    let dk = width / heads;
    let outputs: Vec<Tensor2D> = (0..heads)
        .map(|h| {
            let cols = h * dk..(h + 1) * dk;
            scaled_dot_attention(
                &q.columns(cols.start, cols.end),
                &k.columns(cols.start, cols.end),
                &v.columns(cols.start, cols.end),
                mask,
            )
        })
        .collect::<Result<_, _>>()?;
    let mut concat = Tensor2D::zeros(x.rows(), width);
    for (h, out) in outputs.iter().enumerate() {
        concat.set_columns(h * dk, out);
    }
    concat.matmul(&layer.w_out)
}
