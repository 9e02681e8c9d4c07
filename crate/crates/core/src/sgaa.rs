//! Syntactic graph-aware attention: scaled dot-product attention restricted
//! to token pairs within each head's tree-distance threshold.

use crate::dropout::Dropout;
use crate::error::{Error, Result};
use crate::tensor::{Axis, Tensor, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct SgaaParams {
    pub w_q: Tensor,
    pub w_k: Tensor,
}

/// `Q = H W_Q`, `K = H W_K`.
pub fn project_qk<'t>(hs: Var<'t>, w_q: Var<'t>, w_k: Var<'t>) -> Result<(Var<'t>, Var<'t>)> {
    Ok((hs.matmul(w_q)?, hs.matmul(w_k)?))
}

/// Raw attention logits `Q Kᵀ / √d`, shared by every head.
pub fn attention_logits<'t>(q: Var<'t>, k: Var<'t>) -> Result<Var<'t>> {
    let d = q.shape().1;
    if k.shape().1 != d {
        return Err(Error::Dimension {
            op: "attention_logits",
            left: q.shape(),
            right: k.shape(),
        });
    }
    Ok(q.matmul(k.transpose())?.scale(1.0 / (d as f64).sqrt()))
}

/// One head: `softmax(logits + mask)`, with optional dropout over the
/// unmasked weights followed by row renormalization.
pub fn masked_head<'t>(
    logits: Var<'t>,
    mask: &Tensor,
    dropout: Option<&mut Dropout>,
) -> Result<Var<'t>> {
    let attn = logits.softmax_rows(Some(mask))?;
    let Some(drop) = dropout else { return Ok(attn) };
    if drop.rate <= 0.0 {
        return Ok(attn);
    }
    let (n, m) = mask.shape();
    let mut keep = drop.keep_mask(n, m);
    for i in 0..n {
        let survivors = (0..m)
            .filter(|&j| mask[(i, j)] == 0.0 && keep[(i, j)] != 0.0)
            .count();
        if survivors == 0 {
            for j in 0..m {
                keep[(i, j)] = 1.0;
            }
        }
    }
    let kept = attn.mul(logits.tape().constant(keep))?;
    kept.div(kept.sum_axis(Axis::Cols))
}

/// Per-head attention for head `mask`, from projected queries and keys.
pub fn sgaa_attention<'t>(
    q: Var<'t>,
    k: Var<'t>,
    mask: &Tensor,
    dropout: Option<&mut Dropout>,
) -> Result<Var<'t>> {
    masked_head(attention_logits(q, k)?, mask, dropout)
}
