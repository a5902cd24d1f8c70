use rand::Rng;

use super::linear::{Init, LayerNorm, Linear};
use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};
use crate::tensor::{ParamStore, Tensor};

/// Pre-norm transformer block: `x + attn(ln1(x))`, then `x + mlp(ln2(x))`.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub dim: usize,
    pub heads: usize,
    pub norm1: LayerNorm,
    pub qkv: Linear,
    pub proj: Linear,
    pub norm2: LayerNorm,
    pub mlp: Mlp,
}

/// Block output plus the per-head attention weights `[batch, heads, T, T]`
/// (values only, detached from the graph).
#[derive(Debug, Clone)]
pub struct BlockOutput {
    pub tokens: Tensor,
    pub attention: Tensor,
}

impl TransformerBlock {
    /// ViT-style block with 0.02 truncated-normal weights.
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: f64,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Self::with_init(store, name, dim, heads, mlp_ratio, Init::TruncNormal(0.02), trainable, rng)
    }

    #[allow(clippy::too_many_arguments)]
    pub fn with_init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        heads: usize,
        mlp_ratio: f64,
        init: Init,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::InvalidArgument(format!("{heads} heads do not divide width {dim}")));
        }
        let hidden = ((dim as f64) * mlp_ratio).round() as usize;
        Ok(TransformerBlock {
            dim,
            heads,
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim, trainable)?,
            qkv: Linear::new(store, &format!("{name}.attn.qkv"), dim, 3 * dim, init, trainable, rng)?,
            proj: Linear::new(store, &format!("{name}.attn.proj"), dim, dim, init, trainable, rng)?,
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim, trainable)?,
            mlp: Mlp::new(store, &format!("{name}.mlp"), &[dim, hidden, dim], Activation::Gelu, init, trainable, rng)?,
        })
    }

    /// Accepts `[T, dim]` or `[batch, T, dim]`; returns the same shape.
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<BlockOutput> {
        let unbatched = x.ndim() == 2;
        if !(x.ndim() == 2 || x.ndim() == 3) || x.shape().last() != Some(&self.dim) {
            return Err(Error::ShapeMismatch {
                op: "attention_forward",
                lhs: x.shape().to_vec(),
                rhs: vec![self.dim],
            });
        }
        let x3 = if unbatched {
            x.reshape(&[1, x.shape()[0], self.dim])?
        } else {
            x.clone()
        };
        let (b, t) = (x3.shape()[0], x3.shape()[1]);
        let (h, dh) = (self.heads, self.dim / self.heads);

        let normed = self.norm1.forward(store, &x3)?;
        let qkv = self.qkv.forward(store, &normed)?; // [b, t, 3d]
        let qkv = qkv.reshape(&[b, t, 3, h, dh])?.permute(&[2, 0, 3, 1, 4])?; // [3, b, h, t, dh]
        let head = |i: usize| -> Result<Tensor> { qkv.slice(0, i, i + 1)?.reshape(&[b * h, t, dh]) };
        let (q, k, v) = (head(0)?, head(1)?, head(2)?);
        let scores = q.matmul(&k.transpose(1, 2)?)?.scale(1.0 / (dh as f64).sqrt());
        let attn = scores.softmax(); // [b*h, t, t]
        let ctx = attn.matmul(&v)?; // [b*h, t, dh]
        let ctx = ctx.reshape(&[b, h, t, dh])?.permute(&[0, 2, 1, 3])?.reshape(&[b, t, self.dim])?;
        let x3 = x3.add(&self.proj.forward(store, &ctx)?)?;

        let normed = self.norm2.forward(store, &x3)?;
        let out = x3.add(&self.mlp.forward(store, &normed)?)?;

        let tokens = if unbatched { out.reshape(&[t, self.dim])? } else { out };
        let attention = attn.detach().reshape(&[b, h, t, t])?;
        Ok(BlockOutput { tokens, attention })
    }

    /// Zeroes the attention output projection and the last MLP layer, which
    /// makes the block an exact identity map.
    pub fn zero_output_projections(&self, store: &mut ParamStore) -> Result<()> {
        let last = self.mlp.layers.last().expect("mlp has layers");
        for id in [self.proj.weight, self.proj.bias, last.weight, last.bias] {
            let n = store.param(id).value.numel();
            store.set_data(id, vec![0.0; n])?;
        }
        Ok(())
    }
}
