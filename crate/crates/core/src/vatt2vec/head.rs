use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Init, Linear, TransformerBlock};
use crate::tensor::param::trunc_normal;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Query and key weights start at this multiple of the Xavier scale, so
/// the initial attention is already selective.
const QK_GAIN: f64 = 3.0;

/// Joint text/visual fusion block followed by one independent MLP per tag.
///
/// Sequence: `[F_t + e_t ; F_ve + e_v]` (text tokens first). Each tag's MLP
/// reads only the fused output at its own text position.
#[derive(Debug, Clone)]
pub struct AttributeHead {
    pub dim: usize,
    pub text_dim: usize,
    pub num_tags: usize,
    pub text_proj: Option<Linear>,
    /// `[1, dim]` modality embeddings.
    pub e_text: ParamId,
    pub e_visual: ParamId,
    pub block: TransformerBlock,
    /// Per-tag MLP weights, stacked: `[tags, dim, hidden]`, `[tags, 1, hidden]`,
    /// `[tags, hidden, 1]`, `[tags, 1, 1]`.
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub struct AttributeOutput {
    /// `[N, tags]`.
    pub logits: Tensor,
    /// `[N, tags]`, sigmoid of the logits.
    pub probs: Tensor,
    /// Fusion-block attention `[N, heads, tags + T, tags + T]`.
    pub attention: Tensor,
}

impl AttributeHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        dim: usize,
        text_dim: usize,
        heads: usize,
        hidden: usize,
        num_tags: usize,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let text_proj = if text_dim != dim {
            Some(Linear::new(store, &format!("{name}.text_proj"), text_dim, dim, Init::FanIn(1.0), trainable, rng)?)
        } else {
            None
        };
        let e_text = store.insert(&format!("{name}.e_text"), trunc_normal(rng, dim, 0.02), &[1, dim], trainable)?;
        let e_visual = store.insert(&format!("{name}.e_visual"), trunc_normal(rng, dim, 0.02), &[1, dim], trainable)?;
        let block = TransformerBlock::with_init(store, &format!("{name}.fusion"), dim, heads, 4.0, Init::Xavier, trainable, rng)?;
        let mut qkv = store.param(block.qkv.weight).value.to_vec();
        for (i, v) in qkv.iter_mut().enumerate() {
            if i % (3 * dim) < 2 * dim {
                *v *= QK_GAIN;
            }
        }
        store.set_data(block.qkv.weight, qkv)?;
        let w1 = store.insert(
            &format!("{name}.tag_mlp.w1"),
            Init::FanIn(2f64.sqrt()).sample(rng, num_tags * dim * hidden, dim),
            &[num_tags, dim, hidden],
            trainable,
        )?;
        let b1 = store.insert(&format!("{name}.tag_mlp.b1"), vec![0.0; num_tags * hidden], &[num_tags, 1, hidden], trainable)?;
        let w2 = store.insert(
            &format!("{name}.tag_mlp.w2"),
            Init::FanIn(1.0).sample(rng, num_tags * hidden, hidden),
            &[num_tags, hidden, 1],
            trainable,
        )?;
        let b2 = store.insert(&format!("{name}.tag_mlp.b2"), vec![0.0; num_tags], &[num_tags, 1, 1], trainable)?;
        Ok(AttributeHead {
            dim,
            text_dim,
            num_tags,
            text_proj,
            e_text,
            e_visual,
            block,
            w1,
            b1,
            w2,
            b2,
        })
    }

    /// `visual: [N, T, dim]` (or `[T, dim]`), `text: [tags, text_dim]`.
    pub fn forward(&self, store: &ParamStore, visual: &Tensor, text: &Tensor) -> Result<AttributeOutput> {
        let visual = if visual.ndim() == 2 {
            visual.reshape(&[1, visual.shape()[0], visual.shape()[1]])?
        } else {
            visual.clone()
        };
        if visual.ndim() != 3 || visual.shape()[2] != self.dim {
            return Err(Error::ChannelMismatch {
                what: "attribute head visual tokens",
                expected: self.dim,
                got: visual.shape().last().copied().unwrap_or(0),
            });
        }
        if text.shape() != [self.num_tags, self.text_dim] {
            return Err(Error::ShapeMismatch {
                op: "attribute head text features",
                lhs: text.shape().to_vec(),
                rhs: vec![self.num_tags, self.text_dim],
            });
        }
        let (n, d, tags) = (visual.shape()[0], self.dim, self.num_tags);
        let ft = match &self.text_proj {
            Some(p) => p.forward(store, text)?,
            None => text.clone(),
        };
        let ft = ft.add(&store.tensor(self.e_text).reshape(&[d])?)?;
        let rows: Vec<usize> = (0..n).flat_map(|_| 0..tags).collect();
        let ft = ft.index_select(&rows)?.reshape(&[n, tags, d])?;
        let fv = visual.add(&store.tensor(self.e_visual).reshape(&[d])?)?;
        let fused = self.block.forward(store, &Tensor::concat(&[ft, fv], 1)?)?;

        let at_tags = fused.tokens.slice(1, 0, tags)?.permute(&[1, 0, 2])?; // [tags, N, d]
        let h = at_tags.matmul(&store.tensor(self.w1))?.add(&store.tensor(self.b1))?.gelu();
        let logits = h
            .matmul(&store.tensor(self.w2))?
            .add(&store.tensor(self.b2))?
            .reshape(&[tags, n])?
            .transpose(0, 1)?;
        Ok(AttributeOutput {
            probs: logits.sigmoid(),
            logits,
            attention: fused.attention,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tokens(shape: &[usize], k: f64) -> Tensor {
        let n: usize = shape.iter().product();
        Tensor::from_vec((0..n).map(|i| (i as f64 * k).sin()).collect(), shape).unwrap()
    }

    fn head(text_dim: usize, seed: u64) -> (ParamStore, AttributeHead) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h = AttributeHead::new(&mut store, "attr", 8, text_dim, 2, 6, 5, true, &mut rng).unwrap();
        (store, h)
    }

    #[test]
    fn zero_tag_mlps_give_one_half() {
        let (mut store, h) = head(8, 0);
        for id in [h.w2, h.b2] {
            let n = store.param(id).value.numel();
            store.set_data(id, vec![0.0; n]).unwrap();
        }
        let out = h.forward(&store, &tokens(&[3, 4, 8], 0.3), &tokens(&[5, 8], 0.2)).unwrap();
        assert_eq!(out.probs.shape(), &[3, 5]);
        assert!(out.probs.data().iter().all(|&p| p == 0.5));
        assert_eq!(out.attention.shape(), &[3, 2, 9, 9]);
    }

    #[test]
    fn visual_token_permutation_invariance() {
        let (store, h) = head(6, 1);
        let v = tokens(&[1, 4, 8], 0.37);
        let text = tokens(&[5, 6], 0.11);
        let a = h.forward(&store, &v, &text).unwrap().probs.to_vec();
        let permuted = v.reshape(&[4, 8]).unwrap().index_select(&[2, 0, 3, 1]).unwrap();
        let b = h.forward(&store, &permuted, &text).unwrap().probs.to_vec();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(a.iter().all(|&p| p > 0.0 && p < 1.0));
    }

    #[test]
    fn dim_mismatch_rejected() {
        let (store, h) = head(8, 0);
        assert!(h.forward(&store, &tokens(&[1, 4, 7], 0.3), &tokens(&[5, 8], 0.2)).is_err());
        assert!(h.forward(&store, &tokens(&[1, 4, 8], 0.3), &tokens(&[4, 8], 0.2)).is_err());
    }

    #[test]
    fn gradient_check() {
        let (store, h) = head(6, 2);
        let text = tokens(&[5, 6], 0.23);
        let err = finite_difference_check(|v| Ok(h.forward(&store, v, &text)?.probs.sum()), &tokens(&[2, 3, 8], 0.41), 1e-5).unwrap();
        assert!(err < 1e-4, "{err}");
    }
}
