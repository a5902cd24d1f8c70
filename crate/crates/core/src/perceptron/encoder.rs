use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;

use super::config::EncoderConfig;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::nn::{Init, LayerNorm, Linear, PatchEmbed, TransformerBlock};
use crate::tensor::param::trunc_normal;
use crate::tensor::{ParamId, ParamStore, Tensor};

pub const ENCODER_KIND: &str = "encoder";
const PREFIX: &str = "encoder";
/// Crops arrive in `[0, 1]` and are standardized with these before patching.
pub const PIXEL_MEAN: f64 = 0.5;
pub const PIXEL_STD: f64 = 0.25;

/// Frozen ViT-style proposal encoder plus its trainable adaptation parts:
/// the learnable tokens and the spatial projection head.
#[derive(Debug, Clone)]
pub struct EncoderState {
    pub config: EncoderConfig,
    pub patch_embed: PatchEmbed,
    /// `[1, dim]`.
    pub cls_token: ParamId,
    /// `[1 + P², dim]`, added to CLS and patch tokens only.
    pub pos_embed: ParamId,
    pub blocks: Vec<TransformerBlock>,
    pub norm: LayerNorm,
    /// `[K, dim]`; absent when K = 0.
    pub learnable_tokens: Option<ParamId>,
    /// `dim → proj_dim`.
    pub proj: Linear,
}

#[derive(Debug, Clone)]
pub struct EncoderOutput {
    /// `[N, T, dim]`.
    pub tokens: Tensor,
    /// Last block's attention `[N, heads, T, T]`, when requested.
    pub attention: Option<Tensor>,
}

/// Fixed 2D sin-cos table `[1 + g², dim]` as in MAE: a zero row for CLS, then
/// per patch the row coordinate in the first half and the column in the
/// second, each half split into sines and cosines over `dim/4` frequencies.
pub fn sincos_pos_embed(grid: usize, dim: usize) -> Vec<f64> {
    let quarter = dim / 4;
    let mut out = vec![0.0; dim];
    for r in 0..grid {
        for c in 0..grid {
            let mut row = vec![0.0; dim];
            for (half, pos) in [(0, r), (1, c)] {
                for i in 0..quarter {
                    let omega = 1.0 / 10000f64.powf(i as f64 / quarter as f64);
                    let a = pos as f64 * omega;
                    row[half * dim / 2 + i] = a.sin();
                    row[half * dim / 2 + quarter + i] = a.cos();
                }
            }
            out.extend(row);
        }
    }
    out
}

impl EncoderState {
    /// Fresh encoder; frozen weights are drawn from `seed`, the learnable
    /// tokens and projection from an independent stream of the same seed.
    pub fn init_random(store: &mut ParamStore, config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = config.dim;
        let patch_embed = PatchEmbed::new(store, &format!("{PREFIX}.patch_embed"), config.patch_size, 3, d, Init::Xavier, false, &mut rng)?;
        let cls_token = store.insert(&format!("{PREFIX}.cls_token"), trunc_normal(&mut rng, d, 0.02), &[1, d], false)?;
        let n_pos = 1 + config.num_patches();
        let pos_embed = store.insert(&format!("{PREFIX}.pos_embed"), sincos_pos_embed(config.image_side / config.patch_size, d), &[n_pos, d], false)?;
        let blocks = (0..config.depth)
            .map(|i| TransformerBlock::new(store, &format!("{PREFIX}.blocks.{i}"), d, config.heads, config.mlp_ratio, false, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        let norm = LayerNorm::new(store, &format!("{PREFIX}.norm"), d, false)?;

        let mut adapt = ChaCha8Rng::seed_from_u64(seed);
        adapt.set_stream(1);
        let k = config.num_learnable_tokens;
        let learnable_tokens = if k > 0 {
            Some(store.insert(&format!("{PREFIX}.learnable_tokens"), trunc_normal(&mut adapt, k * d, 0.02), &[k, d], true)?)
        } else {
            None
        };
        let proj = Linear::new(store, &format!("{PREFIX}.proj"), d, config.proj_dim, Init::TruncNormal(0.02), true, &mut adapt)?;
        Ok(EncoderState {
            config: config.clone(),
            patch_embed,
            cls_token,
            pos_embed,
            blocks,
            norm,
            learnable_tokens,
            proj,
        })
    }

    fn is_pretrained(name: &str) -> bool {
        name.starts_with(&format!("{PREFIX}.")) && !name.starts_with(&format!("{PREFIX}.learnable_tokens")) && !name.starts_with(&format!("{PREFIX}.proj."))
    }

    /// Writes the pretrained (frozen) part; learnable tokens and the
    /// projection head are not included.
    pub fn save_weights(&self, store: &ParamStore, path: &Path) -> Result<()> {
        let mut c = Container::new(ENCODER_KIND, json!({ "config": self.config }));
        c.push_params(store, Self::is_pretrained);
        c.write(path)
    }

    /// Builds a fresh encoder for `config` and overwrites its pretrained part
    /// from `path`. Learnable tokens stay freshly initialized from `seed`.
    pub fn load_weights(store: &mut ParamStore, config: &EncoderConfig, path: &Path, seed: u64) -> Result<Self> {
        let state = Self::init_random(store, config, seed)?;
        let file = Container::read_kind(path, ENCODER_KIND)?;
        let names: Vec<String> = store.iter().map(|p| p.name.clone()).filter(|n| Self::is_pretrained(n)).collect();
        for name in names {
            let rec = file.get(&name).ok_or_else(|| Error::MissingParam(name.clone()))?;
            store.load(&name, &rec.shape, rec.data.clone())?;
        }
        Ok(state)
    }

    fn encode_chunk(&self, store: &ParamStore, crops: &Tensor, want_attention: bool) -> Result<(Tensor, Option<Tensor>)> {
        let b = crops.shape()[0];
        let d = self.config.dim;
        let p2 = self.config.num_patches();
        let patches = self.patch_embed.forward(store, &crops.add_scalar(-PIXEL_MEAN).scale(1.0 / PIXEL_STD))?; // [b, P², d]
        let cls = store.tensor(self.cls_token).index_select(&vec![0; b])?.reshape(&[b, 1, d])?;
        let x = Tensor::concat(&[cls, patches], 1)?.add(&store.tensor(self.pos_embed))?;
        let x = match self.learnable_tokens {
            Some(id) => {
                let k = self.config.num_learnable_tokens;
                let rows: Vec<usize> = (0..b).flat_map(|_| 0..k).collect();
                let learn = store.tensor(id).index_select(&rows)?.reshape(&[b, k, d])?;
                Tensor::concat(&[x.slice(1, 0, 1)?, learn, x.slice(1, 1, 1 + p2)?], 1)?
            }
            None => x,
        };
        let mut x = x;
        let mut attention = None;
        for (i, block) in self.blocks.iter().enumerate() {
            let out = block.forward(store, &x)?;
            x = out.tokens;
            if want_attention && i + 1 == self.blocks.len() {
                attention = Some(out.attention);
            }
        }
        Ok((self.norm.forward(store, &x)?, attention))
    }

    /// `crops: [N, 3, side, side]` → tokens `[N, T, dim]`, in micro-batches
    /// of `config.micro_batch`, preserving order.
    pub fn encode(&self, store: &ParamStore, crops: &Tensor, want_attention: bool) -> Result<EncoderOutput> {
        let s = crops.shape();
        let side = self.config.image_side;
        if s.len() != 4 || s[1] != 3 || s[2] != side || s[3] != side {
            return Err(Error::ShapeMismatch {
                op: "encode_proposal",
                lhs: s.to_vec(),
                rhs: vec![3, side, side],
            });
        }
        let n = s[0];
        let mut tokens = Vec::new();
        let mut attn = Vec::new();
        let mut start = 0;
        while start < n {
            let end = (start + self.config.micro_batch).min(n);
            let chunk = if start == 0 && end == n { crops.clone() } else { crops.slice(0, start, end)? };
            let (t, a) = self.encode_chunk(store, &chunk, want_attention)?;
            tokens.push(t);
            attn.extend(a);
            start = end;
        }
        let join = |v: Vec<Tensor>| -> Result<Tensor> {
            if v.len() == 1 {
                Ok(v.into_iter().next().unwrap())
            } else {
                Tensor::concat(&v, 0)
            }
        };
        Ok(EncoderOutput {
            tokens: join(tokens)?,
            attention: if want_attention { Some(join(attn)?) } else { None },
        })
    }

    /// `[N, T, dim]` → `[N, T, S, S]`: each token is projected to `S²` values
    /// and laid out row-major; tokens become channels. `[T, dim]` gives `[T, S, S]`.
    pub fn project_tokens_to_spatial(&self, store: &ParamStore, tokens: &Tensor) -> Result<Tensor> {
        let s = self.config.roi_size;
        if self.config.proj_dim != s * s {
            return Err(Error::Config(format!("proj_dim {} is not roi_size² = {}", self.config.proj_dim, s * s)));
        }
        let y = self.proj.forward(store, tokens)?;
        let mut shape = tokens.shape()[..tokens.ndim() - 1].to_vec();
        shape.extend([s, s]);
        y.reshape(&shape)
    }
}
