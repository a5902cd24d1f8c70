use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::param::trunc_normal;
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Weight initialization for newly created layers.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Truncated normal with the given std (ViT convention uses 0.02).
    TruncNormal(f64),
    /// Normal with std `gain / sqrt(fan_in)`.
    FanIn(f64),
    /// Uniform on `±sqrt(6 / (fan_in + fan_out))` (MAE convention).
    Xavier,
    Zeros,
}

impl Init {
    pub(crate) fn sample<R: Rng + ?Sized>(self, rng: &mut R, n: usize, fan_in: usize) -> Vec<f64> {
        match self {
            Init::TruncNormal(std) => trunc_normal(rng, n, std),
            Init::FanIn(gain) => trunc_normal(rng, n, gain / (fan_in as f64).sqrt()),
            Init::Xavier => {
                let a = (6.0 / (fan_in + n / fan_in.max(1)) as f64).sqrt();
                (0..n).map(|_| rng.random_range(-a..a)).collect()
            }
            Init::Zeros => vec![0.0; n],
        }
    }
}

/// `y = x·W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let w = init.sample(rng, in_dim * out_dim, in_dim);
        let weight = store.insert(&format!("{name}.weight"), w, &[in_dim, out_dim], trainable)?;
        let bias = store.insert(&format!("{name}.bias"), vec![0.0; out_dim], &[out_dim], trainable)?;
        Ok(Linear {
            weight,
            bias,
            in_dim,
            out_dim,
        })
    }

    /// Applies the layer over the last axis of `x`.
    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        if x.shape().last() != Some(&self.in_dim) {
            return Err(Error::ShapeMismatch {
                op: "linear",
                lhs: x.shape().to_vec(),
                rhs: vec![self.in_dim, self.out_dim],
            });
        }
        x.matmul(&store.tensor(self.weight))?.add(&store.tensor(self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, dim: usize, trainable: bool) -> Result<Self> {
        Ok(LayerNorm {
            gamma: store.insert(&format!("{name}.gamma"), vec![1.0; dim], &[dim], trainable)?,
            beta: store.insert(&format!("{name}.beta"), vec![0.0; dim], &[dim], trainable)?,
        })
    }

    pub fn forward(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.layer_norm(&store.tensor(self.gamma), &store.tensor(self.beta))
    }
}
