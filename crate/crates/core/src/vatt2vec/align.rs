use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Init, Linear};
use crate::tensor::{ParamStore, Tensor};

/// Pools fused RoI features `[N, C, S, S]` over space and projects them to the
/// attribute-vector width.
#[derive(Debug, Clone)]
pub struct VisualAligner {
    pub proj: Linear,
}

impl VisualAligner {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, in_channels: usize, out_dim: usize, rng: &mut R) -> Result<Self> {
        Ok(VisualAligner {
            proj: Linear::new(store, &format!("{name}.proj"), in_channels, out_dim, Init::FanIn(1.0), true, rng)?,
        })
    }

    pub fn forward(&self, store: &ParamStore, features: &Tensor) -> Result<Tensor> {
        if features.ndim() != 4 || features.shape()[1] != self.proj.in_dim {
            return Err(Error::ChannelMismatch {
                what: "visual aligner input",
                expected: self.proj.in_dim,
                got: features.shape().get(1).copied().unwrap_or(0),
            });
        }
        self.proj.forward(store, &features.mean_axes(&[2, 3])?)
    }
}

fn check_pair(op: &'static str, u: &Tensor, v: &Tensor) -> Result<()> {
    if u.ndim() != 2 || u.shape() != v.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: u.shape().to_vec(),
            rhs: v.shape().to_vec(),
        });
    }
    Ok(())
}

/// `mean_i (1 - cos(u_i, v_i))` over rows of two `[N, d]` tensors.
pub fn cosine_alignment_loss(u: &Tensor, v: &Tensor) -> Result<Tensor> {
    check_pair("cosine_alignment_loss", u, v)?;
    let cos = u.l2_normalize().mul(&v.l2_normalize())?.sum_axes(&[1])?;
    Ok(cos.neg().add_scalar(1.0).mean())
}

/// Symmetric InfoNCE over the `N×N` cosine-similarity matrix scaled by
/// `1 / temperature`; row `i` of `u` is matched with row `i` of `v`.
pub fn contrastive_alignment_loss(u: &Tensor, v: &Tensor, temperature: f64) -> Result<Tensor> {
    check_pair("contrastive_alignment_loss", u, v)?;
    if temperature <= 0.0 {
        return Err(Error::InvalidArgument(format!("temperature must be positive, got {temperature}")));
    }
    let (un, vn) = (u.l2_normalize(), v.l2_normalize());
    let logits = un.matmul(&vn.transpose(0, 1)?)?.scale(1.0 / temperature);
    let targets: Vec<usize> = (0..u.shape()[0]).collect();
    let a = logits.cross_entropy(&targets)?;
    let b = logits.transpose(0, 1)?.cross_entropy(&targets)?;
    Ok(a.add(&b)?.scale(0.5))
}
