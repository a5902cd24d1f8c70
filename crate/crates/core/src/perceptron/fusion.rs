use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Init, Linear};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// How RoI features and projected encoder tokens are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionStrategy {
    /// Channel concatenation, RoI channels first.
    Concat,
    /// `w_roi·F_roi + w_enc·Map(F̄)` with trainable scalars and a per-position
    /// linear map from token channels to RoI channels.
    Weighted,
    /// Per-position linear map over the concatenated channels.
    Linear,
}

impl FusionStrategy {
    pub const ALL: [FusionStrategy; 3] = [FusionStrategy::Concat, FusionStrategy::Weighted, FusionStrategy::Linear];

    pub fn name(self) -> &'static str {
        match self {
            FusionStrategy::Concat => "concat",
            FusionStrategy::Weighted => "weighted",
            FusionStrategy::Linear => "linear",
        }
    }
}

impl std::str::FromStr for FusionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FusionStrategy::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown fusion strategy `{s}`")))
    }
}

/// Channel concatenation of `[.., C_roi, S, S]` and `[.., T, S, S]` along
/// the channel axis (RoI first). Accepts single or batched maps.
pub fn fuse_with_roi(f_roi: &Tensor, f_bar: &Tensor) -> Result<Tensor> {
    let (a, b) = (f_roi.shape(), f_bar.shape());
    let rank = a.len();
    if !(rank == 3 || rank == 4) || b.len() != rank || a[rank - 2..] != b[rank - 2..] || a[..rank - 3] != b[..rank - 3] {
        return Err(Error::ShapeMismatch {
            op: "fuse_with_roi",
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Tensor::concat(&[f_roi.clone(), f_bar.clone()], rank - 3)
}

#[derive(Debug, Clone)]
pub struct Fusion {
    pub strategy: FusionStrategy,
    pub roi_channels: usize,
    pub token_channels: usize,
    pub w_roi: Option<ParamId>,
    pub w_enc: Option<ParamId>,
    pub map: Option<Linear>,
}

/// Applies `layer` over the channel axis of `[N, C, S, S]`.
fn channel_map(store: &ParamStore, layer: &Linear, x: &Tensor) -> Result<Tensor> {
    x.permute(&[0, 2, 3, 1])
        .and_then(|t| layer.forward(store, &t))
        .and_then(|t| t.permute(&[0, 3, 1, 2]))
}

impl Fusion {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        strategy: FusionStrategy,
        roi_channels: usize,
        token_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let mut f = Fusion {
            strategy,
            roi_channels,
            token_channels,
            w_roi: None,
            w_enc: None,
            map: None,
        };
        match strategy {
            FusionStrategy::Concat => {}
            FusionStrategy::Weighted => {
                f.w_roi = Some(store.insert(&format!("{name}.w_roi"), vec![1.0], &[1], true)?);
                f.w_enc = Some(store.insert(&format!("{name}.w_enc"), vec![1.0], &[1], true)?);
                f.map = Some(Linear::new(store, &format!("{name}.map"), token_channels, roi_channels, Init::FanIn(1.0), true, rng)?);
            }
            FusionStrategy::Linear => {
                let cin = roi_channels + token_channels;
                f.map = Some(Linear::new(store, &format!("{name}.map"), cin, roi_channels, Init::FanIn(1.0), true, rng)?);
            }
        }
        Ok(f)
    }

    pub fn out_channels(&self) -> usize {
        match self.strategy {
            FusionStrategy::Concat => self.roi_channels + self.token_channels,
            FusionStrategy::Weighted | FusionStrategy::Linear => self.roi_channels,
        }
    }

    /// `f_roi: [N, C_roi, S, S]`, `f_bar: [N, T, S, S]` → `[N, out_channels, S, S]`.
    pub fn forward(&self, store: &ParamStore, f_roi: &Tensor, f_bar: &Tensor) -> Result<Tensor> {
        for (what, t, c) in [("fusion roi input", f_roi, self.roi_channels), ("fusion token input", f_bar, self.token_channels)] {
            if t.ndim() != 4 || t.shape()[1] != c {
                return Err(Error::ChannelMismatch {
                    what,
                    expected: c,
                    got: t.shape().get(1).copied().unwrap_or(0),
                });
            }
        }
        match self.strategy {
            FusionStrategy::Concat => fuse_with_roi(f_roi, f_bar),
            FusionStrategy::Weighted => {
                let mapped = channel_map(store, self.map.as_ref().unwrap(), f_bar)?;
                let a = f_roi.mul(&store.tensor(self.w_roi.unwrap()))?;
                a.add(&mapped.mul(&store.tensor(self.w_enc.unwrap()))?)
            }
            FusionStrategy::Linear => channel_map(store, self.map.as_ref().unwrap(), &fuse_with_roi(f_roi, f_bar)?),
        }
    }
}
