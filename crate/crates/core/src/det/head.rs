use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Init, Linear};
use crate::tensor::{ParamStore, Tensor};

/// Second-stage head: flatten, two ReLU layers, then parallel class and
/// per-class box-delta outputs. Class 0 is background. An optional
/// per-RoI vector of `extra_dim` values is appended to the flattened features.
#[derive(Debug, Clone)]
pub struct DetectionHead {
    pub in_channels: usize,
    pub roi_size: usize,
    pub num_classes: usize,
    pub extra_dim: usize,
    pub fc1: Linear,
    pub fc2: Linear,
    pub cls: Linear,
    pub reg: Linear,
}

#[derive(Debug, Clone)]
pub struct HeadOutput {
    /// `[N, num_classes + 1]`.
    pub class_logits: Tensor,
    /// `[N, 4·num_classes]`.
    pub deltas: Tensor,
}

impl DetectionHead {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        roi_size: usize,
        hidden: usize,
        num_classes: usize,
        extra_dim: usize,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let flat = in_channels * roi_size * roi_size + extra_dim;
        let relu = Init::FanIn(2f64.sqrt());
        Ok(DetectionHead {
            in_channels,
            roi_size,
            num_classes,
            extra_dim,
            fc1: Linear::new(store, &format!("{name}.fc1"), flat, hidden, relu, trainable, rng)?,
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, hidden, relu, trainable, rng)?,
            cls: Linear::new(store, &format!("{name}.cls"), hidden, num_classes + 1, Init::TruncNormal(0.01), trainable, rng)?,
            reg: Linear::new(store, &format!("{name}.reg"), hidden, 4 * num_classes, Init::TruncNormal(0.001), trainable, rng)?,
        })
    }

    /// `features: [N, C, S, S]`, `extra: [N, extra_dim]` when configured.
    pub fn forward(&self, store: &ParamStore, features: &Tensor, extra: Option<&Tensor>) -> Result<HeadOutput> {
        let s = features.shape();
        if s.len() != 4 || s[1] != self.in_channels {
            return Err(Error::ChannelMismatch {
                what: "detection head input",
                expected: self.in_channels,
                got: s.get(1).copied().unwrap_or(0),
            });
        }
        if s[2] != self.roi_size || s[3] != self.roi_size {
            return Err(Error::ShapeMismatch {
                op: "detection head",
                lhs: s.to_vec(),
                rhs: vec![self.in_channels, self.roi_size, self.roi_size],
            });
        }
        let mut x = features.reshape(&[s[0], s[1] * s[2] * s[3]])?;
        match (self.extra_dim, extra) {
            (0, None) => {}
            (d, Some(e)) if e.shape() == [s[0], d] => x = Tensor::concat(&[x, e.clone()], 1)?,
            (d, e) => {
                return Err(Error::ChannelMismatch {
                    what: "detection head extra input",
                    expected: d,
                    got: e.map_or(0, |e| e.shape().last().copied().unwrap_or(0)),
                })
            }
        }
        let x = self.fc1.forward(store, &x)?.relu();
        let x = self.fc2.forward(store, &x)?.relu();
        Ok(HeadOutput {
            class_logits: self.cls.forward(store, &x)?,
            deltas: self.reg.forward(store, &x)?,
        })
    }
}
