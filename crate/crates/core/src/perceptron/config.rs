use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of the frozen proposal encoder and its adaptation parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub image_side: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
    /// Learnable tokens inserted after CLS.
    pub num_learnable_tokens: usize,
    pub proj_dim: usize,
    pub roi_size: usize,
    /// Crops encoded per forward call.
    pub micro_batch: usize,
}

impl EncoderConfig {
    pub fn desk() -> Self {
        EncoderConfig {
            image_side: 64,
            patch_size: 8,
            dim: 64,
            depth: 2,
            heads: 4,
            mlp_ratio: 4.0,
            num_learnable_tokens: 4,
            proj_dim: 64,
            roi_size: 8,
            micro_batch: 32,
        }
    }

    pub fn paper() -> Self {
        EncoderConfig {
            image_side: 224,
            patch_size: 16,
            dim: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4.0,
            num_learnable_tokens: 8,
            proj_dim: 256,
            roi_size: 16,
            micro_batch: 32,
        }
    }

    pub fn patches_per_side(&self) -> usize {
        self.image_side / self.patch_size
    }

    pub fn num_patches(&self) -> usize {
        self.patches_per_side().pow(2)
    }

    /// `T = 1 + K + P²`.
    pub fn num_tokens(&self) -> usize {
        1 + self.num_learnable_tokens + self.num_patches()
    }

    pub fn validate(&self) -> Result<()> {
        if self.patch_size == 0 || !self.image_side.is_multiple_of(self.patch_size) {
            return Err(Error::Config(format!(
                "encoder image_side {} is not divisible by patch_size {}",
                self.image_side, self.patch_size
            )));
        }
        if self.proj_dim != self.roi_size * self.roi_size {
            return Err(Error::Config(format!(
                "encoder proj_dim {} must equal roi_size² = {}",
                self.proj_dim,
                self.roi_size * self.roi_size
            )));
        }
        if !self.dim.is_multiple_of(4) {
            return Err(Error::Config(format!("encoder dim {} must be a multiple of 4 for the sin-cos position table", self.dim)));
        }
        if self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return Err(Error::Config(format!("encoder heads {} do not divide dim {}", self.heads, self.dim)));
        }
        if self.micro_batch == 0 {
            return Err(Error::Config("encoder micro_batch must be positive".into()));
        }
        Ok(())
    }
}
