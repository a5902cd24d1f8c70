use serde::{Deserialize, Serialize};

use super::boxes::BBox;
use crate::error::{Error, Result};

/// Anchor tiling over a single feature level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnchorConfig {
    /// Anchor side lengths in pixels (area = scale²).
    pub scales: Vec<f64>,
    /// Height / width ratios.
    pub ratios: Vec<f64>,
}

impl AnchorConfig {
    pub fn per_cell(&self) -> usize {
        self.scales.len() * self.ratios.len()
    }
}

/// One anchor per (cell, scale, ratio), cell-major in row-major grid order,
/// centered on `((x + 0.5)·stride, (y + 0.5)·stride)`.
pub fn generate_anchors(feat_h: usize, feat_w: usize, stride: f64, cfg: &AnchorConfig) -> Result<Vec<BBox>> {
    if cfg.scales.is_empty() || cfg.ratios.is_empty() {
        return Err(Error::InvalidArgument("anchor scales and ratios must be nonempty".into()));
    }
    let mut out = Vec::with_capacity(feat_h * feat_w * cfg.per_cell());
    for y in 0..feat_h {
        for x in 0..feat_w {
            let (cx, cy) = ((x as f64 + 0.5) * stride, (y as f64 + 0.5) * stride);
            for &s in &cfg.scales {
                for &r in &cfg.ratios {
                    let w = s / r.sqrt();
                    let h = s * r.sqrt();
                    out.push(BBox::from_center(cx, cy, w, h));
                }
            }
        }
    }
    Ok(out)
}
