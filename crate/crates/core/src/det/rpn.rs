use rand::Rng;
use serde::{Deserialize, Serialize};

use super::boxes::{BBox, DeltaCoder, Proposal};
use super::nms::{nms_indices, order_by_score};
use crate::error::{Error, Result};
use crate::nn::{Init, Linear};
use crate::tensor::{ParamStore, Tensor};

/// Proposal selection settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RpnConfig {
    pub top_k: usize,
    /// Candidates kept (by objectness) before NMS.
    pub pre_nms_top_n: usize,
    pub nms_iou: f64,
    /// Boxes narrower or shorter than this (pixels) after clamping are dropped.
    pub min_size: f64,
}

impl Default for RpnConfig {
    fn default() -> Self {
        RpnConfig {
            top_k: 512,
            pre_nms_top_n: 2000,
            nms_iou: 0.7,
            min_size: 1e-3,
        }
    }
}

/// 3×3 neighbourhood layer followed by per-anchor objectness and delta heads.
#[derive(Debug, Clone)]
pub struct RpnHead {
    pub in_channels: usize,
    pub anchors_per_cell: usize,
    pub conv: Linear,
    pub objectness: Linear,
    pub deltas: Linear,
}

/// Raw per-anchor predictions, anchors ordered as in `generate_anchors`.
#[derive(Debug, Clone)]
pub struct RpnRaw {
    /// `[h·w·A]` logits.
    pub objectness: Tensor,
    /// `[h·w·A, 4]`.
    pub deltas: Tensor,
}

#[derive(Debug, Clone)]
pub struct RpnOutput {
    pub raw: RpnRaw,
    pub proposals: Vec<Proposal>,
}

/// Zero-pads `[h, w, c]` by one cell and stacks the 3×3 neighbourhood of
/// every cell into `[h·w, 9c]`.
fn neighbourhood(x: &Tensor) -> Result<Tensor> {
    let (h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let row = Tensor::zeros(&[1, w, c]);
    let padded = Tensor::concat(&[row.clone(), x.clone(), row], 0)?;
    let col = Tensor::zeros(&[h + 2, 1, c]);
    let padded = Tensor::concat(&[col.clone(), padded, col], 1)?;
    let mut views = Vec::with_capacity(9);
    for dy in 0..3 {
        let band = padded.slice(0, dy, dy + h)?;
        for dx in 0..3 {
            views.push(band.slice(1, dx, dx + w)?);
        }
    }
    Tensor::concat(&views, 2)?.reshape(&[h * w, 9 * c])
}

impl RpnHead {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        hidden: usize,
        anchors_per_cell: usize,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let a = anchors_per_cell;
        Ok(RpnHead {
            in_channels,
            anchors_per_cell,
            conv: Linear::new(store, &format!("{name}.conv"), 9 * in_channels, hidden, Init::FanIn(2f64.sqrt()), trainable, rng)?,
            objectness: Linear::new(store, &format!("{name}.objectness"), hidden, a, Init::TruncNormal(0.01), trainable, rng)?,
            deltas: Linear::new(store, &format!("{name}.deltas"), hidden, 4 * a, Init::TruncNormal(0.001), trainable, rng)?,
        })
    }

    /// `fmap: [C, h, w]`.
    pub fn forward(&self, store: &ParamStore, fmap: &Tensor) -> Result<RpnRaw> {
        let s = fmap.shape();
        if s.len() != 3 || s[0] != self.in_channels {
            return Err(Error::ChannelMismatch {
                what: "rpn input",
                expected: self.in_channels,
                got: s.first().copied().unwrap_or(0),
            });
        }
        let cells = s[1] * s[2];
        let hidden = self.conv.forward(store, &neighbourhood(&fmap.permute(&[1, 2, 0])?)?)?.relu();
        Ok(RpnRaw {
            objectness: self.objectness.forward(store, &hidden)?.reshape(&[cells * self.anchors_per_cell])?,
            deltas: self.deltas.forward(store, &hidden)?.reshape(&[cells * self.anchors_per_cell, 4])?,
        })
    }
}

/// Decodes, clamps and filters per-anchor predictions, then keeps the best
/// `top_k` after NMS. Output is sorted by descending objectness.
pub fn select_proposals(raw: &RpnRaw, anchors: &[BBox], image_w: f64, image_h: f64, cfg: &RpnConfig) -> Result<Vec<Proposal>> {
    if cfg.top_k == 0 {
        return Err(Error::InvalidArgument("rpn top_k must be positive".into()));
    }
    if anchors.len() != raw.objectness.numel() {
        return Err(Error::ShapeMismatch {
            op: "rpn anchors",
            lhs: vec![anchors.len()],
            rhs: raw.objectness.shape().to_vec(),
        });
    }
    let coder = DeltaCoder::default();
    let scores = raw.objectness.data();
    let deltas = raw.deltas.data();
    let mut boxes = Vec::new();
    let mut kept_scores = Vec::new();
    for i in order_by_score(scores).into_iter().take(cfg.pre_nms_top_n.max(cfg.top_k)) {
        if !scores[i].is_finite() {
            continue;
        }
        let b = coder.decode(&deltas[4 * i..4 * i + 4], &anchors[i]).clamp(image_w, image_h);
        if b.is_valid() && b.width() >= cfg.min_size && b.height() >= cfg.min_size {
            boxes.push(b);
            kept_scores.push(scores[i]);
        }
    }
    Ok(nms_indices(&boxes, &kept_scores, cfg.nms_iou)
        .into_iter()
        .take(cfg.top_k)
        .map(|i| Proposal {
            bbox: boxes[i],
            objectness: kept_scores[i],
        })
        .collect())
}

pub fn rpn_forward(
    head: &RpnHead,
    store: &ParamStore,
    fmap: &Tensor,
    anchors: &[BBox],
    image_w: f64,
    image_h: f64,
    cfg: &RpnConfig,
) -> Result<RpnOutput> {
    let raw = head.forward(store, fmap)?;
    let proposals = select_proposals(&raw, anchors, image_w, image_h, cfg)?;
    Ok(RpnOutput { raw, proposals })
}
