//! Detection records, box overlays and attention dumps for single images.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::model::{Inference, VfmDet};
use super::synth::{load_image, save_image, CLASSES};
use crate::container::Container;
use crate::det::{BBox, Detection};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const ATTENTION_KIND: &str = "attention-dump";

/// Outline colours per class.
const CLASS_COLOURS: [[f64; 3]; 3] = [[1.0, 0.1, 0.1], [0.1, 0.9, 0.1], [0.2, 0.4, 1.0]];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRecord {
    pub group: String,
    pub tag: String,
    pub probability: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    /// `[x1, y1, x2, y2]` in pixels.
    pub bbox: [f64; 4],
    pub class: String,
    pub class_id: usize,
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<Vec<TagRecord>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectOutput {
    pub image: String,
    pub width: usize,
    pub height: usize,
    pub detections: Vec<DetectionRecord>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct DetectFlags {
    pub overlay: bool,
    pub attributes: bool,
    pub attention_dump: bool,
}

/// Files written by [`run_detect`].
#[derive(Debug, Clone, Default)]
pub struct DetectFiles {
    pub detections: PathBuf,
    pub overlay: Option<PathBuf>,
    pub attention: Option<PathBuf>,
}

pub fn detection_records(inference: &Inference) -> Vec<DetectionRecord> {
    inference
        .detections
        .iter()
        .enumerate()
        .map(|(i, d)| DetectionRecord {
            bbox: [d.bbox.x1, d.bbox.y1, d.bbox.x2, d.bbox.y2],
            class: CLASSES[d.class_id].to_string(),
            class_id: d.class_id,
            score: d.score,
            attributes: inference.attributes.as_ref().map(|all| {
                let r = &all[i];
                r.tags
                    .iter()
                    .zip(&r.probabilities)
                    .map(|((g, t), &p)| TagRecord {
                        group: g.clone(),
                        tag: t.clone(),
                        probability: p,
                    })
                    .collect()
            }),
        })
        .collect()
}

/// Copy of `image` with two-pixel box outlines in per-class colours.
pub fn draw_overlay(image: &Tensor, detections: &[Detection]) -> Result<Tensor> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::InvalidArgument(format!("overlay needs a [3, H, W] image, got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut px = image.to_vec();
    let mut paint = |x: usize, y: usize, c: &[f64; 3]| {
        for (ch, v) in c.iter().enumerate() {
            px[ch * h * w + y * w + x] = *v;
        }
    };
    for d in detections {
        let colour = &CLASS_COLOURS[d.class_id % CLASS_COLOURS.len()];
        let clip = |v: f64, hi: usize| (v.floor().max(0.0) as usize).min(hi - 1);
        let (x1, x2) = (clip(d.bbox.x1, w), clip(d.bbox.x2, w));
        let (y1, y2) = (clip(d.bbox.y1, h), clip(d.bbox.y2, h));
        for t in 0..2 {
            for x in x1..=x2 {
                paint(x, (y1 + t).min(h - 1), colour);
                paint(x, y2.saturating_sub(t), colour);
            }
            for y in y1..=y2 {
                paint((x1 + t).min(w - 1), y, colour);
                paint(x2.saturating_sub(t), y, colour);
            }
        }
    }
    Tensor::from_vec(px, s)
}

/// Last encoder block and attribute fusion block attention, one row per
/// proposal, with the detection-to-proposal map in the metadata.
pub fn attention_container(inference: &Inference) -> Result<Container> {
    let proposals: Vec<[f64; 4]> = inference.proposals.iter().map(|b: &BBox| [b.x1, b.y1, b.x2, b.y2]).collect();
    let mut c = Container::new(
        ATTENTION_KIND,
        json!({ "proposal_of_detection": inference.proposal_of, "proposals": proposals }),
    );
    for (name, t) in [("encoder_last_block", &inference.encoder_attention), ("attribute_fusion", &inference.fusion_attention)] {
        match t {
            Some(t) => c.push(name, false, t.shape(), t.to_vec()),
            None => return Err(Error::InvalidArgument(format!("inference carries no {name} attention"))),
        }
    }
    Ok(c)
}

/// Runs the detector on one PNG and writes `detections.json` plus the
/// requested extras into `out_dir`.
pub fn run_detect(model: &VfmDet, image_path: &Path, out_dir: &Path, flags: DetectFlags) -> Result<(DetectOutput, DetectFiles)> {
    let image = load_image(image_path)?;
    let inference = model.infer(&image, flags.attributes, flags.attention_dump)?;
    std::fs::create_dir_all(out_dir)?;
    let output = DetectOutput {
        image: image_path.display().to_string(),
        width: image.shape()[2],
        height: image.shape()[1],
        detections: detection_records(&inference),
    };
    let mut files = DetectFiles {
        detections: out_dir.join("detections.json"),
        ..Default::default()
    };
    std::fs::write(&files.detections, serde_json::to_string_pretty(&output)?)?;
    if flags.overlay {
        let p = out_dir.join("overlay.png");
        save_image(&p, &draw_overlay(&image, &inference.detections)?)?;
        files.overlay = Some(p);
    }
    if flags.attention_dump && !inference.proposals.is_empty() {
        let p = out_dir.join("attention.bin");
        attention_container(&inference)?.write(&p)?;
        files.attention = Some(p);
    }
    Ok((output, files))
}
