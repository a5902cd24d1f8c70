use rand::seq::SliceRandom;
use rand::Rng;

use super::boxes::{BBox, DeltaCoder};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Assignment {
    /// Matched to ground truth `gt` with object class `class_id`.
    Foreground { gt: usize, class_id: usize },
    Background,
    /// Between the two thresholds; excluded from the loss.
    Ignored,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoiTarget {
    pub assignment: Assignment,
    pub max_iou: f64,
    /// Regression target toward the matched box; zero unless foreground.
    pub deltas: [f64; 4],
}

impl RoiTarget {
    /// Training label with 0 as background, `class_id + 1` otherwise.
    pub fn label(&self) -> Option<usize> {
        match self.assignment {
            Assignment::Foreground { class_id, .. } => Some(class_id + 1),
            Assignment::Background => Some(0),
            Assignment::Ignored => None,
        }
    }
}

/// Index and IoU of the best-overlapping ground truth (lowest index on ties).
fn best_match(b: &BBox, gt: &[BBox]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, g) in gt.iter().enumerate() {
        let v = b.iou(g);
        if best.is_none_or(|(_, bv)| v > bv) {
            best = Some((j, v));
        }
    }
    best
}

/// Second-stage assignment: foreground at max IoU `≥ iou_fg`, background
/// below `iou_bg`, ignored otherwise.
pub fn assign_targets(
    proposals: &[BBox],
    gt_boxes: &[BBox],
    gt_classes: &[usize],
    iou_fg: f64,
    iou_bg: f64,
    coder: &DeltaCoder,
) -> Vec<RoiTarget> {
    debug_assert!(iou_bg <= iou_fg);
    debug_assert_eq!(gt_boxes.len(), gt_classes.len());
    proposals
        .iter()
        .map(|p| match best_match(p, gt_boxes) {
            Some((j, v)) if v >= iou_fg => RoiTarget {
                assignment: Assignment::Foreground {
                    gt: j,
                    class_id: gt_classes[j],
                },
                max_iou: v,
                deltas: coder.encode(&gt_boxes[j], p),
            },
            found => {
                let v = found.map_or(0.0, |(_, v)| v);
                RoiTarget {
                    assignment: if v < iou_bg { Assignment::Background } else { Assignment::Ignored },
                    max_iou: v,
                    deltas: [0.0; 4],
                }
            }
        })
        .collect()
}

/// Subsamples up to `batch` targets with at most `fg_fraction` of them
/// foreground; ignored entries are never drawn. Foreground indices come first.
pub fn sample_targets<R: Rng + ?Sized>(targets: &[RoiTarget], batch: usize, fg_fraction: f64, rng: &mut R) -> Vec<usize> {
    let mut fg: Vec<usize> = Vec::new();
    let mut bg: Vec<usize> = Vec::new();
    for (i, t) in targets.iter().enumerate() {
        match t.assignment {
            Assignment::Foreground { .. } => fg.push(i),
            Assignment::Background => bg.push(i),
            Assignment::Ignored => {}
        }
    }
    fg.shuffle(rng);
    bg.shuffle(rng);
    let n_fg = fg.len().min((batch as f64 * fg_fraction).round() as usize);
    let n_bg = bg.len().min(batch - n_fg);
    fg.truncate(n_fg);
    fg.extend_from_slice(&bg[..n_bg]);
    fg
}

/// Anchor labels for the RPN: positive at IoU `≥ fg`, negative below `bg`,
/// and every ground truth's best anchor(s) positive regardless of threshold.
pub fn assign_anchors(anchors: &[BBox], gt_boxes: &[BBox], fg: f64, bg: f64, coder: &DeltaCoder) -> Vec<RoiTarget> {
    let classes = vec![0; gt_boxes.len()];
    let mut out = assign_targets(anchors, gt_boxes, &classes, fg, bg, coder);
    for (j, g) in gt_boxes.iter().enumerate() {
        let best = anchors.iter().map(|a| a.iou(g)).fold(0.0, f64::max);
        if best <= 0.0 {
            continue;
        }
        for (i, a) in anchors.iter().enumerate() {
            if a.iou(g) == best && !matches!(out[i].assignment, Assignment::Foreground { .. }) {
                out[i] = RoiTarget {
                    assignment: Assignment::Foreground { gt: j, class_id: 0 },
                    max_iou: best,
                    deltas: coder.encode(g, a),
                };
            }
        }
    }
    out
}
