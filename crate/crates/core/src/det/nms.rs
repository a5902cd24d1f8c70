use std::cmp::Ordering;

use super::boxes::{BBox, Detection};

/// Indices sorted by descending score; equal scores keep input order.
pub(crate) fn order_by_score(scores: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    idx
}

/// Greedy class-agnostic NMS. Returns kept indices in descending score
/// order; a box is dropped when its IoU with a kept box is `≥ iou_threshold`.
pub fn nms_indices(boxes: &[BBox], scores: &[f64], iou_threshold: f64) -> Vec<usize> {
    assert_eq!(boxes.len(), scores.len());
    let order = order_by_score(scores);
    let mut keep: Vec<usize> = Vec::new();
    for i in order {
        if keep.iter().all(|&k| boxes[k].iou(&boxes[i]) < iou_threshold) {
            keep.push(i);
        }
    }
    keep
}

/// Class-wise NMS. The result is a subset of `detections`, sorted by
/// descending score.
pub fn nms(detections: &[Detection], iou_threshold: f64) -> Vec<Detection> {
    let mut classes: Vec<usize> = detections.iter().map(|d| d.class_id).collect();
    classes.sort_unstable();
    classes.dedup();
    let mut kept: Vec<usize> = Vec::new();
    for c in classes {
        let members: Vec<usize> = (0..detections.len()).filter(|&i| detections[i].class_id == c).collect();
        let boxes: Vec<BBox> = members.iter().map(|&i| detections[i].bbox).collect();
        let scores: Vec<f64> = members.iter().map(|&i| detections[i].score).collect();
        kept.extend(nms_indices(&boxes, &scores, iou_threshold).into_iter().map(|j| members[j]));
    }
    let scores: Vec<f64> = kept.iter().map(|&i| detections[i].score).collect();
    let mut order: Vec<usize> = (0..kept.len()).collect();
    // Ties resolved by original position for a stable result.
    order.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(Ordering::Equal)
            .then(kept[a].cmp(&kept[b]))
    });
    order.into_iter().map(|j| detections[kept[j]]).collect()
}
