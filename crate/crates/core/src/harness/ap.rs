//! COCO-style average precision with 101-point interpolation.

use serde::{Deserialize, Serialize};

use crate::det::{BBox, Detection};

/// `0.50, 0.55, …, 0.95`.
pub fn coco_thresholds() -> Vec<f64> {
    (0..10).map(|i| 0.5 + 0.05 * i as f64).collect()
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct GroundTruth {
    pub boxes: Vec<BBox>,
    pub class_ids: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ClassReport {
    pub class_id: usize,
    pub num_gt: usize,
    pub num_detections: usize,
    /// One AP per IoU threshold.
    pub ap_per_threshold: Vec<f64>,
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
    pub tp_per_threshold: Vec<usize>,
    pub fp_per_threshold: Vec<usize>,
    /// Interpolated precision at recall 0, 0.01, …, 1 for the first threshold.
    pub pr_curve: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub thresholds: Vec<f64>,
    pub per_class: Vec<ClassReport>,
    /// Means over classes that have ground truth or detections.
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

/// Per-detection TP flags after greedy score-ordered matching inside each
/// image. Each detection takes the unmatched GT with the highest IoU
/// (lowest index on ties) if that IoU reaches `threshold`.
fn match_class(dets: &[(usize, BBox, f64)], gts: &[Vec<BBox>], threshold: f64) -> Vec<bool> {
    let mut matched: Vec<Vec<bool>> = gts.iter().map(|g| vec![false; g.len()]).collect();
    dets.iter()
        .map(|(img, b, _)| {
            let mut best: Option<(usize, f64)> = None;
            for (j, g) in gts[*img].iter().enumerate() {
                if matched[*img][j] {
                    continue;
                }
                let iou = b.iou(g);
                if iou >= threshold && best.is_none_or(|(_, v)| iou > v) {
                    best = Some((j, iou));
                }
            }
            match best {
                Some((j, _)) => {
                    matched[*img][j] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// 101-point interpolated precision from TP flags in score order.
fn interpolated_precision(tp: &[bool], num_gt: usize) -> Vec<f64> {
    let n = tp.len();
    let mut precision = Vec::with_capacity(n);
    let mut recall = Vec::with_capacity(n);
    let mut ctp = 0usize;
    for (i, &t) in tp.iter().enumerate() {
        ctp += usize::from(t);
        precision.push(ctp as f64 / (i + 1) as f64);
        recall.push(ctp as f64 / num_gt as f64);
    }
    for i in (0..n.saturating_sub(1)).rev() {
        precision[i] = precision[i].max(precision[i + 1]);
    }
    (0..=100)
        .map(|k| {
            let r = k as f64 / 100.0;
            let idx = recall.partition_point(|&x| x < r - 1e-12);
            precision.get(idx).copied().unwrap_or(0.0)
        })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn index_of(thresholds: &[f64], t: f64) -> Option<usize> {
    thresholds.iter().position(|&x| (x - t).abs() < 1e-9)
}

/// Evaluates `predictions[i]` against `ground_truth[i]` per class.
/// A class with neither GT nor detections scores 1.0; with detections but no
/// GT it scores 0. Means run over classes `0..num_classes` that occur.
pub fn evaluate_ap(predictions: &[Vec<Detection>], ground_truth: &[GroundTruth], num_classes: usize, thresholds: &[f64]) -> EvalReport {
    assert_eq!(predictions.len(), ground_truth.len(), "one prediction list per image");
    let mut per_class = Vec::with_capacity(num_classes);
    for c in 0..num_classes {
        let gts: Vec<Vec<BBox>> = ground_truth
            .iter()
            .map(|g| g.boxes.iter().zip(&g.class_ids).filter(|(_, &k)| k == c).map(|(b, _)| *b).collect())
            .collect();
        let num_gt: usize = gts.iter().map(Vec::len).sum();
        let mut dets: Vec<(usize, BBox, f64)> = predictions
            .iter()
            .enumerate()
            .flat_map(|(i, p)| p.iter().filter(|d| d.class_id == c).map(move |d| (i, d.bbox, d.score)))
            .collect();
        dets.sort_by(|a, b| b.2.total_cmp(&a.2));
        let mut aps = Vec::with_capacity(thresholds.len());
        let mut tps = Vec::new();
        let mut fps = Vec::new();
        let mut pr_curve = Vec::new();
        for (ti, &t) in thresholds.iter().enumerate() {
            let tp = match_class(&dets, &gts, t);
            let ntp = tp.iter().filter(|&&x| x).count();
            tps.push(ntp);
            fps.push(tp.len() - ntp);
            let (ap, curve) = match (num_gt, dets.len()) {
                (0, 0) => (1.0, vec![1.0; 101]),
                (0, _) => (0.0, vec![0.0; 101]),
                _ => {
                    let curve = interpolated_precision(&tp, num_gt);
                    (mean(&curve), curve)
                }
            };
            if ti == 0 {
                pr_curve = curve;
            }
            aps.push(ap);
        }
        let pick = |t: f64| index_of(thresholds, t).map_or(f64::NAN, |i| aps[i]);
        per_class.push(ClassReport {
            class_id: c,
            num_gt,
            num_detections: dets.len(),
            ap: mean(&aps),
            ap50: pick(0.5),
            ap75: pick(0.75),
            ap_per_threshold: aps,
            tp_per_threshold: tps,
            fp_per_threshold: fps,
            pr_curve,
        });
    }
    let present: Vec<&ClassReport> = per_class.iter().filter(|c| c.num_gt > 0 || c.num_detections > 0).collect();
    let summary = |f: fn(&ClassReport) -> f64| -> f64 {
        if present.is_empty() {
            1.0
        } else {
            present.iter().map(|c| f(c)).sum::<f64>() / present.len() as f64
        }
    };
    EvalReport {
        thresholds: thresholds.to_vec(),
        ap: summary(|c| c.ap),
        ap50: summary(|c| c.ap50),
        ap75: summary(|c| c.ap75),
        per_class,
    }
}

#[cfg(test)]
pub(crate) mod oracle {
    use super::*;

    /// Enumerates every score-ordered prefix, computes its precision and
    /// recall from scratch, and reads interpolated precision at each recall
    /// level as the max precision over prefixes reaching that recall.
    pub fn exhaustive_ap(dets: &[Detection], gts: &[BBox], threshold: f64) -> f64 {
        if gts.is_empty() {
            return if dets.is_empty() { 1.0 } else { 0.0 };
        }
        let mut order: Vec<usize> = (0..dets.len()).collect();
        order.sort_by(|&a, &b| dets[b].score.total_cmp(&dets[a].score));
        let mut points = Vec::new();
        for k in 1..=order.len() {
            let mut used = vec![false; gts.len()];
            let mut tp = 0;
            for &d in &order[..k] {
                let mut best = None;
                let mut best_iou = -1.0;
                for (j, g) in gts.iter().enumerate() {
                    let iou = dets[d].bbox.iou(g);
                    if !used[j] && iou >= threshold && iou > best_iou {
                        best = Some(j);
                        best_iou = iou;
                    }
                }
                if let Some(j) = best {
                    used[j] = true;
                    tp += 1;
                }
            }
            points.push((tp as f64 / k as f64, tp as f64 / gts.len() as f64));
        }
        let mut total = 0.0;
        for r in 0..=100 {
            let level = r as f64 / 100.0;
            let p = points
                .iter()
                .filter(|(_, rec)| *rec >= level - 1e-12)
                .map(|(p, _)| *p)
                .fold(0.0, f64::max);
            total += p;
        }
        total / 101.0
    }
}
