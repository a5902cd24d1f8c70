//! Runs inference over a dataset and scores it.

use super::ap::{coco_thresholds, evaluate_ap, EvalReport};
use super::model::VfmDet;
use super::synth::Sample;
use crate::error::Result;

pub fn evaluate(model: &VfmDet, samples: &[Sample]) -> Result<EvalReport> {
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        preds.push(model.infer(&s.image, false, false)?.detections);
    }
    let gts: Vec<_> = samples.iter().map(Sample::ground_truth).collect();
    Ok(evaluate_ap(&preds, &gts, model.head.num_classes, &coco_thresholds()))
}
