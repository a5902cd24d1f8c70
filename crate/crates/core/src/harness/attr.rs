//! Attribute-head pretraining on synthetic crops and its weight file.

use std::path::Path;

use serde_json::json;

use super::model::{VfmDet, ATTR_HEAD_KIND, ATTR_HEAD_PREFIX};
use super::synth::attribute_crops;
use crate::container::Container;
use crate::error::Result;
use crate::vatt2vec::{pretrain_attribute_head, PretrainReport};

/// Pretrains `model.attr_head` in place on `config.pretrain.num_crops`
/// synthetic crops. The crop stream is seeded from the run seed.
pub fn pretrain_attributes(model: &mut VfmDet) -> Result<PretrainReport> {
    let side = model.encoder.config.image_side;
    let n = model.config.pretrain.num_crops;
    let (crops, labels) = attribute_crops(model.config.seed, n, side, &model.schema)?;
    let text = model.text_features().clone();
    let cfg = model.config.pretrain.optim.clone();
    pretrain_attribute_head(
        &mut model.store,
        &model.encoder,
        &model.attr_head,
        ATTR_HEAD_PREFIX,
        &crops,
        &text,
        &labels,
        &model.schema,
        &cfg,
    )
}

/// Writes the attribute head parameters. `model.attr_head_weights` in a later
/// config loads them back.
pub fn save_attribute_head(model: &VfmDet, report: &PretrainReport, path: &Path) -> Result<()> {
    let mut c = Container::new(
        ATTR_HEAD_KIND,
        json!({
            "schema_hash": model.schema.hash(),
            "embeddings_hash": model.embeddings.hash(),
            "group_accuracy": report.group_accuracy,
            "epoch_losses": report.epoch_losses,
        }),
    );
    c.push_params(&model.store, |n| n.starts_with(ATTR_HEAD_PREFIX));
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    c.write(path)
}
