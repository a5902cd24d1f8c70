//! Training checkpoints: every named parameter with its trainable flag,
//! optimizer momentum, the resolved config, schema/embedding hashes and the
//! position of the training RNG streams.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::Config;
use super::model::VfmDet;
use crate::container::Container;
use crate::error::{Error, Result};
use crate::vatt2vec::{get_text_embeddings, AttributeSchema};

pub const CHECKPOINT_KIND: &str = "checkpoint";
const PARAM_PREFIX: &str = "param/";
const MOMENTUM_PREFIX: &str = "momentum/";

/// Trainer position. Per-step randomness is derived from `(seed, step)`, so
/// these two numbers are the complete RNG state.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub step: usize,
    pub rng_seed: u64,
    pub momentum: BTreeMap<String, Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Meta {
    config: String,
    schema: String,
    schema_hash: String,
    embeddings_hash: String,
    step: usize,
    rng_seed: u64,
}

pub fn save_checkpoint(model: &VfmDet, state: &TrainState, path: &Path) -> Result<()> {
    let meta = Meta {
        config: model.config.to_toml(),
        schema: model.schema.to_text(),
        schema_hash: model.schema.hash(),
        embeddings_hash: model.embeddings.hash(),
        step: state.step,
        rng_seed: state.rng_seed,
    };
    let mut c = Container::new(CHECKPOINT_KIND, json!(meta));
    for p in model.store.iter() {
        c.push(&format!("{PARAM_PREFIX}{}", p.name), p.trainable, p.value.shape(), p.value.to_vec());
    }
    for (name, buf) in &state.momentum {
        c.push(&format!("{MOMENTUM_PREFIX}{name}"), false, &[buf.len()], buf.clone());
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    c.write(path)
}

fn read(path: &Path) -> Result<(Container, Meta)> {
    let c = Container::read_kind(path, CHECKPOINT_KIND)?;
    let meta: Meta = serde_json::from_value(c.metadata.clone()).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: format!("checkpoint metadata: {e}"),
    })?;
    Ok((c, meta))
}

/// Loads parameters and trainer state into an existing model. Every model
/// parameter must be present with the same shape; schema and embedding
/// hashes must match.
pub fn restore_into(model: &mut VfmDet, path: &Path) -> Result<TrainState> {
    let (c, meta) = read(path)?;
    for (what, found, expected) in [
        ("schema", &meta.schema_hash, model.schema.hash()),
        ("embedding table", &meta.embeddings_hash, model.embeddings.hash()),
    ] {
        if *found != expected {
            return Err(Error::Integrity {
                path: path.to_path_buf(),
                message: format!("{what} hash {found} does not match the model's {expected}"),
            });
        }
    }
    let names: Vec<String> = model.store.iter().map(|p| p.name.clone()).collect();
    for name in &names {
        let rec = c
            .get(&format!("{PARAM_PREFIX}{name}"))
            .ok_or_else(|| Error::MissingParam(name.clone()))?;
        model.store.load(name, &rec.shape, rec.data.clone())?;
        let id = model.store.id(name).expect("name from store");
        model.store.set_trainable(id, rec.trainable);
    }
    if let Some(extra) = c
        .arrays
        .iter()
        .filter_map(|a| a.name.strip_prefix(PARAM_PREFIX))
        .find(|n| model.store.id(n).is_none())
    {
        return Err(Error::Config(format!("checkpoint parameter `{extra}` does not exist in this model")));
    }
    let momentum = c
        .arrays
        .iter()
        .filter_map(|a| a.name.strip_prefix(MOMENTUM_PREFIX).map(|n| (n.to_string(), a.data.clone())))
        .collect();
    Ok(TrainState {
        step: meta.step,
        rng_seed: meta.rng_seed,
        momentum,
    })
}

/// Rebuilds the model from the stored config and schema, re-resolves the
/// embeddings, then restores all parameters.
pub fn load_checkpoint(path: &Path) -> Result<(VfmDet, TrainState)> {
    let (_, meta) = read(path)?;
    let config = Config::from_toml(&meta.config)?;
    let schema = AttributeSchema::parse(&meta.schema)?;
    let embeddings = get_text_embeddings(&schema, &config.embeddings)?;
    let mut model = VfmDet::new(&config, schema, embeddings)?;
    let state = restore_into(&mut model, path)?;
    Ok((model, state))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::synth::generate_samples;

    fn tiny() -> Config {
        let mut c = Config::default();
        c.data.num_images = 1;
        c.model.head_hidden = 16;
        c.model.rpn_hidden = 8;
        c.model.backbone_channels = vec![4, 8, 16];
        c
    }

    #[test]
    fn round_trip_reproduces_forward_bitwise() {
        let c = tiny();
        let mut model = VfmDet::from_config(&c).unwrap();
        let id = model.store.id("det_head.cls.bias").unwrap();
        model.store.set_data(id, vec![0.3, -0.1, 0.2, 0.05]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        let state = TrainState {
            step: 7,
            rng_seed: 3,
            momentum: [("det_head.cls.bias".to_string(), vec![1.0, 2.0, 3.0, 4.0])].into(),
        };
        save_checkpoint(&model, &state, &path).unwrap();
        let (loaded, st) = load_checkpoint(&path).unwrap();
        assert_eq!(st, state);
        let img = &generate_samples(0, &c.data, &model.schema).unwrap()[0].image;
        let a = model.infer(img, true, false).unwrap();
        let b = loaded.infer(img, true, false).unwrap();
        assert_eq!(a.detections, b.detections);
        assert_eq!(model.store.frozen_hash(), loaded.store.frozen_hash());
        assert_eq!(model.store.hash_where(|_| true), loaded.store.hash_where(|_| true));
    }

    #[test]
    fn corruption_and_shape_errors() {
        let c = tiny();
        let model = VfmDet::from_config(&c).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.bin");
        save_checkpoint(&model, &TrainState::default(), &path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&bad), Err(Error::Integrity { .. })));

        let mut k4 = tiny();
        k4.model.learnable_tokens = Some(4);
        let mut c8 = tiny();
        c8.model.learnable_tokens = Some(8);
        let k8_model = VfmDet::from_config(&c8).unwrap();
        let k8 = dir.path().join("k8.bin");
        save_checkpoint(&k8_model, &TrainState::default(), &k8).unwrap();
        let mut target = VfmDet::from_config(&k4).unwrap();
        match restore_into(&mut target, &k8) {
            Err(Error::ParamShape { name, .. }) => assert_eq!(name, "encoder.learnable_tokens"),
            other => panic!("expected a shape error, got {other:?}"),
        }
    }
}
