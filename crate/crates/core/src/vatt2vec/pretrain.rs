use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::AttributeHead;
use super::schema::AttributeSchema;
use super::select::select_group_argmax;
use crate::error::{Error, Result};
use crate::perceptron::EncoderState;
use crate::tensor::{Adam, ParamStore, Sgd, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// Momentum SGD with L2 weight decay.
    Sgd,
    /// Adam with decoupled weight decay; `momentum` is ignored.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub adam_beta2: f64,
    pub weight_decay: f64,
    /// Cosine-anneal the learning rate to zero over the run.
    pub cosine_decay: bool,
    pub seed: u64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            optimizer: OptimizerKind::Adam,
            epochs: 20,
            batch_size: 4,
            lr: 0.01,
            momentum: 0.9,
            adam_beta2: 0.99,
            weight_decay: 0.0,
            cosine_decay: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PretrainReport {
    /// Mean per-tag BCE over the whole set before the first update.
    pub initial_loss: f64,
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Per-group top-1 accuracy on the training crops after the last epoch.
    pub group_accuracy: Vec<f64>,
    pub frozen_hash_before: String,
    pub frozen_hash_after: String,
}

impl PretrainReport {
    pub fn min_group_accuracy(&self) -> f64 {
        self.group_accuracy.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Multi-hot `[N, tags]` targets from per-group flat tag indices.
pub fn attribute_targets(schema: &AttributeSchema, labels: &[Vec<usize>]) -> Result<Vec<f64>> {
    let tags = schema.num_tags();
    let mut y = vec![0.0; labels.len() * tags];
    for (i, l) in labels.iter().enumerate() {
        schema.validate_labels(l)?;
        for &t in l {
            y[i * tags + t] = 1.0;
        }
    }
    Ok(y)
}

/// Fraction of rows whose group argmax equals the label, per group.
pub fn group_accuracy(probs: &[f64], labels: &[Vec<usize>], schema: &AttributeSchema) -> Vec<f64> {
    let tags = schema.num_tags();
    let mut hits = vec![0usize; schema.num_groups()];
    for (row, l) in probs.chunks(tags).zip(labels) {
        for (g, (p, t)) in select_group_argmax(row, schema).into_iter().zip(l).enumerate() {
            hits[g] += usize::from(p == *t);
        }
    }
    hits.into_iter().map(|h| h as f64 / labels.len().max(1) as f64).collect()
}

/// Trains only the parameters under `head_prefix` with per-tag BCE. Crops go
/// through the encoder once with every parameter frozen; trainable flags are
/// restored afterwards.
#[allow(clippy::too_many_arguments)]
pub fn pretrain_attribute_head(
    store: &mut ParamStore,
    encoder: &EncoderState,
    head: &AttributeHead,
    head_prefix: &str,
    crops: &Tensor,
    text: &Tensor,
    labels: &[Vec<usize>],
    schema: &AttributeSchema,
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    if crops.ndim() != 4 || crops.shape()[0] != labels.len() {
        return Err(Error::InvalidArgument(format!(
            "{} labels for crop batch of shape {:?}",
            labels.len(),
            crops.shape()
        )));
    }
    if cfg.batch_size == 0 || cfg.lr <= 0.0 {
        return Err(Error::Config("pretraining needs batch_size > 0 and lr > 0".into()));
    }
    let targets = attribute_targets(schema, labels)?;
    let flags = store.trainable_flags();
    if store.train_only_prefix(head_prefix) == 0 {
        store.restore_trainable_flags(&flags);
        return Err(Error::MissingParam(format!("{head_prefix}*")));
    }
    let result = run(store, encoder, head, crops, text, labels, &targets, schema, cfg);
    store.restore_trainable_flags(&flags);
    result
}

enum Optimizer {
    Sgd(Sgd),
    Adam(Adam),
}

#[allow(clippy::too_many_arguments)]
fn run(
    store: &mut ParamStore,
    encoder: &EncoderState,
    head: &AttributeHead,
    crops: &Tensor,
    text: &Tensor,
    labels: &[Vec<usize>],
    targets: &[f64],
    schema: &AttributeSchema,
    cfg: &PretrainConfig,
) -> Result<PretrainReport> {
    let frozen_hash_before = store.frozen_hash();
    let tokens = encoder.encode(store, crops, false)?.tokens.detach();
    let (n, tags) = (labels.len(), schema.num_tags());
    let initial_loss = head.forward(store, &tokens, text)?.logits.bce_with_logits(targets)?.item();

    let mut opt = match cfg.optimizer {
        OptimizerKind::Sgd => Optimizer::Sgd(Sgd::new(cfg.lr, cfg.momentum, cfg.weight_decay)),
        OptimizerKind::Adam => {
            let mut a = Adam::new(cfg.lr, cfg.weight_decay);
            a.beta2 = cfg.adam_beta2;
            Optimizer::Adam(a)
        }
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let total_steps = cfg.epochs * n.div_ceil(cfg.batch_size);
    let mut step = 0;
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for batch in order.chunks(cfg.batch_size) {
            let x = tokens.index_select(batch)?;
            let y: Vec<f64> = batch.iter().flat_map(|&i| targets[i * tags..(i + 1) * tags].iter().copied()).collect();
            store.zero_grads();
            let loss = head.forward(store, &x, text)?.logits.bce_with_logits(&y)?;
            let value = loss.item();
            if !value.is_finite() {
                return Err(Error::NonFinite { context: "attribute pretraining loss".into(), index: 0, value });
            }
            loss.backward()?;
            store.fill_missing_grads();
            let lr = if cfg.cosine_decay {
                0.5 * cfg.lr * (1.0 + (std::f64::consts::PI * step as f64 / total_steps as f64).cos())
            } else {
                cfg.lr
            };
            match &mut opt {
                Optimizer::Sgd(o) => o.step_with_lr(store, lr)?,
                Optimizer::Adam(o) => {
                    o.lr = lr;
                    o.step(store)?
                }
            };
            step += 1;
            total += value;
            batches += 1;
        }
        epoch_losses.push(total / batches as f64);
    }
    store.zero_grads();
    let probs = head.forward(store, &tokens, text)?.probs.to_vec();
    Ok(PretrainReport {
        initial_loss,
        epoch_losses,
        group_accuracy: group_accuracy(&probs, labels, schema),
        frozen_hash_before,
        frozen_hash_after: store.frozen_hash(),
    })
}
