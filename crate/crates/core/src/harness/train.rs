//! Joint training loop with per-step JSON logs, periodic checkpoints, NaN
//! abort and the frozen-parameter audit.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{restore_into, save_checkpoint, TrainState};
use super::model::{LossBreakdown, VfmDet};
use super::synth::Sample;
use crate::error::{Error, Result};
use crate::tensor::Sgd;

/// One line of the training log.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub lr: f64,
    #[serde(flatten)]
    pub losses: LossBreakdown,
    pub seconds: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Checkpoints and `train_log.jsonl` go here when set.
    pub out_dir: Option<PathBuf>,
    pub resume: Option<PathBuf>,
    /// Stop after this global step even if the schedule continues.
    pub stop_at: Option<usize>,
    /// Echo each step to stderr.
    pub verbose: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    pub logs: Vec<StepLog>,
    pub total_steps: usize,
    pub frozen_hash: String,
    /// Final checkpoint, when an output directory was given.
    pub checkpoint: Option<PathBuf>,
}

impl TrainReport {
    pub fn first_loss(&self) -> f64 {
        self.logs.first().map_or(f64::NAN, |l| l.losses.total)
    }

    /// Mean total loss over the last `n` logged steps.
    pub fn tail_loss(&self, n: usize) -> f64 {
        let tail = &self.logs[self.logs.len().saturating_sub(n)..];
        tail.iter().map(|l| l.losses.total).sum::<f64>() / tail.len() as f64
    }
}

/// Optimizer steps implied by the schedule.
pub fn schedule_steps(model: &VfmDet, num_samples: usize) -> usize {
    let t = &model.config.train;
    let per_epoch = num_samples.div_ceil(t.batch_size);
    let by_epochs = per_epoch * t.epochs;
    if t.max_steps > 0 {
        t.max_steps.min(by_epochs.max(t.max_steps))
    } else {
        by_epochs
    }
}

fn learning_rate(model: &VfmDet, step: usize, total: usize) -> f64 {
    let t = &model.config.train;
    let mut lr = t.lr;
    if step < t.warmup_steps {
        lr *= 0.1 + 0.9 * step as f64 / t.warmup_steps as f64;
    }
    for &f in &t.lr_drops {
        if step as f64 >= f * total as f64 {
            lr *= 0.1;
        }
    }
    lr
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1 << 40) + epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    order
}

fn step_rng(seed: u64, step: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(step as u64);
    rng
}

fn format_norms(norms: &[(String, f64)]) -> String {
    let mut sorted: Vec<&(String, f64)> = norms.iter().collect();
    sorted.sort_by(|a, b| b.1.total_cmp(&a.1));
    sorted.iter().take(8).map(|(n, v)| format!("{n}={v:.3e}")).collect::<Vec<_>>().join(", ")
}

/// Runs the configured schedule over `samples`. Steps are a pure function of
/// `(config, samples, step)`, so a resumed run matches an uninterrupted one.
pub fn train(model: &mut VfmDet, samples: &[Sample], opts: &TrainOptions) -> Result<TrainReport> {
    if samples.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let t = model.config.train.clone();
    let seed = model.config.seed;
    let total = schedule_steps(model, samples.len());
    let per_epoch = samples.len().div_ceil(t.batch_size);

    let mut opt = Sgd::new(t.lr, t.momentum, t.weight_decay);
    let mut start = 0;
    if let Some(path) = &opts.resume {
        let state = restore_into(model, path)?;
        if state.rng_seed != seed {
            return Err(Error::Config(format!("checkpoint seed {} differs from config seed {seed}", state.rng_seed)));
        }
        opt.set_buffers(state.momentum);
        start = state.step;
    }
    let frozen_hash = model.store.frozen_hash();

    let mut log_file = match &opts.out_dir {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join("config.toml"), model.config.to_toml())?;
            let f = std::fs::OpenOptions::new().create(true).append(start > 0).write(true).truncate(start == 0).open(dir.join("train_log.jsonl"))?;
            Some(std::io::BufWriter::new(f))
        }
        None => None,
    };
    let stop = opts.stop_at.unwrap_or(total).min(total);
    let mut logs = Vec::new();
    let mut last_norms: Vec<(String, f64)> = Vec::new();
    let mut order = Vec::new();
    let mut order_epoch = usize::MAX;
    for step in start..stop {
        let timer = Instant::now();
        let epoch = step / per_epoch;
        if epoch != order_epoch {
            order = epoch_order(seed, epoch, samples.len());
            order_epoch = epoch;
        }
        let pos = step % per_epoch;
        let batch = &order[pos * t.batch_size..((pos + 1) * t.batch_size).min(samples.len())];
        let mut rng = step_rng(seed, step);
        model.store.zero_grads();
        let mut sum = LossBreakdown::default();
        let k = 1.0 / batch.len() as f64;
        for &i in batch {
            let (loss, parts) = model.forward_train(&samples[i], &mut rng)?;
            if !parts.total.is_finite() {
                return Err(Error::Diverged {
                    step,
                    update_norms: format_norms(&last_norms),
                });
            }
            loss.scale(k).backward()?;
            sum = sum.add(&parts.scaled(k));
        }
        model.store.fill_missing_grads();
        let lr = learning_rate(model, step, total);
        last_norms = opt.step_with_lr(&mut model.store, lr)?;
        model.store.zero_grads();
        let entry = StepLog {
            step,
            epoch,
            lr,
            losses: sum,
            seconds: timer.elapsed().as_secs_f64(),
        };
        if let Some(f) = log_file.as_mut() {
            writeln!(f, "{}", serde_json::to_string(&entry)?)?;
        }
        if opts.verbose {
            eprintln!(
                "step {step:>5} epoch {epoch:>3} lr {lr:.4} total {:.4} rpn {:.4}/{:.4} cls {:.4} reg {:.4} va {:.4} ({:.2}s)",
                sum.total, sum.rpn_cls, sum.rpn_reg, sum.cls, sum.reg, sum.va, entry.seconds
            );
        }
        logs.push(entry);
        if let (Some(dir), true) = (&opts.out_dir, t.checkpoint_every > 0 && (step + 1) % t.checkpoint_every == 0) {
            save_checkpoint(model, &state(step + 1, seed, &opt), &dir.join(format!("checkpoint_{:06}.bin", step + 1)))?;
        }
    }
    if let Some(f) = log_file.as_mut() {
        f.flush()?;
    }
    let after = model.store.frozen_hash();
    if after != frozen_hash {
        return Err(Error::Integrity {
            path: PathBuf::from("<frozen parameters>"),
            message: format!("frozen-parameter hash changed from {frozen_hash} to {after}"),
        });
    }
    let checkpoint = match &opts.out_dir {
        Some(dir) => {
            let p = dir.join("checkpoint_final.bin");
            save_checkpoint(model, &state(stop, seed, &opt), &p)?;
            Some(p)
        }
        None => None,
    };
    Ok(TrainReport {
        logs,
        total_steps: total,
        frozen_hash,
        checkpoint,
    })
}

fn state(step: usize, seed: u64, opt: &Sgd) -> TrainState {
    TrainState {
        step,
        rng_seed: seed,
        momentum: opt.buffers().clone(),
    }
}

/// Reads a `train_log.jsonl`.
pub fn read_log(path: &Path) -> Result<Vec<StepLog>> {
    std::fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
