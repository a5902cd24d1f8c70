use std::collections::BTreeMap;

use super::ParamStore;
use crate::error::{Error, Result};

/// Momentum SGD with L2 weight decay:
/// `d = g + wd·p; buf = μ·buf + d; p -= lr·buf`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: BTreeMap<String, Vec<f64>>,
}

impl Default for Sgd {
    fn default() -> Self {
        Self::new(0.02, 0.9, 1e-4)
    }
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        assert!((0.0..1.0).contains(&momentum), "momentum must lie in [0, 1)");
        assert!(weight_decay >= 0.0, "weight decay must be nonnegative");
        Sgd {
            lr,
            momentum,
            weight_decay,
            buffers: BTreeMap::new(),
        }
    }

    /// One update with the configured learning rate.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<Vec<(String, f64)>> {
        self.step_with_lr(store, self.lr)
    }

    /// One update of every trainable parameter. Returns the L2 norm of each
    /// applied update. Gradients are left in place; the caller zeroes them.
    pub fn step_with_lr(&mut self, store: &mut ParamStore, lr: f64) -> Result<Vec<(String, f64)>> {
        for p in store.iter().filter(|p| p.trainable) {
            if p.value.grad().is_none() {
                return Err(Error::MissingGrad(p.name.clone()));
            }
        }
        let mut norms = Vec::new();
        for p in store.params_mut().iter_mut().filter(|p| p.trainable) {
            let grad = p.value.grad().expect("checked above");
            let data = p.value.data();
            let mut d: Vec<f64> = grad.iter().zip(data).map(|(g, w)| g + self.weight_decay * w).collect();
            if self.momentum > 0.0 {
                match self.buffers.get_mut(&p.name) {
                    Some(buf) => {
                        for (b, di) in buf.iter_mut().zip(&d) {
                            *b = self.momentum * *b + di;
                        }
                        d.copy_from_slice(buf);
                    }
                    None => {
                        self.buffers.insert(p.name.clone(), d.clone());
                    }
                }
            }
            let mut sq = 0.0;
            let updated: Vec<f64> = data
                .iter()
                .zip(&d)
                .map(|(w, di)| {
                    sq += (lr * di) * (lr * di);
                    w - lr * di
                })
                .collect();
            norms.push((p.name.clone(), sq.sqrt()));
            let shape = p.value.shape().to_vec();
            p.value = crate::tensor::Tensor::leaf(updated, &shape)?;
        }
        Ok(norms)
    }

    pub fn buffers(&self) -> &BTreeMap<String, Vec<f64>> {
        &self.buffers
    }

    pub fn set_buffers(&mut self, buffers: BTreeMap<String, Vec<f64>>) {
        self.buffers = buffers;
    }
}

/// Adam with decoupled weight decay:
/// `m = β1·m + (1−β1)·g; v = β2·v + (1−β2)·g²;
/// p -= lr·(m̂/(√v̂ + ε) + wd·p)` with bias-corrected `m̂, v̂`.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    steps: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        assert!(lr > 0.0, "learning rate must be positive");
        assert!(weight_decay >= 0.0, "weight decay must be nonnegative");
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            steps: 0,
            moments: BTreeMap::new(),
        }
    }

    /// One update of every trainable parameter; returns per-parameter update norms.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<Vec<(String, f64)>> {
        for p in store.iter().filter(|p| p.trainable) {
            if p.value.grad().is_none() {
                return Err(Error::MissingGrad(p.name.clone()));
            }
        }
        self.steps += 1;
        let c1 = 1.0 - self.beta1.powi(self.steps as i32);
        let c2 = 1.0 - self.beta2.powi(self.steps as i32);
        let mut norms = Vec::new();
        for p in store.params_mut().iter_mut().filter(|p| p.trainable) {
            let grad = p.value.grad().expect("checked above");
            let data = p.value.data();
            let (m, v) = self
                .moments
                .entry(p.name.clone())
                .or_insert_with(|| (vec![0.0; data.len()], vec![0.0; data.len()]));
            let mut sq = 0.0;
            let updated: Vec<f64> = data
                .iter()
                .zip(grad.iter())
                .zip(m.iter_mut().zip(v.iter_mut()))
                .map(|((w, g), (mi, vi))| {
                    *mi = self.beta1 * *mi + (1.0 - self.beta1) * g;
                    *vi = self.beta2 * *vi + (1.0 - self.beta2) * g * g;
                    let u = self.lr * ((*mi / c1) / ((*vi / c2).sqrt() + self.eps) + self.weight_decay * w);
                    sq += u * u;
                    w - u
                })
                .collect();
            norms.push((p.name.clone(), sq.sqrt()));
            let shape = p.value.shape().to_vec();
            p.value = crate::tensor::Tensor::leaf(updated, &shape)?;
        }
        Ok(norms)
    }
}
