use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sha2::{Digest, Sha256};

use super::Tensor;
use crate::error::{Error, Result};

/// Named model parameter. Frozen (`trainable == false`) parameters are never
/// touched by the optimizer.
#[derive(Debug, Clone)]
pub struct Parameter {
    pub name: String,
    pub value: Tensor,
    pub trainable: bool,
}

/// Handle into a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Ordered collection of uniquely named parameters.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, data: Vec<f64>, shape: &[usize], trainable: bool) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(Error::DuplicateParam(name.to_string()));
        }
        let value = Tensor::leaf(data, shape)?;
        let id = self.params.len();
        self.params.push(Parameter {
            name: name.to_string(),
            value,
            trainable,
        });
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn param(&self, id: ParamId) -> &Parameter {
        &self.params[id.0]
    }

    pub fn get(&self, name: &str) -> Option<&Parameter> {
        self.index.get(name).map(|&i| &self.params[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    /// Tensor for use in a forward pass. Frozen parameters come back
    /// detached so no graph is recorded through them.
    pub fn tensor(&self, id: ParamId) -> Tensor {
        let p = &self.params[id.0];
        if p.trainable {
            p.value.clone()
        } else {
            p.value.detach()
        }
    }

    /// Replaces a parameter's value with a fresh leaf holding `data`.
    pub fn set_data(&mut self, id: ParamId, data: Vec<f64>) -> Result<()> {
        let p = &mut self.params[id.0];
        if data.len() != p.value.numel() {
            return Err(Error::ParamShape {
                name: p.name.clone(),
                expected: p.value.shape().to_vec(),
                found: vec![data.len()],
            });
        }
        p.value = Tensor::leaf(data, p.value.shape())?;
        Ok(())
    }

    /// Loads `data` into the named parameter after checking the shape.
    pub fn load(&mut self, name: &str, shape: &[usize], data: Vec<f64>) -> Result<()> {
        let id = self.id(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let expected = self.params[id.0].value.shape().to_vec();
        if expected != shape {
            return Err(Error::ParamShape {
                name: name.to_string(),
                expected,
                found: shape.to_vec(),
            });
        }
        self.set_data(id, data)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.params[id.0].trainable = trainable;
    }

    /// Sets the trainable flag on every parameter whose name starts with `prefix`.
    pub fn set_trainable_prefix(&mut self, prefix: &str, trainable: bool) -> usize {
        let mut n = 0;
        for p in self.params.iter_mut().filter(|p| p.name.starts_with(prefix)) {
            p.trainable = trainable;
            n += 1;
        }
        n
    }

    pub fn trainable_flags(&self) -> Vec<bool> {
        self.params.iter().map(|p| p.trainable).collect()
    }

    /// Restores flags captured by [`ParamStore::trainable_flags`]; parameters
    /// inserted afterwards keep their own flag.
    pub fn restore_trainable_flags(&mut self, flags: &[bool]) {
        for (p, &t) in self.params.iter_mut().zip(flags) {
            p.trainable = t;
        }
    }

    /// Makes exactly the parameters under `prefix` trainable.
    pub fn train_only_prefix(&mut self, prefix: &str) -> usize {
        self.params.iter_mut().for_each(|p| p.trainable = false);
        self.set_trainable_prefix(prefix, true)
    }

    pub fn zero_grads(&self) {
        self.params.iter().for_each(|p| p.value.zero_grad());
    }

    /// Gives every trainable parameter the backward pass did not reach an
    /// all-zero gradient. Returns the names that were filled.
    pub fn fill_missing_grads(&self) -> Vec<String> {
        let mut filled = Vec::new();
        for p in self.params.iter().filter(|p| p.trainable) {
            if p.value.grad().is_none() {
                p.value.set_grad(Some(vec![0.0; p.value.numel()]));
                filled.push(p.name.clone());
            }
        }
        filled
    }

    pub(crate) fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    /// SHA-256 over names, shapes and bit patterns of the selected parameters.
    pub fn hash_where(&self, pick: impl Fn(&Parameter) -> bool) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| pick(p)) {
            h.update(p.name.as_bytes());
            h.update([0u8]);
            for d in p.value.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in p.value.data() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    /// Hash of all frozen parameters; the training frozen-parameter audit compares these.
    pub fn frozen_hash(&self) -> String {
        self.hash_where(|p| !p.trainable)
    }

    pub fn num_values(&self, pick: impl Fn(&Parameter) -> bool) -> usize {
        self.params.iter().filter(|p| pick(p)).map(|p| p.value.numel()).sum()
    }
}

/// Normal(0, std) truncated to ±2·std by resampling.
pub fn trunc_normal<R: Rng + ?Sized>(rng: &mut R, n: usize, std: f64) -> Vec<f64> {
    (0..n)
        .map(|_| loop {
            let z: f64 = StandardNormal.sample(rng);
            if z.abs() <= 2.0 {
                break z * std;
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn names_are_unique() {
        let mut s = ParamStore::new();
        s.insert("a.w", vec![0.0; 2], &[2], true).unwrap();
        assert!(matches!(s.insert("a.w", vec![0.0; 2], &[2], true), Err(Error::DuplicateParam(_))));
    }

    #[test]
    fn frozen_tensor_is_detached() {
        let mut s = ParamStore::new();
        let a = s.insert("a", vec![1.0], &[1], true).unwrap();
        let b = s.insert("b", vec![1.0], &[1], false).unwrap();
        assert!(s.tensor(a).requires_grad());
        assert!(!s.tensor(b).requires_grad());
        assert!(s.param(b).value.requires_grad());
    }

    #[test]
    fn load_checks_shape() {
        let mut s = ParamStore::new();
        s.insert("x", vec![0.0; 6], &[2, 3], true).unwrap();
        let err = s.load("x", &[3, 2], vec![0.0; 6]).unwrap_err();
        assert!(err.to_string().contains("`x`"));
        assert!(matches!(s.load("y", &[1], vec![0.0]), Err(Error::MissingParam(_))));
    }

    #[test]
    fn trunc_normal_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let v = trunc_normal(&mut rng, 10_000, 0.02);
        assert!(v.iter().all(|x| x.abs() <= 0.04));
        let mean: f64 = v.iter().sum::<f64>() / v.len() as f64;
        assert!(mean.abs() < 1e-3);
    }
}
