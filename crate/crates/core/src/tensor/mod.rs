//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Tensor`] is an immutable, reference-counted value. Operations whose
//! inputs require gradients record a graph node holding the parents and a
//! vector-Jacobian closure; [`Tensor::backward`] replays those closures in
//! reverse topological order and accumulates into the leaves.

mod gemm;
pub mod grad_check;
pub mod loss;
pub mod ops;
pub mod optim;
pub mod param;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub use grad_check::finite_difference_check;
pub use optim::{Adam, Sgd};
pub use param::{ParamId, ParamStore, Parameter};

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) type BackwardFn = Box<dyn Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync>;

struct GraphNode {
    op: &'static str,
    parents: Vec<Tensor>,
    backward: BackwardFn,
}

struct Inner {
    id: u64,
    shape: Vec<usize>,
    data: Arc<[f64]>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<f64>>>,
    node: Option<GraphNode>,
}

// Long graphs would otherwise be torn down recursively through `parents`.
impl Drop for Inner {
    fn drop(&mut self) {
        let Some(node) = self.node.take() else { return };
        let GraphNode { parents, backward, .. } = node;
        drop(backward);
        let mut stack = parents;
        while let Some(t) = stack.pop() {
            if let Ok(mut inner) = Arc::try_unwrap(t.0) {
                if let Some(GraphNode { parents, backward, .. }) = inner.node.take() {
                    drop(backward);
                    stack.extend(parents);
                }
            }
        }
    }
}

/// N-dimensional row-major tensor with optional gradient tracking.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad);
        if let Some(node) = &self.0.node {
            s.field("op", &node.op);
        }
        if self.numel() <= 16 {
            s.field("data", &&self.0.data[..]);
        }
        s.finish()
    }
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl Tensor {
    fn build(shape: Vec<usize>, data: Arc<[f64]>, requires_grad: bool, node: Option<GraphNode>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor(Arc::new(Inner {
            id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
            shape,
            data,
            requires_grad,
            grad: Mutex::new(None),
            node,
        }))
    }

    /// Constant tensor (no gradient tracking).
    pub fn from_vec(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) || numel_of(shape) != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                len: data.len(),
            });
        }
        Ok(Self::build(shape.to_vec(), data.into(), false, None))
    }

    /// Leaf tensor whose gradient is accumulated by [`Tensor::backward`].
    pub fn leaf(data: Vec<f64>, shape: &[usize]) -> Result<Self> {
        let t = Self::from_vec(data, shape)?;
        Ok(Self::build(t.0.shape.clone(), t.0.data.clone(), true, None))
    }

    pub fn scalar(value: f64) -> Self {
        Self::build(vec![1], vec![value].into(), false, None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty() && !shape.contains(&0), "invalid shape {shape:?}");
        Self::build(shape.to_vec(), vec![value; numel_of(shape)].into(), false, None)
    }

    /// Result of a differentiable operation. A graph node is recorded only
    /// when at least one parent requires a gradient.
    pub(crate) fn from_op<F>(op: &'static str, shape: Vec<usize>, data: Vec<f64>, parents: Vec<Tensor>, backward: F) -> Self
    where
        F: Fn(&[f64]) -> Vec<Option<Vec<f64>>> + Send + Sync + 'static,
    {
        let requires_grad = parents.iter().any(Tensor::requires_grad);
        let node = requires_grad.then(|| GraphNode {
            op,
            parents,
            backward: Box::new(backward),
        });
        Self::build(shape, data.into(), requires_grad, node)
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn ndim(&self) -> usize {
        self.0.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub(crate) fn data_arc(&self) -> Arc<[f64]> {
        self.0.data.clone()
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.to_vec()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Name of the producing operation, if one was recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    pub fn id(&self) -> u64 {
        self.0.id
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape());
        self.0.data[0]
    }

    /// A constant sharing this tensor's storage, cut from any graph.
    pub fn detach(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.0.data.clone(), false, None)
    }

    /// A fresh leaf sharing this tensor's storage.
    pub fn detach_leaf(&self) -> Tensor {
        Self::build(self.0.shape.clone(), self.0.data.clone(), true, None)
    }

    pub fn grad(&self) -> Option<Vec<f64>> {
        self.0.grad.lock().expect("grad lock").clone()
    }

    pub fn set_grad(&self, grad: Option<Vec<f64>>) {
        if let Some(g) = &grad {
            assert_eq!(g.len(), self.numel(), "gradient length mismatch");
        }
        *self.0.grad.lock().expect("grad lock") = grad;
    }

    pub fn zero_grad(&self) {
        self.set_grad(None);
    }

    fn accumulate_grad(&self, g: &[f64]) {
        let mut slot = self.0.grad.lock().expect("grad lock");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Populates `grad` of every reachable leaf that requires a gradient
    /// with d(self)/d(leaf), adding to any gradient already present.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarRoot(self.shape().to_vec()));
        }
        if !self.requires_grad() {
            return Err(Error::NotInGraph);
        }

        let order = self.topo_order();
        let mut pending: HashMap<u64, Vec<f64>> = HashMap::new();
        pending.insert(self.id(), vec![1.0]);

        for t in order.iter().rev() {
            let Some(g) = pending.remove(&t.id()) else {
                continue;
            };
            match &t.0.node {
                None => t.accumulate_grad(&g),
                Some(node) => {
                    let parent_grads = (node.backward)(&g);
                    debug_assert_eq!(parent_grads.len(), node.parents.len(), "{}", node.op);
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel(), "{}", node.op);
                        match pending.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += b),
                            None => {
                                pending.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Post-order over the requires-grad subgraph rooted at `self`.
    fn topo_order(&self) -> Vec<Tensor> {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((t, next)) = stack.pop() {
            let parents = t.0.node.as_ref().map(|n| n.parents.as_slice()).unwrap_or(&[]);
            let mut i = next;
            while i < parents.len() && !parents[i].requires_grad() {
                i += 1;
            }
            if i < parents.len() {
                let p = parents[i].clone();
                stack.push((t, i + 1));
                if visited.insert(p.id()) {
                    stack.push((p, 0));
                }
            } else {
                order.push(t);
            }
        }
        order
    }
}
