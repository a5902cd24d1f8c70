use rand::Rng;

use super::linear::Init;
use crate::error::{Error, Result};
use crate::tensor::{ParamId, ParamStore, Tensor};

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(x·Wz + h·Uz + bz)
/// r  = σ(x·Wr + h·Ur + br)
/// h̃  = tanh(x·Wh + (r ⊙ h)·Uh + bh)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Debug, Clone)]
pub struct GruCell {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// `[input, 3·hidden]`, gate order z, r, h̃.
    pub w_input: ParamId,
    /// `[hidden, 2·hidden]` for z and r.
    pub w_gates: ParamId,
    /// `[hidden, hidden]` for the candidate.
    pub w_candidate: ParamId,
    /// `[3·hidden]`.
    pub bias: ParamId,
}

/// Hidden states after each step; `states.last()` is the fused output.
#[derive(Debug, Clone)]
pub struct GruTrace {
    pub states: Vec<Tensor>,
}

impl GruTrace {
    pub fn last(&self) -> &Tensor {
        self.states.last().expect("non-empty trace")
    }
}

impl GruCell {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        init: Init,
        trainable: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let h = hidden_dim;
        Ok(GruCell {
            input_dim,
            hidden_dim,
            w_input: store.insert(
                &format!("{name}.w_input"),
                init.sample(rng, input_dim * 3 * h, input_dim),
                &[input_dim, 3 * h],
                trainable,
            )?,
            w_gates: store.insert(&format!("{name}.w_gates"), init.sample(rng, h * 2 * h, h), &[h, 2 * h], trainable)?,
            w_candidate: store.insert(&format!("{name}.w_candidate"), init.sample(rng, h * h, h), &[h, h], trainable)?,
            bias: store.insert(&format!("{name}.bias"), vec![0.0; 3 * h], &[3 * h], trainable)?,
        })
    }

    /// One step on `x: [n, input]`, `h: [n, hidden]`.
    pub fn step(&self, store: &ParamStore, x: &Tensor, h: &Tensor) -> Result<Tensor> {
        let hd = self.hidden_dim;
        if x.ndim() != 2 || x.shape()[1] != self.input_dim || h.shape() != [x.shape()[0], hd] {
            return Err(Error::ShapeMismatch {
                op: "gru_step",
                lhs: x.shape().to_vec(),
                rhs: h.shape().to_vec(),
            });
        }
        let gx = x.matmul(&store.tensor(self.w_input))?.add(&store.tensor(self.bias))?;
        let gh = h.matmul(&store.tensor(self.w_gates))?;
        let z = gx.slice(1, 0, hd)?.add(&gh.slice(1, 0, hd)?)?.sigmoid();
        let r = gx.slice(1, hd, 2 * hd)?.add(&gh.slice(1, hd, 2 * hd)?)?.sigmoid();
        let cand = gx
            .slice(1, 2 * hd, 3 * hd)?
            .add(&r.mul(h)?.matmul(&store.tensor(self.w_candidate))?)?
            .tanh();
        // h + z ⊙ (h̃ − h)
        h.add(&z.mul(&cand.sub(h)?)?)
    }

    /// Runs the cell over `inputs` (each `[n, input]` or `[input]`) from `h0`
    /// (zeros when `None`).
    pub fn fuse_sequence(&self, store: &ParamStore, inputs: &[Tensor], h0: Option<&Tensor>) -> Result<GruTrace> {
        let first = inputs
            .first()
            .ok_or_else(|| Error::InvalidArgument("GRU input sequence is empty".into()))?;
        let n = if first.ndim() == 1 { 1 } else { first.shape()[0] };
        let mut h = match h0 {
            Some(h) => h.reshape(&[n, self.hidden_dim])?,
            None => Tensor::zeros(&[n, self.hidden_dim]),
        };
        let mut states = Vec::with_capacity(inputs.len());
        for x in inputs {
            let x = if x.ndim() == 1 { x.reshape(&[1, x.numel()])? } else { x.clone() };
            h = self.step(store, &x, &h)?;
            states.push(h.clone());
        }
        Ok(GruTrace { states })
    }
}
