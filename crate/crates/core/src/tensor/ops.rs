//! Differentiable primitives.
//!
//! Binary elementwise ops broadcast one operand against the other with
//! right-aligned, numpy-style rules, restricted to the smaller operand: each
//! of its dimensions must equal the larger operand's or be 1.

use std::f64::consts::PI;

use super::gemm::gemm;
use super::{numel_of, Tensor};
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-6;

/// Epsilon added to the norm by [`Tensor::l2_normalize`].
pub const L2_EPS: f64 = 1e-12;

enum Bcast {
    Same,
    /// rhs repeats contiguously every `n` elements.
    Suffix(usize),
    Scalar,
    Map(Vec<usize>),
}

impl Bcast {
    fn plan(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Result<Self> {
        if lhs == rhs {
            return Ok(Bcast::Same);
        }
        let mismatch = || Error::ShapeMismatch {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        };
        if numel_of(rhs) == 1 {
            return Ok(Bcast::Scalar);
        }
        if rhs.len() > lhs.len() {
            return Err(mismatch());
        }
        let off = lhs.len() - rhs.len();
        for (i, &r) in rhs.iter().enumerate() {
            if r != lhs[off + i] && r != 1 {
                return Err(mismatch());
            }
        }
        // Strip leading ones from rhs; if the rest equals lhs's suffix, it is a plain repeat.
        let trimmed: Vec<usize> = rhs.iter().copied().skip_while(|&d| d == 1).collect();
        if lhs[lhs.len() - trimmed.len()..] == trimmed[..] {
            return Ok(Bcast::Suffix(numel_of(&trimmed)));
        }
        let mut rstride = vec![0usize; lhs.len()];
        let mut acc = 1;
        for i in (0..rhs.len()).rev() {
            if rhs[i] != 1 {
                rstride[off + i] = acc;
            }
            acc *= rhs[i];
        }
        let n = numel_of(lhs);
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; lhs.len()];
        let mut cur = 0usize;
        for _ in 0..n {
            map.push(cur);
            for d in (0..lhs.len()).rev() {
                idx[d] += 1;
                cur += rstride[d];
                if idx[d] < lhs[d] {
                    break;
                }
                cur -= rstride[d] * idx[d];
                idx[d] = 0;
            }
        }
        Ok(Bcast::Map(map))
    }

    #[inline]
    fn index(&self, i: usize) -> usize {
        match self {
            Bcast::Same => i,
            Bcast::Suffix(n) => i % n,
            Bcast::Scalar => 0,
            Bcast::Map(m) => m[i],
        }
    }

    fn reduce(&self, g: &[f64], rhs_len: usize) -> Vec<f64> {
        match self {
            Bcast::Same => g.to_vec(),
            _ => {
                let mut out = vec![0.0; rhs_len];
                for (i, v) in g.iter().enumerate() {
                    out[self.index(i)] += v;
                }
                out
            }
        }
    }
}

fn check_axis(op: &'static str, axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(Error::AxisOutOfRange { op, axis, rank })
    } else {
        Ok(())
    }
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

fn permute_data(data: &[f64], shape: &[usize], perm: &[usize]) -> Vec<f64> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = data.len();
    let mut out = Vec::with_capacity(n);
    let rank = shape.len();
    let inner = out_shape[rank - 1];
    let inner_stride = src_strides[rank - 1];
    let mut idx = vec![0usize; rank];
    let mut base = 0usize;
    let outer = n / inner;
    for _ in 0..outer {
        if inner_stride == 1 {
            out.extend_from_slice(&data[base..base + inner]);
        } else {
            for j in 0..inner {
                out.push(data[base + j * inner_stride]);
            }
        }
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            base += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            base -= src_strides[d] * idx[d];
            idx[d] = 0;
        }
    }
    out
}

fn gelu_scalar(x: f64) -> (f64, f64) {
    let c = (2.0 / PI).sqrt();
    let inner = c * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    let y = 0.5 * x * (1.0 + t);
    let dinner = c * (1.0 + 3.0 * 0.044715 * x * x);
    let dy = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner;
    (y, dy)
}

fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Tensor {
    fn unary<F>(&self, op: &'static str, f: F) -> Tensor
    where
        F: Fn(f64) -> (f64, f64),
    {
        let (vals, ders): (Vec<f64>, Vec<f64>) = self.data().iter().map(|&x| f(x)).unzip();
        Tensor::from_op(op, self.shape().to_vec(), vals, vec![self.clone()], move |g| {
            vec![Some(g.iter().zip(&ders).map(|(a, b)| a * b).collect())]
        })
    }

    fn binary(&self, other: &Tensor, op: &'static str, kind: BinKind) -> Result<Tensor> {
        // Broadcast the smaller operand into the larger one.
        let swap = numel_of(other.shape()) > numel_of(self.shape());
        let (big, small) = if swap { (other, self) } else { (self, other) };
        let plan = Bcast::plan(op, big.shape(), small.shape()).map_err(|_| Error::ShapeMismatch {
            op,
            lhs: self.shape().to_vec(),
            rhs: other.shape().to_vec(),
        })?;
        let bd = big.data_arc();
        let sd = small.data_arc();
        let n = bd.len();
        let mut out = Vec::with_capacity(n);
        // x is `self`'s element, y is `other`'s.
        let pair = |i: usize| -> (f64, f64) {
            let b = bd[i];
            let s = sd[plan.index(i)];
            if swap {
                (s, b)
            } else {
                (b, s)
            }
        };
        for i in 0..n {
            let (x, y) = pair(i);
            out.push(match kind {
                BinKind::Add => x + y,
                BinKind::Sub => x - y,
                BinKind::Mul => x * y,
            });
        }
        let shape = big.shape().to_vec();
        let small_len = sd.len();
        let (self_rg, other_rg) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op(op, shape, out, vec![self.clone(), other.clone()], move |g| {
            // grads w.r.t. (x, y) at full size.
            let (gx, gy): (Option<Vec<f64>>, Option<Vec<f64>>) = match kind {
                BinKind::Add => (self_rg.then(|| g.to_vec()), other_rg.then(|| g.to_vec())),
                BinKind::Sub => (self_rg.then(|| g.to_vec()), other_rg.then(|| g.iter().map(|v| -v).collect())),
                BinKind::Mul => {
                    let gx = self_rg.then(|| {
                        (0..g.len())
                            .map(|i| {
                                let y = if swap { bd[i] } else { sd[plan.index(i)] };
                                g[i] * y
                            })
                            .collect()
                    });
                    let gy = other_rg.then(|| {
                        (0..g.len())
                            .map(|i| {
                                let x = if swap { sd[plan.index(i)] } else { bd[i] };
                                g[i] * x
                            })
                            .collect()
                    });
                    (gx, gy)
                }
            };
            let reduce = |full: Option<Vec<f64>>| full.map(|f| plan.reduce(&f, small_len));
            if swap {
                vec![reduce(gx), gy]
            } else {
                vec![gx, reduce(gy)]
            }
        }))
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "add", BinKind::Add)
    }

    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "sub", BinKind::Sub)
    }

    /// Elementwise product with broadcasting.
    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.binary(other, "mul", BinKind::Mul)
    }

    pub fn scale(&self, c: f64) -> Tensor {
        self.unary("scale", |x| (c * x, c))
    }

    pub fn add_scalar(&self, c: f64) -> Tensor {
        self.unary("add_scalar", |x| (x + c, 1.0))
    }

    pub fn neg(&self) -> Tensor {
        self.scale(-1.0)
    }

    pub fn relu(&self) -> Tensor {
        self.unary("relu", |x| if x > 0.0 { (x, 1.0) } else { (0.0, 0.0) })
    }

    /// GELU, tanh approximation.
    pub fn gelu(&self) -> Tensor {
        self.unary("gelu", gelu_scalar)
    }

    pub fn sigmoid(&self) -> Tensor {
        self.unary("sigmoid", |x| {
            let s = sigmoid_scalar(x);
            (s, s * (1.0 - s))
        })
    }

    pub fn tanh(&self) -> Tensor {
        self.unary("tanh", |x| {
            let t = x.tanh();
            (t, 1.0 - t * t)
        })
    }

    /// Matrix product. Supported forms: `[.., m, k] × [k, n]` (leading dims
    /// flattened) and batched `[b, m, k] × [b, k, n]`.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        let (ls, rs) = (self.shape(), other.shape());
        let mismatch = || Error::ShapeMismatch {
            op: "matmul",
            lhs: ls.to_vec(),
            rhs: rs.to_vec(),
        };
        if ls.len() < 2 || !(rs.len() == 2 || (rs.len() == 3 && ls.len() == 3)) {
            return Err(mismatch());
        }
        let (batch, m, k, n, shared_rhs) = if rs.len() == 2 {
            if ls[ls.len() - 1] != rs[0] {
                return Err(mismatch());
            }
            (1, numel_of(&ls[..ls.len() - 1]), rs[0], rs[1], true)
        } else {
            if ls[0] != rs[0] || ls[2] != rs[1] {
                return Err(mismatch());
            }
            (ls[0], ls[1], ls[2], rs[2], false)
        };
        let a = self.data_arc();
        let b = other.data_arc();
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            gemm(
                m,
                k,
                n,
                &a[bi * m * k..(bi + 1) * m * k],
                false,
                &b[bi * k * n..(bi + 1) * k * n],
                false,
                &mut out[bi * m * n..(bi + 1) * m * n],
                false,
            );
        }
        let mut shape = ls[..ls.len() - 1].to_vec();
        shape.push(n);
        let _ = shared_rhs;
        let (a_rg, b_rg) = (self.requires_grad(), other.requires_grad());
        Ok(Tensor::from_op("matmul", shape, out, vec![self.clone(), other.clone()], move |g| {
            let ga = a_rg.then(|| {
                let mut ga = vec![0.0; batch * m * k];
                for bi in 0..batch {
                    gemm(
                        m,
                        n,
                        k,
                        &g[bi * m * n..(bi + 1) * m * n],
                        false,
                        &b[bi * k * n..(bi + 1) * k * n],
                        true,
                        &mut ga[bi * m * k..(bi + 1) * m * k],
                        false,
                    );
                }
                ga
            });
            let gb = b_rg.then(|| {
                let mut gb = vec![0.0; batch * k * n];
                for bi in 0..batch {
                    gemm(
                        k,
                        m,
                        n,
                        &a[bi * m * k..(bi + 1) * m * k],
                        true,
                        &g[bi * m * n..(bi + 1) * m * n],
                        false,
                        &mut gb[bi * k * n..(bi + 1) * k * n],
                        false,
                    );
                }
                gb
            });
            vec![ga, gb]
        }))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        if shape.is_empty() || numel_of(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::from_op("reshape", shape.to_vec(), self.to_vec(), vec![self.clone()], |g| {
            vec![Some(g.to_vec())]
        }))
    }

    /// Reorders axes: output axis `d` is input axis `perm[d]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let rank = self.ndim();
        let mut seen = vec![false; rank];
        if perm.len() != rank {
            return Err(Error::ShapeMismatch {
                op: "permute",
                lhs: self.shape().to_vec(),
                rhs: perm.to_vec(),
            });
        }
        for &p in perm {
            check_axis("permute", p, rank)?;
            if std::mem::replace(&mut seen[p], true) {
                return Err(Error::InvalidArgument(format!("permute: repeated axis {p}")));
            }
        }
        let shape = self.shape().to_vec();
        let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
        let data = permute_data(self.data(), &shape, perm);
        let mut inv = vec![0; rank];
        for (d, &p) in perm.iter().enumerate() {
            inv[p] = d;
        }
        let og = out_shape.clone();
        Ok(Tensor::from_op("permute", out_shape, data, vec![self.clone()], move |g| {
            vec![Some(permute_data(g, &og, &inv))]
        }))
    }

    /// Swaps two axes.
    pub fn transpose(&self, a: usize, b: usize) -> Result<Tensor> {
        check_axis("transpose", a, self.ndim())?;
        check_axis("transpose", b, self.ndim())?;
        let mut perm: Vec<usize> = (0..self.ndim()).collect();
        perm.swap(a, b);
        self.permute(&perm)
    }

    pub fn concat(tensors: &[Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors
            .first()
            .ok_or_else(|| Error::InvalidArgument("concat of zero tensors".into()))?;
        let rank = first.ndim();
        check_axis("concat", axis, rank)?;
        for t in tensors {
            let ok = t.ndim() == rank && (0..rank).all(|d| d == axis || t.shape()[d] == first.shape()[d]);
            if !ok {
                return Err(Error::ShapeMismatch {
                    op: "concat",
                    lhs: first.shape().to_vec(),
                    rhs: t.shape().to_vec(),
                });
            }
        }
        let outer = numel_of(&first.shape()[..axis]);
        let inner = numel_of(&first.shape()[axis + 1..]);
        let chunks: Vec<usize> = tensors.iter().map(|t| t.shape()[axis] * inner).collect();
        let row: usize = chunks.iter().sum();
        let mut out = Vec::with_capacity(outer * row);
        for o in 0..outer {
            for (t, &c) in tensors.iter().zip(&chunks) {
                out.extend_from_slice(&t.data()[o * c..(o + 1) * c]);
            }
        }
        let mut shape = first.shape().to_vec();
        shape[axis] = tensors.iter().map(|t| t.shape()[axis]).sum();
        let flags: Vec<bool> = tensors.iter().map(Tensor::requires_grad).collect();
        Ok(Tensor::from_op("concat", shape, out, tensors.to_vec(), move |g| {
            let mut offset = 0;
            let mut grads = Vec::with_capacity(chunks.len());
            for (&c, &rg) in chunks.iter().zip(&flags) {
                if rg {
                    let mut gt = Vec::with_capacity(outer * c);
                    for o in 0..outer {
                        let s = o * row + offset;
                        gt.extend_from_slice(&g[s..s + c]);
                    }
                    grads.push(Some(gt));
                } else {
                    grads.push(None);
                }
                offset += c;
            }
            grads
        }))
    }

    /// Elements `start..end` along `axis`.
    pub fn slice(&self, axis: usize, start: usize, end: usize) -> Result<Tensor> {
        check_axis("slice", axis, self.ndim())?;
        let dim = self.shape()[axis];
        if start >= end || end > dim {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{end} out of bounds for axis {axis} of shape {:?}",
                self.shape()
            )));
        }
        let outer = numel_of(&self.shape()[..axis]);
        let inner = numel_of(&self.shape()[axis + 1..]);
        let row = dim * inner;
        let (s0, c) = (start * inner, (end - start) * inner);
        let mut out = Vec::with_capacity(outer * c);
        for o in 0..outer {
            out.extend_from_slice(&self.data()[o * row + s0..o * row + s0 + c]);
        }
        let mut shape = self.shape().to_vec();
        shape[axis] = end - start;
        let total = self.numel();
        Ok(Tensor::from_op("slice", shape, out, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; total];
            for o in 0..outer {
                gi[o * row + s0..o * row + s0 + c].copy_from_slice(&g[o * c..(o + 1) * c]);
            }
            vec![Some(gi)]
        }))
    }

    /// Rows (entries along axis 0) in the given order; repeats allowed.
    pub fn index_select(&self, rows: &[usize]) -> Result<Tensor> {
        let n0 = self.shape()[0];
        if rows.is_empty() {
            return Err(Error::InvalidArgument("index_select with no rows".into()));
        }
        if let Some(&bad) = rows.iter().find(|&&r| r >= n0) {
            return Err(Error::InvalidArgument(format!("index_select: row {bad} out of range for {n0}")));
        }
        let inner = self.numel() / n0;
        let mut out = Vec::with_capacity(rows.len() * inner);
        for &r in rows {
            out.extend_from_slice(&self.data()[r * inner..(r + 1) * inner]);
        }
        let mut shape = self.shape().to_vec();
        shape[0] = rows.len();
        let rows = rows.to_vec();
        let total = self.numel();
        Ok(Tensor::from_op("index_select", shape, out, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; total];
            for (i, &r) in rows.iter().enumerate() {
                for j in 0..inner {
                    gi[r * inner + j] += g[i * inner + j];
                }
            }
            vec![Some(gi)]
        }))
    }

    pub fn softmax(&self) -> Tensor {
        let d = *self.shape().last().unwrap();
        let mut out = self.to_vec();
        for row in out.chunks_mut(d) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut s = 0.0;
            for v in row.iter_mut() {
                *v = (*v - m).exp();
                s += *v;
            }
            row.iter_mut().for_each(|v| *v /= s);
        }
        let y = out.clone();
        Tensor::from_op("softmax", self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; g.len()];
            for ((gr, yr), out) in g.chunks(d).zip(y.chunks(d)).zip(gi.chunks_mut(d)) {
                let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                for j in 0..d {
                    out[j] = yr[j] * (gr[j] - dot);
                }
            }
            vec![Some(gi)]
        })
    }

    /// Layer normalization over the last axis with learnable `gamma`, `beta` (both `[d]`).
    pub fn layer_norm(&self, gamma: &Tensor, beta: &Tensor) -> Result<Tensor> {
        let d = *self.shape().last().unwrap();
        for p in [gamma, beta] {
            if p.shape() != [d] {
                return Err(Error::ShapeMismatch {
                    op: "layer_norm",
                    lhs: self.shape().to_vec(),
                    rhs: p.shape().to_vec(),
                });
            }
        }
        let rows = self.numel() / d;
        let mut xhat = vec![0.0; self.numel()];
        let mut inv_std = vec![0.0; rows];
        let x = self.data();
        for r in 0..rows {
            let row = &x[r * d..(r + 1) * d];
            let mean = row.iter().sum::<f64>() / d as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            inv_std[r] = is;
            for j in 0..d {
                xhat[r * d + j] = (row[j] - mean) * is;
            }
        }
        let gd = gamma.data_arc();
        let bd = beta.data_arc();
        let out: Vec<f64> = xhat
            .iter()
            .enumerate()
            .map(|(i, v)| v * gd[i % d] + bd[i % d])
            .collect();
        let flags = [self.requires_grad(), gamma.requires_grad(), beta.requires_grad()];
        Ok(Tensor::from_op(
            "layer_norm",
            self.shape().to_vec(),
            out,
            vec![self.clone(), gamma.clone(), beta.clone()],
            move |g| {
                let gx = flags[0].then(|| {
                    let mut gx = vec![0.0; g.len()];
                    for r in 0..rows {
                        let gr = &g[r * d..(r + 1) * d];
                        let xr = &xhat[r * d..(r + 1) * d];
                        let gxh: Vec<f64> = (0..d).map(|j| gr[j] * gd[j]).collect();
                        let m1 = gxh.iter().sum::<f64>() / d as f64;
                        let m2 = gxh.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>() / d as f64;
                        for j in 0..d {
                            gx[r * d + j] = inv_std[r] * (gxh[j] - m1 - xr[j] * m2);
                        }
                    }
                    gx
                });
                let gg = flags[1].then(|| {
                    let mut gg = vec![0.0; d];
                    for (i, v) in g.iter().enumerate() {
                        gg[i % d] += v * xhat[i];
                    }
                    gg
                });
                let gb = flags[2].then(|| {
                    let mut gb = vec![0.0; d];
                    for (i, v) in g.iter().enumerate() {
                        gb[i % d] += v;
                    }
                    gb
                });
                vec![gx, gg, gb]
            },
        ))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&self) -> Tensor {
        let s = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum", vec![1], vec![s], vec![self.clone()], move |g| vec![Some(vec![g[0]; n])])
    }

    pub fn mean(&self) -> Tensor {
        self.sum().scale(1.0 / self.numel() as f64)
    }

    /// Sum over the listed axes, which are removed from the shape
    /// (reducing every axis gives shape `[1]`).
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let rank = self.ndim();
        for &a in axes {
            check_axis("sum_axes", a, rank)?;
        }
        let keep: Vec<usize> = (0..rank).filter(|d| !axes.contains(d)).collect();
        let mut out_shape: Vec<usize> = keep.iter().map(|&d| self.shape()[d]).collect();
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let out_strides_kept = {
            let ks: Vec<usize> = keep.iter().map(|&d| self.shape()[d]).collect();
            strides(&ks)
        };
        let mut ostride = vec![0usize; rank];
        for (i, &d) in keep.iter().enumerate() {
            ostride[d] = out_strides_kept[i];
        }
        let shape = self.shape().to_vec();
        let n = self.numel();
        let mut map = Vec::with_capacity(n);
        let mut idx = vec![0usize; rank];
        let mut cur = 0usize;
        for _ in 0..n {
            map.push(cur);
            for d in (0..rank).rev() {
                idx[d] += 1;
                cur += ostride[d];
                if idx[d] < shape[d] {
                    break;
                }
                cur -= ostride[d] * idx[d];
                idx[d] = 0;
            }
        }
        let mut out = vec![0.0; numel_of(&out_shape)];
        for (i, v) in self.data().iter().enumerate() {
            out[map[i]] += v;
        }
        Ok(Tensor::from_op("sum_axes", out_shape, out, vec![self.clone()], move |g| {
            vec![Some(map.iter().map(|&o| g[o]).collect())]
        }))
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        let count: usize = axes.iter().map(|&a| self.shape().get(a).copied().unwrap_or(1)).product();
        Ok(self.sum_axes(axes)?.scale(1.0 / count as f64))
    }

    /// Divides each last-axis row by its L2 norm plus [`L2_EPS`].
    pub fn l2_normalize(&self) -> Tensor {
        let d = *self.shape().last().unwrap();
        let x = self.data_arc();
        let norms: Vec<f64> = x.chunks(d).map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
        let out: Vec<f64> = x
            .iter()
            .enumerate()
            .map(|(i, v)| v / (norms[i / d] + L2_EPS))
            .collect();
        Tensor::from_op("l2_normalize", self.shape().to_vec(), out, vec![self.clone()], move |g| {
            let mut gi = vec![0.0; g.len()];
            for r in 0..norms.len() {
                let n = norms[r];
                let den = n + L2_EPS;
                let xr = &x[r * d..(r + 1) * d];
                let gr = &g[r * d..(r + 1) * d];
                let dot: f64 = xr.iter().zip(gr).map(|(a, b)| a * b).sum();
                let k = if n > 0.0 { dot / (n * den * den) } else { 0.0 };
                for j in 0..d {
                    gi[r * d + j] = gr[j] / den - xr[j] * k;
                }
            }
            vec![Some(gi)]
        })
    }
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn t(data: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(data.to_vec(), shape).unwrap()
    }

    fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = numel_of(shape);
        t(&(0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>(), shape)
    }

    fn close(a: &[f64], b: &[f64], tol: f64) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol, "{x} vs {y}");
        }
    }

    #[test]
    fn matmul_ones() {
        let a = t(&[1.0; 6], &[2, 3]);
        let b = t(&[1.0; 6], &[3, 2]);
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.data(), &[3.0; 4]);
    }

    #[test]
    fn matmul_shape_error_names_both_shapes() {
        let err = t(&[1.0; 6], &[2, 3]).matmul(&t(&[1.0; 4], &[2, 2])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("matmul") && msg.contains("[2, 3]") && msg.contains("[2, 2]"), "{msg}");
    }

    #[test]
    fn softmax_uniform() {
        let s = t(&[0.0; 4], &[4]).softmax();
        close(s.data(), &[0.25; 4], 1e-15);
    }

    #[test]
    fn l2_normalize_345() {
        let y = t(&[3.0, 4.0], &[2]).l2_normalize();
        close(y.data(), &[0.6, 0.8], 1e-12);
    }

    #[test]
    fn layer_norm_matches_direct_formula() {
        let x = t(&[1.0, 2.0, 3.0], &[3]);
        let y = x.layer_norm(&t(&[1.0; 3], &[3]), &t(&[0.0; 3], &[3])).unwrap();
        // Independent mean/variance computation.
        let mean = 2.0;
        let var: f64 = [1.0f64, 0.0, 1.0].iter().sum::<f64>() / 3.0;
        let expect: Vec<f64> = [1.0, 2.0, 3.0].iter().map(|v| (v - mean) / (var + 1e-6).sqrt()).collect();
        close(y.data(), &expect, 1e-12);
    }

    #[test]
    fn axis_errors() {
        let x = t(&[1.0; 6], &[2, 3]);
        assert!(matches!(x.slice(2, 0, 1), Err(Error::AxisOutOfRange { .. })));
        assert!(matches!(x.sum_axes(&[5]), Err(Error::AxisOutOfRange { .. })));
        assert!(matches!(Tensor::concat(std::slice::from_ref(&x), 3), Err(Error::AxisOutOfRange { .. })));
        assert!(matches!(x.transpose(0, 2), Err(Error::AxisOutOfRange { .. })));
    }

    #[test]
    fn broadcast_rules() {
        let x = t(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], &[2, 3]);
        let bias = t(&[10.0, 20.0, 30.0], &[3]);
        assert_eq!(x.add(&bias).unwrap().data(), &[11.0, 22.0, 33.0, 14.0, 25.0, 36.0]);
        let col = t(&[1.0, 2.0], &[2, 1]);
        assert_eq!(x.mul(&col).unwrap().data(), &[1.0, 2.0, 3.0, 8.0, 10.0, 12.0]);
        // Smaller operand on the left.
        assert_eq!(bias.sub(&x).unwrap().data(), &[9.0, 18.0, 27.0, 6.0, 15.0, 24.0]);
        assert!(x.add(&t(&[1.0, 2.0], &[2])).is_err());
    }

    #[test]
    fn permute_and_concat_values() {
        let x = t(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0], &[2, 3]);
        assert_eq!(x.transpose(0, 1).unwrap().data(), &[0.0, 3.0, 1.0, 4.0, 2.0, 5.0]);
        let c = Tensor::concat(&[x.clone(), x.slice(1, 0, 1).unwrap()], 1).unwrap();
        assert_eq!(c.shape(), &[2, 4]);
        assert_eq!(c.data(), &[0.0, 1.0, 2.0, 0.0, 3.0, 4.0, 5.0, 3.0]);
        let s = x.sum_axes(&[0]).unwrap();
        assert_eq!(s.data(), &[3.0, 5.0, 7.0]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random(&mut rng, &[7, 5]).scale(20.0);
        let s = x.softmax();
        for row in s.data().chunks(5) {
            assert!(row.iter().all(|&v| v >= 0.0));
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    /// Every primitive against the central-difference oracle.
    #[test]
    fn primitives_pass_gradient_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let w = random(&mut rng, &[4, 3]);
        let bw = random(&mut rng, &[2, 4, 3]);
        let bias = random(&mut rng, &[3]);
        let col = random(&mut rng, &[2, 1, 4]);
        let gamma = random(&mut rng, &[4]);
        let beta = random(&mut rng, &[4]);
        let weights = random(&mut rng, &[2, 3, 4]);
        let cases: Vec<(&str, Box<dyn Fn(&Tensor) -> Result<Tensor>>)> = vec![
            ("matmul", Box::new(|x| x.matmul(&w))),
            ("matmul_rhs", Box::new(|x| w.transpose(0, 1)?.matmul(&x.reshape(&[4, 6])?))),
            ("bmm", Box::new(|x| x.matmul(&bw))),
            ("add_bcast", Box::new(|x| x.matmul(&w)?.add(&bias))),
            ("mul_bcast", Box::new(|x| x.mul(&col))),
            ("mul_self", Box::new(|x| x.mul(x))),
            ("sub", Box::new(|x| col.sub(x))),
            ("transpose", Box::new(|x| x.transpose(0, 2))),
            ("permute", Box::new(|x| x.permute(&[1, 2, 0]))),
            ("reshape", Box::new(|x| x.reshape(&[8, 3]))),
            ("concat", Box::new(|x| Tensor::concat(&[x.clone(), x.scale(2.0)], 1))),
            ("slice", Box::new(|x| x.slice(2, 1, 3))),
            ("index_select", Box::new(|x| x.index_select(&[1, 0, 1]))),
            ("softmax", Box::new(|x| Ok(x.softmax()))),
            ("layer_norm", Box::new(|x| x.layer_norm(&gamma, &beta))),
            ("relu", Box::new(|x| Ok(x.relu()))),
            ("gelu", Box::new(|x| Ok(x.gelu()))),
            ("sigmoid", Box::new(|x| Ok(x.sigmoid()))),
            ("tanh", Box::new(|x| Ok(x.tanh()))),
            ("mean_axes", Box::new(|x| x.mean_axes(&[0, 2]))),
            ("l2_normalize", Box::new(|x| Ok(x.l2_normalize()))),
        ];
        for (name, f) in cases {
            let x = random(&mut rng, &[2, 3, 4]);
            // Weight the output so the check is not just a sum of gradients.
            let err = finite_difference_check(
                |x| {
                    let y = f(x)?;
                    let wt = Tensor::from_vec((0..y.numel()).map(|i| ((i % 7) as f64 - 3.0) / 3.0).collect(), y.shape())?;
                    Ok(y.mul(&wt)?.sum())
                },
                &x,
                1e-5,
            )
            .unwrap();
            assert!(err < 1e-4, "{name}: {err}");
        }
        let _ = weights;
    }

    #[test]
    fn gradient_of_both_matmul_operands() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random(&mut rng, &[3, 4]);
        let b = random(&mut rng, &[4, 2]);
        let err_a = finite_difference_check(|a| Ok(a.matmul(&b)?.sum()), &a, 1e-5).unwrap();
        let err_b = finite_difference_check(|b| Ok(a.matmul(b)?.sum()), &b, 1e-5).unwrap();
        assert!(err_a < 1e-5 && err_b < 1e-5, "{err_a} {err_b}");
    }

    #[test]
    fn layer_norm_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random(&mut rng, &[3, 4]);
        let g = random(&mut rng, &[4]);
        let b = random(&mut rng, &[4]);
        let wt = random(&mut rng, &[3, 4]);
        let eg = finite_difference_check(|g| Ok(x.layer_norm(g, &b)?.mul(&wt)?.sum()), &g, 1e-5).unwrap();
        let eb = finite_difference_check(|b| Ok(x.layer_norm(&g, b)?.mul(&wt)?.sum()), &b, 1e-5).unwrap();
        assert!(eg < 1e-4 && eb < 1e-4);
    }

    #[test]
    fn broadcast_operand_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random(&mut rng, &[2, 3, 4]);
        let wt = random(&mut rng, &[2, 3, 4]);
        for shape in [vec![4], vec![3, 1], vec![2, 1, 4], vec![1]] {
            let b = random(&mut rng, &shape);
            let e1 = finite_difference_check(|b| Ok(x.mul(b)?.mul(&wt)?.sum()), &b, 1e-5).unwrap();
            let e2 = finite_difference_check(|b| Ok(b.sub(&x)?.mul(&wt)?.sum()), &b, 1e-5).unwrap();
            assert!(e1 < 1e-4 && e2 < 1e-4, "{shape:?}");
        }
    }
}
