//! Fused loss primitives (numerically stable forms).

use super::Tensor;
use crate::error::{Error, Result};

impl Tensor {
    /// Mean softmax cross-entropy of `[n, c]` logits against class indices.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor> {
        if self.ndim() != 2 || self.shape()[0] != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "cross_entropy",
                lhs: self.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let (n, c) = (self.shape()[0], self.shape()[1]);
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::InvalidArgument(format!("cross_entropy: target {bad} >= {c} classes")));
        }
        let mut probs = vec![0.0; n * c];
        let mut total = 0.0;
        for (i, row) in self.data().chunks(c).enumerate() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - m).exp()).sum();
            let lse = m + z.ln();
            total += lse - row[targets[i]];
            for j in 0..c {
                probs[i * c + j] = (row[j] - lse).exp();
            }
        }
        let targets = targets.to_vec();
        Ok(Tensor::from_op("cross_entropy", vec![1], vec![total / n as f64], vec![self.clone()], move |g| {
            let s = g[0] / n as f64;
            let mut gi: Vec<f64> = probs.iter().map(|p| p * s).collect();
            for (i, &t) in targets.iter().enumerate() {
                gi[i * c + t] -= s;
            }
            vec![Some(gi)]
        }))
    }

    /// Mean binary cross-entropy over all elements, reading `self` as logits.
    pub fn bce_with_logits(&self, targets: &[f64]) -> Result<Tensor> {
        if self.numel() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "bce_with_logits",
                lhs: self.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let n = targets.len() as f64;
        let x = self.data_arc();
        let total: f64 = x
            .iter()
            .zip(targets)
            .map(|(&x, &y)| x.max(0.0) - x * y + (-x.abs()).exp().ln_1p())
            .sum();
        let targets = targets.to_vec();
        Ok(Tensor::from_op("bce_with_logits", vec![1], vec![total / n], vec![self.clone()], move |g| {
            let s = g[0] / n;
            let gi = x
                .iter()
                .zip(&targets)
                .map(|(&x, &y)| {
                    let p = if x >= 0.0 { 1.0 / (1.0 + (-x).exp()) } else { x.exp() / (1.0 + x.exp()) };
                    (p - y) * s
                })
                .collect();
            vec![Some(gi)]
        }))
    }

    /// Summed smooth-L1 (Huber with transition `beta`) between `self` and `targets`.
    pub fn smooth_l1(&self, targets: &[f64], beta: f64) -> Result<Tensor> {
        if self.numel() != targets.len() {
            return Err(Error::ShapeMismatch {
                op: "smooth_l1",
                lhs: self.shape().to_vec(),
                rhs: vec![targets.len()],
            });
        }
        let diffs: Vec<f64> = self.data().iter().zip(targets).map(|(a, b)| a - b).collect();
        let total: f64 = diffs
            .iter()
            .map(|&d| {
                let a = d.abs();
                if a < beta {
                    0.5 * d * d / beta
                } else {
                    a - 0.5 * beta
                }
            })
            .sum();
        Ok(Tensor::from_op("smooth_l1", vec![1], vec![total], vec![self.clone()], move |g| {
            let gi = diffs
                .iter()
                .map(|&d| g[0] * if d.abs() < beta { d / beta } else { d.signum() })
                .collect();
            vec![Some(gi)]
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::finite_difference_check;

    #[test]
    fn cross_entropy_uniform_logits() {
        let x = Tensor::from_vec(vec![0.0; 8], &[2, 4]).unwrap();
        let l = x.cross_entropy(&[1, 3]).unwrap();
        assert!((l.item() - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let x = Tensor::from_vec(vec![0.0; 5], &[5]).unwrap();
        let l = x.bce_with_logits(&[1.0, 0.0, 1.0, 0.0, 0.0]).unwrap();
        assert!((l.item() - 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn smooth_l1_regions() {
        let x = Tensor::from_vec(vec![0.5, 3.0], &[2]).unwrap();
        let l = x.smooth_l1(&[0.0, 0.0], 1.0).unwrap();
        assert!((l.item() - (0.125 + 2.5)).abs() < 1e-12);
    }

    #[test]
    fn loss_gradients() {
        let x = Tensor::from_vec(vec![0.3, -1.2, 2.0, 0.1, 0.7, -0.4], &[2, 3]).unwrap();
        let e = finite_difference_check(|x| x.cross_entropy(&[2, 0]), &x, 1e-5).unwrap();
        assert!(e < 1e-6, "{e}");
        let e = finite_difference_check(|x| x.bce_with_logits(&[1.0, 0.0, 0.5, 1.0, 0.0, 0.0]), &x, 1e-5).unwrap();
        assert!(e < 1e-6, "{e}");
        let e = finite_difference_check(|x| x.smooth_l1(&[0.0, 0.0, 0.0, 0.5, 0.5, 0.5], 1.0 / 9.0), &x, 1e-5).unwrap();
        assert!(e < 1e-6, "{e}");
    }
}
