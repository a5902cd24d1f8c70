use super::Tensor;
use crate::error::{Error, Result};

/// Compares the gradient from [`Tensor::backward`] against central
/// differences of `f` at `x`.
///
/// Returns `max_i |analytic_i - numeric_i| / max(1, |numeric_i|)`.
/// `f` must return a scalar tensor.
pub fn finite_difference_check<F>(f: F, x: &Tensor, eps: f64) -> Result<f64>
where
    F: Fn(&Tensor) -> Result<Tensor>,
{
    let leaf = x.detach_leaf();
    let y = f(&leaf)?;
    if y.numel() != 1 {
        return Err(Error::NonScalarRoot(y.shape().to_vec()));
    }
    check_finite("f(x)", 0, y.item())?;
    let analytic = if y.requires_grad() {
        y.backward()?;
        leaf.grad().unwrap_or_else(|| vec![0.0; x.numel()])
    } else {
        vec![0.0; x.numel()]
    };

    let base = x.to_vec();
    let mut worst: f64 = 0.0;
    for i in 0..base.len() {
        let eval = |delta: f64| -> Result<f64> {
            let mut v = base.clone();
            v[i] += delta;
            let t = Tensor::from_vec(v, x.shape())?;
            let out = f(&t)?.item();
            check_finite(if delta > 0.0 { "f(x+eps)" } else { "f(x-eps)" }, i, out)?;
            Ok(out)
        };
        let numeric = (eval(eps)? - eval(-eps)?) / (2.0 * eps);
        let err = (analytic[i] - numeric).abs() / numeric.abs().max(1.0);
        worst = worst.max(err);
    }
    Ok(worst)
}

fn check_finite(context: &str, index: usize, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
            index,
            value,
        })
    }
}
