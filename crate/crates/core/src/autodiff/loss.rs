use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Predictions are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

fn clamp_pred(p: f64) -> f64 {
    p.clamp(BCE_EPS, 1.0 - BCE_EPS)
}

pub(crate) fn check_binary<T: Float>(target: &Tensor<T>) -> Result<()> {
    match target
        .data()
        .iter()
        .position(|&t| t != T::zero() && t != T::one())
    {
        Some(i) => Err(Error::arg(format!(
            "target value {:?} at flat index {i} is not 0 or 1",
            target.data()[i]
        ))),
        None => Ok(()),
    }
}

/// Mean binary cross-entropy, accumulated in f64.
pub(crate) fn bce<T: Float>(pred: &[T], target: &[T]) -> T {
    let total: f64 = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = clamp_pred(p.as_f64());
            let t = t.as_f64();
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    T::from_f64(total / pred.len() as f64)
}

pub(crate) fn bce_backward<T: Float>(pred: &[T], target: &[T], upstream: T) -> Vec<T> {
    let scale = upstream.as_f64() / pred.len() as f64;
    pred.iter()
        .zip(target)
        .map(|(&p, &t)| {
            let pf = p.as_f64();
            if pf < BCE_EPS || pf > 1.0 - BCE_EPS {
                // clamped region is flat
                return T::zero();
            }
            let t = t.as_f64();
            T::from_f64(scale * (-t / pf + (1.0 - t) / (1.0 - pf)))
        })
        .collect()
}
