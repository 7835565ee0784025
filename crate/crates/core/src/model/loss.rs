use super::graph::{Outputs, Variant};
use crate::autodiff::pool::max_pool;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Weights of the two auxiliary terms of the deep-supervised loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda2: f64,
    pub lambda3: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda2: 0.67,
            lambda3: 0.33,
        }
    }
}

impl LossConfig {
    /// Both weights must lie in (0, 1].
    pub fn new(lambda2: f64, lambda3: f64) -> Result<Self> {
        for (name, v) in [("lambda2", lambda2), ("lambda3", lambda3)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(Error::config(name, format!("must be in (0, 1], got {v}")));
            }
        }
        Ok(Self { lambda2, lambda3 })
    }

    /// Auxiliary terms switched off; only the full-resolution output trains.
    pub fn main_only() -> Self {
        Self {
            lambda2: 0.0,
            lambda3: 0.0,
        }
    }

    pub fn for_variant(variant: Variant, weights: LossConfig) -> Self {
        if variant.deep_supervision() {
            weights
        } else {
            Self::main_only()
        }
    }
}

/// Targets at full, half and quarter resolution via 2×2 and 4×4 max-pooling.
pub fn multiscale_targets<T: Float>(y: &Tensor<T>) -> Result<[Tensor<T>; 3]> {
    if y.rank() < 3 {
        return Err(Error::InvalidShape {
            shape: y.shape().to_vec(),
            detail: "targets need [N, C] plus spatial axes".into(),
        });
    }
    if y.data().iter().any(|&v| v != T::zero() && v != T::one()) {
        return Err(Error::arg("targets must be binary"));
    }
    for (a, &e) in y.shape().iter().enumerate().skip(2) {
        if e % 4 != 0 {
            return Err(Error::shape(a, format!("extent {e} is not divisible by 4")));
        }
    }
    let half = max_pool(y, &[2], &[2])?.output;
    let quarter = max_pool(y, &[4], &[4])?.output;
    Ok([y.clone(), half, quarter])
}

/// The three cross-entropy terms and their weighted sum.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub main: Var,
    pub aux2: Var,
    pub aux3: Var,
    pub total: Var,
}

/// `bce(out1, t1) + λ2·bce(out2, t2) + λ3·bce(out3, t3)`.
///
/// Zero weights still record their term, so every head stays on the graph
/// and receives a (zero) gradient.
pub fn total_loss<T: Float>(
    tape: &mut Tape<T>,
    outputs: &Outputs,
    targets: &[Tensor<T>; 3],
    cfg: LossConfig,
) -> Result<LossTerms> {
    for (scale, (&o, t)) in outputs.iter().zip(targets).enumerate() {
        let got = tape.value(o).shape();
        if got != t.shape() {
            let axis = got.iter().zip(t.shape()).position(|(a, b)| a != b).unwrap_or(0);
            return Err(Error::shape(
                axis,
                format!("output {} has shape {got:?}, target {:?}", scale + 1, t.shape()),
            ));
        }
    }
    let main = tape.bce(outputs[0], &targets[0])?;
    let aux2 = tape.bce(outputs[1], &targets[1])?;
    let aux3 = tape.bce(outputs[2], &targets[2])?;
    let w2 = tape.scale(aux2, T::from_f64(cfg.lambda2))?;
    let w3 = tape.scale(aux3, T::from_f64(cfg.lambda3))?;
    let partial = tape.add(main, w2)?;
    let total = tape.add(partial, w3)?;
    Ok(LossTerms { main, aux2, aux3, total })
}
