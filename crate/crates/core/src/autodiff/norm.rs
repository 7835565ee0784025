use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Running mean and variance of one batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct BnStats<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Float> BnStats<T> {
    pub fn new(channels: usize) -> Result<Self> {
        Ok(Self {
            mean: Tensor::zeros(&[channels])?,
            var: Tensor::full(&[channels], T::one())?,
        })
    }

    pub fn cast<U: Float>(&self) -> BnStats<U> {
        BnStats {
            mean: self.mean.cast(),
            var: self.var.cast(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BnConfig {
    pub momentum: f64,
    pub epsilon: f64,
}

impl Default for BnConfig {
    fn default() -> Self {
        Self {
            momentum: 0.1,
            epsilon: 1e-5,
        }
    }
}

pub(crate) struct BnOut<T> {
    pub output: Tensor<T>,
    pub xhat: Vec<T>,
    pub inv_std: Vec<T>,
}

fn layout(shape: &[usize], channels: usize) -> Result<(usize, usize, usize)> {
    if shape.len() < 2 {
        return Err(Error::shape(1, "batch_norm needs a channel axis"));
    }
    if shape[1] != channels {
        return Err(Error::shape(
            1,
            format!("input has {} channels, affine parameters {channels}", shape[1]),
        ));
    }
    let inner: usize = shape[2..].iter().product();
    if shape[0] * inner == 0 {
        return Err(Error::arg("batch_norm over zero elements per channel"));
    }
    Ok((shape[0], shape[1], inner))
}

pub(crate) fn forward<T: Float>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    stats: &mut BnStats<T>,
    mode: Mode,
    cfg: BnConfig,
) -> Result<BnOut<T>> {
    let (n, c, inner) = layout(x.shape(), gamma.len())?;
    if beta.len() != c || stats.mean.len() != c || stats.var.len() != c {
        return Err(Error::shape(1, "batch_norm parameter length mismatch"));
    }
    let count = n * inner;
    let xd = x.data();
    let eps = T::from_f64(cfg.epsilon);
    let (mean, var): (Vec<T>, Vec<T>) = match mode {
        Mode::Train => {
            let mut mean = vec![0.0f64; c];
            let mut var = vec![0.0f64; c];
            for b in 0..n {
                for (ch, m) in mean.iter_mut().enumerate() {
                    let off = (b * c + ch) * inner;
                    *m += xd[off..off + inner].iter().map(|v| v.as_f64()).sum::<f64>();
                }
            }
            mean.iter_mut().for_each(|m| *m /= count as f64);
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * inner;
                    let m = mean[ch];
                    var[ch] += xd[off..off + inner]
                        .iter()
                        .map(|v| (v.as_f64() - m).powi(2))
                        .sum::<f64>();
                }
            }
            var.iter_mut().for_each(|v| *v /= count as f64);
            let mom = cfg.momentum;
            let unbias = if count > 1 {
                count as f64 / (count - 1) as f64
            } else {
                1.0
            };
            for ch in 0..c {
                let rm = &mut stats.mean.data_mut()[ch];
                *rm = T::from_f64((1.0 - mom) * rm.as_f64() + mom * mean[ch]);
                let rv = &mut stats.var.data_mut()[ch];
                *rv = T::from_f64((1.0 - mom) * rv.as_f64() + mom * var[ch] * unbias);
            }
            (
                mean.into_iter().map(T::from_f64).collect(),
                var.into_iter().map(T::from_f64).collect(),
            )
        }
        Mode::Eval => (stats.mean.data().to_vec(), stats.var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = vec![T::zero(); xd.len()];
    let mut out = vec![T::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            let (m, s, g, bt) = (mean[ch], inv_std[ch], gamma.data()[ch], beta.data()[ch]);
            for i in off..off + inner {
                let h = (xd[i] - m) * s;
                xhat[i] = h;
                out[i] = g * h + bt;
            }
        }
    }
    Ok(BnOut {
        output: Tensor::from_raw(x.shape().to_vec(), out),
        xhat,
        inv_std,
    })
}

pub(crate) struct BnGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

pub(crate) fn backward<T: Float>(
    shape: &[usize],
    gamma: &Tensor<T>,
    xhat: &[T],
    inv_std: &[T],
    dout: &[T],
    mode: Mode,
) -> BnGrads<T> {
    let (n, c) = (shape[0], shape[1]);
    let inner: usize = shape[2..].iter().product();
    let count = T::from_f64((n * inner) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            for i in off..off + inner {
                dbeta[ch] += dout[i];
                dgamma[ch] += dout[i] * xhat[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dout.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * inner;
            let scale = gamma.data()[ch] * inv_std[ch];
            match mode {
                Mode::Train => {
                    // d/dx of gamma·(x - mean)/std with batch statistics
                    let (sb, sg) = (dbeta[ch] / count, dgamma[ch] / count);
                    for i in off..off + inner {
                        dx[i] = scale * (dout[i] - sb - xhat[i] * sg);
                    }
                }
                Mode::Eval => {
                    for i in off..off + inner {
                        dx[i] = scale * dout[i];
                    }
                }
            }
        }
    }
    BnGrads {
        input: dx,
        gamma: dgamma,
        beta: dbeta,
    }
}
