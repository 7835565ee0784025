use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{BnStats, ConvSpec, Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Named trainable tensors plus batch-norm running statistics.
///
/// Layers refer to their tensors by index, so a model can be rebound onto a
/// fresh tape for every pass without copying structure.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Tensor<T>>,
    buffer_names: Vec<String>,
    buffers: Vec<BnStats<T>>,
}

impl<T: Float> Default for ParamStore<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Float> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
            buffer_names: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn values(&self) -> &[Tensor<T>] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.values
    }

    pub fn buffer_names(&self) -> &[String] {
        &self.buffer_names
    }

    pub fn buffers(&self) -> &[BnStats<T>] {
        &self.buffers
    }

    pub fn buffers_mut(&mut self) -> &mut [BnStats<T>] {
        &mut self.buffers
    }

    pub(crate) fn buffers_mut_vec(&mut self) -> &mut Vec<BnStats<T>> {
        &mut self.buffers
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor<T>> {
        self.index_of(name).map(|i| &mut self.values[i])
    }

    /// Total number of trainable scalars. Running statistics are not counted.
    pub fn parameter_count(&self) -> usize {
        self.values.iter().map(Tensor::len).sum()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<usize> {
        let name = name.into();
        if self.index_of(&name).is_some() {
            return Err(Error::arg(format!("duplicate parameter name {name}")));
        }
        self.names.push(name);
        self.values.push(value);
        Ok(self.values.len() - 1)
    }

    pub fn push_buffer(&mut self, name: impl Into<String>, stats: BnStats<T>) -> usize {
        self.buffer_names.push(name.into());
        self.buffers.push(stats);
        self.buffers.len() - 1
    }

    /// Puts every parameter on `tape` as a leaf, in store order.
    pub fn bind(&self, tape: &mut Tape<T>, requires_grad: bool) -> Vec<Var> {
        self.values.iter().map(|v| tape.leaf(v.clone(), requires_grad)).collect()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            values: self.values.iter().map(Tensor::cast).collect(),
            buffer_names: self.buffer_names.clone(),
            buffers: self.buffers.iter().map(BnStats::cast).collect(),
        }
    }
}

/// Kaiming fan-in normal initialisation: std = sqrt(2 / fan_in).
pub(crate) fn kaiming<T: Float>(shape: &[usize], rng: &mut impl Rng) -> Result<Tensor<T>> {
    let fan_in: usize = shape[1..].iter().product();
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt())
        .map_err(|e| Error::arg(format!("init: {e}")))?;
    Tensor::from_fn(shape, |_| T::from_f64(normal.sample(rng)))
}

/// Convolution weights and bias held in a [`ParamStore`].
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: usize,
    pub bias: usize,
    pub spec: ConvSpec,
}

impl ConvLayer {
    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (w, b) = (ctx.params[self.weight], ctx.params[self.bias]);
        ctx.tape.conv(x, w, Some(b), &self.spec)
    }
}

/// Batch-norm affine parameters plus the index of its running statistics.
#[derive(Clone, Debug)]
pub struct BatchNormLayer {
    pub gamma: usize,
    pub beta: usize,
    pub stats: usize,
}

impl BatchNormLayer {
    pub fn forward<T: Float>(&self, ctx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let (g, b) = (ctx.params[self.gamma], ctx.params[self.beta]);
        let stats = &mut ctx.stats[self.stats];
        ctx.tape.batch_norm(x, g, b, stats, ctx.mode, ctx.bn)
    }
}

/// Everything a layer needs during one pass: the tape, the parameter leaves
/// bound on it, the running statistics and the pass mode.
pub struct Ctx<'a, T> {
    pub tape: &'a mut Tape<T>,
    pub params: &'a [Var],
    pub stats: &'a mut [BnStats<T>],
    pub mode: crate::autodiff::Mode,
    pub bn: crate::autodiff::BnConfig,
}

/// Allocates layer parameters into a store with a shared seeded generator.
pub struct Builder<'a, T, R> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
    pub rank: usize,
}

impl<T: Float, R: Rng> Builder<'_, T, R> {
    /// Cubic kernel of side `k`; "same" padding when `padded`, otherwise none.
    pub fn conv(&mut self, name: &str, c_in: usize, c_out: usize, k: usize, padded: bool) -> Result<ConvLayer> {
        let mut shape = vec![c_out, c_in];
        shape.extend(std::iter::repeat_n(k, self.rank));
        let weight = self.store.push(format!("{name}.weight"), kaiming(&shape, self.rng)?)?;
        let bias = self.store.push(format!("{name}.bias"), Tensor::zeros(&[c_out])?)?;
        let spec = if padded { ConvSpec::same(k) } else { ConvSpec::new(1, 0) };
        Ok(ConvLayer { weight, bias, spec })
    }

    pub fn batch_norm(&mut self, name: &str, channels: usize) -> Result<BatchNormLayer> {
        let gamma = self.store.push(format!("{name}.gamma"), Tensor::full(&[channels], T::one())?)?;
        let beta = self.store.push(format!("{name}.beta"), Tensor::zeros(&[channels])?)?;
        let stats = self.store.push_buffer(name, BnStats::new(channels)?);
        Ok(BatchNormLayer { gamma, beta, stats })
    }
}
