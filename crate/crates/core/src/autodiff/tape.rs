use std::sync::atomic::{AtomicUsize, Ordering};

use super::conv::{self, ConvGeom, ConvSpec};
use super::loss;
use super::norm::{self, BnConfig, BnStats, Mode};
use super::{interp, pool};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

static NEXT_TAPE: AtomicUsize = AtomicUsize::new(0);

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    tape: usize,
    index: usize,
}

impl Var {
    pub fn index(self) -> usize {
        self.index
    }
}

enum Op<T> {
    Leaf,
    Conv {
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    AdaptiveAvgPool {
        input: Var,
    },
    Upsample {
        input: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
        mode: Mode,
    },
    Relu {
        input: Var,
        /// Pass-through mask when replaying; otherwise the output sign decides.
        mask: Option<Vec<bool>>,
    },
    Sigmoid {
        input: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    ChannelScale {
        features: Var,
        weights: Var,
    },
    Concat {
        parts: Vec<Var>,
    },
    Sum {
        input: Var,
    },
    Bce {
        pred: Var,
        target: Tensor<T>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
    grad: Option<Tensor<T>>,
    flops: u64,
}

/// Linear record of a forward computation for reverse-mode differentiation.
///
/// Nodes are appended in execution order, so every input of a node precedes
/// it and reverse iteration is a valid topological order.
pub struct Tape<T> {
    id: usize,
    nodes: Vec<Node<T>>,
    replay: Option<Replay>,
}

/// Which side of every relu and which window element of every max-pool a
/// pass selected, in recording order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Branches {
    pub relu: Vec<Vec<bool>>,
    pub pool: Vec<Vec<usize>>,
}

struct Replay {
    branches: Branches,
    relu: usize,
    pool: usize,
}

impl<T: Float> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn accumulate<T: Float>(slot: &mut Option<Vec<T>>, g: Vec<T>) {
    match slot {
        None => *slot = Some(g),
        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
    }
}

fn same_shape(a: &[usize], b: &[usize], op: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(0, format!("{op}: rank {} vs {}", a.len(), b.len())));
    }
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(axis) => Err(Error::shape(
            axis,
            format!("{op}: extent {} vs {}", a[axis], b[axis]),
        )),
        None => Ok(()),
    }
}

impl<T: Float> Tape<T> {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            replay: None,
        }
    }

    /// A tape whose relu and max-pool ops reuse the branch choices of an
    /// earlier pass instead of deciding from their inputs. The recorded
    /// function is then smooth in every input, which lets finite differences
    /// probe exactly the piece a gradient was computed on.
    pub fn replaying(branches: Branches) -> Self {
        let mut t = Self::new();
        t.replay = Some(Replay {
            branches,
            relu: 0,
            pool: 0,
        });
        t
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, v: Var) -> Result<&Node<T>> {
        if v.tape != self.id {
            return Err(Error::Autodiff("variable belongs to another tape".into()));
        }
        self.nodes
            .get(v.index)
            .ok_or_else(|| Error::Autodiff(format!("no node {}", v.index)))
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool, flops: u64) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            grad: None,
            flops,
        });
        Var {
            tape: self.id,
            index: self.nodes.len() - 1,
        }
    }

    /// Record an input tensor. Only leaves with `requires_grad` receive grads.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad, 0)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.check(v).expect("foreign or stale Var").value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.check(v).map(|n| n.requires_grad).unwrap_or(false)
    }

    /// Accumulated gradient of a leaf, present after a backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.check(v).ok().and_then(|n| n.grad.as_ref())
    }

    pub fn zero_grads(&mut self) {
        self.nodes.iter_mut().for_each(|n| n.grad = None);
    }

    /// Floating-point operations of every recorded op (2 per multiply-accumulate
    /// in convolutions, one per element for pointwise work).
    pub fn flops(&self) -> u64 {
        self.nodes.iter().map(|n| n.flops).sum()
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.nodes[v.index].requires_grad)
    }

    pub fn conv(&mut self, input: Var, kernel: Var, bias: Option<Var>, spec: &ConvSpec) -> Result<Var> {
        let x = &self.check(input)?.value;
        let w = &self.check(kernel)?.value;
        let geom = ConvGeom::new(x.shape(), w.shape(), spec)?;
        let b = match bias {
            Some(b) => {
                let bt = &self.check(b)?.value;
                if bt.len() != geom.c_out {
                    return Err(Error::shape(
                        0,
                        format!("bias has {} entries, kernel {} outputs", bt.len(), geom.c_out),
                    ));
                }
                Some(bt)
            }
            None => None,
        };
        let out = conv::forward(x, w, b, &geom);
        let flops = 2 * geom.macs() + if b.is_some() { out.len() as u64 } else { 0 };
        let mut deps = vec![input, kernel];
        deps.extend(bias);
        let rg = self.rg(&deps);
        Ok(self.push(out, Op::Conv { input, kernel, bias, geom }, rg, flops))
    }

    pub fn max_pool(&mut self, input: Var, window: &[usize], stride: &[usize]) -> Result<Var> {
        let x = &self.check(input)?.value;
        let mut res = pool::max_pool(x, window, stride)?;
        if let Some(r) = &mut self.replay {
            let argmax = r.branches.pool.get(r.pool).filter(|a| a.len() == res.argmax.len());
            let argmax = argmax.ok_or_else(|| Error::Autodiff("replayed max_pool does not match the record".into()))?;
            r.pool += 1;
            let src = self.nodes[input.index].value.data();
            for (o, &i) in res.output.data_mut().iter_mut().zip(argmax) {
                *o = src[i];
            }
            res.argmax = argmax.clone();
        }
        let x = &self.nodes[input.index].value;
        let win: usize = crate::autodiff::geom::per_axis(window, x.rank() - 2, "window")?
            .iter()
            .product();
        let flops = (res.output.len() * win) as u64;
        let rg = self.rg(&[input]);
        Ok(self.push(
            res.output,
            Op::MaxPool {
                input,
                argmax: res.argmax,
            },
            rg,
            flops,
        ))
    }

    pub fn adaptive_avg_pool(&mut self, input: Var, out: &[usize]) -> Result<Var> {
        let x = &self.check(input)?.value;
        let y = pool::adaptive_avg_pool(x, out)?;
        let flops = x.len() as u64;
        let rg = self.rg(&[input]);
        Ok(self.push(y, Op::AdaptiveAvgPool { input }, rg, flops))
    }

    /// ×2 bilinear (trilinear in 3D) up-sampling of every spatial axis.
    pub fn upsample_linear(&mut self, input: Var) -> Result<Var> {
        let y = interp::upsample2(&self.check(input)?.value)?;
        let flops = y.len() as u64;
        let rg = self.rg(&[input]);
        Ok(self.push(y, Op::Upsample { input }, rg, flops))
    }

    pub fn batch_norm(
        &mut self,
        input: Var,
        gamma: Var,
        beta: Var,
        stats: &mut BnStats<T>,
        mode: Mode,
        cfg: BnConfig,
    ) -> Result<Var> {
        let x = &self.check(input)?.value;
        let g = &self.check(gamma)?.value;
        let b = &self.check(beta)?.value;
        let res = norm::forward(x, g, b, stats, mode, cfg)?;
        let flops = x.len() as u64;
        let rg = self.rg(&[input, gamma, beta]);
        Ok(self.push(
            res.output,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                xhat: res.xhat,
                inv_std: res.inv_std,
                mode,
            },
            rg,
            flops,
        ))
    }

    fn unary(&mut self, input: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let x = &self.check(input)?.value;
        let y = x.map(f);
        let flops = y.len() as u64;
        let rg = self.rg(&[input]);
        Ok(self.push(y, op, rg, flops))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        let Some(r) = &mut self.replay else {
            return self.unary(input, |v| v.max(T::zero()), Op::Relu { input, mask: None });
        };
        let len = self.nodes.get(input.index).map_or(0, |n| n.value.len());
        let mask = r.branches.relu.get(r.relu).filter(|m| m.len() == len);
        let mask = mask
            .ok_or_else(|| Error::Autodiff("replayed relu does not match the record".into()))?
            .clone();
        r.relu += 1;
        let x = &self.check(input)?.value;
        let data = x.data().iter().zip(&mask).map(|(&v, &m)| if m { v } else { T::zero() }).collect();
        let y = Tensor::from_raw(x.shape().to_vec(), data);
        let flops = y.len() as u64;
        let rg = self.rg(&[input]);
        Ok(self.push(y, Op::Relu { input, mask: Some(mask) }, rg, flops))
    }

    pub fn sigmoid(&mut self, input: Var) -> Result<Var> {
        self.unary(input, |v| T::one() / (T::one() + (-v).exp()), Op::Sigmoid { input })
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        self.unary(input, |v| v * factor, Op::Scale { input, factor })
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T, op: Op<T>) -> Result<Var> {
        let x = &self.check(a)?.value;
        let y = &self.check(b)?.value;
        same_shape(x.shape(), y.shape(), name)?;
        let data = x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect();
        let out = Tensor::from_raw(x.shape().to_vec(), data);
        let flops = out.len() as u64;
        let rg = self.rg(&[a, b]);
        Ok(self.push(out, op, rg, flops))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "add", |p, q| p + q, Op::Add { a, b })
    }

    /// `a - b` element-wise.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "subtract", |p, q| p - q, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.binary(a, b, "multiply", |p, q| p * q, Op::Mul { a, b })
    }

    /// Multiply `[N, C, spatial...]` features by `[N, C, 1...]` weights.
    pub fn channel_scale(&mut self, features: Var, weights: Var) -> Result<Var> {
        let f = &self.check(features)?.value;
        let w = &self.check(weights)?.value;
        if f.rank() < 2 || w.rank() != f.rank() {
            return Err(Error::shape(0, "channel_scale: weights must match feature rank"));
        }
        for axis in 0..2 {
            if w.shape()[axis] != f.shape()[axis] {
                return Err(Error::shape(
                    axis,
                    format!(
                        "channel_scale: weights extent {} vs features {}",
                        w.shape()[axis],
                        f.shape()[axis]
                    ),
                ));
            }
        }
        if let Some(i) = w.shape()[2..].iter().position(|&e| e != 1) {
            return Err(Error::shape(2 + i, "channel_scale: weights must have unit spatial extent"));
        }
        let inner: usize = f.shape()[2..].iter().product();
        let mut data = f.data().to_vec();
        for (chunk, &s) in data.chunks_mut(inner).zip(w.data()) {
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        let out = Tensor::from_raw(f.shape().to_vec(), data);
        let flops = out.len() as u64;
        let rg = self.rg(&[features, weights]);
        Ok(self.push(out, Op::ChannelScale { features, weights }, rg, flops))
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var> {
        let values: Vec<&Tensor<T>> = parts
            .iter()
            .map(|&v| self.check(v).map(|n| &n.value))
            .collect::<Result<_>>()?;
        let out = Tensor::concat_channels(&values)?;
        let rg = self.rg(parts);
        Ok(self.push(out, Op::Concat { parts: parts.to_vec() }, rg, 0))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        let x = &self.check(input)?.value;
        let s = Tensor::scalar(x.sum());
        let flops = x.len() as u64;
        let rg = self.rg(&[input]);
        Ok(self.push(s, Op::Sum { input }, rg, flops))
    }

    /// Mean binary cross-entropy of `pred` against a constant binary target.
    pub fn bce(&mut self, pred: Var, target: &Tensor<T>) -> Result<Var> {
        let p = &self.check(pred)?.value;
        same_shape(p.shape(), target.shape(), "bce")?;
        loss::check_binary(target)?;
        let l = Tensor::scalar(loss::bce(p.data(), target.data()));
        let flops = p.len() as u64;
        let rg = self.rg(&[pred]);
        Ok(self.push(
            l,
            Op::Bce {
                pred,
                target: target.clone(),
            },
            rg,
            flops,
        ))
    }

    /// Branch choices of the piecewise ops recorded so far.
    pub fn branches(&self) -> Branches {
        let mut out = Branches::default();
        for node in &self.nodes {
            match &node.op {
                Op::Relu { mask: Some(m), .. } => out.relu.push(m.clone()),
                Op::Relu { input, mask: None } => {
                    out.relu.push(self.nodes[input.index].value.data().iter().map(|&v| v > T::zero()).collect())
                }
                Op::MaxPool { argmax, .. } => out.pool.push(argmax.clone()),
                _ => {}
            }
        }
        out
    }

    /// Reverse pass from a scalar node. Gradients of `requires_grad` leaves
    /// accumulate across calls until [`Tape::zero_grads`].
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let node = self.check(loss)?;
        if !node.value.is_scalar() {
            return Err(Error::Autodiff(format!(
                "loss must be scalar, has shape {:?}",
                node.value.shape()
            )));
        }
        if !node.requires_grad {
            return Ok(());
        }
        let mut adj: Vec<Option<Vec<T>>> = Vec::new();
        adj.resize_with(loss.index + 1, || None);
        adj[loss.index] = Some(vec![T::one()]);
        let mut leaf_grads = Vec::new();

        for i in (0..=loss.index).rev() {
            let Some(g) = adj[i].take() else { continue };
            let node = &self.nodes[i];
            let nodes = &self.nodes;
            let val = |v: Var| &nodes[v.index].value;
            let wants = |v: Var| nodes[v.index].requires_grad;
            let mut send = |v: Var, grad: Vec<T>| {
                if wants(v) {
                    accumulate(&mut adj[v.index], grad);
                }
            };
            match &node.op {
                Op::Leaf => {
                    if node.requires_grad {
                        leaf_grads.push((i, g));
                    }
                }
                Op::Conv {
                    input,
                    kernel,
                    bias,
                    geom,
                } => {
                    let want = (wants(*input), wants(*kernel), bias.is_some_and(wants));
                    let grads = conv::backward(val(*input), val(*kernel), &g, geom, want);
                    if let Some(d) = grads.input {
                        send(*input, d);
                    }
                    if let Some(d) = grads.kernel {
                        send(*kernel, d);
                    }
                    if let (Some(b), Some(d)) = (bias, grads.bias) {
                        send(*b, d);
                    }
                }
                Op::MaxPool { input, argmax } => {
                    let d = pool::max_pool_backward(val(*input).len(), argmax, &g);
                    send(*input, d);
                }
                Op::AdaptiveAvgPool { input } => {
                    let d = pool::adaptive_avg_pool_backward(val(*input).shape(), node.value.shape(), &g);
                    send(*input, d);
                }
                Op::Upsample { input } => {
                    let d = interp::upsample2_backward(val(*input).shape(), &g);
                    send(*input, d);
                }
                Op::BatchNorm {
                    input,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                    mode,
                } => {
                    let grads = norm::backward(node.value.shape(), val(*gamma), xhat, inv_std, &g, *mode);
                    send(*input, grads.input);
                    send(*gamma, grads.gamma);
                    send(*beta, grads.beta);
                }
                Op::Relu { input, mask } => {
                    let d = match mask {
                        Some(m) => g.iter().zip(m).map(|(&gi, &k)| if k { gi } else { T::zero() }).collect(),
                        None => g
                            .iter()
                            .zip(node.value.data())
                            .map(|(&gi, &y)| if y > T::zero() { gi } else { T::zero() })
                            .collect(),
                    };
                    send(*input, d);
                }
                Op::Sigmoid { input } => {
                    let d = g
                        .iter()
                        .zip(node.value.data())
                        .map(|(&gi, &y)| gi * y * (T::one() - y))
                        .collect();
                    send(*input, d);
                }
                Op::Add { a, b } => {
                    send(*a, g.clone());
                    send(*b, g);
                }
                Op::Sub { a, b } => {
                    send(*b, g.iter().map(|&v| -v).collect());
                    send(*a, g);
                }
                Op::Mul { a, b } => {
                    let (va, vb) = (val(*a).data(), val(*b).data());
                    let da = g.iter().zip(vb).map(|(&gi, &y)| gi * y).collect();
                    let db = g.iter().zip(va).map(|(&gi, &x)| gi * x).collect();
                    send(*a, da);
                    send(*b, db);
                }
                Op::Scale { input, factor } => {
                    send(*input, g.iter().map(|&v| v * *factor).collect());
                }
                Op::ChannelScale { features, weights } => {
                    let f = val(*features);
                    let w = val(*weights);
                    let inner: usize = f.shape()[2..].iter().product();
                    let mut df = g.clone();
                    let mut dw = vec![T::zero(); w.len()];
                    for (k, (chunk, fchunk)) in df.chunks_mut(inner).zip(f.data().chunks(inner)).enumerate() {
                        let s = w.data()[k];
                        let mut acc = T::zero();
                        for (d, &x) in chunk.iter_mut().zip(fchunk) {
                            acc += *d * x;
                            *d *= s;
                        }
                        dw[k] = acc;
                    }
                    send(*features, df);
                    send(*weights, dw);
                }
                Op::Concat { parts } => {
                    let shape = node.value.shape();
                    let (n, c) = (shape[0], shape[1]);
                    let inner: usize = shape[2..].iter().product();
                    let mut start = 0;
                    for &p in parts {
                        let w = val(p).shape()[1];
                        if wants(p) {
                            let mut d = Vec::with_capacity(n * w * inner);
                            for b in 0..n {
                                let off = (b * c + start) * inner;
                                d.extend_from_slice(&g[off..off + w * inner]);
                            }
                            send(p, d);
                        }
                        start += w;
                    }
                }
                Op::Sum { input } => {
                    send(*input, vec![g[0]; val(*input).len()]);
                }
                Op::Bce { pred, target } => {
                    let d = loss::bce_backward(val(*pred).data(), target.data(), g[0]);
                    send(*pred, d);
                }
            }
        }

        for (i, g) in leaf_grads {
            let node = &mut self.nodes[i];
            match node.grad.as_mut() {
                Some(acc) => acc.data_mut().iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                None => node.grad = Some(Tensor::from_raw(node.value.shape().to_vec(), g)),
            }
        }
        Ok(())
    }
}
