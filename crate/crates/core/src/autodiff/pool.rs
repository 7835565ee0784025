use super::geom::{lift, numel, per_axis, split_nc};
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub(crate) struct MaxPoolOut<T> {
    pub output: Tensor<T>,
    /// Flat input index of the selected element for every output element.
    pub argmax: Vec<usize>,
}

pub(crate) fn max_pool<T: Float>(
    x: &Tensor<T>,
    window: &[usize],
    stride: &[usize],
) -> Result<MaxPoolOut<T>> {
    let (n, c, inp) = split_nc(x.shape(), "max_pool")?;
    let r = x.rank() - 2;
    let window = per_axis(window, r, "window")?;
    let stride = per_axis(stride, r, "stride")?;
    if stride.contains(&0) || window.contains(&0) {
        return Err(Error::arg("max_pool window and stride must be at least 1"));
    }
    let mut out_spatial = Vec::with_capacity(r);
    for i in 0..r {
        let e = x.shape()[2 + i];
        if window[i] > e {
            return Err(Error::shape(
                2 + i,
                format!("window {} larger than extent {e}", window[i]),
            ));
        }
        out_spatial.push((e - window[i]) / stride[i] + 1);
    }
    let out = lift(&out_spatial, 1);
    let win = lift(&window, 1);
    let st = lift(&stride, 1);
    let plane_in = numel(inp);
    let plane_out = numel(out);
    let mut values = Vec::with_capacity(n * c * plane_out);
    let mut argmax = Vec::with_capacity(n * c * plane_out);
    let xd = x.data();
    for nc in 0..n * c {
        let base = nc * plane_in;
        for zo in 0..out[0] {
            for yo in 0..out[1] {
                for xo in 0..out[2] {
                    let mut best = base + ((zo * st[0]) * inp[1] + yo * st[1]) * inp[2] + xo * st[2];
                    let mut best_v = xd[best];
                    for a in 0..win[0] {
                        for b in 0..win[1] {
                            let row = base
                                + ((zo * st[0] + a) * inp[1] + yo * st[1] + b) * inp[2]
                                + xo * st[2];
                            for (e, &v) in xd[row..row + win[2]].iter().enumerate() {
                                // strict comparison keeps the first maximum in row-major order
                                if v > best_v {
                                    best_v = v;
                                    best = row + e;
                                }
                            }
                        }
                    }
                    values.push(best_v);
                    argmax.push(best);
                }
            }
        }
    }
    let mut shape = vec![n, c];
    shape.extend_from_slice(&out_spatial);
    Ok(MaxPoolOut {
        output: Tensor::from_raw(shape, values),
        argmax,
    })
}

pub(crate) fn max_pool_backward<T: Float>(input_len: usize, argmax: &[usize], dout: &[T]) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&i, &g) in argmax.iter().zip(dout) {
        dx[i] += g;
    }
    dx
}

/// Bin `i` of `out` bins over an axis of length `len` covers
/// `floor(i·len/out) .. floor((i+1)·len/out)`.
pub(crate) fn bin_bounds(i: usize, len: usize, out: usize) -> (usize, usize) {
    (i * len / out, (i + 1) * len / out)
}

pub(crate) fn adaptive_avg_pool_shape(shape: &[usize], out: &[usize]) -> Result<Vec<usize>> {
    split_nc(shape, "adaptive_avg_pool")?;
    let r = shape.len() - 2;
    let out = per_axis(out, r, "output size")?;
    let mut res = shape[..2].to_vec();
    for i in 0..r {
        if out[i] == 0 || out[i] > shape[2 + i] {
            return Err(Error::shape(
                2 + i,
                format!("output extent {} exceeds input extent {}", out[i], shape[2 + i]),
            ));
        }
        res.push(out[i]);
    }
    Ok(res)
}

/// Visit every (output cell, input cell) pair with the bin's element count.
fn for_each_bin(
    in_shape: &[usize],
    out_shape: &[usize],
    mut f: impl FnMut(usize, usize, usize),
) {
    let inp = lift(&in_shape[2..], 1);
    let out = lift(&out_shape[2..], 1);
    let nc = in_shape[0] * in_shape[1];
    let (pi, po) = (numel(inp), numel(out));
    for plane in 0..nc {
        for zo in 0..out[0] {
            let (z0, z1) = bin_bounds(zo, inp[0], out[0]);
            for yo in 0..out[1] {
                let (y0, y1) = bin_bounds(yo, inp[1], out[1]);
                for xo in 0..out[2] {
                    let (x0, x1) = bin_bounds(xo, inp[2], out[2]);
                    let count = (z1 - z0) * (y1 - y0) * (x1 - x0);
                    let o = plane * po + (zo * out[1] + yo) * out[2] + xo;
                    for z in z0..z1 {
                        for y in y0..y1 {
                            let row = plane * pi + (z * inp[1] + y) * inp[2];
                            for xi in x0..x1 {
                                f(o, row + xi, count);
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn adaptive_avg_pool<T: Float>(x: &Tensor<T>, out: &[usize]) -> Result<Tensor<T>> {
    let shape = adaptive_avg_pool_shape(x.shape(), out)?;
    let mut sums = vec![T::zero(); shape.iter().product()];
    let mut counts = vec![0usize; sums.len()];
    let xd = x.data();
    for_each_bin(x.shape(), &shape, |o, i, count| {
        sums[o] += xd[i];
        counts[o] = count;
    });
    for (s, &c) in sums.iter_mut().zip(&counts) {
        *s = *s / T::from_f64(c as f64);
    }
    Ok(Tensor::from_raw(shape, sums))
}

pub(crate) fn adaptive_avg_pool_backward<T: Float>(
    in_shape: &[usize],
    out_shape: &[usize],
    dout: &[T],
) -> Vec<T> {
    let mut dx = vec![T::zero(); in_shape.iter().product()];
    for_each_bin(in_shape, out_shape, |o, i, count| {
        dx[i] += dout[o] / T::from_f64(count as f64);
    });
    dx
}
