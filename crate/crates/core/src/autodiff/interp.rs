//! ×2 linear up-sampling with half-pixel centers (align-corners false):
//! output sample `i` reads source coordinate `(i + 0.5) / 2 - 0.5`, clamped
//! at zero, interpolated between its two nearest source cells.

use super::geom::split_nc;
use crate::error::Result;
use crate::tensor::{Float, Tensor};

/// Source cells and weight of the upper cell for output index `i`.
#[inline]
fn taps(i: usize, len: usize) -> (usize, usize, f64) {
    let src = ((i as f64 + 0.5) / 2.0 - 0.5).max(0.0);
    let i0 = (src.floor() as usize).min(len - 1);
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, src - i0 as f64)
}

/// Up-sample one axis of a tensor viewed as `[outer, len, inner]`.
fn upsample_axis<T: Float>(x: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let out_len = 2 * len;
    let mut out = vec![T::zero(); outer * out_len * inner];
    for o in 0..outer {
        for i in 0..out_len {
            let (i0, i1, f) = taps(i, len);
            let (w0, w1) = (T::from_f64(1.0 - f), T::from_f64(f));
            let dst = &mut out[(o * out_len + i) * inner..(o * out_len + i + 1) * inner];
            let a = &x[(o * len + i0) * inner..(o * len + i0 + 1) * inner];
            let b = &x[(o * len + i1) * inner..(o * len + i1 + 1) * inner];
            for ((d, &va), &vb) in dst.iter_mut().zip(a).zip(b) {
                *d = w0 * va + w1 * vb;
            }
        }
    }
    out
}

fn upsample_axis_adjoint<T: Float>(g: &[T], outer: usize, len: usize, inner: usize) -> Vec<T> {
    let out_len = 2 * len;
    let mut dx = vec![T::zero(); outer * len * inner];
    for o in 0..outer {
        for i in 0..out_len {
            let (i0, i1, f) = taps(i, len);
            let (w0, w1) = (T::from_f64(1.0 - f), T::from_f64(f));
            let src = &g[(o * out_len + i) * inner..(o * out_len + i + 1) * inner];
            for (j, &v) in src.iter().enumerate() {
                dx[(o * len + i0) * inner + j] += w0 * v;
                dx[(o * len + i1) * inner + j] += w1 * v;
            }
        }
    }
    dx
}

pub(crate) fn upsample2_shape(shape: &[usize]) -> Result<Vec<usize>> {
    split_nc(shape, "upsample_linear")?;
    let mut out = shape.to_vec();
    out[2..].iter_mut().for_each(|e| *e *= 2);
    Ok(out)
}

pub(crate) fn upsample2<T: Float>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let out_shape = upsample2_shape(x.shape())?;
    let mut shape = x.shape().to_vec();
    let mut data = x.data().to_vec();
    // innermost axis first
    for axis in (2..shape.len()).rev() {
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        data = upsample_axis(&data, outer, shape[axis], inner);
        shape[axis] *= 2;
    }
    debug_assert_eq!(shape, out_shape);
    Ok(Tensor::from_raw(out_shape, data))
}

pub(crate) fn upsample2_backward<T: Float>(in_shape: &[usize], dout: &[T]) -> Vec<T> {
    let mut shape: Vec<usize> = in_shape.to_vec();
    shape[2..].iter_mut().for_each(|e| *e *= 2);
    let mut g = dout.to_vec();
    // reverse of the forward order: outermost spatial axis first
    for axis in 2..shape.len() {
        shape[axis] /= 2;
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        g = upsample_axis_adjoint(&g, outer, shape[axis], inner);
    }
    g
}
