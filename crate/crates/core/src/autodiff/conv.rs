//! Convolution over 1–3 spatial axes via im2col and GEMM.

use super::geom::{lift, numel, per_axis, split_nc};
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{Float, Tensor};

/// Stride and zero padding per spatial axis; a single value applies to all.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

impl ConvSpec {
    pub fn new(stride: usize, padding: usize) -> Self {
        Self {
            stride: vec![stride],
            padding: vec![padding],
        }
    }

    /// Stride 1, padding chosen to keep extents for odd kernel size `k`.
    pub fn same(k: usize) -> Self {
        Self::new(1, k / 2)
    }
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self::new(1, 0)
    }
}

#[derive(Clone, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub inp: [usize; 3],
    pub k: [usize; 3],
    pub stride: [usize; 3],
    pub pad: [usize; 3],
    pub out: [usize; 3],
    pub out_shape: Vec<usize>,
}

impl ConvGeom {
    pub fn new(input: &[usize], kernel: &[usize], spec: &ConvSpec) -> Result<Self> {
        let (n, c_in, inp) = split_nc(input, "convolve")?;
        let r = input.len() - 2;
        if kernel.len() != input.len() {
            return Err(Error::shape(
                0,
                format!(
                    "kernel rank {} does not match input rank {}",
                    kernel.len(),
                    input.len()
                ),
            ));
        }
        if kernel[1] != c_in {
            return Err(Error::shape(
                1,
                format!("kernel expects {} input channels, input has {c_in}", kernel[1]),
            ));
        }
        let stride = per_axis(&spec.stride, r, "stride")?;
        let padding = per_axis(&spec.padding, r, "padding")?;
        if stride.contains(&0) {
            return Err(Error::arg("stride must be at least 1"));
        }
        let mut out_spatial = Vec::with_capacity(r);
        for i in 0..r {
            let padded = input[2 + i] + 2 * padding[i];
            if padded < kernel[2 + i] {
                return Err(Error::shape(
                    2 + i,
                    format!(
                        "padded extent {padded} smaller than kernel extent {}",
                        kernel[2 + i]
                    ),
                ));
            }
            out_spatial.push((padded - kernel[2 + i]) / stride[i] + 1);
        }
        let mut out_shape = vec![n, kernel[0]];
        out_shape.extend_from_slice(&out_spatial);
        Ok(Self {
            n,
            c_in,
            c_out: kernel[0],
            inp,
            k: lift(&kernel[2..], 1),
            stride: lift(&stride, 1),
            pad: lift(&padding, 0),
            out: lift(&out_spatial, 1),
            out_shape,
        })
    }

    fn cols_rows(&self) -> usize {
        self.c_in * numel(self.k)
    }

    fn out_len(&self) -> usize {
        numel(self.out)
    }

    fn in_len(&self) -> usize {
        self.c_in * numel(self.inp)
    }

    /// Pointwise kernels read the input directly instead of unfolding it.
    fn is_pointwise(&self) -> bool {
        self.k == [1, 1, 1] && self.stride == [1, 1, 1] && self.pad == [0, 0, 0]
    }

    pub fn macs(&self) -> u64 {
        (self.n * self.c_out * self.out_len() * self.cols_rows()) as u64
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel offset `k_off`
/// with stride 1: input index `o + k_off - pad` must fall inside `[0, len)`.
fn valid_range(out_len: usize, in_len: usize, k_off: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(k_off).min(out_len);
    let hi = (in_len + pad).saturating_sub(k_off).min(out_len).max(lo);
    (lo, hi)
}

#[inline]
fn src_index(o: usize, stride: usize, k_off: usize, pad: usize, len: usize) -> Option<usize> {
    let i = (o * stride + k_off).checked_sub(pad)?;
    (i < len).then_some(i)
}

fn im2col<T: Float>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let [id, ih, iw] = g.inp;
    let [kd, kh, kw] = g.k;
    let [od, oh, ow] = g.out;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let p = od * oh * ow;
    let plane = id * ih * iw;
    let mut row = 0;
    for c in 0..g.c_in {
        let xc = &x[c * plane..(c + 1) * plane];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for zo in 0..od {
                        let zi = src_index(zo, sd, a, pd, id);
                        for yo in 0..oh {
                            let drow = &mut dst[(zo * oh + yo) * ow..(zo * oh + yo + 1) * ow];
                            let (Some(zi), Some(yi)) = (zi, src_index(yo, sh, b, ph, ih)) else {
                                drow.fill(T::zero());
                                continue;
                            };
                            let src = &xc[(zi * ih + yi) * iw..(zi * ih + yi + 1) * iw];
                            if sw == 1 {
                                let (lo, hi) = valid_range(ow, iw, e, pw);
                                drow[..lo].fill(T::zero());
                                drow[hi..].fill(T::zero());
                                if hi > lo {
                                    let s0 = lo + e - pw;
                                    drow[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                                }
                            } else {
                                for (xo, d) in drow.iter_mut().enumerate() {
                                    *d = match src_index(xo, sw, e, pw, iw) {
                                        Some(xi) => src[xi],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

/// Reusable buffer of exactly `len` elements. Contents are stale; callers
/// must overwrite every element (im2col and beta=0 GEMM both do).
fn scratch<T: Float>(buf: &mut Vec<T>, len: usize) -> &mut [T] {
    buf.resize(len, T::zero());
    &mut buf[..len]
}

fn col2im<T: Float>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let [id, ih, iw] = g.inp;
    let [kd, kh, kw] = g.k;
    let [od, oh, ow] = g.out;
    let [sd, sh, sw] = g.stride;
    let [pd, ph, pw] = g.pad;
    let p = od * oh * ow;
    let plane = id * ih * iw;
    let mut row = 0;
    for c in 0..g.c_in {
        let dxc = &mut dx[c * plane..(c + 1) * plane];
        for a in 0..kd {
            for b in 0..kh {
                for e in 0..kw {
                    let src = &cols[row * p..(row + 1) * p];
                    for zo in 0..od {
                        let Some(zi) = src_index(zo, sd, a, pd, id) else {
                            continue;
                        };
                        for yo in 0..oh {
                            let Some(yi) = src_index(yo, sh, b, ph, ih) else {
                                continue;
                            };
                            let srow = &src[(zo * oh + yo) * ow..(zo * oh + yo + 1) * ow];
                            let drow = &mut dxc[(zi * ih + yi) * iw..(zi * ih + yi + 1) * iw];
                            if sw == 1 {
                                let (lo, hi) = valid_range(ow, iw, e, pw);
                                if hi == lo {
                                    continue;
                                }
                                let d0 = lo + e - pw;
                                for (d, &s) in drow[d0..d0 + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                                    *d += s;
                                }
                            } else {
                                for (xo, &s) in srow.iter().enumerate() {
                                    if let Some(xi) = src_index(xo, sw, e, pw, iw) {
                                        drow[xi] += s;
                                    }
                                }
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }
}

pub(crate) fn forward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    g: &ConvGeom,
) -> Tensor<T> {
    let (k, p) = (g.cols_rows(), g.out_len());
    let in_len = g.in_len();
    let mut out = vec![T::zero(); g.n * g.c_out * p];
    exec::for_each_chunk_mut_with(&mut out, g.c_out * p, Vec::new, |buf, n, out_n| {
        let xn = &x.data()[n * in_len..(n + 1) * in_len];
        let cols: &[T] = if g.is_pointwise() {
            xn
        } else {
            im2col(xn, g, scratch(buf, k * p));
            buf
        };
        T::gemm(
            g.c_out,
            k,
            p,
            T::one(),
            w.data(),
            (k as isize, 1),
            cols,
            (p as isize, 1),
            T::zero(),
            out_n,
            (p as isize, 1),
        );
        if let Some(b) = bias {
            for (co, row) in out_n.chunks_mut(p).enumerate() {
                let bv = b.data()[co];
                row.iter_mut().for_each(|v| *v += bv);
            }
        }
    });
    Tensor::from_raw(g.out_shape.clone(), out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub kernel: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn backward<T: Float>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dout: &[T],
    g: &ConvGeom,
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let (want_x, want_w, want_b) = want;
    let (k, p) = (g.cols_rows(), g.out_len());
    let in_len = g.in_len();
    let per_sample = exec::map_indexed_with(g.n, Vec::new, |buf, n| {
        let xn = &x.data()[n * in_len..(n + 1) * in_len];
        let dn = &dout[n * g.c_out * p..(n + 1) * g.c_out * p];
        let dw = want_w.then(|| {
            let cols: &[T] = if g.is_pointwise() {
                xn
            } else {
                im2col(xn, g, scratch(buf, k * p));
                buf
            };
            let mut dw = vec![T::zero(); g.c_out * k];
            T::gemm(
                g.c_out,
                p,
                k,
                T::one(),
                dn,
                (p as isize, 1),
                cols,
                (1, p as isize),
                T::zero(),
                &mut dw,
                (k as isize, 1),
            );
            dw
        });
        let dx = want_x.then(|| {
            let dcols = scratch(buf, k * p);
            T::gemm(
                k,
                g.c_out,
                p,
                T::one(),
                w.data(),
                (1, k as isize),
                dn,
                (p as isize, 1),
                T::zero(),
                dcols,
                (p as isize, 1),
            );
            if g.is_pointwise() {
                dcols.to_vec()
            } else {
                let mut dx = vec![T::zero(); in_len];
                col2im(dcols, g, &mut dx);
                dx
            }
        });
        (dx, dw)
    });

    let mut input = want_x.then(|| Vec::with_capacity(g.n * in_len));
    let mut kernel: Option<Vec<T>> = None;
    for (dx, dw) in per_sample {
        if let (Some(acc), Some(dx)) = (input.as_mut(), dx) {
            acc.extend_from_slice(&dx);
        }
        if let Some(dw) = dw {
            match kernel.as_mut() {
                None => kernel = Some(dw),
                Some(acc) => acc.iter_mut().zip(&dw).for_each(|(a, &b)| *a += b),
            }
        }
    }
    let bias = want_b.then(|| {
        let mut db = vec![T::zero(); g.c_out];
        for n in 0..g.n {
            for (co, acc) in db.iter_mut().enumerate() {
                let off = (n * g.c_out + co) * p;
                *acc += dout[off..off + p].iter().copied().sum::<T>();
            }
        }
        db
    });
    ConvGrads {
        input,
        kernel,
        bias,
    }
}
