//! Dense row-major tensors in `[N, C, spatial...]` layout.

mod element;
pub mod io;

pub use element::{DType, Element, Float};

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 5;

/// Dense N-dimensional array. Extents are positive and the buffer length is
/// always the product of the extents.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            detail: format!("rank must be 1..={MAX_RANK}"),
        });
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            detail: format!("axis {axis} has zero extent"),
        });
    }
    Ok(shape.iter().product())
}

impl<T: Element> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::InvalidShape {
                shape,
                detail: format!("buffer holds {} elements, shape needs {n}", data.len()),
            });
        }
        Ok(Self { shape, data })
    }

    /// Construct from parts already known to be consistent.
    pub(crate) fn from_raw(shape: Vec<usize>, data: Vec<T>) -> Self {
        debug_assert!(check_shape(&shape).is_ok_and(|n| n == data.len()));
        Self { shape, data }
    }

    pub fn full(shape: &[usize], value: T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        })
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::full(shape, T::default())
    }

    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Result<Self> {
        let n = check_shape(shape)?;
        Ok(Self {
            shape: shape.to_vec(),
            data: (0..n).map(f).collect(),
        })
    }

    pub fn scalar(value: T) -> Self {
        Self::from_raw(vec![1], vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn dtype(&self) -> DType {
        T::DTYPE
    }

    /// Extents after the batch and channel axes.
    pub fn spatial(&self) -> &[usize] {
        if self.shape.len() > 2 {
            &self.shape[2..]
        } else {
            &[]
        }
    }

    pub fn is_scalar(&self) -> bool {
        self.data.len() == 1
    }

    pub fn flat_index(&self, index: &[usize]) -> Option<usize> {
        if index.len() != self.shape.len() {
            return None;
        }
        let mut flat = 0;
        for (&i, &e) in index.iter().zip(&self.shape) {
            if i >= e {
                return None;
            }
            flat = flat * e + i;
        }
        Some(flat)
    }

    pub fn get(&self, index: &[usize]) -> Option<T> {
        self.flat_index(index).map(|i| self.data[i])
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Self::new(shape, self.data)
    }

    pub fn map<U: Element>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor::from_raw(self.shape.clone(), self.data.iter().map(|&x| f(x)).collect())
    }

    /// Split along the channel axis (axis 1) into parts of the given widths.
    pub fn split_channels(&self, widths: &[usize]) -> Result<Vec<Tensor<T>>> {
        if self.rank() < 2 {
            return Err(Error::shape(1, "tensor has no channel axis"));
        }
        let total: usize = widths.iter().sum();
        if total != self.shape[1] || widths.contains(&0) {
            return Err(Error::shape(
                1,
                format!("widths {widths:?} do not partition {} channels", self.shape[1]),
            ));
        }
        let n = self.shape[0];
        let inner: usize = self.shape[2..].iter().product();
        let c = self.shape[1];
        let mut parts = Vec::with_capacity(widths.len());
        let mut start = 0;
        for &w in widths {
            let mut data = Vec::with_capacity(n * w * inner);
            for b in 0..n {
                let off = (b * c + start) * inner;
                data.extend_from_slice(&self.data[off..off + w * inner]);
            }
            let mut shape = self.shape.clone();
            shape[1] = w;
            parts.push(Tensor::from_raw(shape, data));
            start += w;
        }
        Ok(parts)
    }

    /// Concatenate along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::arg("concat of zero tensors"))?;
        if first.rank() < 2 {
            return Err(Error::shape(1, "tensor has no channel axis"));
        }
        for p in &parts[1..] {
            if p.rank() != first.rank() {
                return Err(Error::shape(0, "rank differs between concat parts"));
            }
            for axis in (0..first.rank()).filter(|&a| a != 1) {
                if p.shape[axis] != first.shape[axis] {
                    return Err(Error::shape(
                        axis,
                        format!("extent {} vs {}", p.shape[axis], first.shape[axis]),
                    ));
                }
            }
        }
        let n = first.shape[0];
        let inner: usize = first.shape[2..].iter().product();
        let c_total: usize = parts.iter().map(|p| p.shape[1]).sum();
        let mut data = Vec::with_capacity(n * c_total * inner);
        for b in 0..n {
            for p in parts {
                let block = p.shape[1] * inner;
                data.extend_from_slice(&p.data[b * block..(b + 1) * block]);
            }
        }
        let mut shape = first.shape.clone();
        shape[1] = c_total;
        Ok(Tensor::from_raw(shape, data))
    }
}

impl<T: Float> Tensor<T> {
    pub fn cast<U: Float>(&self) -> Tensor<U> {
        self.map(|x| U::from_f64(x.as_f64()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor<T>) -> Option<T> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| (a - b).abs())
                .fold(T::zero(), |m, d| if d > m { d } else { m }),
        )
    }
}

/// A tensor whose element type is only known at runtime (file I/O).
#[derive(Clone, Debug, PartialEq)]
pub enum DynTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
    U8(Tensor<u8>),
}

impl DynTensor {
    pub fn dtype(&self) -> DType {
        match self {
            DynTensor::F32(_) => DType::F32,
            DynTensor::F64(_) => DType::F64,
            DynTensor::U8(_) => DType::U8,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            DynTensor::F32(t) => t.shape(),
            DynTensor::F64(t) => t.shape(),
            DynTensor::U8(t) => t.shape(),
        }
    }

    /// Convert to f32, widening u8 values unchanged (0..=255).
    pub fn into_f32(self) -> Tensor<f32> {
        match self {
            DynTensor::F32(t) => t,
            DynTensor::F64(t) => t.cast(),
            DynTensor::U8(t) => t.map(f32::from),
        }
    }

    /// Interpret as a binary mask: any non-zero value becomes 1.
    pub fn into_mask(self) -> Tensor<u8> {
        match self {
            DynTensor::U8(t) => t.map(|v| u8::from(v != 0)),
            DynTensor::F32(t) => t.map(|v| u8::from(v != 0.0)),
            DynTensor::F64(t) => t.map(|v| u8::from(v != 0.0)),
        }
    }
}

impl From<Tensor<f32>> for DynTensor {
    fn from(t: Tensor<f32>) -> Self {
        DynTensor::F32(t)
    }
}

impl From<Tensor<f64>> for DynTensor {
    fn from(t: Tensor<f64>) -> Self {
        DynTensor::F64(t)
    }
}

impl From<Tensor<u8>> for DynTensor {
    fn from(t: Tensor<u8>) -> Self {
        DynTensor::U8(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::<f32>::zeros(&[]).is_err());
        assert!(Tensor::<f32>::zeros(&[1, 0, 3]).is_err());
        assert!(Tensor::<f32>::zeros(&[1, 1, 1, 1, 1, 1]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0f32; 3]).is_err());
    }

    #[test]
    fn concat_split_shapes() {
        let a = Tensor::<f32>::from_fn(&[2, 8, 3, 3], |i| i as f32).unwrap();
        let b = Tensor::<f32>::from_fn(&[2, 16, 3, 3], |i| -(i as f32)).unwrap();
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 24, 3, 3]);
        let parts = c.split_channels(&[8, 16]).unwrap();
        assert_eq!(parts[0], a);
        assert_eq!(parts[1], b);
    }

    #[test]
    fn concat_rejects_spatial_mismatch() {
        let a = Tensor::<f32>::zeros(&[1, 2, 3, 3]).unwrap();
        let b = Tensor::<f32>::zeros(&[1, 2, 3, 4]).unwrap();
        match Tensor::concat_channels(&[&a, &b]) {
            Err(Error::ShapeMismatch { axis, .. }) => assert_eq!(axis, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn flat_index_row_major() {
        let t = Tensor::<f32>::from_fn(&[2, 3, 4], |i| i as f32).unwrap();
        assert_eq!(t.get(&[1, 2, 3]), Some(23.0));
        assert_eq!(t.get(&[2, 0, 0]), None);
    }
}
