//! PCTN binary tensor container.
//!
//! Layout, all little-endian:
//!
//! ```text
//! b"PCTN" | version: u16 | dtype: u8 | rank: u8 | extents: rank × u64 | data
//! ```
//!
//! dtype codes: 0 = f32, 1 = f64, 2 = u8.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{DType, DynTensor, Element, Tensor, MAX_RANK};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"PCTN";
pub const VERSION: u16 = 1;

pub fn encode<T: Element>(tensor: &Tensor<T>, out: &mut Vec<u8>) {
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(T::DTYPE.code());
    out.push(tensor.rank() as u8);
    for &e in tensor.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    out.reserve(tensor.len() * T::DTYPE.size());
    for &v in tensor.data() {
        v.write_le(out);
    }
}

pub fn encode_dyn(tensor: &DynTensor, out: &mut Vec<u8>) {
    match tensor {
        DynTensor::F32(t) => encode(t, out),
        DynTensor::F64(t) => encode(t, out),
        DynTensor::U8(t) => encode(t, out),
    }
}

fn read_exact(r: &mut impl Read, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf)
        .map_err(|e| Error::Format(format!("truncated PCTN record ({what}): {e}")))
}

fn decode_body<T: Element>(r: &mut impl Read, shape: Vec<usize>) -> Result<Tensor<T>> {
    let n: usize = shape.iter().product();
    let size = T::DTYPE.size();
    let mut bytes = vec![0u8; n * size];
    read_exact(r, &mut bytes, "data")?;
    let data = bytes.chunks_exact(size).map(T::read_le).collect();
    Tensor::new(shape, data)
}

/// Read one record from a stream positioned at its magic bytes.
pub fn read_dyn(r: &mut impl Read) -> Result<DynTensor> {
    let mut head = [0u8; 8];
    read_exact(r, &mut head, "header")?;
    if &head[..4] != MAGIC {
        return Err(Error::Format(format!("bad magic {:?}", &head[..4])));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported PCTN version {version}")));
    }
    let dtype = DType::from_code(head[6])
        .ok_or_else(|| Error::Format(format!("unknown dtype code {}", head[6])))?;
    let rank = head[7] as usize;
    if rank == 0 || rank > MAX_RANK {
        return Err(Error::Format(format!("rank {rank} out of range")));
    }
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let mut e = [0u8; 8];
        read_exact(r, &mut e, "extents")?;
        let extent = u64::from_le_bytes(e);
        let extent = usize::try_from(extent)
            .map_err(|_| Error::Format(format!("extent {extent} too large")))?;
        shape.push(extent);
    }
    Ok(match dtype {
        DType::F32 => DynTensor::F32(decode_body(r, shape)?),
        DType::F64 => DynTensor::F64(decode_body(r, shape)?),
        DType::U8 => DynTensor::U8(decode_body(r, shape)?),
    })
}

/// Read one record and require a specific element type.
pub fn read<T: Element>(r: &mut impl Read) -> Result<Tensor<T>> {
    let any = read_dyn(r)?;
    let found = any.dtype();
    let wrong = || Error::DType(format!("expected {:?}, found {found:?}", T::DTYPE));
    // Route through the concrete variants; the casts below are identity casts.
    let boxed: Box<dyn std::any::Any> = match any {
        DynTensor::F32(t) => Box::new(t),
        DynTensor::F64(t) => Box::new(t),
        DynTensor::U8(t) => Box::new(t),
    };
    boxed.downcast::<Tensor<T>>().map(|b| *b).map_err(|_| wrong())
}

pub fn save<T: Element>(path: impl AsRef<Path>, tensor: &Tensor<T>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    encode(tensor, &mut buf);
    write_file(path, &buf)
}

pub fn load_dyn(path: impl AsRef<Path>) -> Result<DynTensor> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dyn(&mut BufReader::new(f))
}

pub fn load<T: Element>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read(&mut BufReader::new(f))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}
