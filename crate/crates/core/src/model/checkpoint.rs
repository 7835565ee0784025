use std::io::Read;
use std::path::Path;

use super::graph::{build_model, ModelGraph, ModelSpec, Variant};
use crate::error::{Error, Result};
use crate::tensor::io::{encode, read, write_file};
use crate::tensor::{Float, Tensor};

pub const MAGIC: &[u8; 4] = b"PCCK";
pub const VERSION: u16 = 1;

/// Serialises a model: magic, version, a length-prefixed text manifest
/// (architecture plus every tensor name and shape, in order), then one PCTN
/// record per parameter followed by the running mean and variance of every
/// batch-norm layer.
pub fn encode_checkpoint<T: Float>(model: &ModelGraph<T>) -> Vec<u8> {
    let manifest = manifest(model);
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(manifest.len() as u32).to_le_bytes());
    out.extend_from_slice(manifest.as_bytes());
    for t in model.params.values() {
        encode(t, &mut out);
    }
    for s in model.params.buffers() {
        encode(&s.mean, &mut out);
        encode(&s.var, &mut out);
    }
    out
}

fn shape_str(t: &Tensor<impl Float>) -> String {
    t.shape().iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

fn manifest<T: Float>(model: &ModelGraph<T>) -> String {
    let spec = model.spec();
    let mut m = format!(
        "variant\t{}\nspatial_rank\t{}\nbase_channels\t{}\nlevels\t{}\n",
        spec.variant, spec.spatial_rank, spec.base_channels, spec.levels
    );
    for (name, t) in model.params.names().iter().zip(model.params.values()) {
        m.push_str(&format!("param\t{name}\t{}\n", shape_str(t)));
    }
    for (name, s) in model.params.buffer_names().iter().zip(model.params.buffers()) {
        m.push_str(&format!("buffer\t{name}\t{}\n", shape_str(&s.mean)));
    }
    m
}

fn field<'a>(lines: &mut impl Iterator<Item = &'a str>, key: &str) -> Result<&'a str> {
    let line = lines.next().ok_or_else(|| Error::Format(format!("manifest ends before `{key}`")))?;
    match line.split_once('\t') {
        Some((k, v)) if k == key => Ok(v),
        _ => Err(Error::Format(format!("manifest: expected `{key}`, found `{line}`"))),
    }
}

fn number(v: &str, key: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Format(format!("manifest: bad {key} `{v}`")))
}

pub fn decode_checkpoint<T: Float>(r: &mut impl Read) -> Result<ModelGraph<T>> {
    let mut head = [0u8; 10];
    r.read_exact(&mut head)
        .map_err(|_| Error::Format("checkpoint truncated in header".into()))?;
    if &head[..4] != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = u16::from_le_bytes([head[4], head[5]]);
    if version != VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let len = u32::from_le_bytes([head[6], head[7], head[8], head[9]]) as usize;
    let mut text = vec![0u8; len];
    r.read_exact(&mut text)
        .map_err(|_| Error::Format("checkpoint truncated in manifest".into()))?;
    let text = String::from_utf8(text).map_err(|_| Error::Format("manifest is not UTF-8".into()))?;
    let mut lines = text.lines();
    let variant: Variant = field(&mut lines, "variant")?.parse().map_err(|e| Error::Format(format!("{e}")))?;
    let rank = number(field(&mut lines, "spatial_rank")?, "spatial_rank")?;
    let channels = number(field(&mut lines, "base_channels")?, "base_channels")?;
    let levels = number(field(&mut lines, "levels")?, "levels")?;
    let spec = ModelSpec::new(variant, rank, channels).with_levels(levels);
    let mut model: ModelGraph<T> = build_model(spec, 0)?;
    let expected = manifest(&model);
    if expected != text {
        return Err(Error::Format("manifest does not match the architecture it names".into()));
    }
    for (name, slot) in model.params.names().to_vec().iter().zip(model.params.values_mut()) {
        let t: Tensor<T> = read(r)?;
        if t.shape() != slot.shape() {
            return Err(Error::Format(format!("{name}: stored shape {:?}", t.shape())));
        }
        *slot = t;
    }
    for s in model.params.buffers_mut() {
        let mean: Tensor<T> = read(r)?;
        let var: Tensor<T> = read(r)?;
        if mean.shape() != s.mean.shape() || var.shape() != s.var.shape() {
            return Err(Error::Format("batch-norm statistics have the wrong shape".into()));
        }
        s.mean = mean;
        s.var = var;
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    Ok(model)
}

pub fn save_checkpoint<T: Float>(path: impl AsRef<Path>, model: &ModelGraph<T>) -> Result<()> {
    write_file(path.as_ref(), &encode_checkpoint(model))
}

pub fn load_checkpoint<T: Float>(path: impl AsRef<Path>) -> Result<ModelGraph<T>> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&mut bytes.as_slice())
}
