use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::preprocess::green_channel;
use crate::error::{Error, Result};
use crate::tensor::{io, DynTensor, Tensor};

/// Acquisition type, which selects the preprocessing chain.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Modality {
    Fundus,
    Cta,
    Synthetic,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Fundus => "fundus",
            Modality::Cta => "cta",
            Modality::Synthetic => "synthetic",
        })
    }
}

impl FromStr for Modality {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "fundus" => Ok(Modality::Fundus),
            "cta" => Ok(Modality::Cta),
            "synthetic" => Ok(Modality::Synthetic),
            _ => Err(Error::arg(format!("unknown modality `{s}` (fundus, cta, synthetic)"))),
        }
    }
}

/// One image or volume. `pixels` is `[1, H, W]` or `[1, D, H, W]`; `mask`
/// holds the spatial extents only (`[H, W]` or `[D, H, W]`).
#[derive(Clone, Debug, PartialEq)]
pub struct ImageRecord {
    pub id: String,
    pub pixels: Tensor<f32>,
    pub mask: Option<Tensor<u8>>,
    /// Voxel spacing in millimetres, in array axis order.
    pub spacing: Vec<f64>,
    pub modality: Modality,
}

impl ImageRecord {
    pub fn new(id: impl Into<String>, pixels: Tensor<f32>, mask: Option<Tensor<u8>>, modality: Modality) -> Result<Self> {
        let shape = pixels.shape();
        if !(3..=4).contains(&shape.len()) || shape[0] != 1 {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                detail: "record pixels must be [1, H, W] or [1, D, H, W]".into(),
            });
        }
        if let Some(m) = &mask {
            if m.shape() != &shape[1..] {
                let axis = m.shape().iter().zip(&shape[1..]).position(|(a, b)| a != b).unwrap_or(0);
                return Err(Error::shape(axis, format!("mask {:?} vs pixels {:?}", m.shape(), &shape[1..])));
            }
        }
        let spacing = if shape.len() == 4 { vec![0.80, 0.586, 0.586] } else { vec![1.0, 1.0] };
        Ok(Self {
            id: id.into(),
            pixels,
            mask,
            spacing,
            modality,
        })
    }

    pub fn spatial_rank(&self) -> usize {
        self.pixels.rank() - 1
    }

    pub fn extent(&self) -> &[usize] {
        &self.pixels.shape()[1..]
    }

    /// Pixels without the leading channel axis.
    pub fn image(&self) -> Tensor<f32> {
        Tensor::new(self.extent().to_vec(), self.pixels.data().to_vec()).expect("same length")
    }

    pub fn require_mask(&self) -> Result<&Tensor<u8>> {
        self.mask
            .as_ref()
            .ok_or_else(|| Error::Data(format!("record `{}` has no mask", self.id)))
    }
}

/// Reads a binary greyscale PGM (`P5`, maxval ≤ 255) as `[H, W]` in [0, 1].
pub fn read_pgm(path: &Path) -> Result<Tensor<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |d: &str| Error::Format(format!("{}: {d}", path.display()));
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PGM header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("only binary P5 greyscale PGM is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("maxval must be in 1..=255"));
    }
    let body = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated pixel data"))?;
    let scale = 1.0 / maxval as f32;
    Tensor::new(vec![h, w], body.iter().map(|&v| (v as f32 * scale).min(1.0)).collect())
}

/// Writes `[H, W]` values in [0, 1] as an 8-bit P5 PGM.
pub fn write_pgm(path: &Path, image: &Tensor<f32>) -> Result<()> {
    if image.rank() != 2 {
        return Err(Error::InvalidShape {
            shape: image.shape().to_vec(),
            detail: "PGM output needs a 2D image".into(),
        });
    }
    let (h, w) = (image.shape()[0], image.shape()[1]);
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    io::write_file(path, &out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub id: String,
    pub pixels: PathBuf,
    pub mask: Option<PathBuf>,
}

/// Dataset listing, one tab-separated `id  pixels  mask` line per record.
/// A mask column of `-` (or a missing column) means no mask. Relative paths
/// resolve against the manifest's directory.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let cols: Vec<&str> = line.split('\t').collect();
            if !(2..=3).contains(&cols.len()) || cols[0].is_empty() {
                return Err(Error::Format(format!("manifest line {}: expected id, pixels, mask", n + 1)));
            }
            let resolve = |p: &str| {
                let p = PathBuf::from(p);
                if p.is_absolute() { p } else { base.join(p) }
            };
            entries.push(ManifestEntry {
                id: cols[0].to_string(),
                pixels: resolve(cols[1]),
                mask: cols.get(2).filter(|m| **m != "-" && !m.is_empty()).map(|m| resolve(m)),
            });
        }
        Ok(Self { entries })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    /// Text form with paths relative to `base` where possible.
    pub fn to_text(&self, base: &Path) -> String {
        let rel = |p: &Path| p.strip_prefix(base).unwrap_or(p).display().to_string();
        self.entries
            .iter()
            .map(|e| {
                let mask = e.mask.as_deref().map_or_else(|| "-".to_string(), rel);
                format!("{}\t{}\t{}\n", e.id, rel(&e.pixels), mask)
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_file(path, self.to_text(path.parent().unwrap_or(Path::new("."))).as_bytes())
    }
}

fn load_pixels(path: &Path, modality: Modality) -> Result<Tensor<f32>> {
    let is_pgm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    let image = if is_pgm {
        read_pgm(path)?
    } else {
        match io::load_dyn(path)? {
            DynTensor::U8(t) => t.map(|v| v as f32 / 255.0),
            other => other.into_f32(),
        }
    };
    let image = if modality == Modality::Fundus && image.rank() == 3 && image.shape()[0] == 3 {
        green_channel(&image)?
    } else {
        image
    };
    if !(2..=3).contains(&image.rank()) {
        return Err(Error::InvalidShape {
            shape: image.shape().to_vec(),
            detail: format!("{}: expected a 2D image or 3D volume", path.display()),
        });
    }
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    image.reshape(shape)
}

/// Loads every record listed in a manifest. Pixel files are PCTN (spatial
/// extents only; u8 data is scaled by 1/255) or PGM; masks are PCTN.
pub fn load_records(manifest: &Path, modality: Modality) -> Result<Vec<ImageRecord>> {
    Manifest::read(manifest)?
        .entries
        .iter()
        .map(|e| {
            let pixels = load_pixels(&e.pixels, modality)?;
            let mask = e.mask.as_deref().map(|m| io::load_dyn(m).map(DynTensor::into_mask)).transpose()?;
            ImageRecord::new(e.id.clone(), pixels, mask, modality)
        })
        .collect()
}

/// A single unlabelled image, named after its file stem.
pub fn load_image(path: &Path, modality: Modality) -> Result<ImageRecord> {
    let id = path.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    ImageRecord::new(id, load_pixels(path, modality)?, None, modality)
}

/// Writes `{id}.pctn` (and `{id}_mask.pctn`) into `dir`; returns the manifest entry.
pub fn save_record(dir: &Path, record: &ImageRecord) -> Result<ManifestEntry> {
    let pixels = dir.join(format!("{}.pctn", record.id));
    io::save(&pixels, &record.image())?;
    let mask = match &record.mask {
        Some(m) => {
            let p = dir.join(format!("{}_mask.pctn", record.id));
            io::save(&p, m)?;
            Some(p)
        }
        None => None,
    };
    Ok(ManifestEntry {
        id: record.id.clone(),
        pixels,
        mask,
    })
}
