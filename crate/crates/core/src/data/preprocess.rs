use super::record::{ImageRecord, Modality};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Intensity levels used by the CLAHE histograms.
pub const CLAHE_BINS: usize = 256;

/// Preprocessing settings. Fundus images (and 2D synthetic images, which
/// stand in for them) get CLAHE then gamma; CTA volumes get HU windowing;
/// 3D synthetic volumes are already normalised.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Preprocess {
    pub clahe_tiles: usize,
    pub clahe_clip: f64,
    pub gamma: f64,
}

impl Default for Preprocess {
    fn default() -> Self {
        Self {
            clahe_tiles: 8,
            clahe_clip: 2.0,
            gamma: 1.2,
        }
    }
}

pub fn preprocess(record: &ImageRecord, cfg: &Preprocess) -> Result<ImageRecord> {
    let pixels = match (record.modality, record.spatial_rank()) {
        (Modality::Fundus | Modality::Synthetic, 2) => {
            gamma_adjust(&clahe(&record.pixels, cfg.clahe_tiles, cfg.clahe_clip)?, cfg.gamma)?
        }
        (Modality::Fundus, _) => {
            return Err(Error::InvalidShape {
                shape: record.pixels.shape().to_vec(),
                detail: "fundus preprocessing needs a 2D image".into(),
            })
        }
        (Modality::Cta, _) => hu_normalize(&record.pixels),
        (Modality::Synthetic, _) => record.pixels.clone(),
    };
    Ok(ImageRecord { pixels, ..record.clone() })
}

/// Green plane of a channel-first RGB image `[3, H, W]`, as `[H, W]`.
pub fn green_channel(rgb: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = rgb.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            detail: "expected channel-first RGB [3, H, W]".into(),
        });
    }
    let plane = s[1] * s[2];
    Tensor::new(vec![s[1], s[2]], rgb.data()[plane..2 * plane].to_vec())
}

pub fn gamma_adjust(image: &Tensor<f32>, gamma: f64) -> Result<Tensor<f32>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::arg(format!("gamma must be positive, got {gamma}")));
    }
    let g = gamma as f32;
    Ok(image.map(|v| v.clamp(0.0, 1.0).powf(g)))
}

/// Windows Hounsfield units to [0, 900] and maps them linearly onto [0, 1].
pub fn hu_normalize(volume: &Tensor<f32>) -> Tensor<f32> {
    volume.map(|v| v.clamp(0.0, 900.0) / 900.0)
}

fn tile_lut(hist: &mut [f64; CLAHE_BINS], area: f64, clip_limit: f64) -> [f64; CLAHE_BINS] {
    if clip_limit.is_finite() {
        let clip = clip_limit * area / CLAHE_BINS as f64;
        let mut excess = 0.0;
        for h in hist.iter_mut() {
            if *h > clip {
                excess += *h - clip;
                *h = clip;
            }
        }
        let share = excess / CLAHE_BINS as f64;
        hist.iter_mut().for_each(|h| *h += share);
    }
    let mut lut = [0.0; CLAHE_BINS];
    let mut acc = 0.0;
    for (l, h) in lut.iter_mut().zip(hist.iter()) {
        acc += h;
        *l = (acc / area).min(1.0);
    }
    lut
}

/// Interpolation anchors along one axis: for each coordinate the two
/// neighbouring tile indices and the weight of the second.
fn anchors(len: usize, tiles: usize) -> Vec<(usize, usize, f64)> {
    let centre = |t: usize| ((t * len / tiles) + ((t + 1) * len / tiles) - 1) as f64 / 2.0;
    (0..len)
        .map(|p| {
            let p = p as f64;
            if p <= centre(0) {
                return (0, 0, 0.0);
            }
            if p >= centre(tiles - 1) {
                return (tiles - 1, tiles - 1, 0.0);
            }
            let t = (0..tiles - 1).find(|&t| p < centre(t + 1)).expect("inside the tile centres");
            (t, t + 1, (p - centre(t)) / (centre(t + 1) - centre(t)))
        })
        .collect()
}

/// Contrast-limited adaptive histogram equalisation on a `tiles × tiles`
/// grid. `clip_limit` is relative to a flat histogram; `f64::INFINITY`
/// disables clipping. Accepts `[H, W]` or `[1, H, W]`.
pub fn clahe(image: &Tensor<f32>, tiles: usize, clip_limit: f64) -> Result<Tensor<f32>> {
    let s = image.shape();
    let (h, w) = match s {
        [h, w] | [1, h, w] => (*h, *w),
        _ => {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                detail: "CLAHE needs a single-channel 2D image".into(),
            })
        }
    };
    if tiles == 0 || h < tiles || w < tiles {
        return Err(Error::InvalidShape {
            shape: s.to_vec(),
            detail: format!("image smaller than the {tiles}x{tiles} tile grid"),
        });
    }
    if clip_limit.is_nan() || clip_limit <= 0.0 {
        return Err(Error::arg(format!("clip limit must be positive, got {clip_limit}")));
    }
    let q: Vec<usize> = image
        .data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * (CLAHE_BINS - 1) as f32).round() as usize)
        .collect();
    let mut luts = Vec::with_capacity(tiles * tiles);
    for ty in 0..tiles {
        let (r0, r1) = (ty * h / tiles, (ty + 1) * h / tiles);
        for tx in 0..tiles {
            let (c0, c1) = (tx * w / tiles, (tx + 1) * w / tiles);
            let mut hist = [0.0; CLAHE_BINS];
            for r in r0..r1 {
                for &v in &q[r * w + c0..r * w + c1] {
                    hist[v] += 1.0;
                }
            }
            luts.push(tile_lut(&mut hist, ((r1 - r0) * (c1 - c0)) as f64, clip_limit));
        }
    }
    let (ay, ax) = (anchors(h, tiles), anchors(w, tiles));
    let mut out = Vec::with_capacity(h * w);
    for (r, &(y0, y1, wy)) in ay.iter().enumerate() {
        for (c, &(x0, x1, wx)) in ax.iter().enumerate() {
            let v = q[r * w + c];
            let at = |ty: usize, tx: usize| luts[ty * tiles + tx][v];
            let top = at(y0, x0) * (1.0 - wx) + at(y0, x1) * wx;
            let bottom = at(y1, x0) * (1.0 - wx) + at(y1, x1) * wx;
            out.push((top * (1.0 - wy) + bottom * wy).clamp(0.0, 1.0) as f32);
        }
    }
    Tensor::new(s.to_vec(), out)
}
