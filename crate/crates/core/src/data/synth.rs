use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::record::{ImageRecord, Modality};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Settings for the synthetic tubular-structure generator.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthParams {
    pub rank: usize,
    pub extent: usize,
    /// Number of independent branching trees.
    pub trees: usize,
    /// Branches grown across all trees (a floor when `fill` is set).
    pub branches: usize,
    /// Tube diameter range in pixels; roots are widest, children taper.
    pub width: [f64; 2],
    pub noise_sigma: f64,
    /// Stop growing once this foreground fraction is reached, adding
    /// branches beyond `branches` if needed.
    pub fill: Option<f64>,
    /// Fraction of the first axis the trees may occupy, leaving the rest
    /// vessel-free (as arteries fill only part of a CTA field of view).
    pub occupied: f64,
}

impl SynthParams {
    pub fn default_2d() -> Self {
        Self {
            rank: 2,
            extent: 96,
            trees: 3,
            branches: 12,
            width: [1.0, 4.0],
            noise_sigma: 0.1,
            fill: None,
            occupied: 1.0,
        }
    }

    /// Volumes tuned to a 0.43% vessel fraction.
    pub fn default_3d() -> Self {
        Self {
            rank: 3,
            extent: 96,
            trees: 2,
            branches: 2,
            width: [1.0, 4.0],
            noise_sigma: 0.1,
            fill: Some(0.0043),
            occupied: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.rank) {
            return Err(Error::arg(format!("synthetic rank must be 2 or 3, got {}", self.rank)));
        }
        if self.extent < 64 {
            return Err(Error::arg(format!("synthetic extent must be at least 64, got {}", self.extent)));
        }
        let [lo, hi] = self.width;
        if !(lo >= 1.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::arg(format!("width range [{lo}, {hi}] must satisfy 1 <= min <= max")));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::arg("noise sigma must be finite and non-negative"));
        }
        if self.trees == 0 {
            return Err(Error::arg("at least one tree is required"));
        }
        let band = self.occupied * self.extent as f64 - 2.0 * (self.width[1] / 2.0).ceil() - 3.0;
        if !(self.occupied <= 1.0 && band >= 8.0) {
            return Err(Error::arg(format!("occupied fraction {} leaves no room for trees", self.occupied)));
        }
        if let Some(f) = self.fill {
            if !(f > 0.0 && f < 0.5) {
                return Err(Error::arg(format!("fill fraction {f} must lie in (0, 0.5)")));
            }
        }
        Ok(())
    }
}

/// Derives an independent seed for item `index` of a seeded collection.
pub(crate) fn stream_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index + 1);
    rng.next_u64()
}

type Point = [f64; 3];

struct Canvas {
    dims: [usize; 3],
    mask: Vec<u8>,
    filled: usize,
}

impl Canvas {
    fn set(&mut self, p: [usize; 3]) {
        let i = (p[0] * self.dims[1] + p[1]) * self.dims[2] + p[2];
        if self.mask[i] == 0 {
            self.mask[i] = 1;
            self.filled += 1;
        }
    }

    /// Capsule of radius `r` around segment `a`–`b`, plus the segment's
    /// rounded centreline so every tube stays connected.
    fn segment(&mut self, a: Point, b: Point, r: f64) {
        let d: Point = std::array::from_fn(|k| b[k] - a[k]);
        let len2: f64 = d.iter().map(|v| v * v).sum();
        let lo: [usize; 3] = std::array::from_fn(|k| (a[k].min(b[k]) - r).floor().max(0.0) as usize);
        let hi: [usize; 3] =
            std::array::from_fn(|k| ((a[k].max(b[k]) + r).ceil() as usize).min(self.dims[k] - 1));
        for z in lo[0]..=hi[0] {
            for y in lo[1]..=hi[1] {
                for x in lo[2]..=hi[2] {
                    let p = [z as f64, y as f64, x as f64];
                    let ap: Point = std::array::from_fn(|k| p[k] - a[k]);
                    let t = if len2 > 0.0 {
                        (ap.iter().zip(&d).map(|(u, v)| u * v).sum::<f64>() / len2).clamp(0.0, 1.0)
                    } else {
                        0.0
                    };
                    let dist2: f64 = (0..3).map(|k| (ap[k] - t * d[k]).powi(2)).sum();
                    if dist2 <= r * r {
                        self.set([z, y, x]);
                    }
                }
            }
        }
        let steps = d.iter().map(|v| v.abs()).fold(0.0, f64::max).ceil().max(1.0) as usize;
        for s in 0..=steps {
            let t = s as f64 / steps as f64;
            self.set(std::array::from_fn(|k| (a[k] + t * d[k]).round() as usize));
        }
    }
}

fn blur(values: &[f32], dims: [usize; 3], rank: usize) -> Vec<f32> {
    let mut cur = values.to_vec();
    let strides = [dims[1] * dims[2], dims[2], 1];
    for axis in 3 - rank..3 {
        let (n, st) = (dims[axis], strides[axis]);
        let mut next = cur.clone();
        for (i, out) in next.iter_mut().enumerate() {
            let pos = (i / st) % n;
            let prev = if pos > 0 { cur[i - st] } else { cur[i] };
            let succ = if pos + 1 < n { cur[i + st] } else { cur[i] };
            *out = 0.25 * prev + 0.5 * cur[i] + 0.25 * succ;
        }
        cur = next;
    }
    cur
}

pub fn foreground_fraction(mask: &Tensor<u8>) -> f64 {
    if mask.is_empty() {
        return 0.0;
    }
    mask.data().iter().filter(|&&v| v != 0).count() as f64 / mask.len() as f64
}

/// Generates branching tubular trees and a matching noisy image.
///
/// Vessels sit at 0.65..0.80 and background at 0.20..0.35 before texture
/// and noise (both scaled by `noise_sigma`) are added, so a noiseless image
/// thresholds at 0.5 exactly back to its mask.
pub fn synth_vessels(params: &SynthParams, seed: u64) -> Result<ImageRecord> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let e = params.extent;
    let rank = params.rank;
    let dims: [usize; 3] = if rank == 2 { [1, e, e] } else { [e; 3] };
    let total = dims.iter().product::<usize>();
    let mut canvas = Canvas {
        dims,
        mask: vec![0; total],
        filled: 0,
    };
    let r_max = params.width[1] / 2.0;
    let r_min = (params.width[0] / 2.0).max(0.5);
    let margin = r_max.ceil() + 1.0;
    let hi = e as f64 - 1.0 - margin;
    let free = 3 - rank;
    let first_hi = (params.occupied * e as f64).floor() - 1.0 - margin;
    let upper: Point = std::array::from_fn(|k| if k == free { first_hi } else { hi });
    let clamp = |p: Point| -> Point { std::array::from_fn(|k| if k < free { 0.0 } else { p[k].clamp(margin, upper[k]) }) };
    let mut trees: Vec<Vec<(Point, f64)>> = (0..params.trees)
        .map(|_| {
            let root = clamp(std::array::from_fn(|k| rng.random_range(margin..=upper[k])));
            vec![(root, r_max)]
        })
        .collect();
    let target = params.fill.map(|f| (f * total as f64).ceil() as usize);
    let done = |c: &Canvas| target.is_some_and(|t| c.filled >= t);
    let cap = (params.branches.max(1)) * 1000;
    let mut b = 0;
    'grow: while b < cap && (b < params.branches || target.is_some_and(|t| canvas.filled < t)) {
        let tree = &mut trees[b % params.trees];
        b += 1;
        let (start, parent_r) = tree[rng.random_range(0..tree.len())];
        let r = (parent_r * rng.random_range(0.6..0.95)).max(r_min);
        let mut dir: Point = random_direction(&mut rng, rank);
        let length = rng.random_range(e as f64 / 6.0..e as f64 / 3.0);
        let mut at = start;
        for _ in 0..4 {
            let jitter = random_direction(&mut rng, rank);
            dir = std::array::from_fn(|k| dir[k] + 0.35 * jitter[k]);
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-9);
            let next = clamp(std::array::from_fn(|k| at[k] + dir[k] / norm * length / 4.0));
            canvas.segment(at, next, r);
            tree.push((next, r));
            at = next;
            if done(&canvas) {
                break 'grow;
            }
        }
    }
    let maskf: Vec<f32> = canvas.mask.iter().map(|&v| f32::from(v)).collect();
    let smooth = blur(&maskf, dims, rank);
    let sigma = params.noise_sigma as f32;
    let noise = Normal::new(0.0f32, sigma.max(f32::MIN_POSITIVE)).expect("valid sigma");
    let waves: Vec<(Point, f64)> = (0..3)
        .map(|_| {
            let f = random_direction(&mut rng, rank);
            let k = rng.random_range(2.0..6.0) * std::f64::consts::TAU / e as f64;
            (std::array::from_fn(|i| f[i] * k), rng.random_range(0.0..std::f64::consts::TAU))
        })
        .collect();
    let mut pixels = Vec::with_capacity(total);
    for (i, (&m, &s)) in maskf.iter().zip(&smooth).enumerate() {
        let base = 0.2 + 0.6 * m + 0.15 * (s - m);
        let mut v = base;
        if sigma > 0.0 {
            let p = [(i / (e * e)) as f64, ((i / e) % e) as f64, (i % e) as f64];
            let texture: f64 =
                waves.iter().map(|(k, phase)| (k[0] * p[0] + k[1] * p[1] + k[2] * p[2] + phase).sin()).sum::<f64>() / 3.0;
            v += sigma * texture as f32 + noise.sample(&mut rng);
        }
        pixels.push(v.clamp(0.0, 1.0));
    }
    let spatial: Vec<usize> = dims[free..].to_vec();
    let mut shape = vec![1];
    shape.extend_from_slice(&spatial);
    ImageRecord::new(
        format!("synth-{seed:016x}"),
        Tensor::new(shape, pixels)?,
        Some(Tensor::new(spatial, canvas.mask)?),
        Modality::Synthetic,
    )
}

fn random_direction(rng: &mut impl Rng, rank: usize) -> Point {
    loop {
        let mut v: Point = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        if rank == 2 {
            v[0] = 0.0;
        }
        let n2: f64 = v.iter().map(|x| x * x).sum();
        if n2 > 1e-4 && n2 <= 1.0 {
            return v.map(|x| x / n2.sqrt());
        }
    }
}

/// `count` independent records named `{prefix}{index:03}`, one random
/// stream per record.
pub fn synth_dataset(params: &SynthParams, count: usize, prefix: &str, seed: u64) -> Result<Vec<ImageRecord>> {
    crate::exec::map_indexed(count, |i| {
        let mut r = synth_vessels(params, stream_seed(seed, i as u64))?;
        r.id = format!("{prefix}{i:03}");
        Ok(r)
    })
    .into_iter()
    .collect()
}
