use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::record::ImageRecord;
use crate::error::{Error, Result};
use crate::exec;
use crate::tensor::{io, Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PatchKind {
    /// Uniformly placed anywhere in the image.
    Uniform,
    /// Centred on a foreground voxel.
    Vessel,
    /// Placed so that it contains no foreground.
    Background,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleOrigin {
    /// Index into the record list the set was drawn from.
    pub record: usize,
    pub id: String,
    pub corner: Vec<usize>,
    pub kind: PatchKind,
}

/// A set of patch placements. Pixels and labels are cut on demand from the
/// records the set was drawn from, so large 3D sets stay cheap to hold.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SampleSet {
    pub patch: Vec<usize>,
    pub origins: Vec<SampleOrigin>,
}

fn pad3(v: &[usize], fill: usize) -> [usize; 3] {
    let mut d = [fill; 3];
    d[3 - v.len()..].copy_from_slice(v);
    d
}

fn as_3d(extent: &[usize]) -> [usize; 3] {
    pad3(extent, 1)
}

fn crop<T: Element>(data: &[T], extent: &[usize], corner: &[usize], patch: &[usize]) -> Vec<T> {
    let [_, h, w] = as_3d(extent);
    let [c0, c1, c2] = pad3(corner, 0);
    let [pd, ph, pw] = as_3d(patch);
    let mut out = Vec::with_capacity(pd * ph * pw);
    for z in c0..c0 + pd {
        for y in c1..c1 + ph {
            let row = (z * h + y) * w;
            out.extend_from_slice(&data[row + c2..row + c2 + pw]);
        }
    }
    out
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.origins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.origins.is_empty()
    }

    pub fn count(&self, kind: PatchKind) -> usize {
        self.origins.iter().filter(|o| o.kind == kind).count()
    }

    /// Pixels `[1, P...]` and label `[1, P...]` of sample `i`.
    pub fn extract(&self, records: &[ImageRecord], i: usize) -> Result<(Tensor<f32>, Tensor<u8>)> {
        let o = self
            .origins
            .get(i)
            .ok_or_else(|| Error::arg(format!("sample {i} out of range ({})", self.len())))?;
        let r = records
            .get(o.record)
            .filter(|r| r.id == o.id)
            .ok_or_else(|| Error::Data(format!("sample {i} refers to missing record `{}`", o.id)))?;
        let mask = r.require_mask()?;
        let mut shape = vec![1];
        shape.extend_from_slice(&self.patch);
        let pixels = crop(r.pixels.data(), r.extent(), &o.corner, &self.patch);
        let label = crop(mask.data(), r.extent(), &o.corner, &self.patch);
        Ok((Tensor::new(shape.clone(), pixels)?, Tensor::new(shape, label)?))
    }

    /// Stacks the selected samples into `[N, 1, P...]` inputs and 0/1 targets.
    pub fn batch(&self, records: &[ImageRecord], indices: &[usize]) -> Result<(Tensor<f32>, Tensor<f32>)> {
        let per: usize = self.patch.iter().product();
        let parts = exec::map_indexed(indices.len(), |k| self.extract(records, indices[k]));
        let mut x = Vec::with_capacity(per * indices.len());
        let mut y = Vec::with_capacity(per * indices.len());
        for part in parts {
            let (p, l) = part?;
            x.extend_from_slice(p.data());
            y.extend(l.data().iter().map(|&v| f32::from(v)));
        }
        let mut shape = vec![indices.len(), 1];
        shape.extend_from_slice(&self.patch);
        Ok((Tensor::new(shape.clone(), x)?, Tensor::new(shape, y)?))
    }

    /// Canonical byte form: a text listing of the placements followed by
    /// every patch and label as PCTN records.
    pub fn encode(&self, records: &[ImageRecord]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for o in &self.origins {
            out.extend_from_slice(format!("{}\t{:?}\t{:?}\n", o.id, o.corner, o.kind).as_bytes());
        }
        for i in 0..self.len() {
            let (p, l) = self.extract(records, i)?;
            io::encode(&p, &mut out);
            io::encode(&l, &mut out);
        }
        Ok(out)
    }
}

fn check_records(records: &[ImageRecord], rank: usize, patch: usize) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Data("no records to sample from".into()));
    }
    for r in records {
        if r.spatial_rank() != rank {
            return Err(Error::Data(format!("record `{}` is not {rank}D", r.id)));
        }
        r.require_mask()?;
        if let Some(axis) = r.extent().iter().position(|&e| e < patch) {
            return Err(Error::shape(
                axis,
                format!("record `{}` extent {} is smaller than patch {patch}", r.id, r.extent()[axis]),
            ));
        }
    }
    Ok(())
}

/// Draws `count` patches with uniformly random records and in-bounds corners.
pub fn sample_patches_2d(records: &[ImageRecord], count: usize, patch: usize, seed: u64) -> Result<SampleSet> {
    check_records(records, 2, patch)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let origins = (0..count)
        .map(|_| {
            let record = rng.random_range(0..records.len());
            let r = &records[record];
            SampleOrigin {
                record,
                id: r.id.clone(),
                corner: r.extent().iter().map(|&e| rng.random_range(0..=e - patch)).collect(),
                kind: PatchKind::Uniform,
            }
        })
        .collect();
    Ok(SampleSet {
        patch: vec![patch; 2],
        origins,
    })
}

/// Per-scan vessel/background patch quotas for 3D sampling.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StratifiedPlan {
    pub vessel: usize,
    pub background: usize,
    pub patch: usize,
}

impl Default for StratifiedPlan {
    fn default() -> Self {
        Self {
            vessel: 105,
            background: 17,
            patch: 48,
        }
    }
}

/// Summed-volume table for O(1) foreground counts over boxes.
struct Integral {
    dims: [usize; 3],
    sums: Vec<u32>,
}

impl Integral {
    fn new(mask: &[u8], dims: [usize; 3]) -> Self {
        let [d, h, w] = dims;
        let (sh, sw) = (h + 1, w + 1);
        let mut sums = vec![0u32; (d + 1) * sh * sw];
        let at = |z: usize, y: usize, x: usize| (z * sh + y) * sw + x;
        for z in 0..d {
            for y in 0..h {
                for x in 0..w {
                    let v = u32::from(mask[(z * h + y) * w + x] != 0);
                    sums[at(z + 1, y + 1, x + 1)] = v + sums[at(z, y + 1, x + 1)] + sums[at(z + 1, y, x + 1)]
                        + sums[at(z + 1, y + 1, x)]
                        + sums[at(z, y, x)]
                        - sums[at(z, y, x + 1)]
                        - sums[at(z, y + 1, x)]
                        - sums[at(z + 1, y, x)];
                }
            }
        }
        Self { dims, sums }
    }

    fn cube(&self, c: [usize; 3], p: usize) -> u32 {
        let [_, h, w] = self.dims;
        let (sh, sw) = (h + 1, w + 1);
        let at = |z: usize, y: usize, x: usize| self.sums[(z * sh + y) * sw + x] as i64;
        let [z0, y0, x0] = c;
        let [z1, y1, x1] = [z0 + p, y0 + p, x0 + p];
        (at(z1, y1, x1) - at(z0, y1, x1) - at(z1, y0, x1) - at(z1, y1, x0) + at(z0, y0, x1) + at(z0, y1, x0)
            + at(z1, y0, x0)
            - at(z0, y0, x0)) as u32
    }
}

fn corner_for(centre: [usize; 3], dims: [usize; 3], p: usize) -> [usize; 3] {
    std::array::from_fn(|a| centre[a].saturating_sub(p / 2).min(dims[a] - p))
}

fn unflatten(i: usize, dims: [usize; 3]) -> [usize; 3] {
    [i / (dims[1] * dims[2]), (i / dims[2]) % dims[1], i % dims[2]]
}

const BACKGROUND_TRIES: usize = 10_000;

fn sample_scan(r: &ImageRecord, index: usize, plan: StratifiedPlan, seed: u64) -> Result<Vec<SampleOrigin>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    let mask = r.require_mask()?.data();
    let dims = as_3d(r.extent());
    let p = plan.patch;
    let origin = |corner: [usize; 3], kind| SampleOrigin {
        record: index,
        id: r.id.clone(),
        corner: corner.to_vec(),
        kind,
    };
    let foreground: Vec<usize> = (0..mask.len()).filter(|&i| mask[i] != 0).collect();
    if foreground.is_empty() && plan.vessel > 0 {
        return Err(Error::Data(format!("scan `{}` has no foreground to centre vessel patches on", r.id)));
    }
    let mut out = Vec::with_capacity(plan.vessel + plan.background);
    for _ in 0..plan.vessel {
        let centre = unflatten(foreground[rng.random_range(0..foreground.len())], dims);
        out.push(origin(corner_for(centre, dims, p), PatchKind::Vessel));
    }
    if plan.background == 0 {
        return Ok(out);
    }
    let integral = Integral::new(mask, dims);
    let mut found = 0;
    for _ in 0..BACKGROUND_TRIES {
        if found == plan.background {
            break;
        }
        let centre = unflatten(rng.random_range(0..mask.len()), dims);
        let corner = corner_for(centre, dims, p);
        if integral.cube(corner, p) == 0 {
            out.push(origin(corner, PatchKind::Background));
            found += 1;
        }
    }
    if found < plan.background {
        // sparse free space: draw from the exhaustive list of empty placements
        let mut free = Vec::new();
        for z in 0..=dims[0] - p {
            for y in 0..=dims[1] - p {
                for x in 0..=dims[2] - p {
                    if integral.cube([z, y, x], p) == 0 {
                        free.push([z, y, x]);
                    }
                }
            }
        }
        if free.is_empty() {
            return Err(Error::Data(format!("scan `{}` has no foreground-free {p}^3 patch", r.id)));
        }
        while found < plan.background {
            out.push(origin(free[rng.random_range(0..free.len())], PatchKind::Background));
            found += 1;
        }
    }
    Ok(out)
}

/// Draws `plan.vessel` vessel-centred and `plan.background` foreground-free
/// cubic patches from every scan. Each scan uses its own random stream, so
/// scans are sampled independently and in parallel.
pub fn sample_patches_3d(records: &[ImageRecord], plan: StratifiedPlan, seed: u64) -> Result<SampleSet> {
    check_records(records, 3, plan.patch)?;
    let per_scan = exec::map_indexed(records.len(), |i| sample_scan(&records[i], i, plan, seed));
    let mut origins = Vec::with_capacity(records.len() * (plan.vessel + plan.background));
    for part in per_scan {
        origins.extend(part?);
    }
    Ok(SampleSet {
        patch: vec![plan.patch; 3],
        origins,
    })
}
