use super::graph::ModelGraph;
use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

pub const PATCH: usize = 48;
pub const STRIDE: usize = 24;

/// Anything that maps a batch of patches `[N, 1, S...]` to probabilities of
/// the same shape.
pub trait PatchPredictor {
    fn spatial_rank(&self) -> usize;
    fn predict_patches(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>>;
}

impl<T: Float> PatchPredictor for ModelGraph<T> {
    fn spatial_rank(&self) -> usize {
        ModelGraph::spatial_rank(self)
    }

    fn predict_patches(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        Ok(self.predict(&batch.cast())?.cast())
    }
}

/// Regular grid of patch origins covering an image. Axes too short for a
/// whole number of strides are reflect-padded at the far end.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PatchGrid {
    pub extent: Vec<usize>,
    pub padded: Vec<usize>,
    pub patch: usize,
    pub stride: usize,
    /// Patch starts along each axis.
    pub starts: Vec<Vec<usize>>,
}

impl PatchGrid {
    pub fn new(extent: &[usize], patch: usize, stride: usize) -> Result<Self> {
        if patch == 0 || stride == 0 || stride > patch {
            return Err(Error::arg(format!("invalid patch {patch} / stride {stride}")));
        }
        let mut padded = Vec::with_capacity(extent.len());
        let mut starts = Vec::with_capacity(extent.len());
        for (axis, &len) in extent.iter().enumerate() {
            let n = if len <= patch { 1 } else { (len - patch).div_ceil(stride) + 1 };
            let total = (n - 1) * stride + patch;
            if total - len > len.saturating_sub(1) {
                return Err(Error::shape(
                    axis,
                    format!("extent {len} too small to reflect-pad to patch size {patch}"),
                ));
            }
            padded.push(total);
            starts.push((0..n).map(|i| i * stride).collect());
        }
        Ok(Self {
            extent: extent.to_vec(),
            padded,
            patch,
            stride,
            starts,
        })
    }

    /// All patch origins in row-major order.
    pub fn origins(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new()];
        for axis in &self.starts {
            out = out
                .into_iter()
                .flat_map(|prefix| {
                    axis.iter().map(move |&s| {
                        let mut p = prefix.clone();
                        p.push(s);
                        p
                    })
                })
                .collect();
        }
        out
    }

    /// Number of patches covering each voxel of the original image.
    pub fn coverage(&self) -> Vec<u32> {
        let mut counts = vec![0u32; self.extent.iter().product()];
        for origin in self.origins() {
            for_each_in_patch(&self.extent, &origin, self.patch, |flat, _| counts[flat] += 1);
        }
        counts
    }
}

/// Mirror index without repeating the edge sample.
fn reflect(i: usize, len: usize) -> usize {
    if i < len { i } else { 2 * (len - 1) - i }
}

/// Calls `f(image_flat, patch_flat)` for every patch voxel that falls inside
/// the original image.
fn for_each_in_patch(extent: &[usize], origin: &[usize], patch: usize, mut f: impl FnMut(usize, usize)) {
    let rank = extent.len();
    let total = patch.pow(rank as u32);
    let mut idx = vec![0usize; rank];
    for p in 0..total {
        let mut rem = p;
        for a in (0..rank).rev() {
            idx[a] = rem % patch;
            rem /= patch;
        }
        let mut flat = 0;
        let mut inside = true;
        for a in 0..rank {
            let g = origin[a] + idx[a];
            if g >= extent[a] {
                inside = false;
                break;
            }
            flat = flat * extent[a] + g;
        }
        if inside {
            f(flat, p);
        }
    }
}

fn extract(image: &Tensor<f32>, origin: &[usize], patch: usize, out: &mut [f32]) {
    let extent = image.shape();
    let rank = extent.len();
    let mut idx = vec![0usize; rank];
    for (p, slot) in out.iter_mut().enumerate() {
        let mut rem = p;
        for a in (0..rank).rev() {
            idx[a] = rem % patch;
            rem /= patch;
        }
        let mut flat = 0;
        for a in 0..rank {
            flat = flat * extent[a] + reflect(origin[a] + idx[a], extent[a]);
        }
        *slot = image.data()[flat];
    }
}

/// Whole-image probability map from overlapping patches: every voxel is the
/// mean of the predictions of all patches that cover it.
pub fn predict_full<P: PatchPredictor>(
    model: &P,
    image: &Tensor<f32>,
    patch: usize,
    stride: usize,
    batch: usize,
) -> Result<Tensor<f32>> {
    if image.rank() != model.spatial_rank() {
        return Err(Error::InvalidShape {
            shape: image.shape().to_vec(),
            detail: format!("expected {} spatial axes", model.spatial_rank()),
        });
    }
    let grid = PatchGrid::new(image.shape(), patch, stride)?;
    let origins = grid.origins();
    let vox = patch.pow(image.rank() as u32);
    let mut sum = vec![0f64; image.len()];
    let mut count = vec![0u32; image.len()];
    for chunk in origins.chunks(batch.max(1)) {
        let mut data = vec![0f32; chunk.len() * vox];
        for (o, slot) in chunk.iter().zip(data.chunks_mut(vox)) {
            extract(image, o, patch, slot);
        }
        let mut shape = vec![chunk.len(), 1];
        shape.extend(std::iter::repeat_n(patch, image.rank()));
        let probs = model.predict_patches(&Tensor::new(shape, data)?)?;
        if probs.len() != chunk.len() * vox {
            return Err(Error::shape(0, "predictor returned a batch of the wrong size"));
        }
        for (o, pred) in chunk.iter().zip(probs.data().chunks(vox)) {
            for_each_in_patch(image.shape(), o, patch, |flat, p| {
                sum[flat] += f64::from(pred[p]);
                count[flat] += 1;
            });
        }
    }
    let out = sum.iter().zip(&count).map(|(&s, &c)| (s / f64::from(c)) as f32).collect();
    Tensor::new(image.shape().to_vec(), out)
}
