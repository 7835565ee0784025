use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Objects smaller than this many voxels are treated as noise.
pub const MIN_COMPONENT: usize = 40;

/// Clears every connected foreground component with fewer than `min_size`
/// elements. Connectivity is full: 8 neighbours in 2D, 26 in 3D. Surviving
/// voxels are untouched; the output is 0/1.
pub fn remove_small_components(mask: &Tensor<u8>, min_size: usize) -> Result<Tensor<u8>> {
    let shape = mask.shape();
    if !(2..=3).contains(&shape.len()) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            detail: "component filtering needs a 2D or 3D mask".into(),
        });
    }
    let mut d = [1usize; 3];
    d[3 - shape.len()..].copy_from_slice(shape);
    let [dz, dy, dx] = d;
    let src = mask.data();
    let mut out: Vec<u8> = src.iter().map(|&v| u8::from(v != 0)).collect();
    let mut seen = vec![false; src.len()];
    let mut stack = Vec::new();
    let mut members = Vec::new();
    for start in 0..src.len() {
        if out[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        stack.push(start);
        members.clear();
        while let Some(p) = stack.pop() {
            members.push(p);
            let (z, y, x) = (p / (dy * dx), (p / dx) % dy, p % dx);
            for nz in z.saturating_sub(1)..=(z + 1).min(dz - 1) {
                for ny in y.saturating_sub(1)..=(y + 1).min(dy - 1) {
                    for nx in x.saturating_sub(1)..=(x + 1).min(dx - 1) {
                        let q = (nz * dy + ny) * dx + nx;
                        if out[q] != 0 && !seen[q] {
                            seen[q] = true;
                            stack.push(q);
                        }
                    }
                }
            }
        }
        if members.len() < min_size {
            for &p in &members {
                out[p] = 0;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}
