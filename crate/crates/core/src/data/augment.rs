use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::record::ImageRecord;
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// One of the eight rotations/flips of the square: rotate by
/// `quarter_turns × 90°` counter-clockwise, then optionally mirror left-right.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub quarter_turns: u8,
    pub flip: bool,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral { quarter_turns: 0, flip: false };

    pub fn all() -> [Dihedral; 8] {
        std::array::from_fn(|i| Dihedral {
            quarter_turns: (i % 4) as u8,
            flip: i >= 4,
        })
    }

    /// Source coordinate read by output pixel `(r, c)`, given the input extents.
    fn source(self, r: usize, c: usize, h: usize, w: usize) -> (usize, usize) {
        let turns = self.quarter_turns % 4;
        let ow = if turns % 2 == 0 { w } else { h };
        let c = if self.flip { ow - 1 - c } else { c };
        match turns {
            0 => (r, c),
            1 => (c, w - 1 - r),
            2 => (h - 1 - r, w - 1 - c),
            _ => (h - 1 - c, r),
        }
    }

    /// Applies the transform to the last two axes of `t`.
    pub fn apply<T: Element>(self, t: &Tensor<T>) -> Result<Tensor<T>> {
        let s = t.shape();
        if s.len() < 2 {
            return Err(Error::InvalidShape {
                shape: s.to_vec(),
                detail: "need at least two axes to rotate".into(),
            });
        }
        let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
        let (oh, ow) = if self.quarter_turns % 2 == 0 { (h, w) } else { (w, h) };
        let planes = t.len() / (h * w).max(1);
        let mut out = Vec::with_capacity(t.len());
        for p in 0..planes {
            let src = &t.data()[p * h * w..(p + 1) * h * w];
            for r in 0..oh {
                for c in 0..ow {
                    let (sr, sc) = self.source(r, c, h, w);
                    out.push(src[sr * w + sc]);
                }
            }
        }
        let mut shape = s.to_vec();
        let n = shape.len();
        shape[n - 2] = oh;
        shape[n - 1] = ow;
        Tensor::new(shape, out)
    }
}

/// Applies a uniformly drawn rotation/flip identically to pixels and mask.
pub fn augment(record: &ImageRecord, seed: u64) -> Result<ImageRecord> {
    if record.spatial_rank() != 2 {
        return Err(Error::arg("augmentation is defined for 2D records"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let op = Dihedral::all()[rng.random_range(0..8)];
    apply_record(record, op)
}

pub(crate) fn apply_record(record: &ImageRecord, op: Dihedral) -> Result<ImageRecord> {
    let mut out = record.clone();
    out.pixels = op.apply(&record.pixels)?;
    out.mask = record.mask.as_ref().map(|m| op.apply(m)).transpose()?;
    if op.quarter_turns % 2 == 1 {
        out.spacing.swap(0, 1);
    }
    Ok(out)
}
