use crate::error::{Error, Result};

/// Lift 1–3 spatial extents to `[d, h, w]` with leading ones.
pub(crate) fn lift(spatial: &[usize], fill: usize) -> [usize; 3] {
    let mut out = [fill; 3];
    let off = 3 - spatial.len();
    out[off..].copy_from_slice(spatial);
    out
}

/// Split an `[N, C, spatial...]` shape into `(n, c, [d, h, w])`.
pub(crate) fn split_nc(shape: &[usize], op: &str) -> Result<(usize, usize, [usize; 3])> {
    if shape.len() < 3 || shape.len() > 5 {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            detail: format!("{op} expects [N, C, spatial...] with 1 to 3 spatial axes"),
        });
    }
    Ok((shape[0], shape[1], lift(&shape[2..], 1)))
}

/// Broadcast a per-axis parameter given as one value or one value per axis.
pub(crate) fn per_axis(values: &[usize], rank: usize, what: &str) -> Result<Vec<usize>> {
    match values.len() {
        1 => Ok(vec![values[0]; rank]),
        n if n == rank => Ok(values.to_vec()),
        n => Err(Error::arg(format!(
            "{what}: expected 1 or {rank} values, got {n}"
        ))),
    }
}

pub(crate) fn numel(e: [usize; 3]) -> usize {
    e[0] * e[1] * e[2]
}
