//! Independent reference implementations used as test oracles.
#![allow(dead_code)]

use pcnet::autodiff::{Tape, Var};
use pcnet::{Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn randn(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random::<f64>() * 2.0 - 1.0).unwrap()
}

/// Direct nested-loop convolution with zero padding, spatial rank 1–3.
pub fn conv_reference(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    b: &Tensor<f64>,
    stride: &[usize],
    pad: &[usize],
) -> Tensor<f64> {
    let r = x.rank() - 2;
    let lift = |v: &[usize], fill: usize| {
        let mut o = [fill; 3];
        o[3 - v.len()..].copy_from_slice(v);
        o
    };
    let (n, ci) = (x.shape()[0], x.shape()[1]);
    let co = w.shape()[0];
    let inp = lift(&x.shape()[2..], 1);
    let k = lift(&w.shape()[2..], 1);
    let s = lift(stride, 1);
    let p = lift(pad, 0);
    let out: Vec<usize> = (0..3).map(|a| (inp[a] + 2 * p[a] - k[a]) / s[a] + 1).collect();
    let mut shape = vec![n, co];
    shape.extend_from_slice(&out[3 - r..]);
    let mut y = vec![0.0; n * co * out[0] * out[1] * out[2]];
    let xd = x.data();
    let wd = w.data();
    let mut idx = 0;
    for bn in 0..n {
        for o in 0..co {
            for z in 0..out[0] {
                for yy in 0..out[1] {
                    for xx in 0..out[2] {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for a in 0..k[0] {
                                for bb in 0..k[1] {
                                    for e in 0..k[2] {
                                        let zi = (z * s[0] + a) as isize - p[0] as isize;
                                        let yi = (yy * s[1] + bb) as isize - p[1] as isize;
                                        let xi = (xx * s[2] + e) as isize - p[2] as isize;
                                        if zi < 0
                                            || yi < 0
                                            || xi < 0
                                            || zi >= inp[0] as isize
                                            || yi >= inp[1] as isize
                                            || xi >= inp[2] as isize
                                        {
                                            continue;
                                        }
                                        let xv = xd[(((bn * ci + c) * inp[0] + zi as usize) * inp[1]
                                            + yi as usize)
                                            * inp[2]
                                            + xi as usize];
                                        let wv = wd[(((o * ci + c) * k[0] + a) * k[1] + bb) * k[2] + e];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        y[idx] = acc;
                        idx += 1;
                    }
                }
            }
        }
    }
    Tensor::new(shape, y).unwrap()
}

/// Relative error with a tiny absolute floor so exact zeros compare cleanly.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

pub struct FdReport {
    pub checked: usize,
    pub max_rel: f64,
    pub worst: Option<(usize, usize, f64, f64)>,
}

/// Compare reverse-mode gradients of a scalar function of `leaves` with
/// central differences. `coords` picks `(leaf, flat index)` pairs.
pub fn finite_difference_check<F>(
    leaves: &[Tensor<f64>],
    f: F,
    coords: &[(usize, usize)],
    h: f64,
) -> Result<FdReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    finite_difference_check_until(leaves, f, coords, h, usize::MAX)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// `(f(x+h) - f(x-h)) / 2h`, truncation error O(h²).
    Central,
    /// Central differences at h and h/2 combined as `(4·D(h/2) - D(h)) / 3`,
    /// cancelling the h² term.
    Richardson,
}

pub fn finite_difference_check_scheme<F>(
    leaves: &[Tensor<f64>],
    f: F,
    coords: &[(usize, usize)],
    h: f64,
    scheme: Scheme,
) -> Result<FdReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    fd_core(leaves, f, coords, h, usize::MAX, scheme)
}

/// As [`finite_difference_check`], stopping once `want` coordinates have
/// been compared.
pub fn finite_difference_check_until<F>(
    leaves: &[Tensor<f64>],
    f: F,
    coords: &[(usize, usize)],
    h: f64,
    want: usize,
) -> Result<FdReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    fd_core(leaves, f, coords, h, want, Scheme::Central)
}

fn fd_core<F>(
    leaves: &[Tensor<f64>],
    f: F,
    coords: &[(usize, usize)],
    h: f64,
    want: usize,
    scheme: Scheme,
) -> Result<FdReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = leaves.iter().map(|t| tape.leaf(t.clone(), true)).collect();
    let loss = f(&mut tape, &vars)?;
    tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vars
        .iter()
        .zip(leaves)
        .map(|(&v, t)| tape.grad(v).cloned().unwrap_or_else(|| Tensor::zeros(t.shape()).unwrap()))
        .collect();
    // Perturbed passes keep the relu / max-pool choices of the analytic
    // pass, so both sides differentiate the same smooth piece.
    let branches = tape.branches();
    let eval = |ls: &[Tensor<f64>]| -> Result<f64> {
        let mut t = Tape::replaying(branches.clone());
        let vs: Vec<Var> = ls.iter().map(|x| t.leaf(x.clone(), false)).collect();
        let l = f(&mut t, &vs)?;
        Ok(t.value(l).data()[0])
    };
    let mut report = FdReport {
        checked: 0,
        max_rel: 0.0,
        worst: None,
    };
    let mut work = leaves.to_vec();
    for &(li, i) in coords {
        if report.checked >= want {
            break;
        }
        let orig = work[li].data()[i];
        let mut central = |step: f64| -> Result<f64> {
            work[li].data_mut()[i] = orig + step;
            let up = eval(&work)?;
            work[li].data_mut()[i] = orig - step;
            let down = eval(&work)?;
            work[li].data_mut()[i] = orig;
            Ok((up - down) / (2.0 * step))
        };
        let numeric = match scheme {
            Scheme::Central => central(h)?,
            Scheme::Richardson => (4.0 * central(h / 2.0)? - central(h)?) / 3.0,
        };
        let a = analytic[li].data()[i];
        let e = rel_err(a, numeric);
        report.checked += 1;
        if e > report.max_rel {
            report.max_rel = e;
            report.worst = Some((li, i, a, numeric));
        }
    }
    Ok(report)
}

/// Every coordinate of every leaf, or a random sample of `max` of them.
pub fn sample_coords(leaves: &[Tensor<f64>], max: usize, rng: &mut impl Rng) -> Vec<(usize, usize)> {
    let all: Vec<(usize, usize)> = leaves
        .iter()
        .enumerate()
        .flat_map(|(li, t)| (0..t.len()).map(move |i| (li, i)))
        .collect();
    if all.len() <= max {
        return all;
    }
    (0..max).map(|_| all[rng.random_range(0..all.len())]).collect()
}

/// Probability that a random positive outscores a random negative, ties ½,
/// by enumerating every pair.
pub fn auc_bruteforce(scores: &[f64], labels: &[u8]) -> f64 {
    let mut num = 0.0;
    let mut pairs = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] == 0 {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] != 0 {
                continue;
            }
            pairs += 1.0;
            if si > sj {
                num += 1.0;
            } else if si == sj {
                num += 0.5;
            }
        }
    }
    num / pairs
}

/// Max over non-overlapping `k×k` windows of a 2D mask, by direct scan.
pub fn window_max_2d(mask: &[u8], h: usize, w: usize, k: usize) -> Vec<u8> {
    let (oh, ow) = (h / k, w / k);
    let mut out = vec![0u8; oh * ow];
    for i in 0..oh {
        for j in 0..ow {
            let mut m = 0;
            for a in 0..k {
                for b in 0..k {
                    m = m.max(mask[(i * k + a) * w + j * k + b]);
                }
            }
            out[i * ow + j] = m;
        }
    }
    out
}

/// Component sizes by breadth-first flood fill with full (8/26) connectivity.
pub fn component_sizes(mask: &[u8], dims: &[usize]) -> Vec<usize> {
    let mut d = [1usize; 3];
    d[3 - dims.len()..].copy_from_slice(dims);
    let mut seen = vec![false; mask.len()];
    let mut sizes = Vec::new();
    for start in 0..mask.len() {
        if mask[start] == 0 || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = std::collections::VecDeque::from([start]);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (z, y, x) = (p / (d[1] * d[2]), (p / d[2]) % d[1], p % d[2]);
            for dz in -1i64..=1 {
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        let (nz, ny, nx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
                        if nz < 0 || ny < 0 || nx < 0 || nz >= d[0] as i64 || ny >= d[1] as i64 || nx >= d[2] as i64 {
                            continue;
                        }
                        let q = (nz as usize * d[1] + ny as usize) * d[2] + nx as usize;
                        if mask[q] != 0 && !seen[q] {
                            seen[q] = true;
                            queue.push_back(q);
                        }
                    }
                }
            }
        }
        sizes.push(size);
    }
    sizes
}
