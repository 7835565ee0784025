use std::fmt;

use crate::error::{Error, Result};
use crate::tensor::{Float, Tensor};

/// Binarisation threshold for the count-based metrics.
pub const THRESHOLD: f64 = 0.5;

fn check_same_shape(a: &[usize], b: &[usize], what: &str) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::shape(0, format!("{what}: rank {} vs {}", a.len(), b.len())));
    }
    match a.iter().zip(b).position(|(x, y)| x != y) {
        Some(axis) => Err(Error::shape(axis, format!("{what}: extent {} vs {}", a[axis], b[axis]))),
        None => Ok(()),
    }
}

/// Rank-based area under the ROC curve over the selected elements: the
/// probability that a positive outscores a negative, ties counting ½.
fn auc_of(scores: impl Iterator<Item = (f64, bool)>) -> Result<f64> {
    let mut items: Vec<(f64, bool)> = scores.collect();
    if items.iter().any(|(s, _)| !s.is_finite()) {
        return Err(Error::Numeric("non-finite prediction score".into()));
    }
    let positives = items.iter().filter(|(_, t)| *t).count();
    let negatives = items.len() - positives;
    if positives == 0 || negatives == 0 {
        return Err(Error::SingleClass { positives, negatives });
    }
    items.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    // twice the Mann-Whitney U statistic, kept integral so ties stay exact
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < items.len() {
        let mut j = i;
        let (mut p, mut n) = (0u128, 0u128);
        while j < items.len() && items[j].0 == items[i].0 {
            if items[j].1 { p += 1 } else { n += 1 }
            j += 1;
        }
        twice_u += p * (2 * neg_below + n);
        neg_below += n;
        i = j;
    }
    let twice_pairs = 2.0 * positives as f64 * negatives as f64;
    Ok(twice_u as f64 / twice_pairs)
}

/// ROC AUC of `pred` scores against a binary `truth` (nonzero = positive).
pub fn roc_auc<T: Float>(pred: &Tensor<T>, truth: &Tensor<u8>) -> Result<f64> {
    check_same_shape(pred.shape(), truth.shape(), "roc_auc")?;
    auc_of(pred.data().iter().zip(truth.data()).map(|(&p, &t)| (p.as_f64(), t != 0)))
}

/// Confusion counts at a fixed threshold (`pred >= threshold` is positive).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    pub fn_: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Counts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn dice(&self) -> Option<f64> {
        ratio(2 * self.tp, 2 * self.tp + self.fp + self.fn_)
    }

    fn add(&mut self, pred: bool, truth: bool) {
        match (pred, truth) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }
}

pub fn threshold_metrics<T: Float>(pred: &Tensor<T>, truth: &Tensor<u8>, threshold: f64) -> Result<Counts> {
    check_same_shape(pred.shape(), truth.shape(), "threshold_metrics")?;
    let mut c = Counts::default();
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        c.add(p.as_f64() >= threshold, t != 0);
    }
    Ok(c)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Region {
    All,
    Subregion,
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Region::All => "all",
            Region::Subregion => "subregion",
        })
    }
}

/// Metrics for one case over one region. `None` marks a metric that is
/// undefined for this case (a zero denominator, or a single-class region
/// for the AUC).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub region: Region,
    pub counts: Counts,
    pub auc: Option<f64>,
    pub acc: Option<f64>,
    pub sp: Option<f64>,
    pub se: Option<f64>,
    pub dice: Option<f64>,
}

impl EvalReport {
    pub fn new(region: Region, counts: Counts, auc: Option<f64>) -> Self {
        Self {
            region,
            counts,
            auc,
            acc: counts.accuracy(),
            sp: counts.specificity(),
            se: counts.sensitivity(),
            dice: counts.dice(),
        }
    }

    /// Flat `key = value` block in fixed field order.
    pub fn to_key_value(&self) -> String {
        let v = |x: Option<f64>| x.map_or_else(|| "undefined".to_string(), |x| x.to_string());
        let c = &self.counts;
        format!(
            "region = {}\nauc = {}\nacc = {}\nsp = {}\nse = {}\ndice = {}\ntp = {}\nfp = {}\ntn = {}\nfn = {}\n",
            self.region,
            v(self.auc),
            v(self.acc),
            v(self.sp),
            v(self.se),
            v(self.dice),
            c.tp,
            c.fp,
            c.tn,
            c.fn_
        )
    }
}

/// Evaluates `pred` against `truth` over the voxels where `region` is
/// nonzero, or over the whole image when no region is given.
pub fn evaluate_region<T: Float>(
    pred: &Tensor<T>,
    truth: &Tensor<u8>,
    region: Option<&Tensor<u8>>,
    threshold: f64,
) -> Result<EvalReport> {
    check_same_shape(pred.shape(), truth.shape(), "evaluate")?;
    let inside = |i: usize| region.is_none_or(|r| r.data()[i] != 0);
    if let Some(r) = region {
        check_same_shape(pred.shape(), r.shape(), "region mask")?;
        if r.data().iter().all(|&v| v == 0) {
            return Err(Error::arg("evaluation region is empty"));
        }
    }
    let mut counts = Counts::default();
    for (i, (&p, &t)) in pred.data().iter().zip(truth.data()).enumerate() {
        if inside(i) {
            counts.add(p.as_f64() >= threshold, t != 0);
        }
    }
    let scores = pred
        .data()
        .iter()
        .zip(truth.data())
        .enumerate()
        .filter(|(i, _)| inside(*i))
        .map(|(_, (&p, &t))| (p.as_f64(), t != 0));
    let auc = match auc_of(scores) {
        Ok(a) => Some(a),
        Err(Error::SingleClass { .. }) => None,
        Err(e) => return Err(e),
    };
    let tag = if region.is_some() { Region::Subregion } else { Region::All };
    Ok(EvalReport::new(tag, counts, auc))
}
