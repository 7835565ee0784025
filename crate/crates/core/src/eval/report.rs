use super::metrics::{Counts, EvalReport, Region};

/// Column order of evaluation CSV files. Ratio columns follow the usual
/// AUC, Acc, Sp, Se, Dice order; `fn` is the false-negative count.
pub const CSV_COLUMNS: [&str; 12] = [
    "variant", "case", "region", "auc", "acc", "sp", "se", "dice", "tp", "fp", "tn", "fn",
];

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |x| x.to_string())
}

pub fn csv_row(variant: &str, case: &str, r: &EvalReport) -> String {
    let c = &r.counts;
    format!(
        "{variant},{case},{},{},{},{},{},{},{},{},{},{}",
        r.region,
        cell(r.auc),
        cell(r.acc),
        cell(r.sp),
        cell(r.se),
        cell(r.dice),
        c.tp,
        c.fp,
        c.tn,
        c.fn_
    )
}

/// Per-case means of each metric over the cases where it is defined, plus
/// the summed counts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanReport {
    pub region: Region,
    pub cases: usize,
    pub counts: Counts,
    pub auc: Option<f64>,
    pub acc: Option<f64>,
    pub sp: Option<f64>,
    pub se: Option<f64>,
    pub dice: Option<f64>,
}

impl MeanReport {
    pub fn from_reports(region: Region, reports: &[EvalReport]) -> Self {
        let mean = |f: fn(&EvalReport) -> Option<f64>| {
            let vals: Vec<f64> = reports.iter().filter_map(f).collect();
            (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
        };
        let mut counts = Counts::default();
        for r in reports {
            counts.tp += r.counts.tp;
            counts.fp += r.counts.fp;
            counts.tn += r.counts.tn;
            counts.fn_ += r.counts.fn_;
        }
        Self {
            region,
            cases: reports.len(),
            counts,
            auc: mean(|r| r.auc),
            acc: mean(|r| r.acc),
            sp: mean(|r| r.sp),
            se: mean(|r| r.se),
            dice: mean(|r| r.dice),
        }
    }
}

/// Mean row; the case column reads `mean` and the counts are totals.
pub fn mean_csv_row(variant: &str, m: &MeanReport) -> String {
    let c = &m.counts;
    format!(
        "{variant},mean,{},{},{},{},{},{},{},{},{},{}",
        m.region,
        cell(m.auc),
        cell(m.acc),
        cell(m.sp),
        cell(m.se),
        cell(m.dice),
        c.tp,
        c.fp,
        c.tn,
        c.fn_
    )
}
