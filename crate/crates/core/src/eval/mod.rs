//! Segmentation metrics: ROC AUC, threshold counts and ratios, connected
//! component filtering, region-restricted evaluation and report output.

mod components;
mod metrics;
mod report;

pub use components::{remove_small_components, MIN_COMPONENT};
pub use metrics::{evaluate_region, roc_auc, threshold_metrics, Counts, EvalReport, Region, THRESHOLD};
pub use report::{csv_header, csv_row, mean_csv_row, MeanReport, CSV_COLUMNS};
