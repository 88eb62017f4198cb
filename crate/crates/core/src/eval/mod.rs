//! Biometric scoring and metrics.

mod metrics;
mod scoring;

pub use metrics::{
    aggregate_folds, auc, eer, rank1, roc_curve, vr_at_far, vr_metric_name, EvalReport, MeanStd, RocPoint, ScoreSet,
    VrAtFar, REPORTED_FARS,
};
pub use scoring::{evaluate_fold, score_protocol, ScoredProtocol};

use std::io::Write;
use std::path::Path;

use crate::error::{DiuError, Result};

/// Writes ROC points as `far,tpr,threshold` CSV (empty threshold for the origin).
pub fn write_roc_csv(path: &Path, roc: &[RocPoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["far", "tpr", "threshold"])?;
    for p in roc {
        w.write_record([
            p.far.to_string(),
            p.tpr.to_string(),
            p.threshold.map(|t| t.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush().map_err(|e| DiuError::io(path, e))
}

pub fn write_report_json(path: &Path, report: &EvalReport) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| DiuError::io(path, e))?;
    serde_json::to_writer_pretty(&mut f, report)?;
    f.write_all(b"\n").map_err(|e| DiuError::io(path, e))
}
