use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::diu::{train_diu, TrainConfig};
use crate::backbone::EmbeddingNetwork;
use crate::error::{DiuError, Result};
use crate::eval::{aggregate_folds, evaluate_fold, vr_metric_name, EvalReport, MeanStd};
use crate::synthdata::{Dataset, SyntheticProtocol};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationAxis {
    /// Number of adapted lower blocks.
    Layers,
    /// Distillation weight.
    Gamma,
}

impl FromStr for AblationAxis {
    type Err = DiuError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "layers" => Ok(AblationAxis::Layers),
            "gamma" => Ok(AblationAxis::Gamma),
            other => Err(DiuError::config("axis", format!("unknown ablation axis `{other}`"))),
        }
    }
}

impl AblationAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationAxis::Layers => "layers",
            AblationAxis::Gamma => "gamma",
        }
    }

    /// Checks `value` and returns `base` with it applied.
    pub fn apply(self, base: &TrainConfig, value: f64, num_blocks: usize) -> Result<TrainConfig> {
        let mut cfg = base.clone();
        match self {
            AblationAxis::Layers => {
                if value.fract() != 0.0 || value < 0.0 || value > num_blocks as f64 {
                    return Err(DiuError::config(
                        "values",
                        format!("layer count {value} must be an integer in [0, {num_blocks}]"),
                    ));
                }
                cfg.diu_cutoff = value as usize;
            }
            AblationAxis::Gamma => {
                if !(0.0..=1.0).contains(&value) {
                    return Err(DiuError::config("values", format!("gamma {value} is outside [0, 1]")));
                }
                cfg.loss.gamma = value;
            }
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub value: f64,
    pub reports: Vec<EvalReport>,
    pub summary: BTreeMap<String, MeanStd>,
}

/// Trains one student per (value, fold) from that fold's teacher and
/// summarizes each value across folds. `fold_config` maps a fold index and
/// a value-adjusted config to the config actually used for that fold.
pub fn run_ablation(
    axis: AblationAxis,
    values: &[f64],
    base: &TrainConfig,
    dataset: &Dataset,
    protocol: &SyntheticProtocol,
    teachers: &[EmbeddingNetwork],
    fold_config: impl Fn(usize, &TrainConfig) -> TrainConfig,
) -> Result<Vec<AblationRow>> {
    if teachers.len() != protocol.folds.len() {
        return Err(DiuError::config(
            "teachers",
            format!("{} teachers for {} folds", teachers.len(), protocol.folds.len()),
        ));
    }
    let num_blocks = teachers.first().map_or(0, |t| t.num_blocks());
    let configs = values
        .iter()
        .map(|&v| axis.apply(base, v, num_blocks))
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::with_capacity(values.len());
    for (&value, cfg) in values.iter().zip(&configs) {
        let mut reports = Vec::with_capacity(protocol.folds.len());
        for (fold, teacher) in protocol.folds.iter().zip(teachers) {
            let outcome = train_diu(teacher, dataset, fold, &fold_config(fold.index, cfg))?;
            reports.push(evaluate_fold(&outcome.student, dataset, fold)?);
        }
        let summary = aggregate_folds(&reports)?;
        log::info!(
            "{} = {value}: eer {:.4} rank1 {:.4}",
            axis.as_str(),
            summary["eer"].mean,
            summary["rank1"].mean
        );
        rows.push(AblationRow { value, reports, summary });
    }
    Ok(rows)
}

const CSV_METRICS: [&str; 5] = ["auc", "eer", "rank1", "vr_far_0p1", "vr_far_1"];

pub fn ablation_csv_header() -> Vec<String> {
    let mut header = vec!["value".to_string()];
    for m in CSV_METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    header
}

fn csv_record(label: String, summary: &BTreeMap<String, MeanStd>) -> Result<Vec<String>> {
    let mut record = vec![label];
    for m in CSV_METRICS {
        let s = summary
            .get(m)
            .ok_or_else(|| DiuError::Metric(format!("summary is missing `{m}`")))?;
        record.push(s.mean.to_string());
        record.push(s.std.to_string());
    }
    Ok(record)
}

/// One row per ablation value with mean and std columns per metric.
pub fn write_ablation_csv(path: &Path, rows: &[AblationRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ablation_csv_header())?;
    for row in rows {
        w.write_record(csv_record(row.value.to_string(), &row.summary)?)?;
    }
    w.flush().map_err(|e| DiuError::io(path, e))
}

/// Single-row aggregate table for a set of fold reports.
pub fn write_aggregate_csv(path: &Path, label: &str, summary: &BTreeMap<String, MeanStd>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ablation_csv_header())?;
    w.write_record(csv_record(label.to_string(), summary)?)?;
    w.flush().map_err(|e| DiuError::io(path, e))
}

/// Plain-text table in percent, `mean ± std` per cell.
pub fn ablation_summary(axis: AblationAxis, rows: &[AblationRow]) -> String {
    let vr1 = vr_metric_name(1e-2);
    let vr01 = vr_metric_name(1e-3);
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:>8}  {:>15}  {:>15}  {:>15}  {:>15}  {:>15}",
        axis.as_str(),
        "AUC",
        "EER",
        "Rank-1",
        "VR@FAR=0.1%",
        "VR@FAR=1%"
    );
    for row in rows {
        let cell = |m: &str| {
            row.summary
                .get(m)
                .map(|s| format!("{:.2} ± {:.2}", 100.0 * s.mean, 100.0 * s.std))
                .unwrap_or_else(|| "-".into())
        };
        let _ = writeln!(
            out,
            "{:>8}  {:>15}  {:>15}  {:>15}  {:>15}  {:>15}",
            row.value,
            cell("auc"),
            cell("eer"),
            cell("rank1"),
            cell(&vr01),
            cell(&vr1)
        );
    }
    out
}
