use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{DiuError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogRecord {
    /// One DIU optimization step.
    Step {
        step: usize,
        contrastive: f64,
        distillation: f64,
        total: f64,
    },
    /// One teacher pretraining step.
    TeacherStep { step: usize, cross_entropy: f64, accuracy: f64 },
    /// End-of-epoch evaluation on the fold's held-out identities.
    Epoch {
        epoch: usize,
        mean_loss: f64,
        eer: Option<f64>,
        rank1: Option<f64>,
    },
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<LogRecord>,
    pub wall_clock_secs: f64,
    pub checkpoint: Option<PathBuf>,
}

impl TrainLog {
    pub fn steps(&self) -> impl Iterator<Item = &LogRecord> {
        self.records
            .iter()
            .filter(|r| matches!(r, LogRecord::Step { .. } | LogRecord::TeacherStep { .. }))
    }

    /// `(step, total)` for every DIU step record.
    pub fn totals(&self) -> Vec<(usize, f64)> {
        self.records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Step { step, total, .. } => Some((*step, *total)),
                _ => None,
            })
            .collect()
    }

    /// One JSON object per line: every record in order, then a summary line.
    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| DiuError::io(path, e))?;
        let mut w = BufWriter::new(file);
        for record in &self.records {
            serde_json::to_writer(&mut w, record)?;
            w.write_all(b"\n").map_err(|e| DiuError::io(path, e))?;
        }
        let summary = serde_json::json!({
            "kind": "summary",
            "wall_clock_secs": self.wall_clock_secs,
            "checkpoint": self.checkpoint,
        });
        serde_json::to_writer(&mut w, &summary)?;
        w.write_all(b"\n").map_err(|e| DiuError::io(path, e))?;
        w.flush().map_err(|e| DiuError::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jsonl_has_one_line_per_record() {
        let dir = tempfile::tempdir().unwrap();
        let log = TrainLog {
            records: vec![
                LogRecord::Step { step: 1, contrastive: 0.5, distillation: 0.0, total: 0.125 },
                LogRecord::Epoch { epoch: 1, mean_loss: 0.125, eer: Some(0.1), rank1: None },
            ],
            ..TrainLog::default()
        };
        let path = dir.path().join("log.jsonl");
        log.write_jsonl(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 3);
        let first: LogRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(first, log.records[0]);
        assert!(lines[2].contains("\"summary\""));
        assert_eq!(log.totals(), vec![(1, 0.125)]);
    }
}
