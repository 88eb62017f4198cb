//! Domain-invariant unit adaptation.
//!
//! The student starts as an exact copy of the teacher. Each step draws a
//! batch of cross-modal pairs, embeds both sides with the student and the
//! source side with the frozen teacher, and minimizes
//! `(1 - gamma) * contrastive + gamma * distillation`. Only blocks
//! `1..=diu_cutoff` receive updates.

use std::collections::HashMap;
use std::time::Instant;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::log::{LogRecord, TrainLog};
use crate::backbone::{clone_as_student, EmbeddingNetwork, Gradients, ParameterPartition, Trace};
use crate::error::{DiuError, Result};
use crate::eval::evaluate_fold;
use crate::losses::{loss_gradients, total_loss, LossConfig};
use crate::seed::rng_for;
use crate::synthdata::{sample_pairs, Dataset, Fold, SampleRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub diu_cutoff: usize,
    pub genuine_fraction: f64,
    /// Defaults to `ceil(training identities * samples / batch_size)`.
    pub steps_per_epoch: Option<usize>,
    pub loss: LossConfig,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// Evaluate the fold's held-out manifests after every epoch (monitoring only).
    pub eval_each_epoch: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            epochs: 50,
            batch_size: 48,
            diu_cutoff: 4,
            genuine_fraction: 0.5,
            steps_per_epoch: None,
            loss: LossConfig::default(),
            optimizer: AdamConfig::default(),
            seed: 0,
            eval_each_epoch: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, num_blocks: usize) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(DiuError::config("train.learning_rate", "must be positive"));
        }
        if self.batch_size < 2 {
            return Err(DiuError::config("train.batch_size", "must be at least 2"));
        }
        if self.diu_cutoff > num_blocks {
            return Err(DiuError::config(
                "train.diu_cutoff",
                format!("{} exceeds the {num_blocks} network blocks", self.diu_cutoff),
            ));
        }
        if !(self.genuine_fraction > 0.0 && self.genuine_fraction < 1.0) {
            return Err(DiuError::config("train.genuine_fraction", "must lie in (0, 1)"));
        }
        if self.steps_per_epoch == Some(0) {
            return Err(DiuError::config("train.steps_per_epoch", "must be at least 1"));
        }
        self.loss.validate()
    }

    pub fn resolved_steps_per_epoch(&self, fold: &Fold, n_samples: usize) -> usize {
        self.steps_per_epoch
            .unwrap_or_else(|| (fold.train_ids.len() * n_samples).div_ceil(self.batch_size).max(1))
    }
}

#[derive(Debug, Clone)]
pub struct DiuOutcome {
    pub student: EmbeddingNetwork,
    pub partition: ParameterPartition,
    pub log: TrainLog,
}

fn to_f64_rows(rows: &[Vec<f32>]) -> Array2<f64> {
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(i, j)| rows[i][j] as f64)
}

/// Adapts the lower `cfg.diu_cutoff` blocks of a copy of `teacher` on the
/// fold's training identities.
pub fn train_diu(teacher: &EmbeddingNetwork, dataset: &Dataset, fold: &Fold, cfg: &TrainConfig) -> Result<DiuOutcome> {
    let mut log = TrainLog::default();
    let (student, partition) = train_diu_logged(teacher, dataset, fold, cfg, &mut log)?;
    Ok(DiuOutcome { student, partition, log })
}

/// [`train_diu`] writing into a caller-owned log, so the records up to a
/// failure survive it.
pub fn train_diu_logged(
    teacher: &EmbeddingNetwork,
    dataset: &Dataset,
    fold: &Fold,
    cfg: &TrainConfig,
    log: &mut TrainLog,
) -> Result<(EmbeddingNetwork, ParameterPartition)> {
    cfg.validate(teacher.num_blocks())?;
    let ds_cfg = dataset.config();
    let net_cfg = teacher.config();
    if (ds_cfg.height, ds_cfg.width) != (net_cfg.input_height, net_cfg.input_width) {
        return Err(DiuError::config(
            "network",
            format!(
                "teacher expects {}x{} input but the dataset has {}x{} images",
                net_cfg.input_height, net_cfg.input_width, ds_cfg.height, ds_cfg.width
            ),
        ));
    }
    let started = Instant::now();
    let (mut student, partition) = clone_as_student(teacher, cfg.diu_cutoff)?;
    let mask = partition.mask(&student);
    let trainable: Vec<usize> = mask.iter().enumerate().filter(|(_, &t)| t).map(|(i, _)| i).collect();

    // Nothing to adapt: the student is the teacher.
    if trainable.is_empty() {
        log.wall_clock_secs = started.elapsed().as_secs_f64();
        return Ok((student, partition));
    }

    let lengths: Vec<usize> = trainable.iter().map(|&i| student.params()[i].len()).collect();
    let mut adam = AdamState::new(&lengths);
    let mut rng = rng_for(cfg.seed, "diu/pairs");
    let mut teacher_cache: HashMap<SampleRef, Vec<f32>> = HashMap::new();
    let steps_per_epoch = cfg.resolved_steps_per_epoch(fold, dataset.n_samples());
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        let mut epoch_total = 0.0;
        for _ in 0..steps_per_epoch {
            step += 1;
            let batch = sample_pairs(fold, dataset.n_samples(), cfg.batch_size, cfg.genuine_fraction, &mut rng)?;

            let mut source_traces: Vec<Trace> = Vec::with_capacity(batch.len());
            let mut target_traces: Vec<Trace> = Vec::with_capacity(batch.len());
            let mut e_s = Vec::with_capacity(batch.len());
            let mut e_t = Vec::with_capacity(batch.len());
            let mut e_teacher = Vec::with_capacity(batch.len());
            for (src, tgt) in batch.source.iter().zip(&batch.target) {
                let (es, ts) = student.forward_traced(dataset.image(src)?)?;
                let (et, tt) = student.forward_traced(dataset.image(tgt)?)?;
                let teacher_embedding = match teacher_cache.get(src) {
                    Some(e) => e.clone(),
                    None => {
                        let e = teacher.embed(dataset.image(src)?)?;
                        teacher_cache.insert(*src, e.clone());
                        e
                    }
                };
                e_s.push(es);
                e_t.push(et);
                e_teacher.push(teacher_embedding);
                source_traces.push(ts);
                target_traces.push(tt);
            }
            let (e_s, e_t, e_teacher) = (to_f64_rows(&e_s), to_f64_rows(&e_t), to_f64_rows(&e_teacher));

            let breakdown = total_loss(e_s.view(), e_t.view(), e_teacher.view(), &batch.labels, &cfg.loss)
                .map_err(|e| diverged(step, e))?;
            if !breakdown.total.is_finite() {
                return Err(DiuError::Divergence {
                    step,
                    message: format!("total loss became {}", breakdown.total),
                });
            }
            let grads = loss_gradients(e_s.view(), e_t.view(), e_teacher.view(), &batch.labels, &cfg.loss)
                .map_err(|e| diverged(step, e))?;

            let mut acc = Gradients::zeros_for(&student, &mask);
            for i in 0..batch.len() {
                for (trace, rows) in [(&source_traces[i], &grads.source), (&target_traces[i], &grads.target)] {
                    let row: Vec<f32> = rows.row(i).iter().map(|&v| v as f32).collect();
                    if row.iter().any(|&v| v != 0.0) {
                        student.backward(trace, &row, &mask, &mut acc);
                    }
                }
            }

            let grad_refs: Vec<&[f32]> = trainable
                .iter()
                .map(|&i| acc.tensors[i].as_deref().expect("trainable tensor has a gradient"))
                .collect();
            let mut param_refs: Vec<&mut [f32]> = student
                .params_mut()
                .iter_mut()
                .zip(&mask)
                .filter(|(_, &t)| t)
                .map(|(p, _)| p.data.as_mut_slice())
                .collect();
            adam_step(&mut param_refs, &grad_refs, &mut adam, cfg.learning_rate, &cfg.optimizer)?;

            log.records.push(LogRecord::Step {
                step,
                contrastive: breakdown.contrastive,
                distillation: breakdown.distillation,
                total: breakdown.total,
            });
            epoch_total += breakdown.total;
        }
        let (eer, rank1) = if cfg.eval_each_epoch {
            let report = evaluate_fold(&student, dataset, fold)?;
            (Some(report.eer), Some(report.rank1))
        } else {
            (None, None)
        };
        let mean_loss = epoch_total / steps_per_epoch as f64;
        log::debug!("diu epoch {epoch}: mean loss {mean_loss:.4} eer {eer:?} rank1 {rank1:?}");
        log.records.push(LogRecord::Epoch {
            epoch,
            mean_loss,
            eer,
            rank1,
        });
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok((student, partition))
}

fn diverged(step: usize, err: DiuError) -> DiuError {
    match err {
        DiuError::DegenerateEmbedding { .. } => DiuError::Divergence {
            step,
            message: err.to_string(),
        },
        other => other,
    }
}
