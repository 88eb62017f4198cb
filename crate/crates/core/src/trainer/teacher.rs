//! Source-modality identity classification pretraining for the teacher.
//!
//! A temporary affine classifier maps embeddings to identity logits and the
//! whole network is trained with softmax cross-entropy. The classifier is
//! discarded afterwards; only the embedding network is kept.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::adam::{adam_step, AdamConfig, AdamState};
use super::log::{LogRecord, TrainLog};
use crate::backbone::{build_network, EmbeddingNetwork, Gradients, NetworkConfig};
use crate::error::{DiuError, Result};
use crate::seed::{derive_seed, rng_for, CounterRng};
use crate::synthdata::{Dataset, Modality, SampleRef};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    /// After training, the head is rescaled so that the mean embedding norm
    /// over the training images equals this value. Cosine scores are
    /// unaffected; the distillation term is not, so this fixes how strongly
    /// it competes with the scale-free contrastive term. `None` keeps the
    /// scale the classifier happened to learn.
    pub embedding_norm: Option<f64>,
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            learning_rate: 2e-3,
            epochs: 12,
            batch_size: 48,
            optimizer: AdamConfig::default(),
            seed: 0,
            embedding_norm: Some(0.03),
        }
    }
}

impl TeacherConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(DiuError::config("teacher.learning_rate", "must be positive"));
        }
        if self.batch_size < 2 {
            return Err(DiuError::config("teacher.batch_size", "must be at least 2"));
        }
        if let Some(norm) = self.embedding_norm {
            if !(norm > 0.0 && norm.is_finite()) {
                return Err(DiuError::config("teacher.embedding_norm", "must be positive and finite"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TeacherOutcome {
    pub network: EmbeddingNetwork,
    pub log: TrainLog,
}

struct Classifier {
    classes: usize,
    dim: usize,
    weight: Vec<f32>,
    bias: Vec<f32>,
}

impl Classifier {
    fn new(classes: usize, dim: usize, seed: u64) -> Self {
        let rng = CounterRng::new(derive_seed(seed, "teacher/classifier"));
        let bound = 1.0 / (dim as f64).sqrt();
        Self {
            classes,
            dim,
            weight: (0..(classes * dim) as u64)
                .map(|i| ((2.0 * rng.uniform(i) - 1.0) * bound) as f32)
                .collect(),
            bias: vec![0.0; classes],
        }
    }

    /// Returns (loss, correct, d loss / d embedding) and accumulates
    /// classifier gradients for one sample.
    fn loss_and_grads(&self, embedding: &[f32], label: usize, gw: &mut [f32], gb: &mut [f32]) -> (f64, bool, Vec<f32>) {
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                self.bias[c] as f64
                    + self.weight[c * self.dim..(c + 1) * self.dim]
                        .iter()
                        .zip(embedding)
                        .map(|(w, e)| (*w as f64) * (*e as f64))
                        .sum::<f64>()
            })
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exp: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exp.iter().sum();
        let loss = -(exp[label] / z).ln();
        let argmax = logits
            .iter()
            .enumerate()
            .fold(0, |best, (i, &l)| if l > logits[best] { i } else { best });
        let mut grad_e = vec![0.0f32; self.dim];
        for c in 0..self.classes {
            let d = (exp[c] / z - if c == label { 1.0 } else { 0.0 }) as f32;
            gb[c] += d;
            let row = c * self.dim..(c + 1) * self.dim;
            for ((g, w), (e, ge)) in gw[row.clone()]
                .iter_mut()
                .zip(&self.weight[row])
                .zip(embedding.iter().zip(grad_e.iter_mut()))
            {
                *g += d * e;
                *ge += d * w;
            }
        }
        (loss, argmax == label, grad_e)
    }
}

/// Trains a fresh network on source-modality images of `train_ids`.
pub fn train_teacher(
    dataset: &Dataset,
    train_ids: &[u32],
    network: NetworkConfig,
    cfg: &TeacherConfig,
) -> Result<TeacherOutcome> {
    let mut log = TrainLog::default();
    let network = train_teacher_logged(dataset, train_ids, network, cfg, &mut log)?;
    Ok(TeacherOutcome { network, log })
}

/// [`train_teacher`] writing into a caller-owned log.
pub fn train_teacher_logged(
    dataset: &Dataset,
    train_ids: &[u32],
    network: NetworkConfig,
    cfg: &TeacherConfig,
    log: &mut TrainLog,
) -> Result<EmbeddingNetwork> {
    cfg.validate()?;
    if train_ids.len() < 2 {
        return Err(DiuError::config(
            "train_ids",
            format!("cross-entropy pretraining needs at least 2 identities, got {}", train_ids.len()),
        ));
    }
    let started = Instant::now();
    let mut net = build_network(network)?;
    let mut classifier = Classifier::new(train_ids.len(), net.embedding_dim(), cfg.seed);

    let samples: Vec<(SampleRef, usize)> = train_ids
        .iter()
        .enumerate()
        .flat_map(|(label, &id)| {
            (0..dataset.n_samples() as u32).map(move |s| (SampleRef::new(id, Modality::Source, s), label))
        })
        .collect();

    for (r, _) in &samples {
        dataset.image(r)?;
    }

    let trainable = vec![true; net.params().len()];
    let mut lengths: Vec<usize> = net.params().iter().map(|p| p.len()).collect();
    lengths.push(classifier.weight.len());
    lengths.push(classifier.bias.len());
    let mut adam = AdamState::new(&lengths);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut rng = rng_for(cfg.seed, "teacher/shuffle");
    let mut step = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            step += 1;
            let mut grads = Gradients::zeros_for(&net, &trainable);
            let mut gw = vec![0.0f32; classifier.weight.len()];
            let mut gb = vec![0.0f32; classifier.bias.len()];
            let (mut loss_sum, mut correct) = (0.0, 0usize);
            for &i in chunk {
                let (r, label) = samples[i];
                let (embedding, trace) = net.forward_traced(dataset.image(&r)?)?;
                let (loss, hit, grad_e) = classifier.loss_and_grads(&embedding, label, &mut gw, &mut gb);
                loss_sum += loss;
                correct += hit as usize;
                net.backward(&trace, &grad_e, &trainable, &mut grads);
            }
            let n = chunk.len() as f32;
            let loss = loss_sum / chunk.len() as f64;
            if !loss.is_finite() {
                return Err(DiuError::Divergence {
                    step,
                    message: format!("teacher cross-entropy became {loss}"),
                });
            }
            grads.scale(1.0 / n);
            gw.iter_mut().chain(gb.iter_mut()).for_each(|g| *g /= n);

            let mut grad_refs: Vec<&[f32]> = grads.tensors.iter().map(|g| g.as_deref().expect("all trainable")).collect();
            grad_refs.push(&gw);
            grad_refs.push(&gb);
            let mut param_refs: Vec<&mut [f32]> = net.params_mut().iter_mut().map(|p| p.data.as_mut_slice()).collect();
            param_refs.push(&mut classifier.weight);
            param_refs.push(&mut classifier.bias);
            adam_step(&mut param_refs, &grad_refs, &mut adam, cfg.learning_rate, &cfg.optimizer)?;

            log.records.push(LogRecord::TeacherStep {
                step,
                cross_entropy: loss,
                accuracy: correct as f64 / chunk.len() as f64,
            });
            epoch_loss += loss;
            epoch_batches += 1;
        }
        log.records.push(LogRecord::Epoch {
            epoch,
            mean_loss: epoch_loss / epoch_batches.max(1) as f64,
            eer: None,
            rank1: None,
        });
        log::debug!("teacher epoch {epoch}: mean loss {:.4}", epoch_loss / epoch_batches.max(1) as f64);
    }
    if let Some(norm) = cfg.embedding_norm {
        rescale_embeddings(&mut net, dataset, &samples, norm)?;
    }
    log.wall_clock_secs = started.elapsed().as_secs_f64();
    Ok(net)
}

/// Scales the head so the mean embedding norm over `samples` becomes `norm`.
fn rescale_embeddings(net: &mut EmbeddingNetwork, dataset: &Dataset, samples: &[(SampleRef, usize)], norm: f64) -> Result<()> {
    let mut total = 0.0;
    for (r, _) in samples {
        let e = net.embed(dataset.image(r)?)?;
        total += e.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
    }
    let mean = total / samples.len() as f64;
    if !(mean > 0.0 && mean.is_finite()) {
        return Err(DiuError::DegenerateEmbedding { norm: mean, eps: 0.0 });
    }
    let factor = (norm / mean) as f32;
    let head = net.head_param_range();
    for p in &mut net.params_mut()[head] {
        p.data.iter_mut().for_each(|v| *v *= factor);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::DatasetConfig;

    fn tiny_setup() -> (Dataset, NetworkConfig) {
        let ds = Dataset::generate(DatasetConfig {
            n_identities: 4,
            n_samples: 4,
            height: 16,
            width: 16,
            ..DatasetConfig::default()
        })
        .unwrap();
        let net = NetworkConfig {
            input_height: 16,
            input_width: 16,
            num_blocks: 2,
            channels_per_block: vec![4, 6],
            embedding_dim: 8,
            ..NetworkConfig::default()
        };
        (ds, net)
    }

    #[test]
    fn single_identity_is_rejected() {
        let (ds, net) = tiny_setup();
        let err = train_teacher(&ds, &[0], net, &TeacherConfig::default()).unwrap_err();
        assert!(matches!(err, DiuError::Config { .. }));
    }

    #[test]
    fn deterministic_and_loss_decreases() {
        let (ds, net) = tiny_setup();
        let cfg = TeacherConfig {
            epochs: 25,
            batch_size: 8,
            learning_rate: 1e-2,
            ..TeacherConfig::default()
        };
        let a = train_teacher(&ds, &[0, 1, 2, 3], net.clone(), &cfg).unwrap();
        let b = train_teacher(&ds, &[0, 1, 2, 3], net, &cfg).unwrap();
        assert_eq!(a.network.checksum(), b.network.checksum());
        let losses: Vec<f64> = a
            .log
            .records
            .iter()
            .filter_map(|r| match r {
                LogRecord::Epoch { mean_loss, .. } => Some(*mean_loss),
                _ => None,
            })
            .collect();
        assert!(losses.last().unwrap() < &(0.7 * losses[0]), "{losses:?}");
    }

    #[test]
    fn embedding_scale_is_normalized() {
        let (ds, net) = tiny_setup();
        let cfg = TeacherConfig {
            epochs: 2,
            batch_size: 8,
            embedding_norm: Some(0.5),
            ..TeacherConfig::default()
        };
        let out = train_teacher(&ds, &[0, 1], net, &cfg).unwrap();
        let mut total = 0.0;
        for id in 0..2 {
            for s in 0..4 {
                let e = out.network.embed(ds.image(&SampleRef::new(id, Modality::Source, s)).unwrap()).unwrap();
                total += e.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
            }
        }
        assert!((total / 8.0 - 0.5).abs() < 1e-5, "{}", total / 8.0);
    }
}
