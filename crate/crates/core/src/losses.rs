//! Contrastive alignment loss, embedding distillation loss, and their
//! gamma-weighted combination, with closed-form gradients w.r.t. the student
//! embeddings.
//!
//! Per pair `i` with cosine `c_i` between student source/target embeddings:
//!
//! ```text
//! contrastive_i  = (1 - y_i) * max(0, c_i - m) + y_i * (1 - c_i)
//! distillation_i = || e_teacher_i - e_student_i ||_2        (source images only)
//! total          = (1 - gamma) * mean(contrastive) + gamma * mean(distillation)
//! ```

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{DiuError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub margin: f64,
    pub gamma: f64,
    /// Guard added to the cosine denominator.
    pub eps: f64,
    /// Use `||.||^2` instead of `||.||` for the distillation term.
    pub squared_distillation: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            margin: 0.0,
            gamma: 0.75,
            eps: 1e-12,
            squared_distillation: false,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(DiuError::config("gamma", format!("{} is outside [0, 1]", self.gamma)));
        }
        if !(-1.0..=1.0).contains(&self.margin) {
            return Err(DiuError::config("margin", format!("{} is outside [-1, 1]", self.margin)));
        }
        if !(self.eps > 0.0) {
            return Err(DiuError::config("eps", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub distillation: f64,
    pub total: f64,
    pub per_pair_contrastive: Vec<f64>,
}

/// Gradients of the total loss w.r.t. the student's source and target embeddings.
#[derive(Debug, Clone, PartialEq)]
pub struct LossGradients {
    pub source: Array2<f64>,
    pub target: Array2<f64>,
}

fn norm(v: ArrayView1<f64>) -> f64 {
    v.dot(&v).sqrt()
}

fn checked_norm(v: ArrayView1<f64>, eps: f64) -> Result<f64> {
    let n = norm(v);
    if n < eps || !n.is_finite() {
        return Err(DiuError::DegenerateEmbedding { norm: n, eps });
    }
    Ok(n)
}

/// `(a . b) / (|a| |b| + eps)`, unclamped.
pub fn cosine_similarity(a: ArrayView1<f64>, b: ArrayView1<f64>, eps: f64) -> Result<f64> {
    if a.len() != b.len() {
        return Err(DiuError::Shape(format!("vectors of length {} and {}", a.len(), b.len())));
    }
    let na = checked_norm(a, eps)?;
    let nb = checked_norm(b, eps)?;
    Ok(a.dot(&b) / (na * nb + eps))
}

/// Cosine and its gradients w.r.t. both arguments.
fn cosine_with_grads(a: ArrayView1<f64>, b: ArrayView1<f64>, eps: f64) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let na = checked_norm(a, eps)?;
    let nb = checked_norm(b, eps)?;
    let dot = a.dot(&b);
    let denom = na * nb + eps;
    let cos = dot / denom;
    // d/da [dot / (|a||b| + eps)] = b / denom - dot * |b| * a / (|a| denom^2)
    let ka = dot * nb / (na * denom * denom);
    let kb = dot * na / (nb * denom * denom);
    let ga = a.iter().zip(b).map(|(&ai, &bi)| bi / denom - ka * ai).collect();
    let gb = a.iter().zip(b).map(|(&ai, &bi)| ai / denom - kb * bi).collect();
    Ok((cos, ga, gb))
}

fn check_pair_batches(a: &ArrayView2<f64>, b: &ArrayView2<f64>, what: &str) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(DiuError::Shape(format!("{what}: batches of shape {:?} and {:?}", a.dim(), b.dim())));
    }
    if a.nrows() == 0 {
        return Err(DiuError::Shape(format!("{what}: empty batch")));
    }
    Ok(())
}

fn check_labels(labels: &[u8], n: usize) -> Result<()> {
    if labels.len() != n {
        return Err(DiuError::Shape(format!("{} labels for a batch of {n}", labels.len())));
    }
    if let Some(bad) = labels.iter().find(|&&y| y > 1) {
        return Err(DiuError::Data(format!("pair label {bad} is not 0 or 1")));
    }
    Ok(())
}

/// Mean cosine contrastive loss and the per-pair values.
pub fn contrastive_loss(
    e_s: ArrayView2<f64>,
    e_t: ArrayView2<f64>,
    labels: &[u8],
    cfg: &LossConfig,
) -> Result<(f64, Vec<f64>)> {
    check_pair_batches(&e_s, &e_t, "contrastive loss")?;
    check_labels(labels, e_s.nrows())?;
    let per_pair = e_s
        .rows()
        .into_iter()
        .zip(e_t.rows())
        .zip(labels)
        .map(|((s, t), &y)| {
            let cos = cosine_similarity(s, t, cfg.eps)?;
            Ok(if y == 1 { 1.0 - cos } else { (cos - cfg.margin).max(0.0) })
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean = per_pair.iter().sum::<f64>() / per_pair.len() as f64;
    Ok((mean, per_pair))
}

/// Mean Euclidean distance between teacher and student embeddings.
pub fn distillation_loss(e_teacher: ArrayView2<f64>, e_student: ArrayView2<f64>) -> Result<f64> {
    distillation_loss_with(e_teacher, e_student, false)
}

pub fn distillation_loss_with(e_teacher: ArrayView2<f64>, e_student: ArrayView2<f64>, squared: bool) -> Result<f64> {
    check_pair_batches(&e_teacher, &e_student, "distillation loss")?;
    let total: f64 = e_teacher
        .rows()
        .into_iter()
        .zip(e_student.rows())
        .map(|(t, s)| {
            let sq: f64 = t.iter().zip(s).map(|(a, b)| (a - b) * (a - b)).sum();
            if squared {
                sq
            } else {
                sq.sqrt()
            }
        })
        .sum();
    Ok(total / e_teacher.nrows() as f64)
}

pub fn total_loss(
    e_s_student: ArrayView2<f64>,
    e_t_student: ArrayView2<f64>,
    e_s_teacher: ArrayView2<f64>,
    labels: &[u8],
    cfg: &LossConfig,
) -> Result<LossBreakdown> {
    cfg.validate()?;
    let (contrastive, per_pair_contrastive) = contrastive_loss(e_s_student, e_t_student, labels, cfg)?;
    let distillation = distillation_loss_with(e_s_teacher, e_s_student, cfg.squared_distillation)?;
    let total = (1.0 - cfg.gamma) * contrastive + cfg.gamma * distillation;
    Ok(LossBreakdown {
        contrastive,
        distillation,
        total,
        per_pair_contrastive,
    })
}

/// Analytic gradient of [`total_loss`] w.r.t. the student embeddings; the
/// teacher embeddings are constants. Where the distillation distance is
/// exactly zero the (sub)gradient is taken as zero.
pub fn loss_gradients(
    e_s_student: ArrayView2<f64>,
    e_t_student: ArrayView2<f64>,
    e_s_teacher: ArrayView2<f64>,
    labels: &[u8],
    cfg: &LossConfig,
) -> Result<LossGradients> {
    cfg.validate()?;
    check_pair_batches(&e_s_student, &e_t_student, "contrastive loss")?;
    check_pair_batches(&e_s_teacher, &e_s_student, "distillation loss")?;
    check_labels(labels, e_s_student.nrows())?;

    let n = e_s_student.nrows() as f64;
    let w_c = (1.0 - cfg.gamma) / n;
    let w_d = cfg.gamma / n;
    let mut source = Array2::zeros(e_s_student.dim());
    let mut target = Array2::zeros(e_t_student.dim());

    for (i, &y) in labels.iter().enumerate() {
        let s = e_s_student.row(i);
        let t = e_t_student.row(i);
        let (cos, gs, gt) = cosine_with_grads(s, t, cfg.eps)?;
        // d(per-pair contrastive)/d(cos)
        let dcos = if y == 1 {
            -1.0
        } else if cos > cfg.margin {
            1.0
        } else {
            0.0
        };
        if w_c != 0.0 && dcos != 0.0 {
            for (j, (a, b)) in gs.iter().zip(&gt).enumerate() {
                source[[i, j]] += w_c * dcos * a;
                target[[i, j]] += w_c * dcos * b;
            }
        }
        if w_d != 0.0 {
            let teacher = e_s_teacher.row(i);
            let diff: Vec<f64> = s.iter().zip(teacher).map(|(a, b)| a - b).collect();
            if cfg.squared_distillation {
                for (j, d) in diff.iter().enumerate() {
                    source[[i, j]] += w_d * 2.0 * d;
                }
            } else {
                let dist = diff.iter().map(|d| d * d).sum::<f64>().sqrt();
                if dist > 0.0 {
                    for (j, d) in diff.iter().enumerate() {
                        source[[i, j]] += w_d * d / dist;
                    }
                }
            }
        }
    }
    Ok(LossGradients { source, target })
}
