//! Domain-invariant unit adaptation for heterogeneous face recognition at
//! desk scale.
//!
//! A teacher embedding network is pretrained on the source modality. A
//! student copy then adapts only its lower blocks on cross-modal pairs, pulled
//! together by a cosine contrastive loss while an L2 distillation loss keeps
//! its source-modality embeddings on the teacher's. Everything runs on
//! deterministic synthetic data with a k-fold verification and
//! identification protocol.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod backbone;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod image;
pub mod losses;
pub mod seed;
pub mod synthdata;
pub mod trainer;

pub use backbone::{
    build_network, clone_as_student, load_checkpoint, replicate_channels, save_checkpoint, EmbeddingNetwork,
    NetworkConfig, ParameterPartition,
};
pub use error::{DiuError, Result};
pub use eval::{aggregate_folds, evaluate_fold, EvalReport, MeanStd, ScoreSet};
pub use experiment::{CheckpointSel, ExperimentConfig, FoldSel, Layout, RunRecord, Stage};
pub use image::Image;
pub use losses::{contrastive_loss, distillation_loss, loss_gradients, total_loss, LossBreakdown, LossConfig};
pub use synthdata::{build_protocol, sample_pairs, Dataset, DatasetConfig, Fold, Modality, SampleRef, SyntheticProtocol};
pub use trainer::{
    adam_step, run_ablation, train_diu, train_teacher, AblationAxis, AblationRow, AdamConfig, TeacherConfig,
    TrainConfig, TrainLog,
};
