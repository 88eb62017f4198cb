//! Teacher pretraining, DIU adaptation, the optimizer, and ablation sweeps.

mod ablation;
mod adam;
mod diu;
mod log;
mod teacher;

pub use ablation::{
    ablation_csv_header, ablation_summary, run_ablation, write_ablation_csv, write_aggregate_csv, AblationAxis,
    AblationRow,
};
pub use adam::{adam_step, AdamConfig, AdamState};
pub use diu::{train_diu, train_diu_logged, DiuOutcome, TrainConfig};
pub use log::{LogRecord, TrainLog};
pub use teacher::{train_teacher, train_teacher_logged, TeacherConfig, TeacherOutcome};
