//! Reproducible experiment runs: one TOML config, one root seed, and a fixed
//! output layout shared by every command.
//!
//! ```text
//! <out>/data/                 index.json, images/, protocol.json
//! <out>/fold<N>/teacher/      checkpoint, log.jsonl
//! <out>/fold<N>/diu/          checkpoint, log.jsonl
//! <out>/eval/<label>/         fold<N>.json, roc_fold<N>.csv, aggregate.{csv,json}
//! <out>/ablation_<axis>/      ablation.csv, rows.json, summary.txt
//! ```
//!
//! Every directory a command writes also receives `run.json` (resolved
//! config plus a content hash of the inputs) and `config.toml` (the resolved
//! config on its own).

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::backbone::{load_checkpoint, save_checkpoint, EmbeddingNetwork, NetworkConfig};
use crate::error::{DiuError, Result};
use crate::eval::{aggregate_folds, score_protocol, write_report_json, write_roc_csv, EvalReport};
use crate::seed::derive_seed;
use crate::synthdata::{build_protocol, Dataset, DatasetConfig, SyntheticProtocol};
use crate::trainer::{
    ablation_summary, run_ablation, train_diu_logged, train_teacher_logged, write_ablation_csv, write_aggregate_csv,
    AblationAxis, AblationRow, TeacherConfig, TrainConfig, TrainLog,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolConfig {
    pub n_folds: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self { n_folds: 5 }
    }
}

/// Everything a run depends on. Subsystem `seed` fields are overwritten by
/// [`ExperimentConfig::resolved`] from the root `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DatasetConfig,
    pub protocol: ProtocolConfig,
    pub network: NetworkConfig,
    pub teacher: TeacherConfig,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: PathBuf::from("runs/default"),
            data: DatasetConfig::default(),
            protocol: ProtocolConfig::default(),
            network: NetworkConfig::default(),
            teacher: TeacherConfig::default(),
            // Desk-scale schedule: ten times the step size, under a third of the epochs.
            train: TrainConfig {
                learning_rate: 1e-3,
                epochs: 15,
                ..TrainConfig::default()
            },
        }
    }
}

impl ExperimentConfig {
    /// Parses a (possibly partial) document. Keys it sets override
    /// [`ExperimentConfig::default`] one by one, so a partial `[train]` table
    /// keeps the experiment's defaults for the keys it omits.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = toml::from_str(text).map_err(|e| DiuError::config("config", e.message().to_string()))?;
        let mut merged = toml::Table::try_from(Self::default()).map_err(|e| DiuError::config("config", e.to_string()))?;
        merge_tables(&mut merged, user);
        toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| DiuError::config("config", e.message().to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| DiuError::config("config", format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    /// Copy with every subsystem seed derived from the root seed.
    pub fn resolved(&self) -> Self {
        let mut cfg = self.clone();
        cfg.data.seed = child_seed(self.seed, "data");
        cfg.network.seed = child_seed(self.seed, "network");
        cfg.teacher.seed = child_seed(self.seed, "teacher");
        cfg.train.seed = child_seed(self.seed, "train");
        cfg
    }

    pub fn validate(&self) -> Result<()> {
        if self.seed > i64::MAX as u64 {
            return Err(DiuError::config("seed", format!("{} does not fit a signed 64-bit integer", self.seed)));
        }
        self.data.validate()?;
        self.network.validate()?;
        self.teacher.validate()?;
        self.train.validate(self.network.num_blocks)?;
        if self.protocol.n_folds < 2 {
            return Err(DiuError::config("protocol.n_folds", "need at least 2 folds"));
        }
        if self.data.n_identities < 2 * self.protocol.n_folds {
            return Err(DiuError::config(
                "data.n_identities",
                format!(
                    "{} identities cannot fill {} folds with 2 each",
                    self.data.n_identities, self.protocol.n_folds
                ),
            ));
        }
        if (self.data.height, self.data.width) != (self.network.input_height, self.network.input_width) {
            return Err(DiuError::config(
                "network.input_height",
                format!(
                    "network expects {}x{} images but data.height/width is {}x{}",
                    self.network.input_height, self.network.input_width, self.data.height, self.data.width
                ),
            ));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| DiuError::config("config", e.to_string()))
    }

    pub fn layout(&self) -> Layout {
        Layout::new(&self.out_dir)
    }

    pub fn fold_network(&self, fold: usize) -> NetworkConfig {
        NetworkConfig {
            seed: derive_seed(self.network.seed, &format!("fold{fold}")),
            ..self.network.clone()
        }
    }

    pub fn fold_teacher(&self, fold: usize) -> TeacherConfig {
        TeacherConfig {
            seed: derive_seed(self.teacher.seed, &format!("fold{fold}")),
            ..self.teacher.clone()
        }
    }

    /// The per-fold seed is independent of every other train setting, so
    /// ablation values on one fold share their pair stream.
    pub fn fold_train(&self, fold: usize, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            seed: derive_seed(self.train.seed, &format!("fold{fold}")),
            ..base.clone()
        }
    }
}

/// Derived seed truncated to 63 bits: TOML integers are signed.
fn child_seed(parent: u64, label: &str) -> u64 {
    derive_seed(parent, label) & i64::MAX as u64
}

fn merge_tables(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge_tables(b, o),
            (_, value) => {
                base.insert(key, value);
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Teacher,
    Diu,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Teacher => "teacher",
            Stage::Diu => "diu",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = DiuError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "teacher" => Ok(Stage::Teacher),
            "diu" => Ok(Stage::Diu),
            other => Err(DiuError::config("stage", format!("unknown stage `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn protocol_path(&self) -> PathBuf {
        self.data_dir().join("protocol.json")
    }

    pub fn fold_dir(&self, fold: usize) -> PathBuf {
        self.root.join(format!("fold{fold}"))
    }

    pub fn checkpoint_dir(&self, fold: usize, stage: Stage) -> PathBuf {
        self.fold_dir(fold).join(stage.as_str())
    }

    pub fn eval_dir(&self, label: &str) -> PathBuf {
        self.root.join("eval").join(label)
    }

    pub fn ablation_dir(&self, axis: AblationAxis) -> PathBuf {
        self.root.join(format!("ablation_{}", axis.as_str()))
    }
}

/// A file that fed a run, identified by content.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub command: String,
    pub args: serde_json::Value,
    pub config: ExperimentConfig,
    pub inputs: Vec<InputDigest>,
    /// SHA-256 over `"<sha256>  <path>\n"` lines of the resolved config and every input.
    pub input_hash: String,
    pub version: String,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn collect_files(path: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let meta = fs::metadata(path).map_err(|e| DiuError::io(path, e))?;
    if meta.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| DiuError::io(path, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| DiuError::io(path, err)))
        .collect::<Result<_>>()?;
    entries.sort();
    for entry in entries {
        // run records describe a directory; they are never inputs to another run
        if entry.file_name().is_some_and(|n| n == "run.json" || n == "config.toml" || n == "log.jsonl") {
            continue;
        }
        collect_files(&entry, out)?;
    }
    Ok(())
}

/// Digests every file under `inputs`, with paths relative to `root`.
pub fn digest_inputs(root: &Path, inputs: &[PathBuf]) -> Result<Vec<InputDigest>> {
    let mut files = Vec::new();
    for input in inputs {
        collect_files(input, &mut files)?;
    }
    files
        .iter()
        .map(|f| {
            let bytes = fs::read(f).map_err(|e| DiuError::io(f, e))?;
            let rel = f.strip_prefix(root).unwrap_or(f);
            Ok(InputDigest {
                path: rel.to_string_lossy().replace('\\', "/"),
                sha256: hex(&Sha256::digest(&bytes)),
            })
        })
        .collect()
}

/// Writes `run.json` and `config.toml` into `dir`.
pub fn write_run_record(
    dir: &Path,
    command: &str,
    args: serde_json::Value,
    cfg: &ExperimentConfig,
    inputs: &[PathBuf],
) -> Result<RunRecord> {
    fs::create_dir_all(dir).map_err(|e| DiuError::io(dir, e))?;
    let config_text = cfg.to_toml()?;
    let inputs = digest_inputs(cfg.out_dir.as_path(), inputs)?;
    let mut hasher = Sha256::new();
    hasher.update(format!("{}  config.toml\n", hex(&Sha256::digest(config_text.as_bytes()))));
    for input in &inputs {
        hasher.update(format!("{}  {}\n", input.sha256, input.path));
    }
    let record = RunRecord {
        command: command.to_string(),
        args,
        config: cfg.clone(),
        inputs,
        input_hash: hex(&hasher.finalize()),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    let config_path = dir.join("config.toml");
    fs::write(&config_path, config_text).map_err(|e| DiuError::io(&config_path, e))?;
    let run_path = dir.join("run.json");
    fs::write(&run_path, serde_json::to_vec_pretty(&record)?).map_err(|e| DiuError::io(&run_path, e))?;
    Ok(record)
}

/// Generates the dataset and protocol and writes them under `<out>/data`.
pub fn gen_data(cfg: &ExperimentConfig) -> Result<(Dataset, SyntheticProtocol)> {
    cfg.validate()?;
    let layout = cfg.layout();
    let dir = layout.data_dir();
    let dataset = Dataset::generate(cfg.data.clone())?;
    let protocol = build_protocol(cfg.data.seed, cfg.data.n_identities, cfg.data.n_samples, cfg.protocol.n_folds)?;
    if dir.exists() {
        // stale samples from another config must not survive next to the new index
        let images = dir.join("images");
        if images.exists() {
            fs::remove_dir_all(&images).map_err(|e| DiuError::io(&images, e))?;
        }
    }
    dataset.save(&dir)?;
    protocol.save(&layout.protocol_path())?;
    write_run_record(&dir, "gen-data", serde_json::json!({}), cfg, &[])?;
    log::info!("wrote {} samples to {}", dataset.len(), dir.display());
    Ok((dataset, protocol))
}

/// Loads `<out>/data`, generating it first when absent. An existing dataset
/// whose config differs from `cfg` is a configuration error.
pub fn open_data(cfg: &ExperimentConfig) -> Result<(Dataset, SyntheticProtocol)> {
    let layout = cfg.layout();
    if !layout.data_dir().join("index.json").exists() {
        return gen_data(cfg);
    }
    let dataset = Dataset::load(&layout.data_dir())?;
    if dataset.config() != &cfg.data {
        return Err(DiuError::config(
            "data",
            format!(
                "{} was generated from a different data config; rerun gen-data or use another --out",
                layout.data_dir().display()
            ),
        ));
    }
    let protocol = SyntheticProtocol::load(&layout.protocol_path())?;
    if protocol.folds.len() != cfg.protocol.n_folds {
        return Err(DiuError::config(
            "protocol.n_folds",
            format!("{} has {} folds, config asks for {}", layout.protocol_path().display(), protocol.folds.len(), cfg.protocol.n_folds),
        ));
    }
    Ok((dataset, protocol))
}

fn check_fold(protocol: &SyntheticProtocol, fold: usize) -> Result<()> {
    if fold >= protocol.folds.len() {
        return Err(DiuError::config(
            "fold",
            format!("fold {fold} does not exist; the protocol has {} folds", protocol.folds.len()),
        ));
    }
    Ok(())
}

fn data_inputs(cfg: &ExperimentConfig) -> Vec<PathBuf> {
    vec![cfg.layout().data_dir()]
}

pub fn load_teacher(cfg: &ExperimentConfig, fold: usize) -> Result<EmbeddingNetwork> {
    let dir = cfg.layout().checkpoint_dir(fold, Stage::Teacher);
    if !dir.join("meta.json").exists() {
        return Err(DiuError::Checkpoint {
            path: dir,
            message: format!("teacher checkpoint not found for fold {fold}; run `train --stage teacher --fold {fold}` first"),
        });
    }
    let network = load_checkpoint(&dir)?.network;
    if network.config() != &cfg.fold_network(fold) {
        return Err(DiuError::config(
            "network",
            format!("teacher at {} was trained with a different network config", dir.display()),
        ));
    }
    Ok(network)
}

fn finish_log(log: &mut TrainLog, dir: &Path, saved: bool) -> Result<()> {
    log.checkpoint = saved.then(|| dir.to_path_buf());
    fs::create_dir_all(dir).map_err(|e| DiuError::io(dir, e))?;
    log.write_jsonl(&dir.join("log.jsonl"))
}

/// Trains one stage for one fold, writing the checkpoint, its log, and the
/// run record into `<out>/fold<N>/<stage>`. The log is written even when
/// training fails.
pub fn train_stage(cfg: &ExperimentConfig, stage: Stage, fold: usize) -> Result<EmbeddingNetwork> {
    cfg.validate()?;
    let (dataset, protocol) = open_data(cfg)?;
    check_fold(&protocol, fold)?;
    let layout = cfg.layout();
    let dir = layout.checkpoint_dir(fold, stage);
    let f = &protocol.folds[fold];
    let mut log = TrainLog::default();
    let mut inputs = data_inputs(cfg);
    let (network, training) = match stage {
        Stage::Teacher => {
            let teacher_cfg = cfg.fold_teacher(fold);
            let result = train_teacher_logged(&dataset, &f.train_ids, cfg.fold_network(fold), &teacher_cfg, &mut log);
            (result, serde_json::to_value(&teacher_cfg)?)
        }
        Stage::Diu => {
            let teacher = load_teacher(cfg, fold)?;
            inputs.push(layout.checkpoint_dir(fold, Stage::Teacher));
            let train_cfg = cfg.fold_train(fold, &cfg.train);
            let result = train_diu_logged(&teacher, &dataset, f, &train_cfg, &mut log).map(|(student, _)| student);
            (result, serde_json::to_value(&train_cfg)?)
        }
    };
    let network = match network {
        Ok(n) => n,
        Err(e) => {
            finish_log(&mut log, &dir, false)?;
            return Err(e);
        }
    };
    let cutoff = (stage == Stage::Diu).then_some(cfg.train.diu_cutoff);
    save_checkpoint(&dir, &network, cutoff, training)?;
    finish_log(&mut log, &dir, true)?;
    write_run_record(&dir, "train", serde_json::json!({ "stage": stage, "fold": fold }), cfg, &inputs)?;
    log::info!("fold {fold}: {stage} checkpoint written to {}", dir.display());
    Ok(network)
}

/// Which checkpoint(s) to evaluate.
#[derive(Debug, Clone, PartialEq)]
pub enum CheckpointSel {
    /// `<out>/fold<N>/<stage>` for each evaluated fold.
    Stage(Stage),
    /// A checkpoint directory; `{fold}` in the path is replaced by the fold index.
    Path(String),
}

impl CheckpointSel {
    pub fn parse(s: &str) -> Self {
        s.parse::<Stage>().map_or_else(|_| CheckpointSel::Path(s.to_string()), CheckpointSel::Stage)
    }

    fn dir(&self, layout: &Layout, fold: usize) -> PathBuf {
        match self {
            CheckpointSel::Stage(stage) => layout.checkpoint_dir(fold, *stage),
            CheckpointSel::Path(p) => PathBuf::from(p.replace("{fold}", &fold.to_string())),
        }
    }

    fn label(&self) -> String {
        match self {
            CheckpointSel::Stage(stage) => stage.as_str().to_string(),
            CheckpointSel::Path(p) => {
                let name = Path::new(p).file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
                let name: String = name
                    .replace("{fold}", "")
                    .chars()
                    .filter(|c| c.is_ascii_alphanumeric() || "-_".contains(*c))
                    .collect();
                if name.is_empty() {
                    "checkpoint".into()
                } else {
                    name
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldSel {
    One(usize),
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub dir: PathBuf,
    pub reports: Vec<(usize, EvalReport)>,
}

/// Scores the selected checkpoint(s) on their folds' held-out manifests.
pub fn evaluate(cfg: &ExperimentConfig, checkpoint: &CheckpointSel, folds: FoldSel) -> Result<EvalOutput> {
    cfg.validate()?;
    let (dataset, protocol) = open_data(cfg)?;
    let indices: Vec<usize> = match folds {
        FoldSel::One(f) => {
            check_fold(&protocol, f)?;
            vec![f]
        }
        FoldSel::All => (0..protocol.folds.len()).collect(),
    };
    if let (CheckpointSel::Path(p), FoldSel::All) = (checkpoint, folds) {
        if !p.contains("{fold}") {
            return Err(DiuError::config(
                "checkpoint",
                "with --all-folds a checkpoint path must contain `{fold}`, or name a stage (teacher, diu)",
            ));
        }
    }
    let layout = cfg.layout();
    let dir = layout.eval_dir(&checkpoint.label());
    fs::create_dir_all(&dir).map_err(|e| DiuError::io(&dir, e))?;
    let mut inputs = data_inputs(cfg);
    let mut reports = Vec::with_capacity(indices.len());
    for &f in &indices {
        let ckpt = checkpoint.dir(&layout, f);
        if !ckpt.join("meta.json").exists() {
            return Err(DiuError::Checkpoint {
                path: ckpt,
                message: format!("checkpoint not found for fold {f}"),
            });
        }
        let network = load_checkpoint(&ckpt)?.network;
        let fold = &protocol.folds[f];
        let report = score_protocol(&network, &dataset, &fold.enrollment, &fold.probes)?.report()?;
        write_report_json(&dir.join(format!("fold{f}.json")), &report)?;
        write_roc_csv(&dir.join(format!("roc_fold{f}.csv")), &report.roc)?;
        log::info!("fold {f}: eer {:.4} rank1 {:.4} auc {:.4}", report.eer, report.rank1, report.auc);
        inputs.push(ckpt);
        reports.push((f, report));
    }
    if folds == FoldSel::All {
        let all: Vec<EvalReport> = reports.iter().map(|(_, r)| r.clone()).collect();
        let summary = aggregate_folds(&all)?;
        write_aggregate_csv(&dir.join("aggregate.csv"), &checkpoint.label(), &summary)?;
        let path = dir.join("aggregate.json");
        fs::write(&path, serde_json::to_vec_pretty(&summary)?).map_err(|e| DiuError::io(&path, e))?;
    }
    let fold_arg = match folds {
        FoldSel::One(f) => serde_json::json!(f),
        FoldSel::All => serde_json::json!("all"),
    };
    write_run_record(
        &dir,
        "eval",
        serde_json::json!({ "checkpoint": checkpoint.label(), "fold": fold_arg }),
        cfg,
        &inputs,
    )?;
    Ok(EvalOutput { dir, reports })
}

/// Loads every fold's teacher, training and saving those that are missing.
pub fn ensure_teachers(cfg: &ExperimentConfig) -> Result<Vec<EmbeddingNetwork>> {
    let layout = cfg.layout();
    (0..cfg.protocol.n_folds)
        .map(|f| {
            if layout.checkpoint_dir(f, Stage::Teacher).join("meta.json").exists() {
                load_teacher(cfg, f)
            } else {
                train_stage(cfg, Stage::Teacher, f)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutput {
    pub dir: PathBuf,
    pub rows: Vec<AblationRow>,
    pub summary: String,
}

/// Sweeps one axis over `values` on every fold, reusing per-fold teachers.
pub fn ablate(cfg: &ExperimentConfig, axis: AblationAxis, values: &[f64]) -> Result<AblationOutput> {
    cfg.validate()?;
    if values.is_empty() {
        return Err(DiuError::config("values", "at least one value is required"));
    }
    for &v in values {
        axis.apply(&cfg.train, v, cfg.network.num_blocks)?;
    }
    let (dataset, protocol) = open_data(cfg)?;
    let teachers = ensure_teachers(cfg)?;
    let rows = run_ablation(axis, values, &cfg.train, &dataset, &protocol, &teachers, |f, c| cfg.fold_train(f, c))?;
    let layout = cfg.layout();
    let dir = layout.ablation_dir(axis);
    fs::create_dir_all(&dir).map_err(|e| DiuError::io(&dir, e))?;
    write_ablation_csv(&dir.join("ablation.csv"), &rows)?;
    let path = dir.join("rows.json");
    fs::write(&path, serde_json::to_vec_pretty(&rows)?).map_err(|e| DiuError::io(&path, e))?;
    let summary = ablation_summary(axis, &rows);
    let path = dir.join("summary.txt");
    fs::write(&path, &summary).map_err(|e| DiuError::io(&path, e))?;
    let mut inputs = data_inputs(cfg);
    inputs.extend((0..cfg.protocol.n_folds).map(|f| layout.checkpoint_dir(f, Stage::Teacher)));
    write_run_record(
        &dir,
        "ablate",
        serde_json::json!({ "axis": axis, "values": values }),
        cfg,
        &inputs,
    )?;
    Ok(AblationOutput { dir, rows, summary })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_config_errors() {
        let err = ExperimentConfig::from_toml_str("[train.loss]\ngama = 0.5\n").unwrap_err();
        assert!(err.is_usage(), "{err}");
        assert!(err.to_string().contains("gama"), "{err}");
        assert!(ExperimentConfig::from_toml_str("sed = 1\n").unwrap_err().is_usage());
    }

    #[test]
    fn resolved_config_round_trips_through_toml() {
        let cfg = ExperimentConfig::from_toml_str("seed = 7\n[train]\nepochs = 3\n").unwrap().resolved();
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.train.learning_rate, ExperimentConfig::default().train.learning_rate);
        let back = ExperimentConfig::from_toml_str(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.resolved(), cfg);
    }

    #[test]
    fn child_seeds_depend_only_on_root_and_label() {
        let a = ExperimentConfig::default().resolved();
        let mut other = ExperimentConfig::default();
        other.train.epochs = 99;
        let b = other.resolved();
        assert_eq!(a.data.seed, b.data.seed);
        assert_eq!(a.fold_train(2, &a.train).seed, b.fold_train(2, &b.train).seed);
        assert_ne!(a.fold_train(1, &a.train).seed, a.fold_train(2, &a.train).seed);
        let c = ExperimentConfig { seed: 1, ..ExperimentConfig::default() }.resolved();
        assert_ne!(a.data.seed, c.data.seed);
    }

    #[test]
    fn checkpoint_selectors() {
        assert_eq!(CheckpointSel::parse("diu"), CheckpointSel::Stage(Stage::Diu));
        let sel = CheckpointSel::parse("/x/fold{fold}/diu");
        assert_eq!(sel.dir(&Layout::new(Path::new("/o")), 3), PathBuf::from("/x/fold3/diu"));
        assert_eq!(CheckpointSel::parse("/x/run_{fold}").label(), "run_");
    }

    #[test]
    fn mismatched_image_size_is_rejected() {
        let mut cfg = ExperimentConfig::default();
        cfg.data.height = 16;
        assert!(cfg.validate().unwrap_err().is_usage());
    }
}
