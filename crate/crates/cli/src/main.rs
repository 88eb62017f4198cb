//! `diu`: generate data, train teachers and students, evaluate, and run
//! ablations. Exit codes: 0 success, 1 runtime failure, 2 usage or
//! configuration error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use diu_core::eval::vr_metric_name;
use diu_core::experiment::{self, CheckpointSel, ExperimentConfig, FoldSel, Stage};
use diu_core::{AblationAxis, DiuError, EvalReport};

#[derive(Debug, Parser)]
#[command(name = "diu", version, about = "Domain-invariant unit experiments on synthetic cross-modal data")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct GlobalArgs {
    /// TOML experiment config; unknown keys are rejected.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Root seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Log per-epoch progress.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Materialize the synthetic dataset and fold protocol.
    GenData,
    /// Train the teacher or the DIU student for one fold.
    Train {
        #[arg(long, value_enum)]
        stage: StageArg,
        #[arg(long)]
        fold: usize,
    },
    /// Evaluate checkpoints on held-out cross-modal probes.
    Eval {
        /// `teacher`, `diu`, or a checkpoint directory (`{fold}` is replaced by the fold index).
        #[arg(long, default_value = "diu")]
        checkpoint: String,
        #[arg(long, conflicts_with = "all_folds", required_unless_present = "all_folds")]
        fold: Option<usize>,
        #[arg(long)]
        all_folds: bool,
    },
    /// Sweep the adapted depth or the distillation weight across all folds.
    Ablate {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
        values: Vec<f64>,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StageArg {
    Teacher,
    Diu,
}

impl From<StageArg> for Stage {
    fn from(s: StageArg) -> Self {
        match s {
            StageArg::Teacher => Stage::Teacher,
            StageArg::Diu => Stage::Diu,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum AxisArg {
    Layers,
    Gamma,
}

impl From<AxisArg> for AblationAxis {
    fn from(a: AxisArg) -> Self {
        match a {
            AxisArg::Layers => AblationAxis::Layers,
            AxisArg::Gamma => AblationAxis::Gamma,
        }
    }
}

fn load_config(args: &GlobalArgs) -> Result<ExperimentConfig, DiuError> {
    let mut cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = out.clone();
    }
    let cfg = cfg.resolved();
    cfg.validate()?;
    Ok(cfg)
}

fn print_report(fold: usize, r: &EvalReport) {
    let vr1 = r.metric(&vr_metric_name(1e-2)).unwrap_or(f64::NAN);
    println!(
        "fold {fold}: eer {:.4}  auc {:.4}  rank1 {:.4}  vr@far1% {:.4}  ({} genuine, {} impostor)",
        r.eer, r.auc, r.rank1, vr1, r.n_genuine, r.n_impostor
    );
}

fn run(cli: Cli) -> Result<(), DiuError> {
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::GenData => {
            let (dataset, protocol) = experiment::gen_data(&cfg)?;
            println!(
                "wrote {} samples and {} folds to {}",
                dataset.len(),
                protocol.folds.len(),
                cfg.layout().data_dir().display()
            );
        }
        Command::Train { stage, fold } => {
            let stage = Stage::from(stage);
            experiment::train_stage(&cfg, stage, fold)?;
            println!("{}", cfg.layout().checkpoint_dir(fold, stage).display());
        }
        Command::Eval {
            checkpoint,
            fold,
            all_folds,
        } => {
            let folds = if all_folds { FoldSel::All } else { FoldSel::One(fold.expect("clap enforces --fold")) };
            let out = experiment::evaluate(&cfg, &CheckpointSel::parse(&checkpoint), folds)?;
            for (f, report) in &out.reports {
                print_report(*f, report);
            }
            println!("{}", out.dir.display());
        }
        Command::Ablate { axis, values } => {
            let out = experiment::ablate(&cfg, axis.into(), &values)?;
            print!("{}", out.summary);
            println!("{}", out.dir.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose { "debug" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
