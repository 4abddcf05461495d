//! Command-line front end.
//!
//! Exit codes: 0 on success, 1 for usage or configuration errors, 2 for
//! runtime and data errors. Diagnostics go to standard error; results only
//! go to files under the output directory.

pub mod commands;
pub mod config;
pub mod experiments;

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::Error;
use crate::metrics::McNemarMethod;
pub use config::ExperimentConfig;

#[derive(Debug, Parser)]
#[command(
    name = "survrank",
    version,
    about = "Survival ranking losses, training and experiment sweeps"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Experiment config file (key = value lines).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides output.dir.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed_data: Option<u64>,
    #[arg(long, global = true)]
    pub seed_model: Option<u64>,
    #[arg(long, global = true)]
    pub seed_sampler: Option<u64>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum MethodArg {
    Corrected,
    Exact,
    Auto,
}

impl From<MethodArg> for McNemarMethod {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Corrected => McNemarMethod::Corrected,
            MethodArg::Exact => McNemarMethod::Exact,
            MethodArg::Auto => McNemarMethod::Auto,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured dataset and a manifest.
    Generate,
    /// Train one model; writes the report, batch losses, test metrics and checkpoints.
    Train,
    /// CI and time-dependent AUC of a checkpoint (or the generating risks).
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Dataset CSV; defaults to the test split of the configured data.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        horizon: Option<f64>,
        /// Score with the generating risks of the synthetic config.
        #[arg(long, conflicts_with = "checkpoint")]
        oracle: bool,
    },
    /// WCI over the temperature grid.
    SweepTau,
    /// Every loss over the fusion weight grid.
    SweepFusion,
    /// Per-batch loss variability of WCI and BCI.
    Stability,
    /// McNemar test on the concordance of two checkpoints.
    Compare {
        #[arg(long)]
        checkpoint_a: PathBuf,
        #[arg(long)]
        checkpoint_b: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "corrected")]
        method: MethodArg,
    },
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 1,
        _ => 2,
    }
}

/// Resolves the config with command-line overrides applied.
pub fn resolve_config(global: &GlobalArgs) -> crate::Result<ExperimentConfig> {
    let path = global
        .config
        .as_ref()
        .ok_or_else(|| Error::config("--config is required"))?;
    let mut cfg = ExperimentConfig::from_file(path)?;
    if let Some(s) = global.seed_data {
        cfg.seeds.data = s;
    }
    if let Some(s) = global.seed_model {
        cfg.seeds.model = s;
    }
    if let Some(s) = global.seed_sampler {
        cfg.seeds.sampler = s;
    }
    if let Some(o) = &global.out {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

pub fn run(cli: &Cli) -> crate::Result<Vec<PathBuf>> {
    let cfg = resolve_config(&cli.global)?;
    let out = cfg.out_dir.clone();
    match &cli.command {
        Command::Generate => commands::cmd_generate(&cfg, &out),
        Command::Train => commands::cmd_train(&cfg, &out),
        Command::Eval {
            checkpoint,
            data,
            horizon,
            oracle,
        } => commands::cmd_eval(
            &cfg,
            &out,
            &commands::EvalArgs {
                checkpoint: checkpoint.as_deref(),
                data: data.as_deref(),
                horizon: *horizon,
                oracle: *oracle,
            },
        ),
        Command::SweepTau => commands::cmd_sweep_tau(&cfg, &out),
        Command::SweepFusion => commands::cmd_sweep_fusion(&cfg, &out),
        Command::Stability => commands::cmd_stability(&cfg, &out),
        Command::Compare {
            checkpoint_a,
            checkpoint_b,
            data,
            method,
        } => commands::cmd_compare(
            &cfg,
            &out,
            &commands::CompareArgs {
                checkpoint_a,
                checkpoint_b,
                data: data.as_deref(),
                method: (*method).into(),
            },
        ),
    }
}

/// Parses `args` and runs; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                eprintln!("wrote {}", p.display());
            }
            0
        }
        Err(e) => {
            eprintln!("survrank: {e}");
            exit_code(&e)
        }
    }
}
