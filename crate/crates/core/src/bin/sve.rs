//! `sve` command line: one subcommand per experiment protocol.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sve_core::experiments::{run, ExperimentConfig, ExperimentKind};
use sve_core::Error;

#[derive(Parser)]
#[command(name = "sve", version, about = "Singular value ensemble experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Runs this single seed instead of the configured list.
    #[arg(long)]
    seed_override: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain a dense backbone on the source task and save checkpoints.
    Pretrain(Common),
    /// Fine-tune every configured method on the target task.
    Finetune(Common),
    /// Evaluate a saved checkpoint on the test split.
    Eval(Common),
    /// Out-of-distribution detection with max-softmax scores.
    Ood(Common),
    /// Accuracy and calibration under corruptions of increasing severity.
    ShiftSweep(Common),
    /// SVE over a list of ensemble sizes.
    MembersAblation(Common),
    /// SVE and deep ensembles over random, weak and strong backbones.
    BackboneQuality(Common),
    /// Per-member singular value changes, one CSV per layer group.
    Diversity(Common),
}

impl Command {
    fn split(self) -> (ExperimentKind, Common) {
        match self {
            Command::Pretrain(c) => (ExperimentKind::Pretrain, c),
            Command::Finetune(c) => (ExperimentKind::Finetune, c),
            Command::Eval(c) => (ExperimentKind::Eval, c),
            Command::Ood(c) => (ExperimentKind::Ood, c),
            Command::ShiftSweep(c) => (ExperimentKind::ShiftSweep, c),
            Command::MembersAblation(c) => (ExperimentKind::MembersAblation, c),
            Command::BackboneQuality(c) => (ExperimentKind::BackboneQuality, c),
            Command::Diversity(c) => (ExperimentKind::Diversity, c),
        }
    }
}

/// Exit codes: 2 usage/config, 3 missing dependency, 1 anything else.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Dependency(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (kind, common) = Cli::parse().command.split();
    let result = (|| {
        let mut cfg = ExperimentConfig::load(&common.config)?;
        if cfg.experiment != kind {
            return Err(Error::Config {
                path: "experiment".into(),
                msg: format!("config is for {}, subcommand is {}", cfg.experiment.name(), kind.name()),
            });
        }
        if let Some(s) = common.seed_override {
            cfg.seeds = vec![s];
        }
        let out = common.out.clone().or_else(|| cfg.output_dir.clone()).ok_or_else(|| Error::Config {
            path: "output_dir".into(),
            msg: "pass --out or set output_dir".into(),
        })?;
        let record = run(&cfg, &out)?;
        println!("{} runs over {} seeds written to {}", record.runs.len(), record.seeds.len(), out.display());
        Ok(())
    })();
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
