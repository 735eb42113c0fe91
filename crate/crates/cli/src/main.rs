//! `protoalign`: data generation, training, ablation and evaluation from a
//! TOML manifest. See `manifest.rs` for the key set.

mod commands;
mod data;
mod exit;
mod manifest;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::manifest::Manifest;

#[derive(Parser)]
#[command(name = "protoalign", version, about = "Prototype-aligned unsupervised domain adaptation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment manifest (TOML).
    #[arg(short, long)]
    manifest: PathBuf,
    /// Override a manifest key, e.g. `--set train.steps=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides `out_dir`.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Materialise the datasets as CSV with a provenance record.
    GenData(Common),
    /// Stage 1: train on the labelled source; writes `pretrain/model_0.snap`.
    Pretrain(Common),
    /// Stage 2 from `pretrain/model_0.snap`; writes the run report and `model_final.snap`.
    Adapt(Common),
    /// Every configured variant over every configured seed, plus the ablation table.
    Ablate(Common),
    /// Accuracy, pseudo-label precision, A-distance and embeddings of snapshots.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Snapshot to evaluate (repeatable). Defaults to model_0 and model_final of the run.
        #[arg(long)]
        snapshot: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> anyhow::Result<PathBuf> {
    let (common, cmd) = match &cli.command {
        Command::GenData(c) | Command::Pretrain(c) | Command::Adapt(c) | Command::Ablate(c) => (c, &cli.command),
        Command::Eval { common, .. } => (common, &cli.command),
    };
    let m = Manifest::load(&common.manifest, &common.overrides)?;
    let out = m.output_dir(common.out.as_deref());
    match cmd {
        Command::GenData(_) => commands::gen_data(&m, &out),
        Command::Pretrain(_) => commands::pretrain(&m, &out),
        Command::Adapt(_) => commands::adapt(&m, &out),
        Command::Ablate(_) => commands::ablate(&m, &out),
        Command::Eval { snapshot, .. } => commands::eval(&m, &out, snapshot),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(exit::CONFIG) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(dir) => {
            println!("wrote {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code(&e))
        }
    }
}
