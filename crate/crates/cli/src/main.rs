//! `normkit`: generate synthetic cohorts, train multimodal normative models,
//! score deviations, compare aggregation strategies and map significant
//! latent dimensions back to regions.
//!
//! ```text
//! normkit <command> --config <path> [--seed N] [--strategy S] [--latent-dim D] [--out DIR]
//! ```
//!
//! Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.

mod commands;
mod config;
mod failure;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::{Paths, Run};
use config::RunConfig;
use failure::Failure;

#[derive(Parser)]
#[command(name = "normkit", version, about = "Multimodal VAE normative modeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic cohort file.
    Generate(Common),
    /// Train on the cohort's control subjects and save a checkpoint.
    Train(Common),
    /// Score every subject and summarize deviations by stage.
    Evaluate(Common),
    /// Likelihood-ratio grid over strategies, unimodal baselines and latent sizes.
    Compare(Common),
    /// Select deviating latent dimensions and build regional effect maps.
    Interpret(Common),
}

#[derive(Args)]
struct Common {
    /// Run configuration (key = value lines).
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long = "latent-dim")]
    latent_dim: Option<usize>,
    /// Report directory; overrides `out` from the config.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn prepare(args: &Common) -> Result<Run, Failure> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(s) = &args.strategy {
        cfg.strategy = s.parse().map_err(|_| Failure::config(format!("unknown strategy {s:?}")))?;
    }
    if let Some(d) = args.latent_dim {
        cfg.latent_dim = d;
    }
    cfg.validate()?;
    let base = args.config.parent().unwrap_or(Path::new("."));
    let paths = Paths {
        cohort: resolve(base, &cfg.cohort),
        model: resolve(base, &cfg.model),
        out: args.out.clone().unwrap_or_else(|| resolve(base, &cfg.out)),
    };
    Ok(Run { cfg, paths })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (name, args) = match &cli.command {
        Command::Generate(a) => ("generate", a),
        Command::Train(a) => ("train", a),
        Command::Evaluate(a) => ("evaluate", a),
        Command::Compare(a) => ("compare", a),
        Command::Interpret(a) => ("interpret", a),
    };
    let result = prepare(args).and_then(|run| match name {
        "generate" => commands::generate_cmd(&run),
        "train" => commands::train_cmd(&run),
        "evaluate" => commands::evaluate_cmd(&run),
        "compare" => commands::compare_cmd(&run),
        _ => commands::interpret_cmd(&run),
    });
    match result {
        Ok(written) => {
            for p in written {
                println!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("normkit {name}: {f}");
            ExitCode::from(f.code as u8)
        }
    }
}
