use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crm_cli::commands::{cmd_eval, cmd_gen, cmd_sweep, cmd_train};
use crm_cli::config::RunConfig;
use crm_cli::Result;

/// Causal reward modeling experiments on synthetic preference data.
///
/// Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
#[derive(Debug, Parser)]
#[command(name = "crm", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a dataset (train/val/test/eval splits and a manifest).
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a reward model and write a checkpoint plus step and epoch logs.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Overrides `train.lambda`.
        #[arg(long)]
        lambda: Option<f64>,
    },
    /// Evaluate a checkpoint and write report.json plus CSV tables.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Split used for pairwise accuracy and reward histograms.
        #[arg(long, default_value = "val")]
        split: String,
        /// Restrict the report to these metrics (comma separated).
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
    },
    /// Train and evaluate one model per λ on a shared dataset.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated λ values; defaults to `sweep.lambdas` or the standard grid.
        #[arg(long, value_delimiter = ',')]
        lambdas: Option<Vec<f64>>,
        /// Reuse an existing dataset instead of generating one.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Gen { config, out, seed } => {
            let m = cmd_gen(&load(&config, seed)?, &out)?;
            eprintln!(
                "wrote {} train / {} val / {} test / {} eval to {}",
                m.sizes.train,
                m.sizes.val,
                m.sizes.test,
                m.sizes.eval,
                out.display()
            );
        }
        Command::Train { config, data, out, seed, lambda } => {
            let mut cfg = load(&config, seed)?;
            if lambda.is_some() {
                cfg.train.lambda = lambda;
                cfg.validate()?;
            }
            let s = cmd_train(&cfg, &data, &out)?;
            let d = &s.checkpoint.header.diagnostics;
            eprintln!(
                "{} steps, final bt {:.4}, mmd {:.4}, val accuracy {}",
                d.steps,
                d.bt,
                d.mmd,
                d.val_accuracy.map_or_else(|| "n/a".into(), |a| format!("{a:.4}"))
            );
        }
        Command::Eval { checkpoint, data, out, split, metrics } => {
            let r = cmd_eval(&checkpoint, &data, &out, &split, &metrics)?;
            for (k, v) in &r.scalars {
                println!("{k} = {v}");
            }
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Sweep { config, out, lambdas, data, seed } => {
            let cfg = load(&config, seed)?;
            let lambdas = lambdas.unwrap_or_else(|| cfg.lambdas());
            let rows = cmd_sweep(&cfg, &lambdas, &out, data.as_deref())?;
            let failed = rows.iter().filter(|r| r.status != "ok").count();
            eprintln!("{} runs, {failed} failed; see {}", rows.len(), out.join("sweep.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
