use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use abssim::runner::{compare_policies, emit_csv, run_experiment, verify_theory, ExperimentConfig};
use abssim::{Error, Result};

#[derive(Parser)]
#[command(name = "abssim", version, about = "Simulated distributed SGD on heterogeneous clusters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment; writes per-iteration CSV and a summary beside it.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run several experiments and tabulate time to threshold.
    Compare {
        #[arg(long, num_args = 1.., required = true)]
        configs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check the step-size and rate formulas on a parameter grid.
    VerifyTheory {
        #[arg(long)]
        config: PathBuf,
    },
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

/// `dir/stem.ext` → `dir/stem<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, out } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let (records, summary) = run_experiment(&cfg)?;
            emit_csv(&records, cfg.cluster.profiles()?.len(), cfg.cadence, &out)?;
            let text = summary.to_key_values();
            write(&sibling(&out, ".summary.txt"), &text)?;
            print!("{text}");
        }
        Command::Compare { configs, out } => {
            let cfgs = configs
                .iter()
                .map(|p| ExperimentConfig::from_path(p))
                .collect::<Result<Vec<_>>>()?;
            let cmp = compare_policies(&cfgs)?;
            for (i, (cfg, (records, _))) in cfgs.iter().zip(&cmp.runs).enumerate() {
                let path = sibling(&out, &format!("_{i}_{}.csv", cfg.policy));
                emit_csv(records, cfg.cluster.profiles()?.len(), cfg.cadence, &path)?;
            }
            let table = cmp.table.render();
            write(&out, &table)?;
            print!("{table}");
        }
        Command::VerifyTheory { config } => {
            let cfg = ExperimentConfig::from_path(&config)?;
            let (_, text) = verify_theory(&cfg)?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let message = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error kind={} message={message}", e.kind());
            ExitCode::FAILURE
        }
    }
}
