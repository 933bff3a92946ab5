//! Thin command-line dispatcher: `qgwnd <kind> --config <file> [--out dir]
//! [--seed N] [--trials N]`. All logic lives in the library harness.

use clap::Parser;
use qgwnd::harness::{format_records, run_experiment, ExperimentConfig, ExperimentKind};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "qgwnd",
    about = "Schrodinger dynamics with white-noise and random dispersion on metric graphs",
    version
)]
struct Cli {
    /// Experiment kind: spectrum | propagate | decay_fit | strichartz |
    /// nlse_wnd | nlse_random | invariance | converge_eps |
    /// driver_continuity | star_formula
    kind: String,
    /// Path to the JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for CSV series and JSON summaries.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Trial count override.
    #[arg(long)]
    trials: Option<usize>,
    /// Also export eigenvectors (spectrum experiments).
    #[arg(long)]
    dump_vectors: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(all_pass) => {
            if all_pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> qgwnd::Result<bool> {
    let kind = ExperimentKind::parse(&cli.kind)?;
    let mut cfg = ExperimentConfig::from_file(&cli.config)?;
    cfg.kind = Some(kind);
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(trials) = cli.trials {
        cfg.trials = trials;
    }
    if cli.dump_vectors {
        cfg.params.dump_vectors = true;
    }
    let records = run_experiment(&cfg, cli.out.as_deref())?;
    print!("{}", format_records(&records));
    if let Some(out) = &cli.out {
        eprintln!("wrote {}", out.display());
    }
    Ok(records.iter().all(|r| r.pass != Some(false)))
}
