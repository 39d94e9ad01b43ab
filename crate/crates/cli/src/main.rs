use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use uhmc_cli::config::{self, Config, ExperimentKind};

#[derive(Parser, Debug)]
#[command(name = "uhmc", about = "Reproducible uHMC coupling, mixing and bias experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML experiment config; omitted fields take the experiment's defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory receiving the CSV tables and summary.json.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores). Output does not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Command {
    /// Run independent chains and write their final states.
    Sample,
    /// Check the coupling-map regularity estimates on random samples.
    CoupleVerify,
    /// Stationary KL and Rényi bias against the step size.
    BiasScan,
    /// KL and Rényi decay towards the discretised stationary law.
    MixingScan,
    /// Rényi mixing and target bounds over iterations.
    RenyiScan,
    /// Mutual information between the initial and time-k states.
    MiScan,
    /// One-step KL between uLA and the exact Langevin diffusion.
    UlaScan,
    /// TV, KL and Rényi-2 of the two-mode mixture example.
    Figure1,
    /// Check a config and report the planned row count without running it.
    Validate,
}

impl Command {
    fn kind(self) -> Option<ExperimentKind> {
        Some(match self {
            Command::Sample => ExperimentKind::Sample,
            Command::CoupleVerify => ExperimentKind::CoupleVerify,
            Command::BiasScan => ExperimentKind::BiasScan,
            Command::MixingScan => ExperimentKind::MixingScan,
            Command::RenyiScan => ExperimentKind::RenyiScan,
            Command::MiScan => ExperimentKind::MiScan,
            Command::UlaScan => ExperimentKind::UlaScan,
            Command::Figure1 => ExperimentKind::Figure1,
            Command::Validate => return None,
        })
    }
}

fn load(path: &Option<PathBuf>) -> anyhow::Result<Config> {
    Ok(match path {
        Some(p) => config::load(p)?,
        None => Config::default(),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let cfg = match load(&cli.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    let Some(kind) = cli.command.kind() else {
        return match uhmc_cli::validate(&cfg) {
            Ok(report) => {
                print!("{report}");
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        };
    };
    match uhmc_cli::run_experiment(kind, &cfg, &cli.out, cli.seed, cli.threads) {
        Ok(summary) => {
            for c in &summary.checks {
                println!(
                    "{} [{}] {}: observed {} (tolerance {})",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.criterion,
                    c.name,
                    c.observed,
                    c.tolerance
                );
            }
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            if summary.vacuous_pass == Some(false) {
                println!("vacuous pass = false");
            }
            println!(
                "{}: {} rows written to {}; {}",
                summary.experiment,
                summary.rows,
                cli.out.display(),
                if summary.passed { "all checks passed" } else { "checks failed" }
            );
            if summary.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
