//! Config-driven experiment runner for the `uhmc` library: each subcommand
//! resolves a TOML config into a [`config::Plan`], computes its rows, and
//! writes CSV tables plus a `summary.json` of pass/fail checks.

pub mod config;
pub mod experiments;
pub mod output;

use std::path::Path;

use anyhow::Result;
use serde::Serialize;

use config::{Config, ConfigError, ExperimentKind, Plan};
use output::{write_all, Summary};

/// Runs `kind` with `cfg` (seed overridden by `seed` when given) on a pool of
/// `threads` workers and writes its outputs into `out`.
pub fn run_experiment(kind: ExperimentKind, cfg: &Config, out: &Path, seed: Option<u64>, threads: Option<usize>) -> Result<Summary> {
    let mut plan = config::resolve(cfg, Some(kind))?;
    if let Some(s) = seed {
        plan.seed = s;
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build()?;
    let outcome = pool.install(|| experiments::run(&plan))?;
    let summary = Summary::new(kind.as_str(), plan.seed, &outcome, plan.warnings.clone(), serde_json::to_value(&plan)?);
    write_all(out, &outcome, &summary)?;
    Ok(summary)
}

#[derive(Clone, Debug, Serialize)]
pub struct ValidationReport {
    pub experiment: String,
    pub planned_rows: usize,
    pub warnings: Vec<String>,
}

impl std::fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "ok: {} with {} rows planned", self.experiment, self.planned_rows)?;
        for w in &self.warnings {
            writeln!(f, "warning: {w}")?;
        }
        Ok(())
    }
}

/// Schema and grid checks only; no numerics are run.
pub fn validate(cfg: &Config) -> Result<ValidationReport, ConfigError> {
    let plan: Plan = config::resolve(cfg, None)?;
    Ok(ValidationReport {
        experiment: plan.kind.as_str().into(),
        planned_rows: plan.planned_rows(),
        warnings: plan.warnings,
    })
}

pub fn validate_path(path: &Path) -> Result<ValidationReport, ConfigError> {
    validate(&config::load(path)?)
}
