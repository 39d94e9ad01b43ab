//! CSV tables and JSON summaries.
//!
//! Floats are written with 17 significant digits (`{:.16e}`); an infeasible
//! bound or an undefined value is written as `NaN`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

#[derive(Clone, Debug, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => format!("{x:.16e}"),
            Cell::Text(s) => s.clone(),
        }
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as u64)
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<Option<f64>> for Cell {
    fn from(v: Option<f64>) -> Self {
        Cell::Float(v.unwrap_or(f64::NAN))
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub file: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(file: &'static str, header: &[&str]) -> Self {
        Self {
            file,
            header: header.iter().map(|h| h.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> anyhow::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for row in &self.rows {
            debug_assert_eq!(row.len(), self.header.len());
            w.write_record(row.iter().map(Cell::render))?;
        }
        Ok(w.into_inner()?)
    }

    /// Index of a named column.
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }
}

/// One pass/fail determination, named after the criterion it evaluates.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub criterion: String,
    pub name: String,
    /// Human-readable rule, e.g. `|slope - 4| <= tolerance`.
    pub rule: String,
    pub tolerance: f64,
    pub observed: f64,
    pub passed: bool,
}

impl Check {
    pub fn new(criterion: &str, name: impl Into<String>, rule: &str, tolerance: f64, observed: f64, passed: bool) -> Self {
        Self {
            criterion: criterion.into(),
            name: name.into(),
            rule: rule.into(),
            tolerance,
            observed,
            passed,
        }
    }
}

/// Everything an experiment produces before it is written out.
#[derive(Clone, Debug, Default)]
pub struct Outcome {
    pub tables: Vec<Table>,
    pub checks: Vec<Check>,
    pub notes: Vec<String>,
    /// Set when nothing was evaluated: such a run never counts as a pass.
    pub vacuous: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct Summary {
    pub experiment: String,
    pub seed: u64,
    pub files: Vec<String>,
    pub rows: usize,
    pub checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vacuous_pass: Option<bool>,
    pub passed: bool,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
    pub plan: serde_json::Value,
}

impl Summary {
    pub fn new(experiment: &str, seed: u64, outcome: &Outcome, warnings: Vec<String>, plan: serde_json::Value) -> Self {
        let passed = !outcome.vacuous && !outcome.checks.is_empty() && outcome.checks.iter().all(|c| c.passed);
        Self {
            experiment: experiment.into(),
            seed,
            files: outcome.tables.iter().map(|t| t.file.to_string()).collect(),
            rows: outcome.tables.first().map_or(0, |t| t.rows.len()),
            checks: outcome.checks.clone(),
            vacuous_pass: outcome.vacuous.then_some(false),
            passed,
            warnings,
            notes: outcome.notes.clone(),
            plan,
        }
    }
}

/// Writes every table and `summary.json` into `dir`; returns the paths written.
pub fn write_all(dir: &Path, outcome: &Outcome, summary: &Summary) -> anyhow::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for table in &outcome.tables {
        let path = dir.join(table.file);
        fs::write(&path, table.to_csv()?)?;
        written.push(path);
    }
    let path = dir.join("summary.json");
    let mut json = serde_json::to_vec_pretty(summary)?;
    json.push(b'\n');
    fs::write(&path, json)?;
    written.push(path);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn floats_have_seventeen_significant_digits() {
        assert_eq!(Cell::Float(0.1).render(), "1.0000000000000001e-1");
        assert_eq!(Cell::Float(f64::NAN).render(), "NaN");
        assert_eq!(Cell::Float(f64::INFINITY).render(), "inf");
        assert_eq!(Cell::from(None).render(), "NaN");
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, 1.0 / 3.0, 2.5e-300, -7.123456789012345e10] {
            let s = Cell::Float(x).render();
            assert_eq!(s.parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn header_only_csv() {
        let t = Table::new("x.csv", &["a", "b"]);
        assert_eq!(t.to_csv().unwrap(), b"a,b\n");
    }

    #[test]
    fn vacuous_outcome_never_passes() {
        let o = Outcome {
            vacuous: true,
            ..Outcome::default()
        };
        let s = Summary::new("x", 0, &o, vec![], serde_json::Value::Null);
        assert!(!s.passed);
        assert_eq!(s.vacuous_pass, Some(false));
        let o = Outcome::default();
        assert!(!Summary::new("x", 0, &o, vec![], serde_json::Value::Null).passed);
    }
}
