//! Experiment configuration: the TOML schema, per-experiment defaults, and
//! validation into a resolved [`Plan`].
//!
//! Every field is optional in the file; omitted fields take the defaults of
//! the experiment being run. Times (`t`, `h`, `eta`) are in units of the
//! Hamiltonian time variable; `omega2` is the Hessian diagonal of the
//! quadratic potential.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use uhmc::couplings::LemmaId;
use uhmc::dynamics::FlowParams;
use uhmc::potential::Potential;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Parse(String),
    #[error("invalid field `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("step size h = {h} does not divide integration time T = {t}")]
    StepDoesNotDivide { t: f64, h: f64 },
    #[error("config names experiment `{found}` but `{requested}` was requested")]
    KindMismatch {
        found: ExperimentKind,
        requested: ExperimentKind,
    },
    #[error("no experiment given: set `experiment` in the config")]
    MissingKind,
    #[error("grid has no feasible (T, h) pair: {0}")]
    NoFeasiblePoint(String),
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Sample,
    CoupleVerify,
    BiasScan,
    MixingScan,
    RenyiScan,
    MiScan,
    UlaScan,
    Figure1,
}

impl ExperimentKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ExperimentKind::Sample => "sample",
            ExperimentKind::CoupleVerify => "couple-verify",
            ExperimentKind::BiasScan => "bias-scan",
            ExperimentKind::MixingScan => "mixing-scan",
            ExperimentKind::RenyiScan => "renyi-scan",
            ExperimentKind::MiScan => "mi-scan",
            ExperimentKind::UlaScan => "ula-scan",
            ExperimentKind::Figure1 => "figure1",
        }
    }

    /// Experiments whose rows need closed-form Gaussian chain laws.
    fn needs_quadratic(self) -> bool {
        matches!(
            self,
            ExperimentKind::BiasScan
                | ExperimentKind::MixingScan
                | ExperimentKind::RenyiScan
                | ExperimentKind::MiScan
                | ExperimentKind::UlaScan
        )
    }

    fn uses_hmc_grid(self) -> bool {
        !matches!(self, ExperimentKind::UlaScan | ExperimentKind::Figure1)
    }
}

impl fmt::Display for ExperimentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub experiment: Option<ExperimentKind>,
    pub seed: Option<u64>,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub init: InitSpec,
    #[serde(default)]
    pub couple: CoupleSpec,
    #[serde(default)]
    pub sample: SampleSpec,
    #[serde(default)]
    pub figure1: Figure1Spec,
    #[serde(default)]
    pub tolerances: ToleranceSpec,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKindSpec {
    Quadratic,
    LogCosh,
}

/// A scalar (isotropic) or per-coordinate Hessian diagonal.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Omega2 {
    Scalar(f64),
    List(Vec<f64>),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSpec {
    pub kind: Option<PotentialKindSpec>,
    pub omega2: Option<Omega2>,
    /// `[lo, hi]`: coordinate `i` of a `d`-dimensional target gets the
    /// `i`-th of `d` evenly spaced values (`lo` when `d = 1`).
    pub omega2_range: Option<[f64; 2]>,
    /// Weight of the `log cosh` term.
    pub c: Option<f64>,
}

/// Either an explicit list of iteration indices or an inclusive range.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KSpec {
    List(Vec<usize>),
    Range {
        from: usize,
        to: usize,
        #[serde(default = "one")]
        step: usize,
    },
}

fn one() -> usize {
    1
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub d: Option<Vec<usize>>,
    pub t: Option<Vec<f64>>,
    pub h: Option<Vec<f64>>,
    pub q: Option<Vec<f64>>,
    pub k: Option<KSpec>,
    pub eta: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSpec {
    /// Every coordinate of the initial mean.
    pub x0: Option<f64>,
    /// Per-coordinate initial variance; 0 starts from a point mass.
    pub variance: Option<f64>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoupleSpec {
    pub samples: Option<usize>,
    pub lemmas: Option<Vec<String>>,
    pub x_scale: Option<f64>,
    pub v_scale: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelChoice {
    Uhmc,
    Ehmc,
    Ula,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleSpec {
    pub kernel: Option<KernelChoice>,
    pub steps: Option<usize>,
    pub chains: Option<usize>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Figure1Spec {
    pub weights: Option<Vec<f64>>,
    pub centers: Option<Vec<f64>>,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToleranceSpec {
    pub bias_slope: Option<f64>,
    pub decay_slack: Option<f64>,
    pub ula_scaling: Option<f64>,
    pub quadrature: Option<f64>,
    pub standard_errors: Option<f64>,
}

/// Tolerances after defaults.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Tolerances {
    /// Allowed `|slope - 4|` of the log-log KL bias fit.
    pub bias_slope: f64,
    /// Relative shortfall allowed in the fitted KL decay rate against `2c₂`.
    pub decay_slack: f64,
    /// Relative tolerance on the uLA scaling exponents.
    pub ula_scaling: f64,
    /// Relative quadrature error allowed for the mixture divergences.
    pub quadrature: f64,
    /// Monte Carlo checks pass within this many standard errors.
    pub standard_errors: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum PotentialChoice {
    Quadratic(Omega2Choice),
    LogCosh { c: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum Omega2Choice {
    Scalar(f64),
    List(Vec<f64>),
    Range(f64, f64),
}

impl PotentialChoice {
    pub fn build(&self, d: usize) -> uhmc::Result<Potential> {
        match self {
            PotentialChoice::Quadratic(Omega2Choice::Scalar(w)) => Potential::isotropic_quadratic(d, *w),
            PotentialChoice::Quadratic(Omega2Choice::List(w)) => Potential::quadratic(w),
            PotentialChoice::Quadratic(Omega2Choice::Range(lo, hi)) => Potential::quadratic(&linspace(*lo, *hi, d)),
            PotentialChoice::LogCosh { c } => Potential::log_cosh(d, *c),
        }
    }

    pub fn is_quadratic(&self) -> bool {
        matches!(self, PotentialChoice::Quadratic(_))
    }
}

pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

/// A validated experiment with every default filled in.
#[derive(Clone, Debug, Serialize)]
pub struct Plan {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub potential: PotentialChoice,
    pub d: Vec<usize>,
    pub t: Vec<f64>,
    pub h: Vec<f64>,
    pub q: Vec<f64>,
    pub k: Vec<usize>,
    pub eta: Vec<f64>,
    pub x0: f64,
    pub init_variance: f64,
    pub samples: usize,
    #[serde(serialize_with = "serialize_lemmas")]
    pub lemmas: Vec<LemmaId>,
    pub x_scale: f64,
    pub v_scale: f64,
    pub kernel: KernelChoice,
    pub steps: usize,
    pub chains: usize,
    pub weights: Vec<f64>,
    pub centers: Vec<f64>,
    pub tolerances: Tolerances,
    /// `(T, h)` pairs with `L T² > 2π²/5` for some dimension, listed once.
    pub unstable_pairs: Vec<(f64, f64)>,
    pub warnings: Vec<String>,
}

fn serialize_lemmas<S: serde::Serializer>(lemmas: &[LemmaId], s: S) -> Result<S::Ok, S::Error> {
    s.collect_seq(lemmas.iter().map(|l| l.as_str()))
}

/// `L T²` above which the HMC flows are rejected.
pub const HMC_STABILITY_LIMIT: f64 = 0.4 * PI * PI;

impl Plan {
    /// `(T, h)` pairs in grid order (`T` outer).
    pub fn pairs(&self) -> Vec<(f64, f64)> {
        self.t.iter().flat_map(|&t| self.h.iter().map(move |&h| (t, h))).collect()
    }

    pub fn is_unstable(&self, t: f64, h: f64) -> bool {
        self.unstable_pairs.contains(&(t, h))
    }

    /// Number of CSV data rows the main table will contain.
    pub fn planned_rows(&self) -> usize {
        let grid = self.d.len() * self.pairs().len();
        match self.kind {
            ExperimentKind::Sample => self.chains,
            ExperimentKind::CoupleVerify => {
                if self.samples == 0 {
                    0
                } else {
                    grid * self.lemmas.len()
                }
            }
            ExperimentKind::BiasScan => grid * self.q.len(),
            ExperimentKind::MixingScan | ExperimentKind::MiScan => grid * self.k.len(),
            ExperimentKind::RenyiScan => grid * self.q.len() * self.k.len(),
            ExperimentKind::UlaScan => self.eta.len(),
            ExperimentKind::Figure1 => 1,
        }
    }
}

pub fn parse(text: &str) -> Result<Config, ConfigError> {
    toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
}

pub fn load(path: &Path) -> Result<Config, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse(&text)
}

struct Defaults {
    potential: PotentialChoice,
    d: Vec<usize>,
    t: Vec<f64>,
    h: Vec<f64>,
    q: Vec<f64>,
    k: Vec<usize>,
    eta: Vec<f64>,
    x0: f64,
    init_variance: f64,
}

fn defaults(kind: ExperimentKind) -> Defaults {
    let base = Defaults {
        potential: PotentialChoice::Quadratic(Omega2Choice::Scalar(1.0)),
        d: vec![1],
        t: vec![0.25],
        h: vec![0.05],
        q: vec![2.0],
        k: (0..=200).collect(),
        eta: vec![],
        x0: 1.0,
        init_variance: 0.0,
    };
    match kind {
        ExperimentKind::Sample => Defaults {
            d: vec![2],
            t: vec![1.0],
            h: vec![0.1],
            eta: vec![0.05],
            x0: 0.0,
            ..base
        },
        ExperimentKind::CoupleVerify => Defaults {
            potential: PotentialChoice::LogCosh { c: 0.5 },
            d: vec![2],
            t: vec![0.2],
            ..base
        },
        ExperimentKind::BiasScan => Defaults {
            potential: PotentialChoice::Quadratic(Omega2Choice::Scalar(0.5)),
            d: vec![1, 3],
            t: vec![0.2],
            h: vec![0.2, 0.1, 0.05, 0.025],
            ..base
        },
        ExperimentKind::MixingScan => Defaults {
            potential: PotentialChoice::Quadratic(Omega2Choice::Range(0.5, 0.8)),
            d: vec![1, 2, 10],
            ..base
        },
        ExperimentKind::RenyiScan => Defaults {
            potential: PotentialChoice::Quadratic(Omega2Choice::Scalar(0.8)),
            d: vec![1, 2],
            h: vec![0.0125, 0.01, 0.005],
            k: (0..=3000).step_by(25).collect(),
            ..base
        },
        ExperimentKind::MiScan => Defaults {
            potential: PotentialChoice::Quadratic(Omega2Choice::Range(0.5, 0.8)),
            d: vec![1, 2],
            k: (1..=100).collect(),
            x0: 0.0,
            init_variance: 1.0,
            ..base
        },
        ExperimentKind::UlaScan => Defaults {
            d: vec![2],
            eta: vec![0.1, 0.05, 0.025, 0.0125, 0.00625],
            ..base
        },
        ExperimentKind::Figure1 => base,
    }
}

fn nonempty<T>(field: &'static str, v: &[T]) -> Result<(), ConfigError> {
    if v.is_empty() {
        Err(invalid(field, "grid must be nonempty"))
    } else {
        Ok(())
    }
}

fn positive(field: &'static str, v: &[f64]) -> Result<(), ConfigError> {
    match v.iter().find(|x| !x.is_finite() || **x <= 0.0) {
        Some(x) => Err(invalid(field, format!("values must be finite and > 0, got {x}"))),
        None => Ok(()),
    }
}

fn single<T: fmt::Debug>(field: &'static str, kind: ExperimentKind, v: &[T]) -> Result<(), ConfigError> {
    if v.len() == 1 {
        Ok(())
    } else {
        Err(invalid(field, format!("{kind} takes exactly one value, got {v:?}")))
    }
}

fn resolve_potential(spec: &PotentialSpec, default: PotentialChoice) -> Result<PotentialChoice, ConfigError> {
    let kind = spec.kind.unwrap_or(match default {
        PotentialChoice::Quadratic(_) => PotentialKindSpec::Quadratic,
        PotentialChoice::LogCosh { .. } => PotentialKindSpec::LogCosh,
    });
    match kind {
        PotentialKindSpec::Quadratic => {
            if spec.c.is_some() {
                return Err(invalid("potential.c", "only used by the log-cosh potential"));
            }
            let omega2 = match (&spec.omega2, spec.omega2_range) {
                (Some(_), Some(_)) => return Err(invalid("potential.omega2", "give omega2 or omega2_range, not both")),
                (Some(Omega2::Scalar(w)), None) => Omega2Choice::Scalar(*w),
                (Some(Omega2::List(w)), None) => Omega2Choice::List(w.clone()),
                (None, Some([lo, hi])) => Omega2Choice::Range(lo, hi),
                (None, None) => match default {
                    PotentialChoice::Quadratic(w) => w,
                    PotentialChoice::LogCosh { .. } => Omega2Choice::Scalar(1.0),
                },
            };
            let values: Vec<f64> = match &omega2 {
                Omega2Choice::Scalar(w) => vec![*w],
                Omega2Choice::List(w) => w.clone(),
                Omega2Choice::Range(lo, hi) => vec![*lo, *hi],
            };
            nonempty("potential.omega2", &values)?;
            positive("potential.omega2", &values)?;
            Ok(PotentialChoice::Quadratic(omega2))
        }
        PotentialKindSpec::LogCosh => {
            if spec.omega2.is_some() || spec.omega2_range.is_some() {
                return Err(invalid("potential.omega2", "only used by the quadratic potential"));
            }
            let c = spec.c.unwrap_or(match default {
                PotentialChoice::LogCosh { c } => c,
                PotentialChoice::Quadratic(_) => 0.5,
            });
            if !c.is_finite() || c < 0.0 {
                return Err(invalid("potential.c", format!("must be finite and >= 0, got {c}")));
            }
            Ok(PotentialChoice::LogCosh { c })
        }
    }
}

fn resolve_k(spec: &Option<KSpec>, default: Vec<usize>) -> Result<Vec<usize>, ConfigError> {
    match spec {
        None => Ok(default),
        Some(KSpec::List(v)) => Ok(v.clone()),
        Some(KSpec::Range { from, to, step }) => {
            if *step == 0 {
                return Err(invalid("grid.k", "step must be >= 1"));
            }
            if from > to {
                return Err(invalid("grid.k", format!("from = {from} exceeds to = {to}")));
            }
            Ok((*from..=*to).step_by(*step).collect())
        }
    }
}

/// Fills defaults for `requested` (or the config's own `experiment`) and
/// checks the grid; never evaluates any numerics beyond the stability flags.
pub fn resolve(cfg: &Config, requested: Option<ExperimentKind>) -> Result<Plan, ConfigError> {
    let kind = match (cfg.experiment, requested) {
        (Some(found), Some(req)) if found != req => {
            return Err(ConfigError::KindMismatch {
                found,
                requested: req,
            })
        }
        (_, Some(k)) | (Some(k), None) => k,
        (None, None) => return Err(ConfigError::MissingKind),
    };
    let def = defaults(kind);
    let potential = resolve_potential(&cfg.potential, def.potential)?;
    if kind.needs_quadratic() && !potential.is_quadratic() {
        return Err(invalid("potential.kind", format!("{kind} needs closed-form chain laws: use a quadratic potential")));
    }

    let g = &cfg.grid;
    let d = g.d.clone().unwrap_or(def.d);
    let t = g.t.clone().unwrap_or(def.t);
    let h = g.h.clone().unwrap_or(def.h);
    let q = g.q.clone().unwrap_or(def.q);
    let k = resolve_k(&g.k, def.k)?;
    let eta = g.eta.clone().unwrap_or(def.eta);

    nonempty("grid.d", &d)?;
    if d.contains(&0) {
        return Err(invalid("grid.d", "dimensions must be >= 1"));
    }
    if let PotentialChoice::Quadratic(Omega2Choice::List(w)) = &potential {
        if let Some(bad) = d.iter().find(|&&di| di != w.len()) {
            return Err(invalid("grid.d", format!("d = {bad} does not match the {} entries of potential.omega2", w.len())));
        }
    }

    let init_variance = cfg.init.variance.unwrap_or(def.init_variance);
    let x0 = cfg.init.x0.unwrap_or(def.x0);
    if !x0.is_finite() {
        return Err(invalid("init.x0", "must be finite"));
    }
    if !init_variance.is_finite() || init_variance < 0.0 {
        return Err(invalid("init.variance", format!("must be >= 0, got {init_variance}")));
    }

    let samples = cfg.couple.samples.unwrap_or(10_000);
    let lemmas = match &cfg.couple.lemmas {
        None => LemmaId::ALL.to_vec(),
        Some(names) => names
            .iter()
            .map(|n| LemmaId::parse(n).ok_or_else(|| invalid("couple.lemmas", format!("unknown lemma id `{n}`"))))
            .collect::<Result<Vec<_>, _>>()?,
    };
    let x_scale = cfg.couple.x_scale.unwrap_or(1.0);
    let v_scale = cfg.couple.v_scale.unwrap_or(1.0);
    positive("couple.x_scale", &[x_scale])?;
    positive("couple.v_scale", &[v_scale])?;

    let kernel = cfg.sample.kernel.unwrap_or(KernelChoice::Uhmc);
    let steps = cfg.sample.steps.unwrap_or(100);
    let chains = cfg.sample.chains.unwrap_or(2000);

    let weights = cfg.figure1.weights.clone().unwrap_or_else(|| vec![0.99, 0.01]);
    let centers = cfg.figure1.centers.clone().unwrap_or_else(|| vec![0.0, 10.0]);

    let ts = &cfg.tolerances;
    let tolerances = Tolerances {
        bias_slope: ts.bias_slope.unwrap_or(0.1),
        decay_slack: ts.decay_slack.unwrap_or(0.05),
        ula_scaling: ts.ula_scaling.unwrap_or(0.1),
        quadrature: ts.quadrature.unwrap_or(1e-10),
        standard_errors: ts.standard_errors.unwrap_or(4.0),
    };
    positive(
        "tolerances",
        &[
            tolerances.bias_slope,
            tolerances.decay_slack,
            tolerances.ula_scaling,
            tolerances.quadrature,
            tolerances.standard_errors,
        ],
    )?;

    let mut plan = Plan {
        kind,
        seed: cfg.seed.unwrap_or(0),
        potential,
        d,
        t,
        h,
        q,
        k,
        eta,
        x0,
        init_variance,
        samples,
        lemmas,
        x_scale,
        v_scale,
        kernel,
        steps,
        chains,
        weights,
        centers,
        tolerances,
        unstable_pairs: Vec::new(),
        warnings: Vec::new(),
    };
    check_kind_specific(&mut plan)?;
    Ok(plan)
}

fn check_kind_specific(plan: &mut Plan) -> Result<(), ConfigError> {
    let kind = plan.kind;
    if kind.uses_hmc_grid() && !(kind == ExperimentKind::Sample && plan.kernel == KernelChoice::Ula) {
        check_hmc_grid(plan)?;
    }
    match kind {
        ExperimentKind::Sample => {
            single("grid.d", kind, &plan.d)?;
            if plan.chains < 2 {
                return Err(invalid("sample.chains", "need at least 2 chains"));
            }
            match plan.kernel {
                KernelChoice::Ula => {
                    single("grid.eta", kind, &plan.eta)?;
                    positive("grid.eta", &plan.eta)?;
                }
                KernelChoice::Ehmc => single("grid.t", kind, &plan.t)?,
                KernelChoice::Uhmc => {
                    single("grid.t", kind, &plan.t)?;
                    single("grid.h", kind, &plan.h)?;
                }
            }
        }
        ExperimentKind::CoupleVerify => {
            nonempty("couple.lemmas", &plan.lemmas)?;
        }
        ExperimentKind::BiasScan | ExperimentKind::RenyiScan => {
            nonempty("grid.q", &plan.q)?;
            if let Some(q) = plan.q.iter().find(|q| !q.is_finite() || **q <= 1.0) {
                return Err(invalid("grid.q", format!("Rényi orders must exceed 1, got {q}")));
            }
            if kind == ExperimentKind::RenyiScan {
                nonempty("grid.k", &plan.k)?;
            }
        }
        ExperimentKind::MixingScan => {
            single("grid.q", kind, &plan.q)?;
            if plan.q[0] <= 1.0 || !plan.q[0].is_finite() {
                return Err(invalid("grid.q", format!("Rényi order must exceed 1, got {}", plan.q[0])));
            }
            nonempty("grid.k", &plan.k)?;
        }
        ExperimentKind::MiScan => {
            nonempty("grid.k", &plan.k)?;
            if plan.k.contains(&0) {
                return Err(invalid("grid.k", "mutual information needs k >= 1"));
            }
            if plan.init_variance <= 0.0 {
                return Err(invalid("init.variance", "mutual information needs a nondegenerate initial law"));
            }
        }
        ExperimentKind::UlaScan => {
            single("grid.d", kind, &plan.d)?;
            nonempty("grid.eta", &plan.eta)?;
            positive("grid.eta", &plan.eta)?;
        }
        ExperimentKind::Figure1 => {
            if plan.weights.len() != plan.centers.len() || plan.weights.is_empty() {
                return Err(invalid("figure1.weights", "weights and centers must be nonempty and of equal length"));
            }
            if plan.weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(invalid("figure1.weights", "weights must be >= 0"));
            }
            let total: f64 = plan.weights.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(invalid("figure1.weights", format!("weights must sum to 1, got {total}")));
            }
        }
    }
    Ok(())
}

/// Divisibility is an error; instability is a warning and marks the pair.
fn check_hmc_grid(plan: &mut Plan) -> Result<(), ConfigError> {
    nonempty("grid.t", &plan.t)?;
    positive("grid.t", &plan.t)?;
    let exact_only = plan.kind == ExperimentKind::Sample && plan.kernel == KernelChoice::Ehmc;
    if !exact_only {
        nonempty("grid.h", &plan.h)?;
        positive("grid.h", &plan.h)?;
    }
    let pairs = if exact_only {
        plan.t.iter().map(|&t| (t, 0.0)).collect()
    } else {
        plan.pairs()
    };
    for &(t, h) in &pairs {
        if h > 0.0 && FlowParams::new(t, h).is_err() {
            return Err(ConfigError::StepDoesNotDivide { t, h });
        }
    }
    let l = plan
        .d
        .iter()
        .map(|&d| plan.potential.build(d).map(|p| p.smoothness().l))
        .collect::<uhmc::Result<Vec<f64>>>()
        .map_err(|e| invalid("potential", e.to_string()))?
        .into_iter()
        .fold(0.0, f64::max);
    let unstable: Vec<(f64, f64)> = pairs.iter().copied().filter(|&(t, _)| l * t * t > HMC_STABILITY_LIMIT).collect();
    if !unstable.is_empty() {
        let listed: Vec<String> = unstable.iter().map(|(t, h)| format!("(T={t}, h={h})")).collect();
        plan.warnings.push(format!(
            "L T^2 exceeds 2*pi^2/5 (L = {l}) for {}; these rows are marked infeasible",
            listed.join(", ")
        ));
    }
    if unstable.len() == pairs.len() {
        return Err(ConfigError::NoFeasiblePoint(format!("every pair has L T^2 > 2*pi^2/5 with L = {l}")));
    }
    plan.unstable_pairs = unstable;
    Ok(())
}
