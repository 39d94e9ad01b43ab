//! Explicit evaluators for the KL and Rényi mixing/bias bounds, the
//! Wasserstein and Orlicz–Wasserstein contraction and bias estimates, the
//! iteration and gradient-count formulas, and the small helper inequalities.
//!
//! Every evaluator returns a [`BoundReport`]: the value is present only when
//! every hypothesis flag holds.

use std::f64::consts::{LN_2, PI};

use crate::error::{Error, Result};
use crate::potential::Smoothness;
use crate::quadrature::gaussian_expectation;

/// All scalar symbols a bound may consume.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundParams {
    pub l: f64,
    pub m: f64,
    pub n: f64,
    pub alpha: f64,
    pub d: usize,
    pub t: f64,
    pub h: f64,
}

impl BoundParams {
    pub fn new(s: Smoothness, d: usize, t: f64, h: f64) -> Self {
        Self {
            l: s.l,
            m: s.m,
            n: s.n,
            alpha: s.alpha,
            d,
            t,
            h,
        }
    }

    pub fn with_h(self, h: f64) -> Self {
        Self { h, ..self }
    }

    pub fn with_d(self, d: usize) -> Self {
        Self { d, ..self }
    }

    fn df(&self) -> f64 {
        self.d as f64
    }

    /// `L (T² + T h)`.
    pub fn step_load(&self) -> f64 {
        self.l * (self.t * self.t + self.t * self.h)
    }

    fn entries(&self) -> Vec<(String, f64)> {
        vec![
            ("L".into(), self.l),
            ("M".into(), self.m),
            ("N".into(), self.n),
            ("alpha".into(), self.alpha),
            ("d".into(), self.df()),
            ("T".into(), self.t),
            ("h".into(), self.h),
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Flag {
    pub name: String,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub id: &'static str,
    pub params: Vec<(String, f64)>,
    pub value: Option<f64>,
    pub flags: Vec<Flag>,
    pub components: Vec<(String, f64)>,
    pub notes: Vec<String>,
}

impl BoundReport {
    fn new(id: &'static str, params: &BoundParams) -> Self {
        Self {
            id,
            params: params.entries(),
            value: None,
            flags: Vec::new(),
            components: Vec::new(),
            notes: Vec::new(),
        }
    }

    fn param(mut self, name: &str, v: f64) -> Self {
        self.params.push((name.into(), v));
        self
    }

    fn flag(mut self, name: &str, holds: bool) -> Self {
        self.flags.push(Flag {
            name: name.into(),
            holds,
        });
        self
    }

    fn component(mut self, name: &str, v: f64) -> Self {
        self.components.push((name.into(), v));
        self
    }

    fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }

    /// Sets the value if every flag holds.
    fn finish(mut self, value: f64) -> Self {
        if self.feasible() {
            self.value = Some(value);
        }
        self
    }

    pub fn feasible(&self) -> bool {
        self.flags.iter().all(|f| f.holds)
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.components
            .iter()
            .chain(self.params.iter())
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
    }

    pub fn flag_holds(&self, name: &str) -> Option<bool> {
        self.flags.iter().find(|f| f.name == name).map(|f| f.holds)
    }

    pub fn failed_flags(&self) -> Vec<&str> {
        self.flags.iter().filter(|f| !f.holds).map(|f| f.name.as_str()).collect()
    }
}

const COUPLING_REGIME: &str = "L(T^2+Th) <= 1/12";

/// Integrator whose contraction constants feed `c₂`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    Verlet,
    Stratified,
}

/// Contraction constants `W(μQᵏ, ν̃) ≤ c₁ e^{-c₂ k} W(μ, ν̃)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rates {
    pub c1: f64,
    pub c2: f64,
}

impl Rates {
    /// `c₁ = 1` and `c₂ = -ln(per-step factor)`.
    pub fn from_scheme(scheme: Scheme, alpha: f64, t: f64) -> Result<Self> {
        let factor = contraction_factor(scheme, alpha, t);
        if !(factor > 0.0 && factor < 1.0) {
            return Err(Error::InvalidParameter(format!("contraction factor {factor} outside (0, 1)")));
        }
        Ok(Self {
            c1: 1.0,
            c2: -factor.ln(),
        })
    }

    pub fn verlet(p: &BoundParams) -> Result<Self> {
        Self::from_scheme(Scheme::Verlet, p.alpha, p.t)
    }
}

/// Per-step contraction factor: `1 - αT²/10` (Verlet) or `1 - αT²/6` (stratified).
pub fn contraction_factor(scheme: Scheme, alpha: f64, t: f64) -> f64 {
    match scheme {
        Scheme::Verlet => 1.0 - alpha * t * t / 10.0,
        Scheme::Stratified => 1.0 - alpha * t * t / 6.0,
    }
}

fn kl_regularization_constant(p: &BoundParams) -> f64 {
    9.0 / (4.0 * p.t * p.t) + 20.0 * p.df() * p.m * p.m * p.t.powi(4)
}

fn kl_cross_constant(p: &BoundParams) -> f64 {
    9.0 / (4.0 * p.t * p.t) + 181.5 * p.df() * p.m * p.m * p.t.powi(4)
}

/// `KL(μP̃^{k+1} ‖ ν̃_h) ≤ c₁² e^{-2c₂k} (9/(4T²) + 20dM²T⁴) W₂²(μ, ν̃_h)`.
pub fn kl_mixing_bound(p: &BoundParams, rates: Rates, k: usize, w2_init: f64) -> BoundReport {
    let constant = kl_regularization_constant(p);
    let value = rates.c1 * rates.c1 * (-2.0 * rates.c2 * k as f64).exp() * constant * w2_init * w2_init;
    BoundReport::new("kl_mixing", p)
        .param("c1", rates.c1)
        .param("c2", rates.c2)
        .param("k", k as f64)
        .param("w2_init", w2_init)
        .flag(COUPLING_REGIME, p.step_load() <= 1.0 / 12.0)
        .flag("k >= 0 and W2 finite", w2_init.is_finite() && w2_init >= 0.0)
        .component("regularization_constant", constant)
        .finish(value)
}

/// Moments `E‖X‖²`, `E‖X‖⁴` of the time-`k` law and where they came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m2: f64,
    pub m4: f64,
    pub source: String,
}

impl Moments {
    /// Moments of `N(0, σ² I_d)`: `m₂ = dσ²`, `m₄ = d(d+2)σ⁴`.
    pub fn isotropic_gaussian(d: usize, variance: f64) -> Self {
        let d = d as f64;
        Self {
            m2: d * variance,
            m4: d * (d + 2.0) * variance * variance,
            source: "isotropic Gaussian closed form".into(),
        }
    }

    /// Moments of a centred Gaussian with diagonal variances `s`.
    pub fn diagonal_gaussian(s: &[f64]) -> Self {
        let m2: f64 = s.iter().sum();
        let sq: f64 = s.iter().map(|x| x * x).sum();
        Self {
            m2,
            m4: m2 * m2 + 2.0 * sq,
            source: "diagonal Gaussian closed form".into(),
        }
    }
}

/// The `h⁴` bracket of the KL bias.
fn kl_h4_bracket(p: &BoundParams, mo: &Moments) -> f64 {
    let (l, m, n, t, d) = (p.l, p.m, p.n, p.t, p.df());
    45.0 * d * l * l
        + (4.0 * l * l / (t * t) + 45.0 * d * m * m) * mo.m2
        + (4.0 * l * l + 45.0 * d * m * m * t * t) * d
        + (4.0 * m * m / (t * t) + 45.0 * d * (m * m * t * t + n).powi(2)) * mo.m4
        + (4.0 * m * m * t * t + 45.0 * d * (m * m * t.powi(4) + n * t * t).powi(2)) * d * (d + 2.0)
}

/// Bias component of the KL target bound for a given `Δ_h ≥ W₂(ν̃, ν)`.
pub fn kl_bias_component(p: &BoundParams, moments: &Moments, delta_h: f64) -> f64 {
    2.0 * delta_h * delta_h * kl_cross_constant(p) + 4.0 * p.h.powi(4) * kl_h4_bracket(p, moments)
}

/// `KL(μQ̃ᵏP̃ ‖ ν) ≤ 2c₁²e^{-2c₂k}(9/(4T²) + 363/2 dM²T⁴)W₂²(μ, ν̃) + bias`.
pub fn kl_bias_bound(p: &BoundParams, rates: Rates, k: usize, w2_init: f64, moments: &Moments, delta_h: f64) -> BoundReport {
    let mixing = 2.0 * rates.c1 * rates.c1 * (-2.0 * rates.c2 * k as f64).exp() * kl_cross_constant(p) * w2_init * w2_init;
    let h4 = 4.0 * p.h.powi(4) * kl_h4_bracket(p, moments);
    let bias = kl_bias_component(p, moments, delta_h);
    BoundReport::new("kl_bias", p)
        .param("c1", rates.c1)
        .param("c2", rates.c2)
        .param("k", k as f64)
        .param("w2_init", w2_init)
        .param("m2", moments.m2)
        .param("m4", moments.m4)
        .param("delta_h", delta_h)
        .flag(COUPLING_REGIME, p.step_load() <= 1.0 / 12.0)
        .flag("delta_h >= 0", delta_h >= 0.0)
        .component("mixing", mixing)
        .component("bias", bias)
        .component("bias_delta_term", bias - h4)
        .component("bias_h4_term", h4)
        .note(format!("moments: {}", moments.source))
        .finish(mixing + bias)
}

/// `δ₁, δ₂` of the Rényi mixing bound.
pub fn renyi_mixing_deltas(p: &BoundParams, q: f64) -> (f64, f64) {
    let d = p.df();
    let d1 = (q - 1.0) * (8.0 * d * p.m * p.t * p.t + 3.0 * d.sqrt() / (2.0 * p.t));
    let d2 = 9.0 * q * (q - 1.0) / (8.0 * p.t * p.t);
    (d1, d2)
}

/// Burn-in `(1/c₂) ln( c₁W_ψ/(4√ln2) · (δ₁ + √(δ₁² + 16 ln2 δ₂)) )`.
pub fn renyi_burn_in(rates: Rates, orlicz_init: f64, d1: f64, d2: f64) -> f64 {
    let arg = rates.c1 * orlicz_init / (4.0 * LN_2.sqrt()) * (d1 + (d1 * d1 + 16.0 * LN_2 * d2).sqrt());
    arg.ln() / rates.c2
}

/// `R_q(μP̃^{k+1} ‖ ν̃_h) ≤ ((δ₁+δ₂)/(q-1)) √ln2 c₁² e^{-c₂k} max{1, W_ψ²}` for `k ≥ k*`.
pub fn renyi_mixing_bound(p: &BoundParams, rates: Rates, q: f64, k: usize, orlicz_init: f64) -> BoundReport {
    let (d1, d2) = renyi_mixing_deltas(p, q);
    let kstar = renyi_burn_in(rates, orlicz_init, d1, d2);
    let value = (d1 + d2) / (q - 1.0) * LN_2.sqrt() * rates.c1 * rates.c1 * (-rates.c2 * k as f64).exp() * orlicz_init.powi(2).max(1.0);
    BoundReport::new("renyi_mixing", p)
        .param("c1", rates.c1)
        .param("c2", rates.c2)
        .param("q", q)
        .param("k", k as f64)
        .param("orlicz_init", orlicz_init)
        .flag("q > 1", q > 1.0)
        .flag(COUPLING_REGIME, p.step_load() <= 1.0 / 12.0)
        .flag("k >= burn-in", k as f64 >= kstar)
        .component("delta1", d1)
        .component("delta2", d2)
        .component("burn_in", kstar)
        .finish(value)
}

/// Coefficients of the pointwise (`p`) and Jacobian (`j`) first-order map estimates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapConstants {
    pub p_xy: f64,
    pub p_v: f64,
    pub p_x: f64,
    pub j_xy: f64,
    pub j_c: f64,
    pub j_v: f64,
    pub j_x: f64,
}

impl MapConstants {
    pub fn new(p: &BoundParams) -> Self {
        let (l, m, t) = (p.l, p.m, p.t);
        Self {
            p_xy: 3.0 / (2.0 * t),
            p_v: 7.0 / (25.0 * t),
            p_x: 49.0 * l / 180.0,
            j_xy: 5.5 * m * t * t,
            j_c: 44.0 / (135.0 * t),
            j_v: 440.0 / 135.0 * m * t * t,
            j_x: 352.0 / 675.0 * m * t,
        }
    }
}

/// Derived quantities of the Rényi target bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenyiTargetTerms {
    pub s: f64,
    pub u: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta_h_ceiling: f64,
    pub h_ceilings: [f64; 3],
}

pub fn renyi_target_terms(p: &BoundParams, q: f64, k_nu: f64) -> RenyiTargetTerms {
    let c = MapConstants::new(p);
    let d = p.df();
    let sd = d.sqrt();
    let s = 2.0 * q - 1.0;
    let u = (1.0 + 1.0 / (4.0 * s)).sqrt();
    let a = 1.0 + 3.0 * s * u * u;
    let jxy_term = 6.0 * sd * c.j_xy + c.p_xy * u;
    let jx_term = 6.0 * sd * c.j_x + c.p_x * u;
    let dh1 = (2.0 * LN_2).sqrt() / (4.0 * s * (sd * jxy_term / 2f64.sqrt() + p.h * sd * jx_term));
    let dh2 = 1.0 / (8.0 * s * (c.p_xy * c.p_xy * a + 2.0 * p.h * p.h * c.p_x * c.p_x * a)).sqrt();
    let h1 = (u - 1.0) / c.p_v;
    let h2 = LN_2.sqrt() / (2.0 * 2f64.sqrt() * s * sd * jx_term * k_nu);
    let h3 = 1.0 / (4.0 * k_nu * c.p_x * (a * s).sqrt());
    RenyiTargetTerms {
        s,
        u,
        delta1: s * (8.0 * d * p.m * p.t * p.t + 3.0 * sd / (2.0 * p.t)),
        delta2: 9.0 * q * s / (4.0 * p.t * p.t),
        delta_h_ceiling: dh1.min(dh2),
        h_ceilings: [h1, h2, h3],
    }
}

/// Bias component of the Rényi target bound.
pub fn renyi_bias_component(p: &BoundParams, q: f64, delta_h: f64, k_nu: f64) -> f64 {
    let c = MapConstants::new(p);
    let d = p.df();
    let sd = d.sqrt();
    let h = p.h;
    let s = 2.0 * q - 1.0;
    let u = (1.0 + 1.0 / (4.0 * s)).sqrt();
    let a = 1.0 + 3.0 * s * u * u;
    d * h * (6.0 * c.j_c + 6.0 * sd * c.j_v + 108.0 * s * d * h * c.j_v * c.j_v + h * c.p_v * c.p_v + 2.0 * c.p_v)
        + 2.0 * sd * (6.0 * sd * c.j_xy + c.p_xy * u) * delta_h
        + c.p_xy * c.p_xy * a * delta_h * delta_h
        + 2.0 * h * sd * (6.0 * sd * c.j_x + c.p_x * u) * (delta_h + k_nu + (delta_h * delta_h + k_nu * k_nu).sqrt())
        + 2.0 * h * h * c.p_x * c.p_x * a * (delta_h * delta_h + k_nu * k_nu)
}

/// `R_q(μQ̃ᵏP̃ ‖ ν) ≤ 3(δ₁+δ₂)/(2(2q-1)) √ln2 c₁² e^{-c₂k} max{1, W_ψ²} + bias`,
/// with every ceiling on `Δ_h` and `h` flagged individually. `k = None`
/// evaluates the `k → ∞` limit (bias only).
pub fn renyi_bias_bound(p: &BoundParams, rates: Rates, q: f64, k: Option<usize>, orlicz_init: f64, delta_h: f64, k_nu: f64) -> BoundReport {
    let terms = renyi_target_terms(p, q, k_nu);
    let kstar = renyi_burn_in(rates, orlicz_init, terms.delta1, terms.delta2);
    let mixing = match k {
        Some(k) => {
            3.0 * (terms.delta1 + terms.delta2) / (2.0 * (2.0 * q - 1.0))
                * LN_2.sqrt()
                * rates.c1
                * rates.c1
                * (-rates.c2 * k as f64).exp()
                * orlicz_init.powi(2).max(1.0)
        }
        None => 0.0,
    };
    let bias = renyi_bias_component(p, q, delta_h, k_nu);
    let past_burn_in = match k {
        Some(k) => k as f64 >= kstar,
        None => true,
    };
    BoundReport::new("renyi_bias", p)
        .param("c1", rates.c1)
        .param("c2", rates.c2)
        .param("q", q)
        .param("k", k.map_or(f64::INFINITY, |k| k as f64))
        .param("orlicz_init", orlicz_init)
        .param("delta_h", delta_h)
        .param("K_nu", k_nu)
        .flag("q > 1", q > 1.0)
        .flag(COUPLING_REGIME, p.step_load() <= 1.0 / 12.0)
        .flag("delta_h <= delta_h ceiling", delta_h <= terms.delta_h_ceiling)
        .flag("h <= (u-1)/p_v", p.h <= terms.h_ceilings[0])
        .flag("h <= sqrt(log 2)/(2 sqrt(2) s sqrt(d)(6 sqrt(d) j_x + p_x u) K_nu)", p.h <= terms.h_ceilings[1])
        .flag("h <= 1/(4 K_nu p_x sqrt((1+3su^2)s))", p.h <= terms.h_ceilings[2])
        .flag("k >= burn-in", past_burn_in)
        .component("s", terms.s)
        .component("u", terms.u)
        .component("delta1", terms.delta1)
        .component("delta2", terms.delta2)
        .component("burn_in", kstar)
        .component("delta_h_ceiling", terms.delta_h_ceiling)
        .component("h_ceiling_1", terms.h_ceilings[0])
        .component("h_ceiling_2", terms.h_ceilings[1])
        .component("h_ceiling_3", terms.h_ceilings[2])
        .component("mixing", mixing)
        .component("bias", bias)
        .finish(mixing + bias)
}

/// Contraction factors and bias estimates of the Wasserstein propositions.
///
/// `moments` are those of the target `ν`; `k_nu` bounds its Orlicz norm.
pub fn wasserstein_props(p: &BoundParams, moments: &Moments, k_nu: f64) -> BoundReport {
    let (l, m, alpha, t, h, d) = (p.l, p.m, p.alpha, p.t, p.h, p.df());
    let verlet = contraction_factor(Scheme::Verlet, alpha, t);
    let stratified = contraction_factor(Scheme::Stratified, alpha, t);
    let w2_bias = h * h * 20.0 / (alpha * t * t)
        * (l * l * moments.m2 / 25.0 + 0.81 * d * l * l * t * t + m * m * moments.m4 / 14400.0 + 0.09 * d * (d + 2.0) * m * m * t.powi(4))
            .sqrt();
    let orlicz_bias = h * 10.0 / (alpha * t * t) * d.sqrt().max(7.0 / 15.0 * l * t * k_nu);
    let stratified_bias = h.powf(1.5) * 142.0 * d.sqrt() * 6.0 / (alpha * t * t) * (l / alpha).sqrt() * l.powf(0.25);
    BoundReport::new("wasserstein_props", p)
        .param("m2", moments.m2)
        .param("m4", moments.m4)
        .param("K_nu", k_nu)
        .flag("alpha > 0", alpha > 0.0)
        .flag("LT^2 <= 1/20", l * t * t <= 0.05)
        .flag("L(T^2+Th) <= 1/20", p.step_load() <= 0.05)
        .flag("LT^2 <= 1/8 (stratified)", l * t * t <= 0.125)
        .component("verlet_factor", verlet)
        .component("stratified_factor", stratified)
        .component("w2_bias", w2_bias)
        .component("orlicz_bias", orlicz_bias)
        .component("stratified_w2_bias", stratified_bias)
        .note(format!("moments: {}", moments.source))
        .finish(w2_bias)
}

/// W₂ bias estimate alone, flagged by `L(T² + Th) ≤ 1/20`.
pub fn w2_bias_verlet(p: &BoundParams, moments: &Moments) -> BoundReport {
    let r = wasserstein_props(p, moments, 0.0);
    let v = r.get("w2_bias").unwrap_or(f64::NAN);
    BoundReport::new("w2_bias_verlet", p)
        .param("m2", moments.m2)
        .param("m4", moments.m4)
        .flag("alpha > 0", p.alpha > 0.0)
        .flag("L(T^2+Th) <= 1/20", p.step_load() <= 0.05)
        .component("w2_bias", v)
        .finish(v)
}

/// Orlicz–Wasserstein bias estimate alone, flagged by `L(T² + Th) ≤ 1/20`.
pub fn orlicz_bias_verlet(p: &BoundParams, k_nu: f64) -> BoundReport {
    let v = p.h * 10.0 / (p.alpha * p.t * p.t) * p.df().sqrt().max(7.0 / 15.0 * p.l * p.t * k_nu);
    BoundReport::new("orlicz_bias_verlet", p)
        .param("K_nu", k_nu)
        .flag("alpha > 0", p.alpha > 0.0)
        .flag("L(T^2+Th) <= 1/20", p.step_load() <= 0.05)
        .component("orlicz_bias", v)
        .finish(v)
}

/// Iterations `1 + (5/(αT²)) ln((9/(4T²) + 20dM²T⁴) W₂²/ε)` for KL accuracy `ε`.
pub fn kl_mixing_iterations(p: &BoundParams, w2_init: f64, eps: f64) -> BoundReport {
    let constant = kl_regularization_constant(p);
    let k = 1.0 + 5.0 / (p.alpha * p.t * p.t) * (constant * w2_init * w2_init / eps).ln();
    BoundReport::new("kl_mixing_iterations", p)
        .param("w2_init", w2_init)
        .param("eps", eps)
        .flag("eps > 0", eps > 0.0)
        .flag("LT^2 <= 1/20", p.l * p.t * p.t <= 0.05)
        .flag(COUPLING_REGIME, p.step_load() <= 1.0 / 12.0)
        .component("iterations", k)
        .finish(k)
}

/// Iterations `1 + (10/(αT²)) ln(2(δ₁ + 2√ln2 max{δ₂, √δ₂}) max{1, W_ψ²}/ε)`.
pub fn renyi_mixing_iterations(p: &BoundParams, q: f64, orlicz_init: f64, eps: f64) -> BoundReport {
    let (d1, d2) = renyi_mixing_deltas(p, q);
    let k = 1.0
        + 10.0 / (p.alpha * p.t * p.t)
            * (2.0 * (d1 + 2.0 * LN_2.sqrt() * d2.max(d2.sqrt())) * orlicz_init.powi(2).max(1.0) / eps).ln();
    BoundReport::new("renyi_mixing_iterations", p)
        .param("q", q)
        .param("orlicz_init", orlicz_init)
        .param("eps", eps)
        .flag("eps > 0", eps > 0.0)
        .flag("q > 1", q > 1.0)
        .flag("LT^2 <= 1/20", p.l * p.t * p.t <= 0.05)
        .flag(COUPLING_REGIME, p.step_load() <= 1.0 / 12.0)
        .component("iterations", k)
        .finish(k)
}

/// `MI(X₀; X_k) ≤ e^{-(αT²/5)(k-1)} (9/(4T²) + 20dM²T⁴) E‖X - Y‖²`, `X ~ μ`, `Y ~ ν̃_h` independent.
pub fn mi_contraction_bound(p: &BoundParams, k: usize, expected_sq_dist: f64) -> BoundReport {
    let constant = kl_regularization_constant(p);
    let value = (-(p.alpha * p.t * p.t / 5.0) * (k as f64 - 1.0)).exp() * constant * expected_sq_dist;
    BoundReport::new("mi_contraction", p)
        .param("k", k as f64)
        .param("expected_sq_dist", expected_sq_dist)
        .flag("k >= 1", k >= 1)
        .flag("LT^2 <= 1/20", p.l * p.t * p.t <= 0.05)
        .flag(COUPLING_REGIME, p.step_load() <= 1.0 / 12.0)
        .finish(value)
}

fn bisect_increasing(f: impl Fn(f64) -> f64, target: f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = if lo > 0.0 { (lo * hi).sqrt() } else { 0.5 * (lo + hi) };
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) <= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo
}

/// Gradient count for KL accuracy `ε` with uHMC-v, `T` fixed and `h`
/// treated as continuous.
///
/// `h` solves `bias(h) = ε/2` with `Δ_h` from the W₂ bias estimate (capped
/// by `L(T² + Th) ≤ 1/20`), `k` is the smallest integer whose mixing term is
/// at most `ε/2`, and the count is `(k + 1) T / h`.
pub fn kl_gradient_complexity(p: &BoundParams, w2_init: f64, moments: &Moments, eps: f64) -> Result<BoundReport> {
    let rates = Rates::verlet(p)?;
    let bias_at = |h: f64| {
        let ph = p.with_h(h);
        let delta = wasserstein_props(&ph, moments, 0.0).get("w2_bias").unwrap_or(f64::NAN);
        kl_bias_component(&ph, moments, delta)
    };
    let h_cap = (0.05 / p.l - p.t * p.t) / p.t;
    if !(h_cap > 0.0) {
        return Err(Error::InvalidParameter("LT² ≥ 1/20 leaves no admissible step".into()));
    }
    let h_bias = bisect_increasing(bias_at, eps / 2.0, 0.0, p.t);
    let h = h_bias.min(h_cap);
    let mixing_const = 2.0 * kl_cross_constant(p) * w2_init * w2_init;
    let k = ((mixing_const / (eps / 2.0)).ln() / (2.0 * rates.c2)).ceil().max(0.0);
    let grads = (k + 1.0) * p.t / h;
    Ok(BoundReport::new("kl_gradient_complexity", &p.with_h(h))
        .param("eps", eps)
        .param("w2_init", w2_init)
        .flag("eps > 0", eps > 0.0)
        .flag("LT^2 <= 1/20", p.l * p.t * p.t <= 0.05)
        .component("h", h)
        .component("h_bias", h_bias)
        .component("h_cap", h_cap)
        .component("iterations", k + 1.0)
        .component("gradients", grads)
        .note("h continuous; T/h not rounded to an integer")
        .finish(grads))
}

/// Gradient count for Rényi-`q` accuracy `ε`, built like
/// [`kl_gradient_complexity`] with `Δ_h` from the Orlicz bias estimate and
/// `h` additionally capped by every ceiling of the Rényi target bound.
pub fn renyi_gradient_complexity(p: &BoundParams, q: f64, orlicz_init: f64, k_nu: f64, eps: f64) -> Result<BoundReport> {
    let rates = Rates::verlet(p)?;
    let delta_at = |h: f64| orlicz_bias_verlet(&p.with_h(h), k_nu).get("orlicz_bias").unwrap_or(f64::NAN);
    let bias_at = |h: f64| renyi_bias_component(&p.with_h(h), q, delta_at(h), k_nu);
    let ceiling_slack = |h: f64| {
        let ph = p.with_h(h);
        let terms = renyi_target_terms(&ph, q, k_nu);
        let ok = delta_at(h) <= terms.delta_h_ceiling && terms.h_ceilings.iter().all(|c| h <= *c) && ph.step_load() <= 0.05;
        if ok {
            0.0
        } else {
            1.0
        }
    };
    let h_bias = bisect_increasing(bias_at, eps / 2.0, 0.0, p.t);
    let h_ceiling = bisect_increasing(ceiling_slack, 0.5, 0.0, p.t);
    let h = h_bias.min(h_ceiling);
    let ph = p.with_h(h);
    let terms = renyi_target_terms(&ph, q, k_nu);
    let pre = 3.0 * (terms.delta1 + terms.delta2) / (2.0 * (2.0 * q - 1.0)) * LN_2.sqrt() * orlicz_init.powi(2).max(1.0);
    let kstar = renyi_burn_in(rates, orlicz_init, terms.delta1, terms.delta2).max(0.0);
    let k = ((pre / (eps / 2.0)).ln() / rates.c2).max(kstar).ceil().max(0.0);
    let grads = (k + 1.0) * p.t / h;
    Ok(BoundReport::new("renyi_gradient_complexity", &ph)
        .param("q", q)
        .param("eps", eps)
        .param("orlicz_init", orlicz_init)
        .param("K_nu", k_nu)
        .flag("eps > 0", eps > 0.0)
        .flag("q > 1", q > 1.0)
        .flag("LT^2 <= 1/20", p.l * p.t * p.t <= 0.05)
        .component("h", h)
        .component("h_bias", h_bias)
        .component("h_ceiling", h_ceiling)
        .component("iterations", k + 1.0)
        .component("gradients", grads)
        .note("h continuous; T/h not rounded to an integer")
        .finish(grads))
}

/// `E‖V‖` for `V ~ N(0, I_d)`: `m₁ = √(2/π)`, `m_{d+1} = d/m_d`.
pub fn gaussian_norm_mean(d: usize) -> f64 {
    let mut m = (2.0 / PI).sqrt();
    for k in 1..d {
        m = k as f64 / m;
    }
    m
}

/// Upper bounds on `E e^{c‖V‖}`: `exp(c m_d + c²/2)` and the looser `exp(c√d + c²/2)`.
pub fn exp_norm_bounds(c: f64, d: usize) -> (f64, f64) {
    let tight = (c * gaussian_norm_mean(d) + 0.5 * c * c).exp();
    let loose = (c * (d as f64).sqrt() + 0.5 * c * c).exp();
    (tight, loose)
}

/// For `ax² + bx + c` with `a, b > 0 > c`, every `x ≤ min{-c/(2b), √(-c/(4a))}`
/// satisfies `ax² + bx + c ≤ 0`.
pub fn quadratic_threshold(a: f64, b: f64, c: f64) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && c < 0.0) {
        return Err(Error::InvalidParameter("need a > 0, b > 0, c < 0".into()));
    }
    Ok((-c / (2.0 * b)).min((-c / (4.0 * a)).sqrt()))
}

/// `E e^{c‖X‖²} ≤ 2^{cK²}` for `‖X‖_ψ ≤ K` and `0 ≤ c ≤ K⁻²`.
pub fn orlicz_exp_moment_bound(c: f64, k: f64) -> Result<f64> {
    if !(c >= 0.0) || c * k * k > 1.0 {
        return Err(Error::InvalidParameter("need 0 ≤ c ≤ K⁻²".into()));
    }
    Ok(2f64.powf(c * k * k))
}

/// Slack `ln(Pg)(y) + C|x - y|² - (P ln g)(x)` for the Gaussian kernel
/// `P = N(·, σ²)` in one dimension; a nonnegative slack certifies the
/// log-Harnack inequality for this instance.
pub fn log_harnack_check_1d(sigma2: f64, g: impl Fn(f64) -> f64, x: f64, y: f64, c: f64) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidParameter("kernel variance must be > 0".into()));
    }
    let sigma = sigma2.sqrt();
    let p_log_g = gaussian_expectation(|z| g(z).ln(), x, sigma, 1e-12)?.value;
    let pg = gaussian_expectation(&g, y, sigma, 1e-12)?.value;
    if !(pg > 0.0) {
        return Err(Error::InvalidParameter("test function must be positive".into()));
    }
    Ok(pg.ln() + c * (x - y) * (x - y) - p_log_g)
}
