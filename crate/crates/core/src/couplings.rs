//! One-shot coupling maps, constructed by shooting on the initial velocity,
//! and an empirical checker for their regularity estimates.
//!
//! * mixing map `φ_{x,y}`: `q̃(x, v) = q̃(y, φ(v))`, same integrator on both sides;
//! * bias map `φ_x`: `q̃(x, v) = q(x, φ(v))`, exact flow on the right;
//! * cross map `Φ_{x,y}`: `q̃(x, v) = q(y, Φ(v))`, equal to `φ_{x,y}|_{h=0} ∘ φ_x`.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::bounds::{BoundParams, MapConstants};
use crate::dynamics::{
    exact_trajectory, exact_velocity_jacobians, flow_jacobian_v, flow_position, grid_times, quadratic_flow_matrix,
    verlet_positions, verlet_velocity_jacobians, FlowParams, PhasePoint, HMC_STABILITY_LIMIT,
};
use crate::error::{check_dim, Error, Result};
use crate::potential::Potential;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MapKind {
    Mixing,
    Bias,
    Cross,
}

impl MapKind {
    fn name(self) -> &'static str {
        match self {
            MapKind::Mixing => "mixing",
            MapKind::Bias => "bias",
            MapKind::Cross => "cross",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingSolution {
    pub v_prime: DVector<f64>,
    /// `‖endpoint(v) - endpoint'(v')‖`.
    pub residual: f64,
    pub iterations: usize,
    pub map_kind: MapKind,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NewtonOptions {
    /// Newton stops once the residual reaches this.
    pub tol: f64,
    /// A solve whose best residual is above this is reported as failed.
    pub success_tol: f64,
    pub max_iter: usize,
    /// Step shrink factor applied when a full step increases the residual.
    pub damping: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-12,
            success_tol: 1e-10,
            max_iter: 50,
            damping: 0.5,
        }
    }
}

/// `∂x_T/∂v`: analytic for quadratics, tangent propagation otherwise.
fn velocity_jacobian(p: &Potential, z: &PhasePoint, fp: &FlowParams) -> Result<DMatrix<f64>> {
    if p.omega2().is_some() {
        return flow_jacobian_v(p, z, fp);
    }
    let mut jacs = if fp.is_exact() {
        exact_velocity_jacobians(p, z, &[fp.t()])?
    } else {
        verlet_velocity_jacobians(p, z, fp)?
    };
    Ok(jacs.pop().expect("at least one step"))
}

fn check_existence(p: &Potential, fp: &FlowParams) -> Result<()> {
    let l = p.smoothness().l;
    if l * fp.t() * fp.t() > HMC_STABILITY_LIMIT {
        return Err(Error::Unstable(format!(
            "LT² = {} exceeds 2π²/5; the coupling map need not exist",
            l * fp.t() * fp.t()
        )));
    }
    Ok(())
}

/// Finds `v'` with `flow_position(start, v', fp) = target`.
///
/// Quadratic potentials are solved coordinate-wise in closed form; other
/// potentials use damped Newton with the exact velocity Jacobian.
pub fn shoot(
    p: &Potential,
    start: &DVector<f64>,
    target: &DVector<f64>,
    guess: &DVector<f64>,
    fp: &FlowParams,
    kind: MapKind,
    opts: &NewtonOptions,
) -> Result<CouplingSolution> {
    p.check_point(start)?;
    check_dim(start.len(), target.len())?;
    check_dim(start.len(), guess.len())?;
    check_existence(p, fp)?;
    if let Some(omega2) = p.omega2() {
        let mut v = DVector::zeros(start.len());
        for i in 0..start.len() {
            let a = quadratic_flow_matrix(omega2[i], fp);
            if a[0][1] == 0.0 {
                return Err(Error::SolverFailed {
                    map: kind.name(),
                    iterations: 0,
                    residual: f64::INFINITY,
                });
            }
            v[i] = (target[i] - a[0][0] * start[i]) / a[0][1];
        }
        let residual = (flow_position(p, start, &v, fp)? - target).norm();
        return Ok(CouplingSolution {
            v_prime: v,
            residual,
            iterations: 1,
            map_kind: kind,
        });
    }

    let mismatch = |v: &DVector<f64>| -> Result<DVector<f64>> { Ok(flow_position(p, start, v, fp)? - target) };
    let mut v = guess.clone();
    let mut r = mismatch(&v)?;
    let mut rn = r.norm();
    let mut iterations = 0;
    while rn > opts.tol && iterations < opts.max_iter {
        iterations += 1;
        let z = PhasePoint {
            x: start.clone(),
            v: v.clone(),
        };
        let lu = velocity_jacobian(p, &z, fp)?.lu();
        let Some(step) = lu.solve(&(-&r)) else {
            break;
        };
        let mut lambda = 1.0;
        let mut accepted = false;
        while lambda >= 1e-3 {
            let cand = &v + lambda * &step;
            let rc = mismatch(&cand)?;
            let rcn = rc.norm();
            if rcn.is_finite() && rcn < rn {
                v = cand;
                r = rc;
                rn = rcn;
                accepted = true;
                break;
            }
            lambda *= opts.damping;
        }
        if !accepted {
            break;
        }
    }
    if !(rn <= opts.success_tol) {
        return Err(Error::SolverFailed {
            map: kind.name(),
            iterations,
            residual: rn,
        });
    }
    Ok(CouplingSolution {
        v_prime: v,
        residual: rn,
        iterations,
        map_kind: kind,
    })
}

fn check_inputs(p: &Potential, x: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
    p.check_point(x)?;
    check_dim(x.len(), v.len())
}

/// `φ_{x,y}(v)`: `q̃_{T,h}(x, v) = q̃_{T,h}(y, φ(v))`.
pub fn solve_mixing_map(
    p: &Potential,
    x: &DVector<f64>,
    y: &DVector<f64>,
    v: &DVector<f64>,
    fp: &FlowParams,
    opts: &NewtonOptions,
) -> Result<CouplingSolution> {
    check_inputs(p, x, v)?;
    p.check_point(y)?;
    if x == y {
        return Ok(CouplingSolution {
            v_prime: v.clone(),
            residual: 0.0,
            iterations: 0,
            map_kind: MapKind::Mixing,
        });
    }
    let target = flow_position(p, x, v, fp)?;
    let guess = v + (x - y) / fp.t();
    shoot(p, y, &target, &guess, fp, MapKind::Mixing, opts)
}

/// `φ_x(v)`: `q̃_{T,h}(x, v) = q_T(x, φ(v))`.
pub fn solve_bias_map(p: &Potential, x: &DVector<f64>, v: &DVector<f64>, fp: &FlowParams, opts: &NewtonOptions) -> Result<CouplingSolution> {
    check_inputs(p, x, v)?;
    let target = flow_position(p, x, v, fp)?;
    if fp.is_exact() {
        return Ok(CouplingSolution {
            v_prime: v.clone(),
            residual: 0.0,
            iterations: 0,
            map_kind: MapKind::Bias,
        });
    }
    shoot(p, x, &target, v, &fp.to_exact(), MapKind::Bias, opts)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CrossMethod {
    /// Bias map followed by the exact-flow mixing map.
    Composition,
    /// Direct shooting from `y` with the exact flow.
    Shooting,
}

/// `Φ_{x,y}(v)`: `q̃_{T,h}(x, v) = q_T(y, Φ(v))`.
pub fn solve_cross_map(
    p: &Potential,
    x: &DVector<f64>,
    y: &DVector<f64>,
    v: &DVector<f64>,
    fp: &FlowParams,
    method: CrossMethod,
    opts: &NewtonOptions,
) -> Result<CouplingSolution> {
    check_inputs(p, x, v)?;
    p.check_point(y)?;
    let target = flow_position(p, x, v, fp)?;
    let exact = fp.to_exact();
    let (v_prime, iterations) = match method {
        CrossMethod::Composition => {
            let bias = solve_bias_map(p, x, v, fp, opts)?;
            let mix = solve_mixing_map(p, x, y, &bias.v_prime, &exact, opts)?;
            (mix.v_prime, bias.iterations + mix.iterations)
        }
        CrossMethod::Shooting => {
            if x == y {
                let s = solve_bias_map(p, x, v, fp, opts)?;
                (s.v_prime, s.iterations)
            } else {
                let guess = v + (x - y) / fp.t();
                let s = shoot(p, y, &target, &guess, &exact, MapKind::Cross, opts)?;
                (s.v_prime, s.iterations)
            }
        }
    };
    let residual = (flow_position(p, y, &v_prime, &exact)? - target).norm();
    if !(residual <= opts.success_tol) {
        return Err(Error::SolverFailed {
            map: MapKind::Cross.name(),
            iterations,
            residual,
        });
    }
    Ok(CouplingSolution {
        v_prime,
        residual,
        iterations,
        map_kind: MapKind::Cross,
    })
}

/// Largest singular value.
pub fn operator_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().max()
}

/// Step of the central differences used for map Jacobians.
pub const MAP_FD_STEP: f64 = 1e-4;

/// Central-difference Jacobian of a solved map at `v`, together with the
/// largest residual among the solves involved.
pub fn map_jacobian(solve: impl Fn(&DVector<f64>) -> Result<CouplingSolution>, v: &DVector<f64>) -> Result<(DMatrix<f64>, f64)> {
    let d = v.len();
    let mut jac = DMatrix::zeros(d, d);
    let mut worst: f64 = 0.0;
    let mut vp = v.clone();
    for j in 0..d {
        vp[j] = v[j] + MAP_FD_STEP;
        let plus = solve(&vp)?;
        vp[j] = v[j] - MAP_FD_STEP;
        let minus = solve(&vp)?;
        vp[j] = v[j];
        worst = worst.max(plus.residual).max(minus.residual);
        jac.set_column(j, &((plus.v_prime - minus.v_prime) / (2.0 * MAP_FD_STEP)));
    }
    Ok((jac, worst))
}

/// Regularity estimates that can be checked sample by sample.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum LemmaId {
    MixingDisplacement,
    MixingJacobian,
    CrossDisplacement,
    CrossJacobian,
    CrossDisplacementFirstOrder,
    CrossJacobianFirstOrder,
    BiasDisplacement,
    BiasJacobian,
    BiasDisplacementFirstOrder,
    BiasJacobianFirstOrder,
    FlowErrorFirstOrder,
    FlowJacobianErrorFirstOrder,
    FlowErrorSecondOrder,
}

impl LemmaId {
    pub const ALL: [LemmaId; 13] = [
        LemmaId::MixingDisplacement,
        LemmaId::MixingJacobian,
        LemmaId::CrossDisplacement,
        LemmaId::CrossJacobian,
        LemmaId::CrossDisplacementFirstOrder,
        LemmaId::CrossJacobianFirstOrder,
        LemmaId::BiasDisplacement,
        LemmaId::BiasJacobian,
        LemmaId::BiasDisplacementFirstOrder,
        LemmaId::BiasJacobianFirstOrder,
        LemmaId::FlowErrorFirstOrder,
        LemmaId::FlowJacobianErrorFirstOrder,
        LemmaId::FlowErrorSecondOrder,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LemmaId::MixingDisplacement => "mixing_displacement",
            LemmaId::MixingJacobian => "mixing_jacobian",
            LemmaId::CrossDisplacement => "cross_displacement",
            LemmaId::CrossJacobian => "cross_jacobian",
            LemmaId::CrossDisplacementFirstOrder => "cross_displacement_first_order",
            LemmaId::CrossJacobianFirstOrder => "cross_jacobian_first_order",
            LemmaId::BiasDisplacement => "bias_displacement",
            LemmaId::BiasJacobian => "bias_jacobian",
            LemmaId::BiasDisplacementFirstOrder => "bias_displacement_first_order",
            LemmaId::BiasJacobianFirstOrder => "bias_jacobian_first_order",
            LemmaId::FlowErrorFirstOrder => "flow_error_first_order",
            LemmaId::FlowJacobianErrorFirstOrder => "flow_jacobian_error_first_order",
            LemmaId::FlowErrorSecondOrder => "flow_error_second_order",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|l| l.as_str() == s)
    }

    /// Upper limit on `L(T² + Th)` under which the estimate is claimed.
    pub fn step_condition(self) -> f64 {
        match self {
            LemmaId::MixingDisplacement
            | LemmaId::MixingJacobian
            | LemmaId::CrossDisplacement
            | LemmaId::CrossJacobian
            | LemmaId::CrossDisplacementFirstOrder
            | LemmaId::CrossJacobianFirstOrder => 1.0 / 12.0,
            _ => 1.0 / 6.0,
        }
    }

    fn is_jacobian(self) -> bool {
        matches!(
            self,
            LemmaId::MixingJacobian
                | LemmaId::CrossJacobian
                | LemmaId::CrossJacobianFirstOrder
                | LemmaId::BiasJacobian
                | LemmaId::BiasJacobianFirstOrder
                | LemmaId::FlowJacobianErrorFirstOrder
        )
    }

    /// Right-hand side at `(x, y, v)` with the potential's metadata.
    pub fn rhs(self, b: &BoundParams, x: &DVector<f64>, y: &DVector<f64>, v: &DVector<f64>) -> f64 {
        let (l, m, n, t, h) = (b.l, b.m, b.n, b.t, b.h);
        let nx = x.norm();
        let nv = v.norm();
        let nxy = (x - y).norm();
        let q = l + m * nx + m * t * nv + (m * m * t * t + n) * nx * nx + (m * m * t.powi(4) + n * t * t) * nv * nv;
        let bias2 = 2.0 * h * h * (l * nx / t + l * nv + m * nx * nx / t + m * t * nv * nv);
        let c = MapConstants::new(b);
        match self {
            LemmaId::MixingDisplacement => 1.5 / t * nxy,
            LemmaId::MixingJacobian => (2.0 / 9.0f64).min(5.5 * m * t * t * nxy),
            LemmaId::CrossDisplacement => 1.5 / t * nxy + bias2,
            LemmaId::CrossJacobian => (15.0 / 18.0f64).min(5.5 * m * t * t * nxy + 22.0 / 9.0 * h * h * q),
            LemmaId::CrossDisplacementFirstOrder => c.p_xy * nxy + h * c.p_v * nv + h * c.p_x * nx,
            LemmaId::CrossJacobianFirstOrder => {
                (15.0 / 18.0f64).min(c.j_xy * nxy + h * c.j_c + h * c.j_v * nv + h * c.j_x * nx)
            }
            LemmaId::BiasDisplacement => bias2,
            LemmaId::BiasJacobian => 0.5f64.min(2.0 * h * h * q),
            LemmaId::BiasDisplacementFirstOrder => 1.4 * h * (nv / (5.0 * t) + 7.0 / 36.0 * l * nx),
            LemmaId::BiasJacobianFirstOrder => 0.5f64.min(2.0 / 15.0 * h * (2.0 / t + 3.2 * m * t * nx + 20.0 * m * t * t * nv)),
            LemmaId::FlowErrorFirstOrder => h * (0.24 * nv + 7.0 / 30.0 * l * t * nx),
            LemmaId::FlowJacobianErrorFirstOrder => 0.24 * h * (1.0 + 1.4 * m * t * t * nx + 216.0 / 25.0 * m * t.powi(3) * nv),
            LemmaId::FlowErrorSecondOrder => {
                h * h * (0.2 * l * nx + 0.9 * l * t * nv + m * nx * nx / 120.0 + 0.3 * m * t * t * nv * nv)
            }
        }
    }
}

impl std::fmt::Display for LemmaId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Observed values below these are treated as numerical zero.
pub const POINTWISE_FLOOR: f64 = 1e-10;
pub const JACOBIAN_FLOOR: f64 = 1e-7;

/// `lhs / rhs`, with noise-level `lhs` against a zero `rhs` counted as 0.
pub fn regularity_ratio(lemma: LemmaId, lhs: f64, rhs: f64) -> f64 {
    let floor = if lemma.is_jacobian() { JACOBIAN_FLOOR } else { POINTWISE_FLOOR };
    if lhs <= floor {
        return 0.0;
    }
    if rhs <= 0.0 {
        return f64::INFINITY;
    }
    lhs / rhs
}

/// How verification samples are drawn: `x, y ~ N(0, x_scale² I)`,
/// `v ~ N(0, v_scale² I)`; `coincident` forces `y = x`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SamplerConfig {
    pub samples: usize,
    pub seed: u64,
    pub x_scale: f64,
    pub v_scale: f64,
    pub coincident: bool,
}

impl SamplerConfig {
    pub fn new(samples: usize, seed: u64) -> Self {
        Self {
            samples,
            seed,
            x_scale: 1.0,
            v_scale: 1.0,
            coincident: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub x: DVector<f64>,
    pub y: DVector<f64>,
    pub v: DVector<f64>,
    pub lhs: f64,
    pub rhs: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularityReport {
    pub lemma: LemmaId,
    pub samples: usize,
    pub max_ratio: f64,
    pub worst: Option<Sample>,
    /// First sample with ratio above 1.
    pub violating: Option<Sample>,
    /// Largest endpoint residual of the map solves this estimate uses.
    pub worst_residual: f64,
    /// `L(T² + Th)` from the metadata and the lemma's limit for it.
    pub step_load: f64,
    pub step_limit: f64,
    /// Largest observed `‖∇²f(x)‖ / L` over the sampled points.
    pub hessian_ratio: f64,
    /// Largest observed directional third derivative over `M`.
    pub third_derivative_ratio: f64,
    pub preconditions_hold: bool,
}

impl RegularityReport {
    pub fn passed(&self) -> bool {
        self.samples > 0 && self.max_ratio <= 1.0 && self.preconditions_hold
    }
}

#[derive(Default)]
struct Needs {
    mixing: bool,
    mixing_jac: bool,
    bias: bool,
    bias_jac: bool,
    cross: bool,
    cross_jac: bool,
    flow: bool,
    flow_jac: bool,
}

fn needs(lemmas: &[LemmaId]) -> Needs {
    let mut n = Needs::default();
    for l in lemmas {
        match l {
            LemmaId::MixingDisplacement => n.mixing = true,
            LemmaId::MixingJacobian => n.mixing_jac = true,
            LemmaId::CrossDisplacement | LemmaId::CrossDisplacementFirstOrder => n.cross = true,
            LemmaId::CrossJacobian | LemmaId::CrossJacobianFirstOrder => n.cross_jac = true,
            LemmaId::BiasDisplacement | LemmaId::BiasDisplacementFirstOrder => n.bias = true,
            LemmaId::BiasJacobian | LemmaId::BiasJacobianFirstOrder => n.bias_jac = true,
            LemmaId::FlowErrorFirstOrder | LemmaId::FlowErrorSecondOrder => n.flow = true,
            LemmaId::FlowJacobianErrorFirstOrder => n.flow_jac = true,
        }
    }
    n
}

struct Observed {
    mixing: f64,
    mixing_jac: f64,
    bias: f64,
    bias_jac: f64,
    cross: f64,
    cross_jac: f64,
    flow: f64,
    flow_jac: f64,
    mixing_res: f64,
    bias_res: f64,
    cross_res: f64,
    hessian: f64,
    third: f64,
}

fn jacobian_deviation(j: &DMatrix<f64>) -> f64 {
    let d = j.nrows();
    operator_norm(&(j - DMatrix::identity(d, d)))
}

/// Max over grid times of `‖q_s - q̃_s‖` and `‖∂_v q_s - ∂_v q̃_s‖`.
fn flow_errors(p: &Potential, z: &PhasePoint, fp: &FlowParams, n: &Needs) -> Result<(f64, f64)> {
    if fp.is_exact() {
        return Ok((0.0, 0.0));
    }
    let times = grid_times(fp);
    let mut pos = 0.0f64;
    let mut jac = 0.0f64;
    if n.flow {
        let exact = exact_trajectory(p, z, &times)?;
        let verlet = verlet_positions(p, z, fp)?;
        for (e, q) in exact.iter().zip(&verlet) {
            pos = pos.max((&e.x - q).norm());
        }
    }
    if n.flow_jac {
        let exact = exact_velocity_jacobians(p, z, &times)?;
        let verlet = verlet_velocity_jacobians(p, z, fp)?;
        for (e, q) in exact.iter().zip(&verlet) {
            jac = jac.max(operator_norm(&(e - q)));
        }
    }
    Ok((pos, jac))
}

/// `‖∇²f(x)‖` and `‖D∇²f(x)[u]‖` along a unit direction `u` (central differences).
fn smoothness_probe(p: &Potential, x: &DVector<f64>, u: &DVector<f64>) -> (f64, f64) {
    let hess = operator_norm(&p.hessian(x));
    let eps = 1e-4;
    let third = operator_norm(&((p.hessian(&(x + eps * u)) - p.hessian(&(x - eps * u))) / (2.0 * eps)));
    (hess, third)
}

fn observe(p: &Potential, fp: &FlowParams, x: &DVector<f64>, y: &DVector<f64>, v: &DVector<f64>, u: &DVector<f64>, n: &Needs, opts: &NewtonOptions) -> Result<Observed> {
    let mut o = Observed {
        mixing: 0.0,
        mixing_jac: 0.0,
        bias: 0.0,
        bias_jac: 0.0,
        cross: 0.0,
        cross_jac: 0.0,
        flow: 0.0,
        flow_jac: 0.0,
        mixing_res: 0.0,
        bias_res: 0.0,
        cross_res: 0.0,
        hessian: 0.0,
        third: 0.0,
    };
    if n.mixing || n.mixing_jac {
        let s = solve_mixing_map(p, x, y, v, fp, opts)?;
        o.mixing = (&s.v_prime - v).norm();
        o.mixing_res = o.mixing_res.max(s.residual);
        if n.mixing_jac {
            let (j, r) = map_jacobian(|w| solve_mixing_map(p, x, y, w, fp, opts), v)?;
            o.mixing_jac = jacobian_deviation(&j);
            o.mixing_res = o.mixing_res.max(r);
        }
    }
    if n.bias || n.bias_jac {
        let s = solve_bias_map(p, x, v, fp, opts)?;
        o.bias = (&s.v_prime - v).norm();
        o.bias_res = o.bias_res.max(s.residual);
        if n.bias_jac {
            let (j, r) = map_jacobian(|w| solve_bias_map(p, x, w, fp, opts), v)?;
            o.bias_jac = jacobian_deviation(&j);
            o.bias_res = o.bias_res.max(r);
        }
    }
    if n.cross || n.cross_jac {
        let s = solve_cross_map(p, x, y, v, fp, CrossMethod::Shooting, opts)?;
        o.cross = (&s.v_prime - v).norm();
        o.cross_res = o.cross_res.max(s.residual);
        if n.cross_jac {
            let (j, r) = map_jacobian(|w| solve_cross_map(p, x, y, w, fp, CrossMethod::Shooting, opts), v)?;
            o.cross_jac = jacobian_deviation(&j);
            o.cross_res = o.cross_res.max(r);
        }
    }
    if n.flow || n.flow_jac {
        let z = PhasePoint {
            x: x.clone(),
            v: v.clone(),
        };
        (o.flow, o.flow_jac) = flow_errors(p, &z, fp, n)?;
    }
    (o.hessian, o.third) = smoothness_probe(p, x, u);
    let (hy, ty) = smoothness_probe(p, y, u);
    o.hessian = o.hessian.max(hy);
    o.third = o.third.max(ty);
    Ok(o)
}

fn lhs(lemma: LemmaId, o: &Observed) -> f64 {
    match lemma {
        LemmaId::MixingDisplacement => o.mixing,
        LemmaId::MixingJacobian => o.mixing_jac,
        LemmaId::CrossDisplacement | LemmaId::CrossDisplacementFirstOrder => o.cross,
        LemmaId::CrossJacobian | LemmaId::CrossJacobianFirstOrder => o.cross_jac,
        LemmaId::BiasDisplacement | LemmaId::BiasDisplacementFirstOrder => o.bias,
        LemmaId::BiasJacobian | LemmaId::BiasJacobianFirstOrder => o.bias_jac,
        LemmaId::FlowErrorFirstOrder | LemmaId::FlowErrorSecondOrder => o.flow,
        LemmaId::FlowJacobianErrorFirstOrder => o.flow_jac,
    }
}

/// Worst endpoint residual of the map solves behind `lemma` (0 for the flow estimates).
fn residual(lemma: LemmaId, o: &Observed) -> f64 {
    match lemma {
        LemmaId::MixingDisplacement | LemmaId::MixingJacobian => o.mixing_res,
        LemmaId::CrossDisplacement
        | LemmaId::CrossDisplacementFirstOrder
        | LemmaId::CrossJacobian
        | LemmaId::CrossJacobianFirstOrder => o.cross_res,
        LemmaId::BiasDisplacement
        | LemmaId::BiasDisplacementFirstOrder
        | LemmaId::BiasJacobian
        | LemmaId::BiasJacobianFirstOrder => o.bias_res,
        LemmaId::FlowErrorFirstOrder | LemmaId::FlowErrorSecondOrder | LemmaId::FlowJacobianErrorFirstOrder => 0.0,
    }
}

fn draw(cfg: &SamplerConfig, d: usize, i: usize) -> (DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>) {
    let mut rng = RngStream::new(cfg.seed, 0).split(i as u64);
    let x = rng.normal_vec(d) * cfg.x_scale;
    let y = if cfg.coincident {
        x.clone()
    } else {
        rng.normal_vec(d) * cfg.x_scale
    };
    let v = rng.normal_vec(d) * cfg.v_scale;
    let mut u = rng.normal_vec(d);
    let nu = u.norm();
    if nu > 0.0 {
        u /= nu;
    }
    (x, y, v, u)
}

/// Relative slack allowed on the smoothness probes.
const SMOOTHNESS_SLACK: f64 = 1e-6;
const THIRD_DERIVATIVE_SLACK: f64 = 1e-4;

/// Checks several estimates on one shared set of samples and solves.
pub fn verify_regularity_suite(lemmas: &[LemmaId], p: &Potential, fp: &FlowParams, cfg: &SamplerConfig) -> Result<Vec<RegularityReport>> {
    if cfg.x_scale < 0.0 || cfg.v_scale < 0.0 || !cfg.x_scale.is_finite() || !cfg.v_scale.is_finite() {
        return Err(Error::InvalidParameter("sampler scales must be finite and ≥ 0".into()));
    }
    let d = p.dim();
    let n = needs(lemmas);
    let opts = NewtonOptions::default();
    let observed: Vec<Result<(DVector<f64>, DVector<f64>, DVector<f64>, Observed)>> = (0..cfg.samples)
        .into_par_iter()
        .map(|i| {
            let (x, y, v, u) = draw(cfg, d, i);
            let o = observe(p, fp, &x, &y, &v, &u, &n, &opts)?;
            Ok((x, y, v, o))
        })
        .collect();
    let observed: Vec<_> = observed.into_iter().collect::<Result<_>>()?;

    let s = p.smoothness();
    let b = BoundParams::new(s, d, fp.t(), fp.h());
    let hessian = observed.iter().map(|o| o.3.hessian).fold(0.0, f64::max);
    let third = observed.iter().map(|o| o.3.third).fold(0.0, f64::max);
    let hessian_ratio = if s.l > 0.0 {
        hessian / s.l
    } else if hessian > SMOOTHNESS_SLACK {
        f64::INFINITY
    } else {
        0.0
    };
    let third_derivative_ratio = if s.m > 0.0 {
        third / s.m
    } else if third > THIRD_DERIVATIVE_SLACK {
        f64::INFINITY
    } else {
        0.0
    };

    Ok(lemmas
        .iter()
        .map(|&lemma| {
            let mut max_ratio = 0.0f64;
            let mut worst = None;
            let mut violating = None;
            for (i, (x, y, v, o)) in observed.iter().enumerate() {
                let l = lhs(lemma, o);
                let r = lemma.rhs(&b, x, y, v);
                let ratio = regularity_ratio(lemma, l, r);
                let sample = || Sample {
                    index: i,
                    x: x.clone(),
                    y: y.clone(),
                    v: v.clone(),
                    lhs: l,
                    rhs: r,
                };
                if ratio > max_ratio || worst.is_none() {
                    max_ratio = max_ratio.max(ratio);
                    worst = Some(sample());
                }
                if ratio > 1.0 && violating.is_none() {
                    violating = Some(sample());
                }
            }
            let worst_residual = observed.iter().map(|o| residual(lemma, &o.3)).fold(0.0, f64::max);
            let step_load = b.step_load();
            let step_limit = lemma.step_condition();
            RegularityReport {
                lemma,
                samples: cfg.samples,
                max_ratio,
                worst,
                violating,
                worst_residual,
                step_load,
                step_limit,
                hessian_ratio,
                third_derivative_ratio,
                preconditions_hold: step_load <= step_limit
                    && hessian_ratio <= 1.0 + SMOOTHNESS_SLACK
                    && third_derivative_ratio <= 1.0 + THIRD_DERIVATIVE_SLACK,
            }
        })
        .collect())
}

/// Checks one estimate; see [`verify_regularity_suite`].
pub fn verify_regularity(lemma: LemmaId, p: &Potential, fp: &FlowParams, cfg: &SamplerConfig) -> Result<RegularityReport> {
    Ok(verify_regularity_suite(&[lemma], p, fp, cfg)?.remove(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn v1(a: f64) -> DVector<f64> {
        DVector::from_vec(vec![a])
    }

    fn harmonic() -> Potential {
        Potential::quadratic(&[1.0]).unwrap()
    }

    #[test]
    fn mixing_map_examples() {
        let p = harmonic();
        let fp = FlowParams::new(0.1, 0.1).unwrap();
        let o = NewtonOptions::default();
        let same = solve_mixing_map(&p, &v1(0.4), &v1(0.4), &v1(-0.3), &fp, &o).unwrap();
        assert_eq!(same.v_prime, v1(-0.3));
        assert_eq!(same.residual, 0.0);
        let s = solve_mixing_map(&p, &v1(1.0), &v1(0.9), &v1(0.0), &fp, &o).unwrap();
        assert_abs_diff_eq!(s.v_prime[0], 0.995, epsilon = 1e-12);
        assert!(s.v_prime[0] <= 1.5);
        assert!(s.residual < 1e-14);
    }

    #[test]
    fn bias_map_examples() {
        let p = harmonic();
        let fp = FlowParams::new(0.1, 0.1).unwrap();
        let o = NewtonOptions::default();
        let s = solve_bias_map(&p, &v1(1.0), &v1(0.0), &fp, &o).unwrap();
        let expected = (0.995 - 0.1f64.cos()) / 0.1f64.sin();
        assert_abs_diff_eq!(s.v_prime[0], expected, epsilon = 1e-13);
        assert_abs_diff_eq!(s.v_prime[0], -4.172e-5, epsilon = 1e-8);
        assert!(s.v_prime[0].abs() <= 0.2);
        assert!(s.v_prime[0].abs() <= 1.4 * 0.1 * (7.0 / 36.0));
        let exact = FlowParams::exact(0.1).unwrap();
        assert_eq!(solve_bias_map(&p, &v1(1.0), &v1(0.7), &exact, &o).unwrap().v_prime, v1(0.7));
    }

    #[test]
    fn cross_map_constructions_agree() {
        let p = harmonic();
        let fp = FlowParams::new(0.1, 0.1).unwrap();
        let o = NewtonOptions::default();
        let (x, y, v) = (v1(1.0), v1(0.9), v1(0.0));
        let a = solve_cross_map(&p, &x, &y, &v, &fp, CrossMethod::Composition, &o).unwrap();
        let b = solve_cross_map(&p, &x, &y, &v, &fp, CrossMethod::Shooting, &o).unwrap();
        assert!((a.v_prime[0] - b.v_prime[0]).abs() < 1e-10);
        let same = solve_cross_map(&p, &x, &x, &v, &fp, CrossMethod::Shooting, &o).unwrap();
        let bias = solve_bias_map(&p, &x, &v, &fp, &o).unwrap();
        assert_abs_diff_eq!(same.v_prime[0], bias.v_prime[0], epsilon = 1e-14);
        let exact = FlowParams::exact(0.1).unwrap();
        let c = solve_cross_map(&p, &x, &y, &v, &exact, CrossMethod::Shooting, &o).unwrap();
        let m = solve_mixing_map(&p, &x, &y, &v, &exact, &o).unwrap();
        assert_abs_diff_eq!(c.v_prime[0], m.v_prime[0], epsilon = 1e-12);
    }

    #[test]
    fn newton_converges_on_log_cosh() {
        let p = Potential::log_cosh(3, 0.5).unwrap();
        let fp = FlowParams::new(0.2, 0.02).unwrap();
        let o = NewtonOptions::default();
        let x = DVector::from_vec(vec![1.2, -0.4, 2.0]);
        let y = DVector::from_vec(vec![-0.3, 0.8, 1.1]);
        let v = DVector::from_vec(vec![0.5, -1.5, 0.2]);
        let target = flow_position(&p, &x, &v, &fp).unwrap();
        let mix = solve_mixing_map(&p, &x, &y, &v, &fp, &o).unwrap();
        assert!(mix.residual <= 1e-10);
        assert!((flow_position(&p, &y, &mix.v_prime, &fp).unwrap() - &target).norm() <= 1e-10);
        let bias = solve_bias_map(&p, &x, &v, &fp, &o).unwrap();
        assert!(bias.residual <= 1e-10);
        let a = solve_cross_map(&p, &x, &y, &v, &fp, CrossMethod::Composition, &o).unwrap();
        let b = solve_cross_map(&p, &x, &y, &v, &fp, CrossMethod::Shooting, &o).unwrap();
        assert!((a.v_prime - b.v_prime).norm() <= 1e-9);
    }

    #[test]
    fn map_jacobian_matches_implicit_formula() {
        // ∇φ = (∂_v q̃(y, φ))⁻¹ ∂_v q̃(x, v).
        let p = Potential::log_cosh(2, 0.5).unwrap();
        let fp = FlowParams::new(0.2, 0.05).unwrap();
        let o = NewtonOptions::default();
        let x = DVector::from_vec(vec![0.7, -1.1]);
        let y = DVector::from_vec(vec![-0.2, 0.4]);
        let v = DVector::from_vec(vec![1.0, 0.3]);
        let s = solve_mixing_map(&p, &x, &y, &v, &fp, &o).unwrap();
        let (fd, _) = map_jacobian(|w| solve_mixing_map(&p, &x, &y, w, &fp, &o), &v).unwrap();
        let jx = velocity_jacobian(&p, &PhasePoint { x: x.clone(), v: v.clone() }, &fp).unwrap();
        let jy = velocity_jacobian(&p, &PhasePoint { x: y.clone(), v: s.v_prime }, &fp).unwrap();
        let implicit = jy.lu().solve(&jx).unwrap();
        assert!((fd - implicit).norm() < 1e-6);
    }

    #[test]
    fn regularity_on_quadratic() {
        let p = harmonic();
        let fp = FlowParams::new(0.1, 0.1).unwrap();
        // x = 1, y = 0.9, v = 0 gives the ratio 0.995/1.5.
        let b = BoundParams::new(p.smoothness(), 1, 0.1, 0.1);
        let s = solve_mixing_map(&p, &v1(1.0), &v1(0.9), &v1(0.0), &fp, &NewtonOptions::default()).unwrap();
        let r = LemmaId::MixingDisplacement.rhs(&b, &v1(1.0), &v1(0.9), &v1(0.0));
        assert_abs_diff_eq!(regularity_ratio(LemmaId::MixingDisplacement, s.v_prime[0], r), 0.995 / 1.5, epsilon = 1e-12);

        let cfg = SamplerConfig::new(200, 7);
        let reports = verify_regularity_suite(&LemmaId::ALL, &p, &fp, &cfg).unwrap();
        for r in &reports {
            assert!(r.passed(), "{} ratio {}", r.lemma, r.max_ratio);
        }
        let coincident = SamplerConfig {
            coincident: true,
            ..cfg
        };
        let r = verify_regularity(LemmaId::MixingDisplacement, &p, &fp, &coincident).unwrap();
        assert_eq!(r.max_ratio, 0.0);
    }

    #[test]
    fn regularity_on_log_cosh() {
        let p = Potential::log_cosh(2, 0.5).unwrap();
        let fp = FlowParams::new(0.2, 0.02).unwrap();
        let reports = verify_regularity_suite(&LemmaId::ALL, &p, &fp, &SamplerConfig::new(40, 3)).unwrap();
        for r in &reports {
            assert!(r.passed(), "{} ratio {} pre {}", r.lemma, r.max_ratio, r.preconditions_hold);
            assert!(r.worst_residual <= 1e-10);
        }
    }

    #[test]
    fn halved_curvature_metadata_is_detected() {
        let p = Potential::log_cosh(2, 0.5).unwrap();
        let mut s = p.smoothness();
        s.l *= 0.5;
        let p = p.with_smoothness(s);
        let fp = FlowParams::new(0.2, 0.02).unwrap();
        let r = verify_regularity(LemmaId::MixingDisplacement, &p, &fp, &SamplerConfig::new(20, 1)).unwrap();
        assert!(r.hessian_ratio > 1.0);
        assert!(!r.preconditions_hold);
        assert!(!r.passed());
    }

    #[test]
    fn lemma_ids_round_trip() {
        for l in LemmaId::ALL {
            assert_eq!(LemmaId::parse(l.as_str()), Some(l));
        }
        assert_eq!(LemmaId::parse("nope"), None);
    }

    #[test]
    fn zero_samples_is_not_a_pass() {
        let p = harmonic();
        let fp = FlowParams::new(0.1, 0.05).unwrap();
        let r = verify_regularity(LemmaId::MixingJacobian, &p, &fp, &SamplerConfig::new(0, 1)).unwrap();
        assert_eq!(r.samples, 0);
        assert!(!r.passed());
    }
}
