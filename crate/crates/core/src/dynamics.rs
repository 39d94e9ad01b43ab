//! Hamiltonian flows with unit mass: the velocity Verlet discretisation, the
//! exact flow, and derivatives of the position output in the initial velocity.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::ode::{dopri5_at, OdeOptions};
use crate::potential::{Potential, PotentialKind};

/// Largest `L T²` for which the HMC kernels are considered stable.
pub const HMC_STABILITY_LIMIT: f64 = 0.4 * std::f64::consts::PI * std::f64::consts::PI;
/// Ceiling on `L (T² + T h)` under which the coupling maps are near-identity.
pub const COUPLING_REGIME_LIMIT: f64 = 1.0 / 12.0;
/// Energy drift allowed for the adaptive exact flow, relative to `max(1, |H|)`.
pub const ENERGY_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct PhasePoint {
    pub x: DVector<f64>,
    pub v: DVector<f64>,
}

impl PhasePoint {
    pub fn new(x: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        check_dim(x.len(), v.len())?;
        Ok(Self { x, v })
    }

    pub fn from_slices(x: &[f64], v: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(x), DVector::from_column_slice(v))
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    /// `(x, -v)`, the time-reversal involution.
    pub fn flip(&self) -> Self {
        Self {
            x: self.x.clone(),
            v: -&self.v,
        }
    }
}

/// Integration time `T` and step `h`; `h = 0` denotes the exact flow.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FlowParams {
    t: f64,
    h: f64,
    steps: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StabilityFlags {
    /// `L T² ≤ 2π²/5`.
    pub hmc_stable: bool,
    /// `L (T² + T h) ≤ 1/12`.
    pub coupling_regime: bool,
}

impl FlowParams {
    pub fn new(t: f64, h: f64) -> Result<Self> {
        if !t.is_finite() || t <= 0.0 {
            return Err(Error::InvalidParameter(format!("integration time must be > 0, got {t}")));
        }
        if !h.is_finite() || h < 0.0 {
            return Err(Error::InvalidParameter(format!("step size must be ≥ 0, got {h}")));
        }
        if h == 0.0 {
            return Ok(Self { t, h, steps: 0 });
        }
        let ratio = t / h;
        let n = ratio.round();
        if n < 1.0 || (ratio - n).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::StepDoesNotDivide { t, h });
        }
        Ok(Self {
            t,
            h,
            steps: n as usize,
        })
    }

    pub fn exact(t: f64) -> Result<Self> {
        Self::new(t, 0.0)
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Number of Verlet steps `T/h` (0 for the exact flow).
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn is_exact(&self) -> bool {
        self.steps == 0
    }

    /// The same integration time with the exact flow.
    pub fn to_exact(&self) -> Self {
        Self {
            t: self.t,
            h: 0.0,
            steps: 0,
        }
    }

    pub fn stability(&self, l: f64) -> StabilityFlags {
        StabilityFlags {
            hmc_stable: l * self.t * self.t <= HMC_STABILITY_LIMIT,
            coupling_regime: l * (self.t * self.t + self.t * self.h) <= COUPLING_REGIME_LIMIT,
        }
    }
}

pub fn hamiltonian(p: &Potential, z: &PhasePoint) -> f64 {
    p.value(&z.x) + 0.5 * z.v.norm_squared()
}

fn check_finite(v: &DVector<f64>, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

fn verlet_impl(p: &Potential, z: &PhasePoint, fp: &FlowParams, mut record: impl FnMut(&DVector<f64>)) -> Result<PhasePoint> {
    if fp.is_exact() {
        return Err(Error::InvalidParameter("Verlet flow needs h > 0".into()));
    }
    p.check_point(&z.x)?;
    check_dim(z.x.len(), z.v.len())?;
    let h = fp.h;
    let mut x = z.x.clone();
    let mut v = z.v.clone();
    let mut g = p.grad(&x);
    let mut g_new = g.clone();
    check_finite(&g, "gradient")?;
    for _ in 0..fp.steps {
        x.axpy(h, &v, 1.0);
        x.axpy(-0.5 * h * h, &g, 1.0);
        p.grad_into(&x, &mut g_new);
        check_finite(&g_new, "gradient")?;
        v.axpy(-0.5 * h, &g, 1.0);
        v.axpy(-0.5 * h, &g_new, 1.0);
        std::mem::swap(&mut g, &mut g_new);
        record(&x);
    }
    Ok(PhasePoint { x, v })
}

/// `T/h` velocity Verlet steps:
/// `x' = x + hv - (h²/2)∇f(x)`, `v' = v - (h/2)(∇f(x) + ∇f(x'))`.
pub fn verlet_flow(p: &Potential, z: &PhasePoint, fp: &FlowParams) -> Result<PhasePoint> {
    verlet_impl(p, z, fp, |_| {})
}

/// Positions at every grid time `h, 2h, …, T`.
pub fn verlet_positions(p: &Potential, z: &PhasePoint, fp: &FlowParams) -> Result<Vec<DVector<f64>>> {
    let mut out = Vec::with_capacity(fp.steps);
    verlet_impl(p, z, fp, |x| out.push(x.clone()))?;
    Ok(out)
}

fn quadratic_rotation(omega2: &DVector<f64>, z: &PhasePoint, t: f64) -> PhasePoint {
    let d = z.dim();
    let mut x = DVector::zeros(d);
    let mut v = DVector::zeros(d);
    for i in 0..d {
        let w = omega2[i].sqrt();
        if w == 0.0 {
            x[i] = z.x[i] + t * z.v[i];
            v[i] = z.v[i];
        } else {
            let (s, c) = (w * t).sin_cos();
            x[i] = z.x[i] * c + z.v[i] * s / w;
            v[i] = -z.x[i] * w * s + z.v[i] * c;
        }
    }
    PhasePoint { x, v }
}

fn hamilton_rhs(p: &Potential, d: usize) -> impl FnMut(f64, &[f64], &mut [f64]) + '_ {
    let mut x = DVector::zeros(d);
    let mut g = DVector::zeros(d);
    move |_, y, dy| {
        x.as_mut_slice().copy_from_slice(&y[..d]);
        p.grad_into(&x, &mut g);
        dy[..d].copy_from_slice(&y[d..]);
        for i in 0..d {
            dy[d + i] = -g[i];
        }
    }
}

fn split_state(y: &[f64], d: usize) -> PhasePoint {
    PhasePoint {
        x: DVector::from_column_slice(&y[..d]),
        v: DVector::from_column_slice(&y[d..2 * d]),
    }
}

/// States of the exact flow at the increasing `times`.
pub fn exact_trajectory(p: &Potential, z: &PhasePoint, times: &[f64]) -> Result<Vec<PhasePoint>> {
    p.check_point(&z.x)?;
    check_dim(z.x.len(), z.v.len())?;
    if let Some(omega2) = p.omega2() {
        return Ok(times.iter().map(|&t| quadratic_rotation(omega2, z, t)).collect());
    }
    let d = z.dim();
    let mut y0 = z.x.as_slice().to_vec();
    y0.extend_from_slice(z.v.as_slice());
    let states = dopri5_at(hamilton_rhs(p, d), 0.0, &y0, times, OdeOptions::default())?;
    let h0 = hamiltonian(p, z);
    let out: Vec<PhasePoint> = states.iter().map(|y| split_state(y, d)).collect();
    for (zt, t) in out.iter().zip(times) {
        let drift = (hamiltonian(p, zt) - h0).abs();
        if drift > ENERGY_TOLERANCE * h0.abs().max(1.0) {
            return Err(Error::ExactFlow(format!(
                "energy drift {drift:e} at t = {t} exceeds tolerance"
            )));
        }
    }
    Ok(out)
}

/// The exact Hamiltonian flow for time `t`: closed-form rotation for
/// quadratic potentials, a certified Dormand–Prince solve otherwise.
pub fn exact_flow(p: &Potential, z: &PhasePoint, t: f64) -> Result<PhasePoint> {
    if !t.is_finite() || t <= 0.0 {
        return Err(Error::InvalidParameter(format!("integration time must be > 0, got {t}")));
    }
    Ok(exact_trajectory(p, z, &[t])?.remove(0))
}

/// Verlet for `h > 0`, exact flow for `h = 0`.
pub fn flow(p: &Potential, z: &PhasePoint, fp: &FlowParams) -> Result<PhasePoint> {
    if fp.is_exact() {
        exact_flow(p, z, fp.t)
    } else {
        verlet_flow(p, z, fp)
    }
}

/// Position output of [`flow`].
pub fn flow_position(p: &Potential, x: &DVector<f64>, v: &DVector<f64>, fp: &FlowParams) -> Result<DVector<f64>> {
    let z = PhasePoint {
        x: x.clone(),
        v: v.clone(),
    };
    Ok(flow(p, &z, fp)?.x)
}

/// Product of `n` one-step Verlet matrices for `x'' = -ω² x`, by repeated squaring.
pub fn verlet_matrix_power(omega2: f64, h: f64, n: usize) -> [[f64; 2]; 2] {
    let hw = h * h * omega2;
    let step = [[1.0 - 0.5 * hw, h], [-h * omega2 * (1.0 - 0.25 * hw), 1.0 - 0.5 * hw]];
    mat_pow(step, n)
}

fn mat_mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    [
        [
            a[0][0] * b[0][0] + a[0][1] * b[1][0],
            a[0][0] * b[0][1] + a[0][1] * b[1][1],
        ],
        [
            a[1][0] * b[0][0] + a[1][1] * b[1][0],
            a[1][0] * b[0][1] + a[1][1] * b[1][1],
        ],
    ]
}

fn mat_pow(mut base: [[f64; 2]; 2], mut n: usize) -> [[f64; 2]; 2] {
    let mut acc = [[1.0, 0.0], [0.0, 1.0]];
    while n > 0 {
        if n & 1 == 1 {
            acc = mat_mul(acc, base);
        }
        base = mat_mul(base, base);
        n >>= 1;
    }
    acc
}

/// Phase-space matrix of the linear flow on one coordinate with frequency² `omega2`.
pub fn quadratic_flow_matrix(omega2: f64, fp: &FlowParams) -> [[f64; 2]; 2] {
    if fp.is_exact() {
        let w = omega2.sqrt();
        if w == 0.0 {
            [[1.0, fp.t], [0.0, 1.0]]
        } else {
            let (s, c) = (w * fp.t).sin_cos();
            [[c, s / w], [-w * s, c]]
        }
    } else {
        verlet_matrix_power(omega2, fp.h, fp.steps)
    }
}

/// Finite-difference step used by [`flow_jacobian_v`].
pub fn fd_step(v: &DVector<f64>) -> f64 {
    1e-5 * v.norm().max(1.0)
}

/// `∂x_T/∂v`: analytic for quadratic potentials, central differences otherwise.
pub fn flow_jacobian_v(p: &Potential, z: &PhasePoint, fp: &FlowParams) -> Result<DMatrix<f64>> {
    p.check_point(&z.x)?;
    check_dim(z.x.len(), z.v.len())?;
    let d = z.dim();
    if let Some(omega2) = p.omega2() {
        let diag = DVector::from_fn(d, |i, _| quadratic_flow_matrix(omega2[i], fp)[0][1]);
        return Ok(DMatrix::from_diagonal(&diag));
    }
    let eps = fd_step(&z.v);
    let mut jac = DMatrix::zeros(d, d);
    let mut zp = z.clone();
    for j in 0..d {
        zp.v[j] = z.v[j] + eps;
        let plus = flow(p, &zp, fp)?.x;
        zp.v[j] = z.v[j] - eps;
        let minus = flow(p, &zp, fp)?.x;
        zp.v[j] = z.v[j];
        jac.set_column(j, &((plus - minus) / (2.0 * eps)));
    }
    Ok(jac)
}

/// Flow together with its linearisation applied to the phase-space
/// direction `dz` (tangent propagation through the Hessian).
pub fn tangent_flow(p: &Potential, z: &PhasePoint, dz: &PhasePoint, fp: &FlowParams) -> Result<(PhasePoint, PhasePoint)> {
    check_dim(z.dim(), dz.dim())?;
    let d = z.dim();
    if fp.is_exact() {
        let mut y0 = Vec::with_capacity(4 * d);
        y0.extend_from_slice(z.x.as_slice());
        y0.extend_from_slice(z.v.as_slice());
        y0.extend_from_slice(dz.x.as_slice());
        y0.extend_from_slice(dz.v.as_slice());
        let mut x = DVector::zeros(d);
        let mut g = DVector::zeros(d);
        let rhs = |_: f64, y: &[f64], dy: &mut [f64]| {
            x.as_mut_slice().copy_from_slice(&y[..d]);
            p.grad_into(&x, &mut g);
            let hess = p.hessian(&x);
            let dx = DVector::from_column_slice(&y[2 * d..3 * d]);
            let hdx = hess * dx;
            for i in 0..d {
                dy[i] = y[d + i];
                dy[d + i] = -g[i];
                dy[2 * d + i] = y[3 * d + i];
                dy[3 * d + i] = -hdx[i];
            }
        };
        let y = dopri5_at(rhs, 0.0, &y0, &[fp.t], OdeOptions::default())?.remove(0);
        return Ok((split_state(&y[..2 * d], d), split_state(&y[2 * d..], d)));
    }
    let h = fp.h;
    let (mut x, mut v) = (z.x.clone(), z.v.clone());
    let (mut dx, mut dv) = (dz.x.clone(), dz.v.clone());
    let mut g = p.grad(&x);
    let mut hdx = p.hessian(&x) * &dx;
    for _ in 0..fp.steps {
        x += h * &v - 0.5 * h * h * &g;
        dx += h * &dv - 0.5 * h * h * &hdx;
        let g_new = p.grad(&x);
        let hdx_new = p.hessian(&x) * &dx;
        check_finite(&g_new, "gradient")?;
        v -= 0.5 * h * (&g + &g_new);
        dv -= 0.5 * h * (&hdx + &hdx_new);
        g = g_new;
        hdx = hdx_new;
    }
    Ok((PhasePoint { x, v }, PhasePoint { x: dx, v: dv }))
}

/// Full `2d × 2d` Jacobian `∂(x_T, v_T)/∂(x_0, v_0)` by tangent propagation.
pub fn phase_jacobian(p: &Potential, z: &PhasePoint, fp: &FlowParams) -> Result<DMatrix<f64>> {
    let d = z.dim();
    let mut jac = DMatrix::zeros(2 * d, 2 * d);
    for j in 0..2 * d {
        let mut e = PhasePoint {
            x: DVector::zeros(d),
            v: DVector::zeros(d),
        };
        if j < d {
            e.x[j] = 1.0;
        } else {
            e.v[j - d] = 1.0;
        }
        let (_, dz) = tangent_flow(p, z, &e, fp)?;
        for i in 0..d {
            jac[(i, j)] = dz.x[i];
            jac[(d + i, j)] = dz.v[i];
        }
    }
    Ok(jac)
}

/// `∂x_s/∂v` of the Verlet flow at every grid time `s = h, 2h, …, T`.
pub fn verlet_velocity_jacobians(p: &Potential, z: &PhasePoint, fp: &FlowParams) -> Result<Vec<DMatrix<f64>>> {
    if fp.is_exact() {
        return Err(Error::InvalidParameter("Verlet flow needs h > 0".into()));
    }
    let d = z.dim();
    let h = fp.h;
    let mut x = z.x.clone();
    let mut v = z.v.clone();
    let mut jx = DMatrix::zeros(d, d);
    let mut jv = DMatrix::identity(d, d);
    let mut g = p.grad(&x);
    let mut hjx = p.hessian(&x) * &jx;
    let mut out = Vec::with_capacity(fp.steps);
    for _ in 0..fp.steps {
        x += h * &v - 0.5 * h * h * &g;
        jx += h * &jv - 0.5 * h * h * &hjx;
        let g_new = p.grad(&x);
        check_finite(&g_new, "gradient")?;
        let hjx_new = p.hessian(&x) * &jx;
        v -= 0.5 * h * (&g + &g_new);
        jv -= 0.5 * h * (&hjx + &hjx_new);
        g = g_new;
        hjx = hjx_new;
        out.push(jx.clone());
    }
    Ok(out)
}

/// `∂x_s/∂v` of the exact flow at the increasing `times`, from the
/// variational equations.
pub fn exact_velocity_jacobians(p: &Potential, z: &PhasePoint, times: &[f64]) -> Result<Vec<DMatrix<f64>>> {
    let d = z.dim();
    if let Some(omega2) = p.omega2() {
        return Ok(times
            .iter()
            .map(|&t| {
                let fp = FlowParams { t, h: 0.0, steps: 0 };
                DMatrix::from_diagonal(&DVector::from_fn(d, |i, _| quadratic_flow_matrix(omega2[i], &fp)[0][1]))
            })
            .collect());
    }
    // State layout: x, v, then the column-major blocks ∂x/∂v and ∂v/∂v.
    let mut y0 = Vec::with_capacity(2 * d + 2 * d * d);
    y0.extend_from_slice(z.x.as_slice());
    y0.extend_from_slice(z.v.as_slice());
    y0.extend(std::iter::repeat_n(0.0, d * d));
    y0.extend_from_slice(DMatrix::<f64>::identity(d, d).as_slice());
    let mut x = DVector::zeros(d);
    let mut g = DVector::zeros(d);
    let rhs = |_: f64, y: &[f64], dy: &mut [f64]| {
        x.as_mut_slice().copy_from_slice(&y[..d]);
        p.grad_into(&x, &mut g);
        let hess = p.hessian(&x);
        let jx = DMatrix::from_column_slice(d, d, &y[2 * d..2 * d + d * d]);
        let hjx = hess * jx;
        for i in 0..d {
            dy[i] = y[d + i];
            dy[d + i] = -g[i];
        }
        let (jx_dot, jv_dot) = dy[2 * d..].split_at_mut(d * d);
        jx_dot.copy_from_slice(&y[2 * d + d * d..]);
        for (o, hv) in jv_dot.iter_mut().zip(hjx.iter()) {
            *o = -hv;
        }
    };
    let states = dopri5_at(rhs, 0.0, &y0, times, OdeOptions::default())?;
    Ok(states
        .iter()
        .map(|y| DMatrix::from_column_slice(d, d, &y[2 * d..2 * d + d * d]))
        .collect())
}

/// Grid times `h, 2h, …, T` of a discretised flow.
pub fn grid_times(fp: &FlowParams) -> Vec<f64> {
    (1..=fp.steps).map(|i| fp.t * i as f64 / fp.steps as f64).collect()
}

/// Whether a potential admits the closed-form quadratic paths.
pub fn is_quadratic(p: &Potential) -> bool {
    p.kind() == PotentialKind::Quadratic
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn harmonic() -> Potential {
        Potential::quadratic(&[1.0]).unwrap()
    }

    #[test]
    fn single_verlet_step() {
        let z = PhasePoint::from_slices(&[1.0], &[0.0]).unwrap();
        let out = verlet_flow(&harmonic(), &z, &FlowParams::new(0.1, 0.1).unwrap()).unwrap();
        assert_abs_diff_eq!(out.x[0], 0.995, epsilon = 1e-15);
        assert_abs_diff_eq!(out.v[0], -0.09975, epsilon = 1e-15);
    }

    #[test]
    fn free_flight() {
        let p = Potential::free(2).unwrap();
        let z = PhasePoint::from_slices(&[1.0, -2.0], &[0.5, 3.0]).unwrap();
        let out = verlet_flow(&p, &z, &FlowParams::new(1.5, 0.25).unwrap()).unwrap();
        assert_abs_diff_eq!(out.x[0], 1.75, epsilon = 1e-14);
        assert_abs_diff_eq!(out.x[1], 2.5, epsilon = 1e-14);
        assert_eq!(out.v, z.v);
    }

    #[test]
    fn verlet_error_is_second_order() {
        let z = PhasePoint::from_slices(&[1.0], &[0.0]).unwrap();
        let err = |h: f64| {
            let out = verlet_flow(&harmonic(), &z, &FlowParams::new(0.1, h).unwrap()).unwrap();
            (out.x[0] - 0.1f64.cos()).abs()
        };
        let ratio = err(0.1) / err(0.05);
        assert!((ratio - 4.0).abs() < 0.05, "ratio {ratio}");
    }

    #[test]
    fn quarter_and_half_rotations() {
        let p = harmonic();
        let out = exact_flow(&p, &PhasePoint::from_slices(&[1.0], &[0.0]).unwrap(), std::f64::consts::FRAC_PI_2).unwrap();
        assert_abs_diff_eq!(out.x[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.v[0], -1.0, epsilon = 1e-15);
        let out = exact_flow(&p, &PhasePoint::from_slices(&[0.0], &[1.0]).unwrap(), std::f64::consts::PI).unwrap();
        assert_abs_diff_eq!(out.x[0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(out.v[0], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn adaptive_flow_agrees_with_rotation_on_a_quadratic() {
        // Run the generic solver through a log-cosh potential with c = 0 (pure quadratic).
        let p = Potential::log_cosh(2, 0.0).unwrap();
        let z = PhasePoint::from_slices(&[0.3, -1.2], &[0.8, 0.1]).unwrap();
        let out = exact_flow(&p, &z, 0.7).unwrap();
        let reference = exact_flow(&Potential::quadratic(&[1.0, 1.0]).unwrap(), &z, 0.7).unwrap();
        assert!((out.x - reference.x).norm() < 1e-11);
        assert!((out.v - reference.v).norm() < 1e-11);
    }

    #[test]
    fn exact_flow_conserves_energy() {
        let p = Potential::log_cosh(3, 0.5).unwrap();
        let z = PhasePoint::from_slices(&[1.0, -0.4, 2.0], &[0.3, 1.1, -0.7]).unwrap();
        let out = exact_flow(&p, &z, 0.25).unwrap();
        assert!((hamiltonian(&p, &out) - hamiltonian(&p, &z)).abs() <= 1e-10);
    }

    #[test]
    fn jacobian_examples() {
        let p = harmonic();
        let z = PhasePoint::from_slices(&[0.2], &[0.4]).unwrap();
        let j = flow_jacobian_v(&p, &z, &FlowParams::exact(0.3).unwrap()).unwrap();
        assert_abs_diff_eq!(j[(0, 0)], 0.3f64.sin(), epsilon = 1e-15);
        let j = flow_jacobian_v(&p, &z, &FlowParams::new(0.3, 0.3).unwrap()).unwrap();
        assert_abs_diff_eq!(j[(0, 0)], 0.3, epsilon = 1e-15);
    }

    #[test]
    fn finite_difference_jacobian_matches_tangent_probe() {
        let p = Potential::log_cosh(2, 0.5).unwrap();
        let z = PhasePoint::from_slices(&[0.7, -1.1], &[0.4, 0.9]).unwrap();
        for fp in [FlowParams::new(0.2, 0.05).unwrap(), FlowParams::exact(0.2).unwrap()] {
            let jac = flow_jacobian_v(&p, &z, &fp).unwrap();
            let dir = PhasePoint::from_slices(&[0.0, 0.0], &[0.6, -0.8]).unwrap();
            let (_, dz) = tangent_flow(&p, &z, &dir, &fp).unwrap();
            let fd = &jac * &dir.v;
            assert!((fd - &dz.x).norm() <= 1e-6 * dz.x.norm());
        }
    }

    #[test]
    fn grid_jacobians_match_endpoint_jacobians() {
        let p = Potential::log_cosh(2, 0.5).unwrap();
        let z = PhasePoint::from_slices(&[0.7, -1.1], &[0.4, 0.9]).unwrap();
        let fp = FlowParams::new(0.2, 0.05).unwrap();
        let verlet = verlet_velocity_jacobians(&p, &z, &fp).unwrap();
        let fd = flow_jacobian_v(&p, &z, &fp).unwrap();
        assert!((verlet.last().unwrap() - &fd).amax() < 1e-8);
        let exact = exact_velocity_jacobians(&p, &z, &grid_times(&fp)).unwrap();
        let fd = flow_jacobian_v(&p, &z, &fp.to_exact()).unwrap();
        assert!((exact.last().unwrap() - &fd).amax() < 1e-8);
        assert_eq!(exact.len(), 4);
    }

    #[test]
    fn divisibility_is_enforced() {
        assert!(matches!(FlowParams::new(0.25, 0.1), Err(Error::StepDoesNotDivide { .. })));
        assert_eq!(FlowParams::new(0.25, 0.05).unwrap().steps(), 5);
        assert_eq!(FlowParams::new(0.3, 0.1).unwrap().steps(), 3);
        assert!(FlowParams::new(0.1, 0.2).is_err());
    }

    #[test]
    fn stability_flags() {
        let fp = FlowParams::new(0.25, 0.05).unwrap();
        let s = fp.stability(1.0);
        assert!(s.hmc_stable && s.coupling_regime);
        let s = fp.stability(2.0);
        assert!(s.hmc_stable && !s.coupling_regime);
        assert!(!FlowParams::exact(3.0).unwrap().stability(1.0).hmc_stable);
    }
}
