//! Markov kernels (uHMC with velocity Verlet, exact HMC, unadjusted
//! Langevin), chain runners, synchronous coupling, and closed-form Gaussian
//! chain laws for diagonal quadratic targets.

use nalgebra::{DMatrix, DVector};

use crate::dynamics::{exact_flow, quadratic_flow_matrix, verlet_flow, FlowParams, PhasePoint};
use crate::error::{check_dim, Error, Result};
use crate::gaussian::{Covariance, GaussianLaw};
use crate::potential::Potential;
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum KernelKind {
    /// Velocity refreshment then `T/h` Verlet steps.
    UhmcV(FlowParams),
    /// Velocity refreshment then the exact flow for time `T`.
    Ehmc(f64),
    /// `x' = x - η∇f(x) + √(2η) ξ`.
    Ula(f64),
}

#[derive(Clone, Copy, Debug)]
pub struct KernelSpec<'a> {
    pub potential: &'a Potential,
    pub kind: KernelKind,
}

impl<'a> KernelSpec<'a> {
    /// Validates the kernel parameters; HMC kinds with `L T² > 2π²/5` are rejected.
    pub fn new(potential: &'a Potential, kind: KernelKind) -> Result<Self> {
        let l = potential.smoothness().l;
        match kind {
            KernelKind::UhmcV(fp) => {
                if fp.is_exact() {
                    return Err(Error::InvalidParameter("uHMC-v needs h > 0".into()));
                }
                if !fp.stability(l).hmc_stable {
                    return Err(Error::Unstable(format!("L T² = {} exceeds 2π²/5", l * fp.t() * fp.t())));
                }
            }
            KernelKind::Ehmc(t) => {
                let fp = FlowParams::exact(t)?;
                if !fp.stability(l).hmc_stable {
                    return Err(Error::Unstable(format!("L T² = {} exceeds 2π²/5", l * t * t)));
                }
            }
            KernelKind::Ula(eta) => {
                if !eta.is_finite() || eta <= 0.0 {
                    return Err(Error::InvalidParameter(format!("uLA step must be > 0, got {eta}")));
                }
            }
        }
        Ok(Self { potential, kind })
    }

    pub fn uhmc(potential: &'a Potential, t: f64, h: f64) -> Result<Self> {
        Self::new(potential, KernelKind::UhmcV(FlowParams::new(t, h)?))
    }

    pub fn ehmc(potential: &'a Potential, t: f64) -> Result<Self> {
        Self::new(potential, KernelKind::Ehmc(t))
    }

    pub fn ula(potential: &'a Potential, eta: f64) -> Result<Self> {
        Self::new(potential, KernelKind::Ula(eta))
    }

    pub fn dim(&self) -> usize {
        self.potential.dim()
    }

    /// Flow parameters of the HMC kinds.
    pub fn flow_params(&self) -> Option<FlowParams> {
        match self.kind {
            KernelKind::UhmcV(fp) => Some(fp),
            KernelKind::Ehmc(t) => FlowParams::exact(t).ok(),
            KernelKind::Ula(_) => None,
        }
    }

    /// Gradient evaluations per transition.
    pub fn gradients_per_step(&self) -> usize {
        match self.kind {
            KernelKind::UhmcV(fp) => fp.steps(),
            KernelKind::Ehmc(_) | KernelKind::Ula(_) => 1,
        }
    }
}

/// One transition driven by the given standard Gaussian draw `xi`.
pub fn kernel_step_with_noise(k: &KernelSpec, x: &DVector<f64>, xi: &DVector<f64>) -> Result<DVector<f64>> {
    check_dim(k.dim(), x.len())?;
    check_dim(k.dim(), xi.len())?;
    match k.kind {
        KernelKind::UhmcV(fp) => {
            let z = PhasePoint {
                x: x.clone(),
                v: xi.clone(),
            };
            Ok(verlet_flow(k.potential, &z, &fp)?.x)
        }
        KernelKind::Ehmc(t) => {
            let z = PhasePoint {
                x: x.clone(),
                v: xi.clone(),
            };
            Ok(exact_flow(k.potential, &z, t)?.x)
        }
        KernelKind::Ula(eta) => {
            let g = k.potential.grad(x);
            let out = x - eta * g + (2.0 * eta).sqrt() * xi;
            if out.iter().all(|v| v.is_finite()) {
                Ok(out)
            } else {
                Err(Error::NonFinite("uLA step"))
            }
        }
    }
}

pub fn kernel_step(k: &KernelSpec, x: &DVector<f64>, rng: &mut RngStream) -> Result<DVector<f64>> {
    let xi = rng.normal_vec(k.dim());
    kernel_step_with_noise(k, x, &xi)
}

/// Iterates `X_0..X_steps`.
pub fn run_chain(k: &KernelSpec, x0: &DVector<f64>, steps: usize, rng: &mut RngStream) -> Result<Vec<DVector<f64>>> {
    check_dim(k.dim(), x0.len())?;
    let mut path = Vec::with_capacity(steps + 1);
    path.push(x0.clone());
    for i in 0..steps {
        let next = kernel_step(k, &path[i], rng)?;
        path.push(next);
    }
    Ok(path)
}

/// Advances two chains with one shared Gaussian draw.
pub fn synchronous_coupled_step(
    k: &KernelSpec,
    x: &DVector<f64>,
    y: &DVector<f64>,
    rng: &mut RngStream,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let xi = rng.normal_vec(k.dim());
    Ok((kernel_step_with_noise(k, x, &xi)?, kernel_step_with_noise(k, y, &xi)?))
}

/// Per-coordinate `(a, b)` with `X' = a X + b ξ` on a diagonal quadratic target.
pub fn chain_coefficients(k: &KernelSpec) -> Result<(DVector<f64>, DVector<f64>)> {
    let omega2 = k.potential.omega2().ok_or(Error::NotQuadratic)?;
    let d = omega2.len();
    let mut a = DVector::zeros(d);
    let mut b = DVector::zeros(d);
    for i in 0..d {
        let (ai, bi) = match k.kind {
            KernelKind::UhmcV(fp) => {
                let m = quadratic_flow_matrix(omega2[i], &fp);
                (m[0][0], m[0][1])
            }
            KernelKind::Ehmc(t) => {
                let m = quadratic_flow_matrix(omega2[i], &FlowParams::exact(t)?);
                (m[0][0], m[0][1])
            }
            KernelKind::Ula(eta) => (1.0 - eta * omega2[i], (2.0 * eta).sqrt()),
        };
        a[i] = ai;
        b[i] = bi;
    }
    Ok((a, b))
}

#[derive(Clone, Debug)]
pub enum ChainInit {
    Point(DVector<f64>),
    Law(GaussianLaw),
}

impl ChainInit {
    fn law(&self) -> GaussianLaw {
        match self {
            ChainInit::Point(x) => GaussianLaw::point(x.clone()),
            ChainInit::Law(g) => g.clone(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ChainSteps {
    Finite(usize),
    Stationary,
}

/// `Σ_{j<k} a^{2j}`, stable near `a² = 1`.
fn geometric_sum(a2: f64, k: usize) -> f64 {
    if (1.0 - a2).abs() < 1e-8 {
        let mut s = 0.0;
        let mut p = 1.0;
        for _ in 0..k {
            s += p;
            p *= a2;
        }
        s
    } else {
        (1.0 - a2.powi(k as i32)) / (1.0 - a2)
    }
}

/// Exact law of `X_k` for a diagonal quadratic target.
pub fn gaussian_chain_law(k: &KernelSpec, init: &ChainInit, steps: ChainSteps) -> Result<GaussianLaw> {
    let (a, b) = chain_coefficients(k)?;
    let d = a.len();
    let init = init.law();
    check_dim(d, init.dim())?;
    match steps {
        ChainSteps::Stationary => {
            if a.iter().any(|ai| ai.abs() >= 1.0) {
                return Err(Error::Unstable("chain has no stationary law (|a| ≥ 1)".into()));
            }
            let var = DVector::from_fn(d, |i, _| b[i] * b[i] / (1.0 - a[i] * a[i]));
            GaussianLaw::diagonal(DVector::zeros(d), var)
        }
        ChainSteps::Finite(n) => {
            let ak = a.map(|ai| ai.powi(n as i32));
            let noise = DVector::from_fn(d, |i, _| b[i] * b[i] * geometric_sum(a[i] * a[i], n));
            let mean = init.mean.component_mul(&ak);
            match &init.cov {
                Covariance::Diagonal(s) => {
                    let var = DVector::from_fn(d, |i, _| ak[i] * ak[i] * s[i] + noise[i]);
                    GaussianLaw::diagonal(mean, var)
                }
                Covariance::Full(m) => {
                    let dk = DMatrix::from_diagonal(&ak);
                    let cov = &dk * m * &dk + DMatrix::from_diagonal(&noise);
                    GaussianLaw::full(mean, cov)
                }
            }
        }
    }
}

/// Joint law of `(X_0, X_k)` over `R^{2d}` from a Gaussian initial law.
pub fn joint_chain_law(k: &KernelSpec, init: &GaussianLaw, steps: usize) -> Result<GaussianLaw> {
    let (a, _) = chain_coefficients(k)?;
    let d = a.len();
    check_dim(d, init.dim())?;
    let last = gaussian_chain_law(k, &ChainInit::Law(init.clone()), ChainSteps::Finite(steps))?;
    let ak = DMatrix::from_diagonal(&a.map(|ai| ai.powi(steps as i32)));
    let s0 = init.cov_matrix();
    let cross = &s0 * &ak;
    let mut cov = DMatrix::zeros(2 * d, 2 * d);
    cov.view_mut((0, 0), (d, d)).copy_from(&s0);
    cov.view_mut((d, d), (d, d)).copy_from(&last.cov_matrix());
    cov.view_mut((0, d), (d, d)).copy_from(&cross);
    cov.view_mut((d, 0), (d, d)).copy_from(&cross.transpose());
    let mut mean = DVector::zeros(2 * d);
    mean.rows_mut(0, d).copy_from(&init.mean);
    mean.rows_mut(d, d).copy_from(&last.mean);
    GaussianLaw::full(mean, cov)
}

/// Law at time `η` of the exact Langevin diffusion `dX = -∇f dt + √2 dW`
/// started at `y`, for a diagonal quadratic target (Ornstein–Uhlenbeck).
pub fn langevin_exact_law(p: &Potential, y: &DVector<f64>, eta: f64) -> Result<GaussianLaw> {
    let omega2 = p.omega2().ok_or(Error::NotQuadratic)?;
    check_dim(omega2.len(), y.len())?;
    if !eta.is_finite() || eta <= 0.0 {
        return Err(Error::InvalidParameter(format!("time must be > 0, got {eta}")));
    }
    let d = y.len();
    let mean = DVector::from_fn(d, |i, _| (-omega2[i] * eta).exp() * y[i]);
    let var = DVector::from_fn(d, |i, _| {
        if omega2[i] == 0.0 {
            2.0 * eta
        } else {
            -(-2.0 * omega2[i] * eta).exp_m1() / omega2[i]
        }
    });
    GaussianLaw::diagonal(mean, var)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn harmonic(d: usize) -> Potential {
        Potential::isotropic_quadratic(d, 1.0).unwrap()
    }

    #[test]
    fn zero_noise_steps() {
        let p = harmonic(1);
        let x = DVector::from_vec(vec![1.0]);
        let xi = DVector::zeros(1);
        let k = KernelSpec::uhmc(&p, 0.1, 0.1).unwrap();
        assert_abs_diff_eq!(kernel_step_with_noise(&k, &x, &xi).unwrap()[0], 0.995, epsilon = 1e-15);
        let k = KernelSpec::ula(&p, 0.1).unwrap();
        assert_abs_diff_eq!(kernel_step_with_noise(&k, &x, &xi).unwrap()[0], 0.9, epsilon = 1e-15);
    }

    #[test]
    fn ehmc_point_law() {
        let p = harmonic(1);
        let k = KernelSpec::ehmc(&p, 0.7).unwrap();
        let law = gaussian_chain_law(&k, &ChainInit::Point(DVector::from_vec(vec![2.0])), ChainSteps::Finite(1)).unwrap();
        assert_abs_diff_eq!(law.mean[0], 2.0 * 0.7f64.cos(), epsilon = 1e-15);
        assert_abs_diff_eq!(law.variances()[0], 0.7f64.sin().powi(2), epsilon = 1e-15);
    }

    #[test]
    fn stationary_laws() {
        let p = harmonic(2);
        let k = KernelSpec::ehmc(&p, 0.5).unwrap();
        let s = gaussian_chain_law(&k, &ChainInit::Point(DVector::zeros(2)), ChainSteps::Stationary).unwrap();
        assert_abs_diff_eq!(s.variances()[0], 1.0, epsilon = 1e-14);
        let k = KernelSpec::uhmc(&p, 0.1, 0.1).unwrap();
        let s = gaussian_chain_law(&k, &ChainInit::Point(DVector::zeros(2)), ChainSteps::Stationary).unwrap();
        assert_abs_diff_eq!(s.variances()[0], 0.01 / (1.0 - 0.995f64.powi(2)), epsilon = 1e-14);
        assert_abs_diff_eq!(s.variances()[0], 1.0025063, epsilon = 1e-7);
        let again = gaussian_chain_law(&k, &ChainInit::Law(s.clone()), ChainSteps::Finite(1)).unwrap();
        assert!((again.variances() - s.variances()).amax() < 1e-12);
    }

    #[test]
    fn zero_steps_returns_initial_point() {
        let p = harmonic(1);
        let k = KernelSpec::uhmc(&p, 0.1, 0.1).unwrap();
        let law = gaussian_chain_law(&k, &ChainInit::Point(DVector::from_vec(vec![1.0])), ChainSteps::Finite(0)).unwrap();
        assert_eq!(law.mean[0], 1.0);
        assert_eq!(law.variances()[0], 0.0);
        let mut rng = RngStream::new(1, 0);
        assert_eq!(run_chain(&k, &DVector::from_vec(vec![1.0]), 0, &mut rng).unwrap().len(), 1);
    }

    #[test]
    fn ula_one_step_law() {
        let p = Potential::quadratic(&[1.0]).unwrap();
        let k = KernelSpec::ula(&p, 0.05).unwrap();
        let law = gaussian_chain_law(&k, &ChainInit::Point(DVector::from_vec(vec![3.0])), ChainSteps::Finite(1)).unwrap();
        assert_abs_diff_eq!(law.mean[0], 3.0 * 0.95, epsilon = 1e-15);
        assert_abs_diff_eq!(law.variances()[0], 0.1, epsilon = 1e-15);
    }

    #[test]
    fn unstable_hmc_is_rejected() {
        let p = harmonic(1);
        assert!(matches!(KernelSpec::ehmc(&p, 3.0), Err(Error::Unstable(_))));
        assert!(KernelSpec::ula(&p, 0.0).is_err());
    }

    #[test]
    fn non_quadratic_has_no_chain_law() {
        let p = Potential::log_cosh(1, 0.5).unwrap();
        let k = KernelSpec::ehmc(&p, 0.2).unwrap();
        assert_eq!(chain_coefficients(&k).unwrap_err(), Error::NotQuadratic);
    }

    #[test]
    fn joint_law_cross_covariance() {
        let p = harmonic(1);
        let k = KernelSpec::ehmc(&p, 0.3).unwrap();
        let j = joint_chain_law(&k, &GaussianLaw::standard(1), 2).unwrap();
        let c = j.cov_matrix();
        assert_abs_diff_eq!(c[(0, 1)], 0.3f64.cos().powi(2), epsilon = 1e-15);
        assert_abs_diff_eq!(c[(1, 1)], 1.0, epsilon = 1e-14);
    }

    #[test]
    fn ou_law() {
        let p = Potential::quadratic(&[2.0, 0.0]).unwrap();
        let law = langevin_exact_law(&p, &DVector::from_vec(vec![1.0, 1.0]), 0.1).unwrap();
        assert_abs_diff_eq!(law.mean[0], (-0.2f64).exp(), epsilon = 1e-15);
        assert_abs_diff_eq!(law.variances()[0], (1.0 - (-0.4f64).exp()) / 2.0, epsilon = 1e-15);
        assert_abs_diff_eq!(law.variances()[1], 0.2, epsilon = 1e-15);
    }
}
