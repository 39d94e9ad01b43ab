//! Divergences between Gaussian laws in closed form, quadrature estimates for
//! a 1-D Gaussian mixture, Wasserstein and Orlicz machinery, mutual
//! information, and the perturbed-Gaussian bounds.

use std::f64::consts::{LN_2, PI};

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::gaussian::{log_det_spd, Covariance, GaussianLaw};
use crate::quadrature::integrate;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DivergenceKind {
    Kl,
    Renyi(f64),
    Tv,
    W2,
    OrliczW,
    Mi,
}

/// A nonnegative divergence value; `f64::INFINITY` is a legitimate result.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DivergenceValue {
    pub value: f64,
    pub kind: DivergenceKind,
}

impl DivergenceValue {
    fn new(value: f64, kind: DivergenceKind) -> Self {
        // Round-off can push exact zeros slightly negative.
        Self {
            value: value.max(0.0),
            kind,
        }
    }

    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }
}

fn diag_pair<'a>(a: &'a GaussianLaw, b: &'a GaussianLaw) -> Option<(&'a DVector<f64>, &'a DVector<f64>)> {
    match (&a.cov, &b.cov) {
        (Covariance::Diagonal(sa), Covariance::Diagonal(sb)) => Some((sa, sb)),
        _ => None,
    }
}

fn require_positive(s: &DVector<f64>) -> Result<()> {
    if s.iter().all(|x| *x > 0.0) {
        Ok(())
    } else {
        Err(Error::SingularCovariance)
    }
}

/// `KL(a ‖ b)`.
pub fn gaussian_kl(a: &GaussianLaw, b: &GaussianLaw) -> Result<DivergenceValue> {
    check_dim(a.dim(), b.dim())?;
    let dm = &a.mean - &b.mean;
    if let Some((sa, sb)) = diag_pair(a, b) {
        require_positive(sa)?;
        require_positive(sb)?;
        let mut kl = 0.0;
        for i in 0..a.dim() {
            let r = sa[i] / sb[i];
            kl += 0.5 * (r - 1.0 - r.ln() + dm[i] * dm[i] / sb[i]);
        }
        return Ok(DivergenceValue::new(kl, DivergenceKind::Kl));
    }
    let ca = a.cov_matrix();
    let cb = b.cov_matrix();
    let ld_a = log_det_spd(&ca)?;
    let ld_b = log_det_spd(&cb)?;
    let chol = cb.cholesky().ok_or(Error::SingularCovariance)?;
    let trace = chol.solve(&ca).trace();
    let quad = dm.dot(&chol.solve(&dm));
    let kl = 0.5 * (trace + quad - a.dim() as f64 + ld_b - ld_a);
    Ok(DivergenceValue::new(kl, DivergenceKind::Kl))
}

/// Per-coordinate Rényi term for variances `s1` (first law), `s2` (second).
fn renyi_1d(q: f64, dm: f64, s1: f64, s2: f64) -> f64 {
    let sq = q * s2 + (1.0 - q) * s1;
    if sq <= 0.0 {
        return f64::INFINITY;
    }
    let rho = s1 / s2;
    let eps = q - 1.0;
    // ln σ_q² - (1-q)ln σ₁² - q ln σ₂² = ln1p(-ε(ρ-1)) + ε ln ρ, kept stable as q → 1.
    let log_term = ((-eps * (rho - 1.0)).ln_1p() / eps + rho.ln()) * 0.5;
    0.5 * q * dm * dm / sq - log_term
}

/// `R_q(a ‖ b)` for `q > 1`; `+∞` exactly when `q Σ_b + (1-q) Σ_a` is not
/// positive definite.
pub fn gaussian_renyi(q: f64, a: &GaussianLaw, b: &GaussianLaw) -> Result<DivergenceValue> {
    if !(q > 1.0) || !q.is_finite() {
        return Err(Error::InvalidParameter(format!("Rényi order must be in (1, ∞), got {q}")));
    }
    check_dim(a.dim(), b.dim())?;
    let dm = &a.mean - &b.mean;
    if let Some((sa, sb)) = diag_pair(a, b) {
        require_positive(sa)?;
        require_positive(sb)?;
        let mut r = 0.0;
        for i in 0..a.dim() {
            r += renyi_1d(q, dm[i], sa[i], sb[i]);
        }
        return Ok(DivergenceValue::new(r, DivergenceKind::Renyi(q)));
    }
    let ca = a.cov_matrix();
    let cb = b.cov_matrix();
    let ld_a = log_det_spd(&ca)?;
    let ld_b = log_det_spd(&cb)?;
    let cq = q * &cb + (1.0 - q) * &ca;
    let cq = 0.5 * (&cq + cq.transpose());
    let min_eig = cq.clone().symmetric_eigen().eigenvalues.min();
    if min_eig <= 0.0 {
        return Ok(DivergenceValue::new(f64::INFINITY, DivergenceKind::Renyi(q)));
    }
    let ld_q = log_det_spd(&cq)?;
    let chol = cq.cholesky().ok_or(Error::SingularCovariance)?;
    let quad = dm.dot(&chol.solve(&dm));
    let r = 0.5 * q * quad - (ld_q - (1.0 - q) * ld_a - q * ld_b) / (2.0 * (q - 1.0));
    Ok(DivergenceValue::new(r, DivergenceKind::Renyi(q)))
}

/// TV, KL and Rényi-2 of a 1-D unit-variance Gaussian mixture against `N(0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixtureDivergences {
    pub tv: DivergenceValue,
    pub kl: DivergenceValue,
    pub r2: DivergenceValue,
    /// Largest relative quadrature error estimate among the three integrals.
    pub quadrature_rel_error: f64,
}

/// Relative tolerance for the 1-D density-ratio integrals.
pub const QUADRATURE_REL_TOL: f64 = 1e-10;
const QUADRATURE_RANGE: f64 = 40.0;
const OVERFLOW_GUARD: f64 = 700.0;

fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// `μ = Σ wᵢ N(cᵢ, 1)` against `π = N(0, 1)` by adaptive quadrature on
/// `[-40, 40]`.
pub fn tv_kl_r2_demo(weights: &[f64], centers: &[f64]) -> Result<MixtureDivergences> {
    if weights.len() != centers.len() || weights.is_empty() {
        return Err(Error::InvalidParameter("weights and centers must be nonempty and equal length".into()));
    }
    if weights.iter().any(|w| !(*w >= 0.0)) {
        return Err(Error::InvalidParameter("mixture weights must be ≥ 0".into()));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-12 {
        return Err(Error::InvalidParameter(format!("mixture weights sum to {total}, not 1")));
    }
    let comps: Vec<(f64, f64)> = weights
        .iter()
        .zip(centers)
        .filter(|(w, _)| **w > 0.0)
        .map(|(w, c)| (w.ln(), *c))
        .collect();
    // log(μ/π)(x) = log Σ wᵢ exp(cᵢx - cᵢ²/2)
    let log_ratio = |x: f64| log_sum_exp(comps.iter().map(|(lw, c)| lw + c * x - 0.5 * c * c));
    let log_pi = |x: f64| -0.5 * x * x - 0.5 * (2.0 * PI).ln();
    let (lo, hi) = (-QUADRATURE_RANGE, QUADRATURE_RANGE);

    let tv = integrate(
        |x| 0.5 * ((log_ratio(x) + log_pi(x)).exp() - log_pi(x).exp()).abs(),
        lo,
        hi,
        QUADRATURE_REL_TOL,
        1e-300,
    )?;
    let kl = integrate(
        |x| {
            let lr = log_ratio(x);
            (lr + log_pi(x)).exp() * lr
        },
        lo,
        hi,
        QUADRATURE_REL_TOL,
        1e-300,
    )?;
    let mut overflow = false;
    let second = integrate(
        |x| {
            let e = 2.0 * log_ratio(x) + log_pi(x);
            if e > OVERFLOW_GUARD {
                overflow = true;
                0.0
            } else {
                e.exp()
            }
        },
        lo,
        hi,
        QUADRATURE_REL_TOL,
        1e-300,
    )?;
    let r2 = if overflow { f64::INFINITY } else { second.value.ln() };
    let rel = |q: &crate::quadrature::Quadrature| if q.value == 0.0 { 0.0 } else { q.error / q.value.abs() };
    Ok(MixtureDivergences {
        tv: DivergenceValue::new(tv.value, DivergenceKind::Tv),
        kl: DivergenceValue::new(kl.value, DivergenceKind::Kl),
        r2: DivergenceValue::new(r2, DivergenceKind::Renyi(2.0)),
        quadrature_rel_error: rel(&tv).max(rel(&kl)).max(rel(&second)),
    })
}

/// Symmetric positive semidefinite square root.
pub fn sqrt_psd(m: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = (0.5 * (m + m.transpose())).symmetric_eigen();
    let s = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&s) * eig.eigenvectors.transpose()
}

/// `W₂` between Gaussian laws (Bures formula, diagonal fast path).
pub fn w2_gaussian(a: &GaussianLaw, b: &GaussianLaw) -> Result<DivergenceValue> {
    check_dim(a.dim(), b.dim())?;
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let cov_term = if let Some((sa, sb)) = diag_pair(a, b) {
        sa.iter().zip(sb.iter()).map(|(x, y)| (x.sqrt() - y.sqrt()).powi(2)).sum::<f64>()
    } else {
        let ca = a.cov_matrix();
        let cb = b.cov_matrix();
        let rb = sqrt_psd(&cb);
        let cross = sqrt_psd(&(&rb * &ca * &rb));
        (ca.trace() + cb.trace() - 2.0 * cross.trace()).max(0.0)
    };
    Ok(DivergenceValue::new((mean_term + cov_term).sqrt(), DivergenceKind::W2))
}

/// `W₂` between two equal-size 1-D samples via the sorted (quantile) coupling.
pub fn w2_empirical_1d(xs: &[f64], ys: &[f64]) -> Result<DivergenceValue> {
    check_dim(xs.len(), ys.len())?;
    if xs.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    let mut a = xs.to_vec();
    let mut b = ys.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let ms = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len() as f64;
    Ok(DivergenceValue::new(ms.sqrt(), DivergenceKind::W2))
}

/// Orlicz norm of a point mass at `x`: `‖x‖/√(ln 2)`.
pub fn orlicz_norm_point(x: &DVector<f64>) -> f64 {
    x.norm() / LN_2.sqrt()
}

/// Closed form for `N(0, σ² I_d)`: `λ² = 2σ² / (1 - 2^{-2/d})`.
pub fn orlicz_norm_isotropic(d: usize, variance: f64) -> f64 {
    let denom = -(-2.0 * LN_2 / d as f64).exp_m1();
    (2.0 * variance / denom).sqrt()
}

/// Orlicz norm (`ψ(x) = e^{x²} - 1`) of `‖X‖` for `X` Gaussian: solves
/// `Σᵢ [-½ ln(1 - 2sᵢ/λ²) + mᵢ²/(λ² - 2sᵢ)] = ln 2` over the eigenbasis of `Σ`.
pub fn orlicz_norm_gaussian(law: &GaussianLaw) -> f64 {
    let (s, m) = match &law.cov {
        Covariance::Diagonal(s) => (s.clone(), law.mean.clone()),
        Covariance::Full(c) => {
            let eig = (0.5 * (c + c.transpose())).symmetric_eigen();
            let m = eig.eigenvectors.transpose() * &law.mean;
            (eig.eigenvalues.map(|x| x.max(0.0)), m)
        }
    };
    let smax = s.max();
    if smax == 0.0 {
        return orlicz_norm_point(&law.mean);
    }
    if m.norm() == 0.0 && s.iter().all(|x| *x == smax) {
        return orlicz_norm_isotropic(s.len(), smax);
    }
    let log_mgf = |l2: f64| -> f64 {
        let mut acc = 0.0;
        for i in 0..s.len() {
            acc += -0.5 * (-2.0 * s[i] / l2).ln_1p() + m[i] * m[i] / (l2 - 2.0 * s[i]);
        }
        acc
    };
    // log_mgf decreases in λ² on (2 s_max, ∞).
    let mut lo = 2.0 * smax;
    let mut hi = 4.0 * smax;
    while log_mgf(hi) > LN_2 {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if log_mgf(mid) > LN_2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    hi.sqrt()
}

/// Empirical Orlicz norm: the smallest `λ` with `mean exp(‖Xᵢ‖²/λ²) ≤ 2`.
pub fn orlicz_norm_samples(samples: &[DVector<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidParameter("empty sample".into()));
    }
    let sq: Vec<f64> = samples.iter().map(|x| x.norm_squared()).collect();
    let rmax2 = sq.iter().cloned().fold(0.0, f64::max);
    if rmax2 == 0.0 {
        return Ok(0.0);
    }
    let n = sq.len() as f64;
    let log_mean = |l2: f64| log_sum_exp(sq.iter().map(|r| r / l2)) - n.ln();
    let mut lo = 0.0_f64;
    let mut hi = rmax2 / LN_2;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if mid == 0.0 || log_mean(mid) > LN_2 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi.sqrt())
}

/// Orlicz norm of `X - Y` under the synchronous coupling `X = mₐ + Σₐ^{1/2}Z`,
/// `Y = m_b + Σ_b^{1/2}Z`: an upper bound on the Orlicz–Wasserstein distance
/// (exact when either law is a point mass).
pub fn orlicz_wasserstein_upper(a: &GaussianLaw, b: &GaussianLaw) -> Result<DivergenceValue> {
    check_dim(a.dim(), b.dim())?;
    let mean = &a.mean - &b.mean;
    let diff = if let Some((sa, sb)) = diag_pair(a, b) {
        let var = DVector::from_fn(a.dim(), |i, _| (sa[i].sqrt() - sb[i].sqrt()).powi(2));
        GaussianLaw::diagonal(mean, var)?
    } else {
        let r = sqrt_psd(&a.cov_matrix()) - sqrt_psd(&b.cov_matrix());
        let cov = &r * r.transpose();
        GaussianLaw::full(mean, 0.5 * (&cov + cov.transpose()))?
    };
    Ok(DivergenceValue::new(orlicz_norm_gaussian(&diff), DivergenceKind::OrliczW))
}

/// Mutual information of a joint Gaussian over `R^{dx + dy}` between its
/// first `dx` and remaining coordinates; `+∞` for a singular joint with
/// nonsingular marginals.
pub fn mi_gaussian(joint: &GaussianLaw, dx: usize) -> Result<DivergenceValue> {
    let n = joint.dim();
    if dx == 0 || dx >= n {
        return Err(Error::InvalidParameter(format!("split {dx} must lie in 1..{n}")));
    }
    let c = joint.cov_matrix();
    let cx = c.view((0, 0), (dx, dx)).into_owned();
    let cy = c.view((dx, dx), (n - dx, n - dx)).into_owned();
    let lx = log_det_spd(&cx)?;
    let ly = log_det_spd(&cy)?;
    let value = match log_det_spd(&c) {
        Ok(lj) => 0.5 * (lx + ly - lj),
        Err(_) => f64::INFINITY,
    };
    Ok(DivergenceValue::new(value, DivergenceKind::Mi))
}

fn check_perturbation(m1: f64, m2: f64) -> Result<()> {
    if !(m1 >= 0.0) || !(m2 >= 0.0) {
        return Err(Error::InvalidParameter("m₁, m₂ must be ≥ 0".into()));
    }
    if m2 >= 1.0 {
        return Err(Error::InvalidParameter(format!("m₂ = {m2} must be < 1")));
    }
    Ok(())
}

/// KL of a near-identity pushforward of `N(0, I_d)`: `½m₁² + d m₂²/(2(1 - m₂))`,
/// where `m₁` bounds the displacement and `m₂` the Jacobian deviation.
pub fn perturbed_gaussian_kl_bound(m1: f64, m2: f64, d: usize) -> Result<f64> {
    check_perturbation(m1, m2)?;
    Ok(0.5 * m1 * m1 + d as f64 * m2 * m2 / (2.0 * (1.0 - m2)))
}

/// Rényi analogue: `d m₂/(1 - m₂) + √d m₁ + q m₁²/2`.
pub fn perturbed_gaussian_renyi_bound(q: f64, m1: f64, m2: f64, d: usize) -> Result<f64> {
    check_perturbation(m1, m2)?;
    if !(q > 1.0) {
        return Err(Error::InvalidParameter(format!("Rényi order must be > 1, got {q}")));
    }
    let d = d as f64;
    Ok(d * m2 / (1.0 - m2) + d.sqrt() * m1 + 0.5 * q * m1 * m1)
}
