//! Target potentials `f` (the target density is proportional to `exp(-f)`).
//!
//! Two families are provided: diagonal quadratics, which admit closed-form
//! flows and Gaussian chain laws, and the separable log-cosh perturbation
//! `f(x) = ‖x‖²/2 + c Σ log cosh(x_i)`, which has nonzero third and fourth
//! derivatives.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Smoothness metadata: `L` bounds the Hessian, `M` the third derivative,
/// `N` the fourth derivative (all in operator norm), `alpha` is the
/// strong-convexity constant (0 when not strongly convex).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Smoothness {
    pub l: f64,
    pub m: f64,
    pub n: f64,
    pub alpha: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PotentialKind {
    Quadratic,
    SmoothNonquadratic,
}

#[derive(Clone, Debug)]
enum Form {
    Quadratic { omega2: DVector<f64> },
    LogCosh { dim: usize, c: f64 },
}

#[derive(Clone, Debug)]
pub struct Potential {
    form: Form,
    smoothness: Smoothness,
}

/// `log cosh(x)` without overflow for large `|x|`.
fn log_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Grid maxima of `|d³/dx³ log cosh|` and `|d⁴/dx⁴ log cosh|`.
///
/// With `t = tanh x` and `s = sech² x` the derivatives are `-2st` and `4s - 6s²`.
pub fn log_cosh_derivative_bounds() -> (f64, f64) {
    let n = 400_000;
    let (lo, hi) = (-20.0_f64, 20.0_f64);
    let mut m3 = 0.0_f64;
    let mut m4 = 0.0_f64;
    for i in 0..=n {
        let x = lo + (hi - lo) * i as f64 / n as f64;
        let t = x.tanh();
        let s = 1.0 - t * t;
        m3 = m3.max((2.0 * s * t).abs());
        m4 = m4.max((4.0 * s - 6.0 * s * s).abs());
    }
    (m3, m4)
}

impl Potential {
    /// `f(x) = ½ Σ ω_i² x_i²` with the given `ω²` entries (nonnegative).
    pub fn quadratic(omega2: &[f64]) -> Result<Self> {
        if omega2.is_empty() {
            return Err(Error::InvalidParameter("quadratic potential needs d ≥ 1".into()));
        }
        if omega2.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidParameter(
                "quadratic coefficients must be finite and nonnegative".into(),
            ));
        }
        let l = omega2.iter().cloned().fold(0.0, f64::max);
        let alpha = omega2.iter().cloned().fold(f64::INFINITY, f64::min);
        Ok(Self {
            form: Form::Quadratic {
                omega2: DVector::from_column_slice(omega2),
            },
            smoothness: Smoothness {
                l,
                m: 0.0,
                n: 0.0,
                alpha,
            },
        })
    }

    /// Isotropic quadratic `f(x) = ω²‖x‖²/2`.
    pub fn isotropic_quadratic(dim: usize, omega2: f64) -> Result<Self> {
        Self::quadratic(&vec![omega2; dim])
    }

    /// `f ≡ 0` (free flight).
    pub fn free(dim: usize) -> Result<Self> {
        Self::quadratic(&vec![0.0; dim])
    }

    /// `f(x) = ‖x‖²/2 + c Σ log cosh(x_i)` with `L = 1 + c`, `α = 1` and
    /// `M`, `N` from a dense grid search of the 1-D derivative formulas.
    pub fn log_cosh(dim: usize, c: f64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("log-cosh potential needs d ≥ 1".into()));
        }
        if !c.is_finite() || c < 0.0 {
            return Err(Error::InvalidParameter("log-cosh weight must be ≥ 0".into()));
        }
        let (m3, m4) = log_cosh_derivative_bounds();
        Ok(Self {
            form: Form::LogCosh { dim, c },
            smoothness: Smoothness {
                l: 1.0 + c,
                m: c * m3,
                n: c * m4,
                alpha: 1.0,
            },
        })
    }

    /// Replaces the smoothness metadata (used for negative controls).
    pub fn with_smoothness(mut self, smoothness: Smoothness) -> Self {
        self.smoothness = smoothness;
        self
    }

    pub fn dim(&self) -> usize {
        match &self.form {
            Form::Quadratic { omega2 } => omega2.len(),
            Form::LogCosh { dim, .. } => *dim,
        }
    }

    pub fn kind(&self) -> PotentialKind {
        match self.form {
            Form::Quadratic { .. } => PotentialKind::Quadratic,
            Form::LogCosh { .. } => PotentialKind::SmoothNonquadratic,
        }
    }

    pub fn smoothness(&self) -> Smoothness {
        self.smoothness
    }

    /// Diagonal `ω²` for quadratic potentials.
    pub fn omega2(&self) -> Option<&DVector<f64>> {
        match &self.form {
            Form::Quadratic { omega2 } => Some(omega2),
            Form::LogCosh { .. } => None,
        }
    }

    pub fn check_point(&self, x: &DVector<f64>) -> Result<()> {
        check_dim(self.dim(), x.len())
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        match &self.form {
            Form::Quadratic { omega2 } => {
                0.5 * omega2.iter().zip(x.iter()).map(|(w, xi)| w * xi * xi).sum::<f64>()
            }
            Form::LogCosh { c, .. } => x
                .iter()
                .map(|xi| 0.5 * xi * xi + c * log_cosh(*xi))
                .sum(),
        }
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut g = DVector::zeros(x.len());
        self.grad_into(x, &mut g);
        g
    }

    /// Writes `∇f(x)` into `out` without allocating.
    pub fn grad_into(&self, x: &DVector<f64>, out: &mut DVector<f64>) {
        match &self.form {
            Form::Quadratic { omega2 } => {
                for i in 0..x.len() {
                    out[i] = omega2[i] * x[i];
                }
            }
            Form::LogCosh { c, .. } => {
                for i in 0..x.len() {
                    out[i] = x[i] + c * x[i].tanh();
                }
            }
        }
    }

    pub fn hessian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let diag = match &self.form {
            Form::Quadratic { omega2 } => omega2.clone(),
            Form::LogCosh { c, .. } => x.map(|xi| {
                let t = xi.tanh();
                1.0 + c * (1.0 - t * t)
            }),
        };
        DMatrix::from_diagonal(&diag)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimum_at_origin() {
        for p in [
            Potential::quadratic(&[0.5, 2.0]).unwrap(),
            Potential::log_cosh(3, 0.5).unwrap(),
        ] {
            let z = DVector::zeros(p.dim());
            assert_eq!(p.value(&z), 0.0);
            assert!(p.grad(&z).norm() == 0.0);
        }
    }

    #[test]
    fn log_cosh_constants() {
        let p = Potential::log_cosh(2, 0.5).unwrap();
        let s = p.smoothness();
        assert_eq!(s.l, 1.5);
        assert_eq!(s.alpha, 1.0);
        // sup |2 sech² tanh| = 4/(3√3), sup |4s - 6s²| = 2 (at the origin).
        assert!((s.m - 0.5 * 4.0 / (3.0 * 3f64.sqrt())).abs() < 1e-8);
        assert!((s.n - 1.0).abs() < 1e-12);
    }

    #[test]
    fn log_cosh_is_stable_for_large_arguments() {
        assert!((log_cosh(800.0) - (800.0 - std::f64::consts::LN_2)).abs() < 1e-12);
        assert!((log_cosh(0.3) - 0.3f64.cosh().ln()).abs() < 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = Potential::log_cosh(2, 0.5).unwrap();
        let x = DVector::from_vec(vec![0.7, -1.3]);
        let g = p.grad(&x);
        for i in 0..2 {
            let mut e = DVector::zeros(2);
            e[i] = 1e-6;
            let fd = (p.value(&(&x + &e)) - p.value(&(&x - &e))) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-8);
        }
    }

    #[test]
    fn rejects_bad_coefficients() {
        assert!(Potential::quadratic(&[]).is_err());
        assert!(Potential::quadratic(&[-1.0]).is_err());
        assert!(Potential::log_cosh(0, 0.5).is_err());
    }
}
