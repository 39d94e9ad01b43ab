//! Gaussian laws with diagonal or dense covariance.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum Covariance {
    Diagonal(DVector<f64>),
    Full(DMatrix<f64>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussianLaw {
    pub mean: DVector<f64>,
    pub cov: Covariance,
}

impl GaussianLaw {
    pub fn diagonal(mean: DVector<f64>, variances: DVector<f64>) -> Result<Self> {
        check_dim(mean.len(), variances.len())?;
        if variances.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidParameter("variances must be finite and ≥ 0".into()));
        }
        Ok(Self {
            mean,
            cov: Covariance::Diagonal(variances),
        })
    }

    pub fn full(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        check_dim(mean.len(), cov.nrows())?;
        check_dim(mean.len(), cov.ncols())?;
        let scale = cov.amax().max(1.0);
        if (&cov - cov.transpose()).amax() > 1e-12 * scale {
            return Err(Error::InvalidParameter("covariance must be symmetric".into()));
        }
        Ok(Self {
            mean,
            cov: Covariance::Full(cov),
        })
    }

    /// `N(0, I_d)`.
    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: Covariance::Diagonal(DVector::from_element(d, 1.0)),
        }
    }

    /// `N(0, σ² I_d)`.
    pub fn isotropic(d: usize, variance: f64) -> Result<Self> {
        Self::diagonal(DVector::zeros(d), DVector::from_element(d, variance))
    }

    /// Dirac mass at `x` (zero covariance).
    pub fn point(x: DVector<f64>) -> Self {
        let d = x.len();
        Self {
            mean: x,
            cov: Covariance::Diagonal(DVector::zeros(d)),
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn is_diagonal(&self) -> bool {
        matches!(self.cov, Covariance::Diagonal(_))
    }

    pub fn cov_matrix(&self) -> DMatrix<f64> {
        match &self.cov {
            Covariance::Diagonal(s) => DMatrix::from_diagonal(s),
            Covariance::Full(m) => m.clone(),
        }
    }

    pub fn variances(&self) -> DVector<f64> {
        match &self.cov {
            Covariance::Diagonal(s) => s.clone(),
            Covariance::Full(m) => m.diagonal(),
        }
    }

    /// `E‖X‖²`.
    pub fn second_moment(&self) -> f64 {
        self.mean.norm_squared() + self.variances().sum()
    }

    /// Law of `AX + b`.
    pub fn affine(&self, a: &DMatrix<f64>, b: &DVector<f64>) -> Result<Self> {
        check_dim(self.dim(), a.ncols())?;
        check_dim(a.nrows(), b.len())?;
        let mean = a * &self.mean + b;
        let cov = a * self.cov_matrix() * a.transpose();
        let cov = 0.5 * (&cov + cov.transpose());
        Ok(Self {
            mean,
            cov: Covariance::Full(cov),
        })
    }

    /// Marginal on the coordinates `start..start + len`.
    pub fn marginal(&self, start: usize, len: usize) -> Self {
        let mean = self.mean.rows(start, len).into_owned();
        let cov = match &self.cov {
            Covariance::Diagonal(s) => Covariance::Diagonal(s.rows(start, len).into_owned()),
            Covariance::Full(m) => Covariance::Full(m.view((start, start), (len, len)).into_owned()),
        };
        Self { mean, cov }
    }
}

/// `log det Σ` via Cholesky; errors when `Σ` is not positive definite.
pub fn log_det_spd(m: &DMatrix<f64>) -> Result<f64> {
    let chol = m.clone().cholesky().ok_or(Error::SingularCovariance)?;
    let ld: f64 = chol.l_dirty().diagonal().iter().map(|x| 2.0 * x.ln()).sum();
    if ld.is_finite() {
        Ok(ld)
    } else {
        Err(Error::SingularCovariance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn affine_push_forward() {
        let g = GaussianLaw::standard(2);
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 2.0]);
        let out = g.affine(&a, &DVector::from_vec(vec![1.0, -1.0])).unwrap();
        assert_eq!(out.mean, DVector::from_vec(vec![1.0, -1.0]));
        assert_eq!(out.cov_matrix(), DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 4.0]));
    }

    #[test]
    fn log_det_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 3.0]));
        assert!((log_det_spd(&m).unwrap() - 6f64.ln()).abs() < 1e-15);
        assert_eq!(log_det_spd(&DMatrix::zeros(2, 2)), Err(Error::SingularCovariance));
    }

    #[test]
    fn rejects_asymmetric_covariance() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(GaussianLaw::full(DVector::zeros(2), m).is_err());
    }
}
