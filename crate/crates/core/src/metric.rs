//! Weighted inner-product geometry induced by a symmetric positive-definite
//! matrix `P`.
//!
//! Every projection, residual and monotonicity estimate in this crate is
//! measured in the norm `‖x‖_P = √(xᵀPx)`. A [`Metric`] validates `P` once,
//! keeps its Cholesky factor and inverse around, and is immutable afterwards,
//! so it can be shared freely between concurrent simulations.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};

/// Relative asymmetry above which an input matrix is rejected.
const ASYMMETRY_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct Metric {
    p: DMatrix<f64>,
    p_inv: DMatrix<f64>,
    /// Lower-triangular `L` with `P = L Lᵀ`.
    factor: DMatrix<f64>,
    eigenvalues: DVector<f64>,
    eigenvectors: DMatrix<f64>,
    diagonal: bool,
    identity: bool,
}

impl Metric {
    pub fn identity(dim: usize) -> Self {
        Self::new(DMatrix::identity(dim, dim)).expect("identity is positive definite")
    }

    /// Builds a metric from a square matrix. Small asymmetries are averaged
    /// out; anything larger than `1e-9` relative is an error, as is a failed
    /// Cholesky factorization.
    pub fn new(p: DMatrix<f64>) -> Result<Self> {
        if !p.is_square() || p.nrows() == 0 {
            return Err(Error::invalid(
                "metric",
                format!("expected a non-empty square matrix, got {}x{}", p.nrows(), p.ncols()),
            ));
        }
        if p.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metric"));
        }
        let scale = p.amax().max(f64::MIN_POSITIVE);
        let asymmetry = (&p - p.transpose()).amax() / scale;
        if asymmetry > ASYMMETRY_TOL {
            return Err(Error::NotSymmetric { asymmetry });
        }
        let p = (&p + p.transpose()) * 0.5;

        let chol = p.clone().cholesky().ok_or(Error::NotPositiveDefinite)?;
        let factor = chol.l();
        let p_inv = chol.inverse();

        let eigen = p.clone().symmetric_eigen();
        if eigen.eigenvalues.iter().any(|&l| l <= 0.0) {
            return Err(Error::NotPositiveDefinite);
        }

        let n = p.nrows();
        let diagonal = (0..n).all(|i| (0..n).all(|j| i == j || p[(i, j)] == 0.0));
        let identity = diagonal && (0..n).all(|i| p[(i, i)] == 1.0);

        Ok(Self {
            p,
            p_inv,
            factor,
            eigenvalues: eigen.eigenvalues,
            eigenvectors: eigen.eigenvectors,
            diagonal,
            identity,
        })
    }

    /// Row-major dense constructor used by configuration loaders.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::invalid("metric", "rows must form a square matrix"));
        }
        Self::new(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.p
    }

    pub fn inverse(&self) -> &DMatrix<f64> {
        &self.p_inv
    }

    /// Lower-triangular square-root factor `L` with `P = L Lᵀ`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    /// Eigen-decomposition `P = V diag(λ) Vᵀ`.
    pub fn eigen(&self) -> (&DVector<f64>, &DMatrix<f64>) {
        (&self.eigenvalues, &self.eigenvectors)
    }

    pub fn lambda_min(&self) -> f64 {
        self.eigenvalues.min()
    }

    pub fn lambda_max(&self) -> f64 {
        self.eigenvalues.max()
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    pub fn is_identity(&self) -> bool {
        self.identity
    }

    /// `xᵀPy`.
    pub fn inner(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        check_dim("metric inner product", self.dim(), x.len())?;
        check_dim("metric inner product", self.dim(), y.len())?;
        Ok(self.inner_unchecked(x, y))
    }

    /// `√(xᵀPx)`.
    pub fn norm(&self, x: &DVector<f64>) -> Result<f64> {
        check_dim("metric norm", self.dim(), x.len())?;
        Ok(self.norm_unchecked(x))
    }

    pub(crate) fn inner_unchecked(&self, x: &DVector<f64>, y: &DVector<f64>) -> f64 {
        if self.identity {
            x.dot(y)
        } else {
            x.dot(&(&self.p * y))
        }
    }

    pub(crate) fn norm_unchecked(&self, x: &DVector<f64>) -> f64 {
        if self.identity {
            x.norm()
        } else {
            // ‖Lᵀx‖₂ avoids the cancellation in xᵀPx for tiny vectors.
            (self.factor.transpose() * x).norm()
        }
    }

    /// `‖x − y‖_P`.
    pub fn distance(&self, x: &DVector<f64>, y: &DVector<f64>) -> Result<f64> {
        check_dim("metric distance", self.dim(), x.len())?;
        check_dim("metric distance", self.dim(), y.len())?;
        Ok(self.norm_unchecked(&(x - y)))
    }

    /// The metric seen through a change of variables `u = Kη`, i.e. the
    /// matrix `K⁻ᵀ P K⁻¹` for which `‖K⁻¹(u − v)‖_P = ‖u − v‖_Q`.
    pub fn pushforward(&self, k_inv: &DMatrix<f64>) -> Result<Metric> {
        check_dim("metric pushforward", self.dim(), k_inv.nrows())?;
        let q = k_inv.transpose() * &self.p * k_inv;
        Metric::new((&q + q.transpose()) * 0.5)
    }
}
