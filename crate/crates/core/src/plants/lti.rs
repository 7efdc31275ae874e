use nalgebra::{DMatrix, DVector};

use super::Plant;
use crate::error::{check_dim, Error, Result};

/// `x⁺ = Ax + Bu + B_w w`, `e = Cx + Du + D_w w` with Schur-stable `A`.
#[derive(Debug, Clone)]
pub struct LtiPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    b_w: DMatrix<f64>,
    c: DMatrix<f64>,
    d: DMatrix<f64>,
    d_w: DMatrix<f64>,
    ts: f64,
    /// LU-solved `(I − A)⁻¹`.
    resolvent: DMatrix<f64>,
}

impl LtiPlant {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        b_w: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        d_w: DMatrix<f64>,
        ts: f64,
    ) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() || n == 0 {
            return Err(Error::invalid("A", "must be a non-empty square matrix"));
        }
        let m = b.ncols();
        let p = c.nrows();
        let nw = b_w.ncols();
        check_dim("B rows", n, b.nrows())?;
        check_dim("B_w rows", n, b_w.nrows())?;
        check_dim("C columns", n, c.ncols())?;
        check_dim("D rows", p, d.nrows())?;
        check_dim("D columns", m, d.ncols())?;
        check_dim("D_w rows", p, d_w.nrows())?;
        check_dim("D_w columns", nw, d_w.ncols())?;
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::invalid("ts", format!("sampling period must be positive, got {ts}")));
        }
        for mat in [&a, &b, &b_w, &c, &d, &d_w] {
            if mat.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("LTI plant matrices"));
            }
        }
        let radius = spectral_radius(&a);
        if radius >= 1.0 {
            return Err(Error::invalid(
                "A",
                format!("must be Schur stable, spectral radius is {radius}"),
            ));
        }
        let resolvent = (DMatrix::identity(n, n) - &a)
            .try_inverse()
            .ok_or(Error::Singular("I - A"))?;
        Ok(Self {
            a,
            b,
            b_w,
            c,
            d,
            d_w,
            ts,
            resolvent,
        })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    /// DC gain `G(1) = C(I − A)⁻¹B + D`.
    pub fn dc_gain(&self) -> DMatrix<f64> {
        &self.c * &self.resolvent * &self.b + &self.d
    }

    /// Disturbance DC gain `G_w(1) = C(I − A)⁻¹B_w + D_w`.
    pub fn disturbance_dc_gain(&self) -> DMatrix<f64> {
        &self.c * &self.resolvent * &self.b_w + &self.d_w
    }

    /// `(I − A)⁻¹`.
    pub fn resolvent(&self) -> &DMatrix<f64> {
        &self.resolvent
    }

    fn check_signals(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<()> {
        check_dim("input", self.b.ncols(), u.len())?;
        check_dim("disturbance", self.b_w.ncols(), w.len())
    }
}

pub(crate) fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

impl Plant for LtiPlant {
    fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    fn error_dim(&self) -> usize {
        self.c.nrows()
    }

    fn disturbance_dim(&self) -> usize {
        self.b_w.ncols()
    }

    fn sample_time(&self) -> f64 {
        self.ts
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        self.check_signals(u, w)?;
        let next = &self.a * x + &self.b * u + &self.b_w * w;
        if next.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("LTI state"));
        }
        Ok(next)
    }

    fn output(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("state", self.state_dim(), x.len())?;
        self.check_signals(u, w)?;
        Ok(&self.c * x + &self.d * u + &self.d_w * w)
    }

    fn equilibrium_state(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_signals(u, w)?;
        Ok(&self.resolvent * (&self.b * u + &self.b_w * w))
    }

    /// `G(1)u + G_w(1)w`.
    fn equilibrium_error(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_signals(u, w)?;
        let x = &self.resolvent * (&self.b * u + &self.b_w * w);
        Ok(&self.c * x + &self.d * u + &self.d_w * w)
    }
}

/// Solves `MᵀP + PM = Q` by vectorization,
/// `(I ⊗ Mᵀ + Mᵀ ⊗ I) vec(P) = vec(Q)`.
pub fn solve_lyapunov(m: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::invalid("M", "Lyapunov operator must be square"));
    }
    let n = m.nrows();
    check_dim("Lyapunov right-hand side", n, q.nrows())?;
    let id = DMatrix::<f64>::identity(n, n);
    let mt = m.transpose();
    let op = id.kronecker(&mt) + mt.kronecker(&id);
    let rhs = DVector::from_column_slice(q.as_slice());
    let lu = op.lu();
    // Eigenvalue pairs with λᵢ + λⱼ = 0 make the operator singular.
    let diag_min = lu.u().diagonal().amin();
    if diag_min <= 1e-12 * (1.0 + m.amax()) {
        return Err(Error::Singular("Lyapunov operator"));
    }
    let vec_p = lu.solve(&rhs).ok_or(Error::Singular("Lyapunov operator"))?;
    let p = DMatrix::from_column_slice(n, n, vec_p.as_slice());
    Ok((&p + p.transpose()) * 0.5)
}

/// Outcome of the Davison low-gain condition test on `M = G(1)K`.
#[derive(Debug, Clone)]
pub struct DavisonReport {
    /// `−G(1)K` is Hurwitz, i.e. the Lyapunov solution is positive definite.
    pub ok: bool,
    pub loop_gain: DMatrix<f64>,
    /// `P` solving `MᵀP + PM = I`, present only when positive definite.
    pub metric: Option<DMatrix<f64>>,
}

pub fn davison_check(plant: &LtiPlant, k: &DMatrix<f64>) -> Result<DavisonReport> {
    check_dim("gain rows", plant.input_dim(), k.nrows())?;
    let m = plant.dc_gain() * k;
    if !m.is_square() {
        return Err(Error::invalid("K", "G(1)K must be square"));
    }
    let n = m.nrows();
    let p = solve_lyapunov(&m, &DMatrix::identity(n, n))?;
    let ok = p.clone().cholesky().is_some();
    Ok(DavisonReport {
        ok,
        loop_gain: m,
        metric: ok.then_some(p),
    })
}
