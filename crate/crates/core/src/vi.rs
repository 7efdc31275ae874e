//! Forward-backward splitting for variational inequalities
//! `find η̄ ∈ Γ : ⟨F(η̄), η − η̄⟩_P ≥ 0 ∀η ∈ Γ`.
//!
//! The solver iterates the damped map
//! `Φ_d(η) = (1 − λ)η + λ·Proj_Γ^P(η − αF(η))` and stops on the natural
//! residual `‖η − Proj_Γ^P(η − αF(η))‖_P`, which vanishes exactly at
//! solutions. Strong monotonicity `μ` and Lipschitz `L` certificates give
//! the contraction factors
//! `c_fb = √(1 − 2αμ + α²L²)` and `c_dfb = 1 − λ(1 − c_fb)`
//! on the admissible window `α ∈ (0, 2μ/L²)`.

use nalgebra::DVector;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{check_dim, Error, Result};
use crate::metric::Metric;
use crate::sets::{ConvexSet, MEMBERSHIP_TOL};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;

/// A (possibly fallible) vector field `F`.
pub trait Operator {
    fn apply(&self, eta: &DVector<f64>) -> Result<DVector<f64>>;
}

impl<F> Operator for F
where
    F: Fn(&DVector<f64>) -> DVector<f64>,
{
    fn apply(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(self(eta))
    }
}

/// `VI_P(Γ, F)`.
pub struct ViProblem<'a, F: Operator + ?Sized> {
    pub operator: &'a F,
    pub set: &'a ConvexSet,
    pub metric: &'a Metric,
}

impl<F: Operator + ?Sized> Clone for ViProblem<'_, F> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<F: Operator + ?Sized> Copy for ViProblem<'_, F> {}

impl<'a, F: Operator + ?Sized> ViProblem<'a, F> {
    pub fn new(operator: &'a F, set: &'a ConvexSet, metric: &'a Metric) -> Result<Self> {
        check_dim("VI metric", set.dim(), metric.dim())?;
        Ok(Self {
            operator,
            set,
            metric,
        })
    }

    pub fn dim(&self) -> usize {
        self.set.dim()
    }

    fn eval(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        let v = self.operator.apply(eta)?;
        check_dim("operator output", self.dim(), v.len())?;
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("operator value"));
        }
        Ok(v)
    }
}

/// Step size, damping, and optional monotonicity/Lipschitz certificates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FbParams {
    pub alpha: f64,
    pub lambda: f64,
    pub mu: Option<f64>,
    pub lipschitz: Option<f64>,
}

impl FbParams {
    /// `alpha > 0` and `lambda ∈ (0, 1]`; `lambda = 1` gives the undamped map.
    pub fn new(alpha: f64, lambda: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha", format!("must be positive, got {alpha}")));
        }
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::invalid("lambda", format!("must lie in (0, 1], got {lambda}")));
        }
        Ok(Self {
            alpha,
            lambda,
            mu: None,
            lipschitz: None,
        })
    }

    /// Certified parameters with the default step `α = μ/L²`, which
    /// minimizes `c_fb` over the admissible window.
    pub fn certified(mu: f64, lipschitz: f64, lambda: f64) -> Result<Self> {
        validate_certificates(mu, lipschitz)?;
        let mut p = Self::new(mu / (lipschitz * lipschitz), lambda)?;
        p.mu = Some(mu);
        p.lipschitz = Some(lipschitz);
        Ok(p)
    }

    pub fn with_certificates(mut self, mu: f64, lipschitz: f64) -> Result<Self> {
        validate_certificates(mu, lipschitz)?;
        self.mu = Some(mu);
        self.lipschitz = Some(lipschitz);
        Ok(self)
    }
}

fn validate_certificates(mu: f64, lipschitz: f64) -> Result<()> {
    if !(mu > 0.0 && mu.is_finite()) {
        return Err(Error::invalid("mu", format!("must be positive, got {mu}")));
    }
    if !(lipschitz >= mu && lipschitz.is_finite()) {
        return Err(Error::invalid(
            "L",
            format!("must satisfy 0 < mu <= L, got mu = {mu}, L = {lipschitz}"),
        ));
    }
    Ok(())
}

/// `Φ(η) = Proj_Γ^P(η − αF(η))`.
pub fn fb_map<F: Operator + ?Sized>(
    problem: &ViProblem<'_, F>,
    params: &FbParams,
    eta: &DVector<f64>,
) -> Result<DVector<f64>> {
    check_dim("iterate", problem.dim(), eta.len())?;
    let step = eta - problem.eval(eta)? * params.alpha;
    Ok(problem.set.project(problem.metric, &step)?.point)
}

/// `Φ_d(η) = (1 − λ)η + λΦ(η)`.
pub fn fb_damped_map<F: Operator + ?Sized>(
    problem: &ViProblem<'_, F>,
    params: &FbParams,
    eta: &DVector<f64>,
) -> Result<DVector<f64>> {
    let phi = fb_map(problem, params, eta)?;
    Ok(damp(eta, &phi, params.lambda))
}

fn damp(eta: &DVector<f64>, phi: &DVector<f64>, lambda: f64) -> DVector<f64> {
    eta * (1.0 - lambda) + phi * lambda
}

/// `‖η − Φ(η)‖_P`; zero exactly at solutions of the VI.
pub fn natural_residual<F: Operator + ?Sized>(
    problem: &ViProblem<'_, F>,
    params: &FbParams,
    eta: &DVector<f64>,
) -> Result<f64> {
    let phi = fb_map(problem, params, eta)?;
    Ok(problem.metric.norm_unchecked(&(eta - phi)))
}

/// Contraction factors of `Φ` and `Φ_d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContractionConstants {
    pub c_fb: f64,
    pub c_dfb: f64,
}

pub fn contraction_constants(params: &FbParams) -> Result<ContractionConstants> {
    let (mu, l) = match (params.mu, params.lipschitz) {
        (Some(mu), Some(l)) => (mu, l),
        _ => {
            return Err(Error::invalid(
                "certificates",
                "mu and L are required for contraction constants",
            ))
        }
    };
    let upper = 2.0 * mu / (l * l);
    if !(params.alpha > 0.0 && params.alpha < upper) {
        return Err(Error::invalid(
            "alpha",
            format!("must lie in (0, 2mu/L^2) = (0, {upper}), got {}", params.alpha),
        ));
    }
    if !(params.lambda > 0.0 && params.lambda < 1.0) {
        return Err(Error::invalid(
            "lambda",
            format!("must lie in (0, 1), got {}", params.lambda),
        ));
    }
    let a = params.alpha;
    let c_fb = (1.0 - 2.0 * a * mu + a * a * l * l).max(0.0).sqrt();
    let c_dfb = 1.0 - params.lambda * (1.0 - c_fb);
    Ok(ContractionConstants { c_fb, c_dfb })
}

#[derive(Debug, Clone)]
pub struct ViSolution {
    pub eta: DVector<f64>,
    /// Natural residual of each visited iterate, starting with `eta0`.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl ViSolution {
    pub fn iterations(&self) -> usize {
        self.trace.len().saturating_sub(1)
    }

    pub fn residual(&self) -> f64 {
        self.trace.last().copied().unwrap_or(f64::INFINITY)
    }
}

/// Damped forward-backward iteration from `eta0` until the natural residual
/// drops below `tol`. Exceeding `max_iter` is not an error: the best iterate
/// seen is returned with `converged = false`.
pub fn solve_vi<F: Operator + ?Sized>(
    problem: &ViProblem<'_, F>,
    params: &FbParams,
    eta0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<ViSolution> {
    check_dim("initial iterate", problem.dim(), eta0.len())?;
    if !problem.set.contains(eta0, MEMBERSHIP_TOL) {
        return Err(Error::invalid("eta0", "initial iterate must lie in the constraint set"));
    }
    let mut eta = eta0.clone();
    let mut trace = Vec::new();
    let mut best = (f64::INFINITY, eta.clone());
    for _ in 0..=max_iter {
        let phi = fb_map(problem, params, &eta)?;
        let r = problem.metric.norm_unchecked(&(&eta - &phi));
        trace.push(r);
        if r < best.0 {
            best = (r, eta.clone());
        }
        if r < tol {
            return Ok(ViSolution {
                eta,
                trace,
                converged: true,
            });
        }
        eta = damp(&eta, &phi, params.lambda);
    }
    Ok(ViSolution {
        eta: best.1,
        trace,
        converged: false,
    })
}

/// Empirical one-sided monotonicity and Lipschitz estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonicityEstimate {
    /// Minimum observed `⟨F(η) − F(η′), η − η′⟩_P / ‖η − η′‖²_P` (≥ true μ).
    pub mu: f64,
    /// Maximum observed `‖F(η) − F(η′)‖_P / ‖η − η′‖_P` (≤ true L).
    pub lipschitz: f64,
    pub pairs: usize,
}

/// Samples `samples` random pairs in `set` (or the supplied bounding box
/// intersected with it) and records the extreme difference quotients.
pub fn estimate_mu_l<F: Operator + ?Sized>(
    operator: &F,
    set: &ConvexSet,
    metric: &Metric,
    samples: usize,
    seed: u64,
    bounds: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<MonotonicityEstimate> {
    check_dim("estimator metric", set.dim(), metric.dim())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = set.sample(2 * samples, &mut rng, bounds)?;
    let mut mu = f64::INFINITY;
    let mut lipschitz: f64 = 0.0;
    let mut pairs = 0;
    for pair in points.chunks_exact(2) {
        let (a, b) = (&pair[0], &pair[1]);
        let d = a - b;
        if d.norm() < 1e-12 {
            continue;
        }
        let fd = operator.apply(a)? - operator.apply(b)?;
        let dn = metric.norm_unchecked(&d);
        mu = mu.min(metric.inner_unchecked(&fd, &d) / (dn * dn));
        lipschitz = lipschitz.max(metric.norm_unchecked(&fd) / dn);
        pairs += 1;
    }
    if pairs == 0 {
        return Err(Error::Sampling("no non-degenerate sample pairs".into()));
    }
    Ok(MonotonicityEstimate {
        mu,
        lipschitz,
        pairs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dvector, DMatrix};

    fn interval(lo: f64, hi: f64) -> ConvexSet {
        ConvexSet::new_box(dvector![lo], dvector![hi]).unwrap()
    }

    #[test]
    fn fb_map_examples() {
        let m = Metric::identity(1);
        let zero = |_: &DVector<f64>| dvector![0.0];
        let set = interval(0.0, 1.0);
        let p = ViProblem::new(&zero, &set, &m).unwrap();
        let params = FbParams::new(1.0, 1.0).unwrap();
        assert_eq!(fb_map(&p, &params, &dvector![0.3]).unwrap(), dvector![0.3]);

        let id = |x: &DVector<f64>| x.clone();
        let free = ConvexSet::whole_space(1);
        let p = ViProblem::new(&id, &free, &m).unwrap();
        let params = FbParams::new(0.5, 1.0).unwrap();
        assert_eq!(fb_map(&p, &params, &dvector![2.0]).unwrap(), dvector![1.0]);

        let shifted = |x: &DVector<f64>| x.add_scalar(-2.0);
        let p = ViProblem::new(&shifted, &set, &m).unwrap();
        let params = FbParams::new(1.0, 1.0).unwrap();
        assert_eq!(fb_map(&p, &params, &dvector![0.5]).unwrap(), dvector![1.0]);
    }

    #[test]
    fn damped_map_examples() {
        let m = Metric::identity(1);
        let set = interval(0.0, 1.0);
        let f = |x: &DVector<f64>| x.add_scalar(-2.0);
        let p = ViProblem::new(&f, &set, &m).unwrap();
        let undamped = FbParams::new(1.0, 1.0).unwrap();
        let eta = dvector![0.25];
        assert_eq!(fb_damped_map(&p, &undamped, &eta).unwrap(), fb_map(&p, &undamped, &eta).unwrap());

        // eta = 0, fb_map(0) = 1 → midpoint 0.5
        let half = FbParams::new(1.0, 0.5).unwrap();
        assert_eq!(fb_damped_map(&p, &half, &dvector![0.0]).unwrap(), dvector![0.5]);

        assert!(FbParams::new(1.0, 0.0).is_err());
        assert!(FbParams::new(0.0, 0.5).is_err());
    }

    #[test]
    fn contraction_examples() {
        let p = FbParams::new(1.0, 0.95).unwrap().with_certificates(1.0, 1.0).unwrap();
        let c = contraction_constants(&p).unwrap();
        assert_eq!(c.c_fb, 0.0);
        assert!((c.c_dfb - 0.05).abs() < 1e-15);

        let p = FbParams::new(0.25, 0.5).unwrap().with_certificates(1.0, 2.0).unwrap();
        assert!((contraction_constants(&p).unwrap().c_fb - 0.75f64.sqrt()).abs() < 1e-15);

        let near = FbParams::new(0.5 - 1e-9, 0.5).unwrap().with_certificates(1.0, 2.0).unwrap();
        let c = contraction_constants(&near).unwrap().c_fb;
        assert!(c < 1.0 && c > 0.9999);

        let outside = FbParams::new(0.6, 0.5).unwrap().with_certificates(1.0, 2.0).unwrap();
        match contraction_constants(&outside) {
            Err(Error::InvalidParameter { name, reason }) => {
                assert_eq!(name, "alpha");
                assert!(reason.contains("0.5"));
            }
            other => panic!("unexpected {other:?}"),
        }
        let undamped = FbParams::new(0.25, 1.0).unwrap().with_certificates(1.0, 2.0).unwrap();
        assert!(contraction_constants(&undamped).is_err());
    }

    #[test]
    fn default_step_is_mu_over_l_squared() {
        let p = FbParams::certified(1.0, 2.0, 0.5).unwrap();
        assert_eq!(p.alpha, 0.25);
        assert!(FbParams::certified(2.0, 1.0, 0.5).is_err());
    }

    #[test]
    fn solve_unconstrained_root() {
        let m = Metric::identity(2);
        let set = ConvexSet::whole_space(2);
        let c = dvector![3.0, -1.5];
        let f = |x: &DVector<f64>| x - &c;
        let p = ViProblem::new(&f, &set, &m).unwrap();
        let params = FbParams::certified(1.0, 1.0, 0.9).unwrap();
        let sol = solve_vi(&p, &params, &dvector![0.0, 0.0], 1e-12, 1000).unwrap();
        assert!(sol.converged);
        assert!((sol.eta - c).amax() < 1e-11);
    }

    #[test]
    fn solve_active_upper_bound() {
        let m = Metric::identity(1);
        let set = interval(0.0, 1.0);
        let f = |x: &DVector<f64>| x.add_scalar(-2.0);
        let p = ViProblem::new(&f, &set, &m).unwrap();
        let params = FbParams::certified(1.0, 1.0, 0.5).unwrap();
        let sol = solve_vi(&p, &params, &dvector![0.0], 1e-12, 1000).unwrap();
        assert!(sol.converged);
        assert!((sol.eta[0] - 1.0).abs() < 1e-11);
        // ⟨F(1), η − 1⟩ = (−1)(η − 1) ≥ 0 on [0, 1]
        for k in 0..=10 {
            let eta = k as f64 / 10.0;
            assert!(-(eta - 1.0) >= 0.0);
        }
    }

    #[test]
    fn solve_reports_non_convergence() {
        // rotation field: monotone but not strongly, undamped FB cycles
        let m = Metric::identity(2);
        let set = ConvexSet::whole_space(2);
        let rot = DMatrix::from_row_slice(2, 2, &[0.0, -1.0, 1.0, 0.0]);
        let f = |x: &DVector<f64>| &rot * x;
        let p = ViProblem::new(&f, &set, &m).unwrap();
        let params = FbParams::new(1.0, 1.0).unwrap();
        let sol = solve_vi(&p, &params, &dvector![1.0, 0.0], 1e-10, 50).unwrap();
        assert!(!sol.converged);
        assert_eq!(sol.iterations(), 50);
    }

    #[test]
    fn solve_rejects_infeasible_start() {
        let m = Metric::identity(1);
        let set = interval(0.0, 1.0);
        let f = |x: &DVector<f64>| x.clone();
        let p = ViProblem::new(&f, &set, &m).unwrap();
        let params = FbParams::new(0.5, 0.5).unwrap();
        assert!(solve_vi(&p, &params, &dvector![2.0], 1e-10, 10).is_err());
    }

    #[test]
    fn natural_residual_zero_operator() {
        let m = Metric::identity(1);
        let set = interval(0.0, 1.0);
        let zero = |_: &DVector<f64>| dvector![0.0];
        let p = ViProblem::new(&zero, &set, &m).unwrap();
        let params = FbParams::new(0.7, 0.5).unwrap();
        for k in 0..=10 {
            assert_eq!(natural_residual(&p, &params, &dvector![k as f64 / 10.0]).unwrap(), 0.0);
        }
    }

    #[test]
    fn identity_map_estimates_are_exactly_one() {
        let m = Metric::identity(2);
        let set = ConvexSet::new_box(dvector![0.0, 0.0], dvector![1.0, 1.0]).unwrap();
        let id = |x: &DVector<f64>| x.clone();
        let est = estimate_mu_l(&id, &set, &m, 200, 7, None).unwrap();
        assert!((est.mu - 1.0).abs() < 1e-12);
        assert!((est.lipschitz - 1.0).abs() < 1e-12);
        assert_eq!(est.pairs, 200);
    }
}
