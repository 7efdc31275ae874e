//! Closed convex sets with weighted (metric) projection.
//!
//! Closed forms are used where they exist: box clamping under a diagonal
//! metric, halfspaces under any metric, radial shrinking for balls under a
//! scaled identity. Everything else is reduced to a list of simple pieces
//! and projected with Dykstra's alternating scheme in the `P` inner product.
//! When every piece is a halfspace the Dykstra iterate is finished off by a
//! small active-set solve whose KKT conditions are checked explicitly, so
//! polyhedral projections come back exact to rounding.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::metric::Metric;

/// Absolute tolerance for "point belongs to set" checks on results.
pub const MEMBERSHIP_TOL: f64 = 1e-9;
/// Fixed-point residual at which Dykstra stops.
pub const PROJECTION_TOL: f64 = 1e-10;
pub const PROJECTION_MAX_ITER: usize = 10_000;

/// Violation floor below which a phase-one iterate certifies non-emptiness.
const FEASIBILITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone)]
pub struct ProjectionResult {
    pub point: DVector<f64>,
    /// Zero for closed-form branches.
    pub iterations: usize,
    /// Fixed-point gap of the iterative scheme; zero for closed forms.
    pub residual: f64,
}

impl ProjectionResult {
    fn exact(point: DVector<f64>) -> Self {
        Self {
            point,
            iterations: 0,
            residual: 0.0,
        }
    }
}

/// Concrete shape of a [`ConvexSet`].
#[derive(Debug, Clone)]
pub enum SetKind {
    /// `lower ≤ x ≤ upper`, entries may be infinite.
    Box {
        lower: DVector<f64>,
        upper: DVector<f64>,
    },
    /// `aᵀx ≤ b`.
    Halfspace { a: DVector<f64>, b: f64 },
    /// `‖x − center‖₂ ≤ radius`.
    Ball { center: DVector<f64>, radius: f64 },
    /// `Ax ≤ b`.
    Polyhedron { a: DMatrix<f64>, b: DVector<f64> },
    Intersection(Vec<ConvexSet>),
    /// `{η : Kη ∈ inner}` for square invertible `K`.
    LinearPreimage {
        k: DMatrix<f64>,
        k_inv: DMatrix<f64>,
        inner: Box<ConvexSet>,
    },
}

/// A validated, non-empty closed convex set.
#[derive(Debug, Clone)]
pub struct ConvexSet {
    kind: SetKind,
}

impl ConvexSet {
    pub fn new_box(lower: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        check_dim("box bounds", lower.len(), upper.len())?;
        if lower.is_empty() {
            return Err(Error::invalid("box", "bounds must be non-empty"));
        }
        for (i, (l, u)) in lower.iter().zip(upper.iter()).enumerate() {
            if l.is_nan() || u.is_nan() {
                return Err(Error::invalid("box", format!("bound {i} is NaN")));
            }
            if l > u {
                return Err(Error::invalid(
                    "box",
                    format!("lower[{i}] = {l} exceeds upper[{i}] = {u}"),
                ));
            }
            if *l == f64::INFINITY || *u == f64::NEG_INFINITY {
                return Err(Error::invalid("box", format!("bound {i} excludes every point")));
            }
        }
        Ok(Self {
            kind: SetKind::Box { lower, upper },
        })
    }

    /// All of `ℝⁿ`, as a box with infinite bounds.
    pub fn whole_space(dim: usize) -> Self {
        Self::new_box(
            DVector::from_element(dim, f64::NEG_INFINITY),
            DVector::from_element(dim, f64::INFINITY),
        )
        .expect("infinite box is valid")
    }

    pub fn new_halfspace(a: DVector<f64>, b: f64) -> Result<Self> {
        if a.is_empty() || a.iter().any(|v| !v.is_finite()) || !b.is_finite() {
            return Err(Error::invalid("halfspace", "normal and offset must be finite"));
        }
        if a.norm() == 0.0 {
            return Err(Error::invalid("halfspace", "normal vector must be non-zero"));
        }
        Ok(Self {
            kind: SetKind::Halfspace { a, b },
        })
    }

    pub fn new_ball(center: DVector<f64>, radius: f64) -> Result<Self> {
        if center.is_empty() || center.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("ball", "center must be finite"));
        }
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid("ball", format!("radius must be positive, got {radius}")));
        }
        Ok(Self {
            kind: SetKind::Ball { center, radius },
        })
    }

    /// `{x : Ax ≤ b}`; fails with [`Error::EmptySet`] when infeasible.
    pub fn new_polyhedron(a: DMatrix<f64>, b: DVector<f64>) -> Result<Self> {
        check_dim("polyhedron rows", a.nrows(), b.len())?;
        if a.nrows() == 0 || a.ncols() == 0 {
            return Err(Error::invalid("polyhedron", "needs at least one inequality"));
        }
        if a.iter().chain(b.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("polyhedron", "entries must be finite"));
        }
        for (i, row) in a.row_iter().enumerate() {
            if row.norm() == 0.0 {
                return Err(Error::invalid("polyhedron", format!("row {i} is zero")));
            }
        }
        let set = Self {
            kind: SetKind::Polyhedron { a, b },
        };
        set.check_nonempty()?;
        Ok(set)
    }

    pub fn intersection(sets: Vec<ConvexSet>) -> Result<Self> {
        let first = sets
            .first()
            .ok_or_else(|| Error::invalid("intersection", "needs at least one set"))?;
        let dim = first.dim();
        for s in &sets {
            check_dim("intersection member", dim, s.dim())?;
        }
        let set = Self {
            kind: SetKind::Intersection(sets),
        };
        set.check_nonempty()?;
        Ok(set)
    }

    /// `{η : Kη ∈ inner}`. Only square invertible `K` is accepted.
    pub fn linear_preimage(k: DMatrix<f64>, inner: ConvexSet) -> Result<Self> {
        if !k.is_square() {
            return Err(Error::invalid(
                "linear_preimage",
                format!("K must be square, got {}x{}", k.nrows(), k.ncols()),
            ));
        }
        check_dim("linear preimage", inner.dim(), k.nrows())?;
        let k_inv = k
            .clone()
            .try_inverse()
            .ok_or(Error::Singular("preimage gain K"))?;
        if k_inv.iter().any(|v| !v.is_finite()) {
            return Err(Error::Singular("preimage gain K"));
        }
        Ok(Self {
            kind: SetKind::LinearPreimage {
                k,
                k_inv,
                inner: Box::new(inner),
            },
        })
    }

    pub fn kind(&self) -> &SetKind {
        &self.kind
    }

    pub fn dim(&self) -> usize {
        match &self.kind {
            SetKind::Box { lower, .. } => lower.len(),
            SetKind::Halfspace { a, .. } => a.len(),
            SetKind::Ball { center, .. } => center.len(),
            SetKind::Polyhedron { a, .. } => a.ncols(),
            SetKind::Intersection(sets) => sets[0].dim(),
            SetKind::LinearPreimage { k, .. } => k.ncols(),
        }
    }

    /// True iff every defining inequality holds within `tol`.
    pub fn contains(&self, x: &DVector<f64>, tol: f64) -> bool {
        if x.len() != self.dim() {
            return false;
        }
        match &self.kind {
            SetKind::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .all(|(v, (l, u))| *v >= l - tol && *v <= u + tol),
            SetKind::Halfspace { a, b } => a.dot(x) <= b + tol,
            SetKind::Ball { center, radius } => (x - center).norm() <= radius + tol,
            SetKind::Polyhedron { a, b } => {
                let ax = a * x;
                ax.iter().zip(b.iter()).all(|(l, r)| *l <= r + tol)
            }
            SetKind::Intersection(sets) => sets.iter().all(|s| s.contains(x, tol)),
            SetKind::LinearPreimage { k, inner, .. } => inner.contains(&(k * x), tol),
        }
    }

    /// Largest violation of any defining inequality (zero inside).
    pub fn violation(&self, x: &DVector<f64>) -> f64 {
        match &self.kind {
            SetKind::Box { lower, upper } => x
                .iter()
                .zip(lower.iter().zip(upper.iter()))
                .map(|(v, (l, u))| (l - v).max(v - u).max(0.0))
                .fold(0.0, f64::max),
            SetKind::Halfspace { a, b } => (a.dot(x) - b).max(0.0),
            SetKind::Ball { center, radius } => ((x - center).norm() - radius).max(0.0),
            SetKind::Polyhedron { a, b } => (a * x - b).iter().fold(0.0, |m, v| m.max(*v)),
            SetKind::Intersection(sets) => sets.iter().map(|s| s.violation(x)).fold(0.0, f64::max),
            SetKind::LinearPreimage { k, inner, .. } => inner.violation(&(k * x)),
        }
    }

    /// Signed Euclidean distance to the boundary, positive inside.
    ///
    /// Exact for interior points of polyhedral sets and of balls reached
    /// through an orthogonal map; other cases are a conservative estimate.
    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        let id = DMatrix::identity(x.len(), x.len());
        self.margin_mapped(x, &id)
    }

    fn margin_mapped(&self, x: &DVector<f64>, map: &DMatrix<f64>) -> f64 {
        let y = map * x;
        let half = |a: &DVector<f64>, b: f64| -> f64 {
            let n = (map.transpose() * a).norm();
            if n == 0.0 {
                f64::INFINITY
            } else {
                (b - a.dot(&y)) / n
            }
        };
        match &self.kind {
            SetKind::Box { lower, upper } => {
                let mut m = f64::INFINITY;
                for i in 0..lower.len() {
                    let mut e = DVector::zeros(lower.len());
                    e[i] = 1.0;
                    if upper[i].is_finite() {
                        m = m.min(half(&e, upper[i]));
                    }
                    if lower[i].is_finite() {
                        m = m.min(half(&(-&e), -lower[i]));
                    }
                }
                m
            }
            SetKind::Halfspace { a, b } => half(a, *b),
            SetKind::Ball { center, radius } => {
                let gain = map.clone().svd(false, false).singular_values.max();
                (radius - (&y - center).norm()) / gain
            }
            SetKind::Polyhedron { a, b } => a
                .row_iter()
                .zip(b.iter())
                .map(|(row, bi)| half(&row.transpose(), *bi))
                .fold(f64::INFINITY, f64::min),
            SetKind::Intersection(sets) => sets
                .iter()
                .map(|s| s.margin_mapped(x, map))
                .fold(f64::INFINITY, f64::min),
            SetKind::LinearPreimage { k, inner, .. } => inner.margin_mapped(x, &(k * map)),
        }
    }

    /// Weighted projection `argmin_{ν ∈ set} ‖x − ν‖_P`.
    pub fn project(&self, metric: &Metric, x: &DVector<f64>) -> Result<ProjectionResult> {
        check_dim("projection point", self.dim(), x.len())?;
        check_dim("projection metric", self.dim(), metric.dim())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("projection input"));
        }
        if self.contains(x, 0.0) {
            return Ok(ProjectionResult::exact(x.clone()));
        }
        match &self.kind {
            SetKind::Box { lower, upper } if metric.is_diagonal() => {
                Ok(ProjectionResult::exact(clamp(x, lower, upper)))
            }
            SetKind::Halfspace { a, b } => {
                let pa = metric.inverse() * a;
                Ok(ProjectionResult::exact(project_halfspace(x, a, *b, &pa)))
            }
            SetKind::Ball { center, radius } => project_ball(metric, x, center, *radius),
            SetKind::LinearPreimage { k, k_inv, inner } => {
                let q = metric.pushforward(k_inv)?;
                let inner_res = inner.project(&q, &(k * x))?;
                Ok(ProjectionResult {
                    point: k_inv * inner_res.point,
                    iterations: inner_res.iterations,
                    residual: inner_res.residual,
                })
            }
            _ => {
                if let Some(exact) = self.project_polyhedron_ellipsoid(metric, x)? {
                    return Ok(exact);
                }
                let pieces = self.pieces(metric);
                let out = dykstra(&pieces, metric, x, PROJECTION_TOL, PROJECTION_MAX_ITER)?;
                if out.converged {
                    Ok(ProjectionResult {
                        point: out.point,
                        iterations: out.iterations,
                        residual: out.residual,
                    })
                } else {
                    Err(Error::NonConvergence {
                        iterations: out.iterations,
                        residual: out.residual,
                    })
                }
            }
        }
    }

    /// Decomposes the set into pieces with exact `P`-projections.
    fn pieces(&self, metric: &Metric) -> Vec<Piece> {
        let mut out = Vec::new();
        self.collect_pieces(metric, None, false, &mut out);
        out
    }

    /// `map` is the accumulated preimage map from the ambient space into
    /// this set's coordinates. With `split_boxes` every box becomes
    /// halfspaces, even under a diagonal metric.
    fn collect_pieces(&self, metric: &Metric, map: Option<&DMatrix<f64>>, split_boxes: bool, out: &mut Vec<Piece>) {
        let mut push_half = |a: DVector<f64>, b: f64| {
            let a = match map {
                Some(m) => m.transpose() * a,
                None => a,
            };
            if a.norm() > 0.0 {
                let pa = metric.inverse() * &a;
                out.push(Piece::Halfspace { a, b, p_inv_a: pa });
            }
        };
        match &self.kind {
            SetKind::Box { lower, upper } => {
                if !split_boxes && map.is_none() && metric.is_diagonal() {
                    out.push(Piece::Clamp(self.clone()));
                    return;
                }
                let n = lower.len();
                for i in 0..n {
                    let mut e = DVector::zeros(n);
                    e[i] = 1.0;
                    if upper[i].is_finite() {
                        push_half(e.clone(), upper[i]);
                    }
                    if lower[i].is_finite() {
                        push_half(-e, -lower[i]);
                    }
                }
            }
            SetKind::Halfspace { a, b } => push_half(a.clone(), *b),
            SetKind::Polyhedron { a, b } => {
                for (row, bi) in a.row_iter().zip(b.iter()) {
                    push_half(row.transpose(), *bi);
                }
            }
            SetKind::Ball { center, radius } => out.push(match map {
                None => Piece::Ellipsoid {
                    center: center.clone(),
                    shape: None,
                    radius: *radius,
                },
                Some(m) => {
                    let inv = m.clone().try_inverse().expect("composed preimage maps are invertible");
                    Piece::Ellipsoid {
                        center: inv * center,
                        shape: Some(m.transpose() * m),
                        radius: *radius,
                    }
                }
            }),
            SetKind::Intersection(sets) => {
                for s in sets {
                    s.collect_pieces(metric, map, split_boxes, out);
                }
            }
            SetKind::LinearPreimage { k, inner, .. } => {
                let composed = match map {
                    Some(m) => k * m,
                    None => k.clone(),
                };
                inner.collect_pieces(metric, Some(&composed), split_boxes, out);
            }
        }
    }

    /// Polyhedron intersected with a single ellipsoid `(ν − c)ᵀM(ν − c) ≤ r²`.
    ///
    /// For a multiplier `κ ≥ 0` the penalized problem is a polyhedral
    /// projection in the metric `P + κM`, solved exactly by the active-set
    /// path. The ellipsoid value decreases in `κ`, so bisection finds the
    /// complementary multiplier. Returns `None` for any other structure.
    fn project_polyhedron_ellipsoid(&self, metric: &Metric, x: &DVector<f64>) -> Result<Option<ProjectionResult>> {
        let mut pieces = Vec::new();
        self.collect_pieces(metric, None, true, &mut pieces);
        let (curved, flat): (Vec<Piece>, Vec<Piece>) =
            pieces.into_iter().partition(|p| matches!(p, Piece::Ellipsoid { .. }));
        let [Piece::Ellipsoid { center, shape, radius }] = curved.as_slice() else {
            return Ok(None);
        };
        if flat.is_empty() {
            return Ok(None);
        }
        let n = x.len();
        let shape = shape.clone().unwrap_or_else(|| DMatrix::identity(n, n));
        let rows: Vec<(DVector<f64>, f64)> = flat
            .into_iter()
            .map(|p| match p {
                Piece::Halfspace { a, b, .. } => (a, b),
                _ => unreachable!("boxes are split into halfspaces"),
            })
            .collect();
        let px = metric.matrix() * x;
        let mc = &shape * center;
        let mut work = 0;
        let mut solve = |kappa: f64| -> Result<Option<(DVector<f64>, f64)>> {
            let mk = Metric::new(metric.matrix() + &shape * kappa)?;
            let target = mk.inverse() * (&px + &mc * kappa);
            let pieces: Vec<Piece> = rows
                .iter()
                .map(|(a, b)| Piece::Halfspace {
                    a: a.clone(),
                    b: *b,
                    p_inv_a: mk.inverse() * a,
                })
                .collect();
            let out = dykstra(&pieces, &mk, &target, PROJECTION_TOL, PROJECTION_MAX_ITER)?;
            work += out.iterations;
            if !out.converged {
                return Ok(None);
            }
            let d = &out.point - center;
            let value = d.dot(&(&shape * &d));
            Ok(Some((out.point, value)))
        };

        let r2 = radius * radius;
        let Some((nu, value)) = solve(0.0)? else { return Ok(None) };
        if value <= r2 {
            return Ok(Some(ProjectionResult {
                point: nu,
                iterations: work,
                residual: 0.0,
            }));
        }
        let mut lo = 0.0;
        let mut hi = metric.lambda_max() / shape.diagonal().max();
        let mut best = loop {
            let Some((nu, value)) = solve(hi)? else { return Ok(None) };
            if value <= r2 {
                break nu;
            }
            lo = hi;
            hi *= 4.0;
            if hi > 1e30 {
                return Ok(None);
            }
        };
        for _ in 0..200 {
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                break;
            }
            let mid = 0.5 * (lo + hi);
            let Some((nu, value)) = solve(mid)? else { return Ok(None) };
            if value <= r2 {
                hi = mid;
                best = nu;
            } else {
                lo = mid;
            }
        }
        Ok(Some(ProjectionResult {
            point: best,
            iterations: work,
            residual: hi - lo,
        }))
    }

    /// Phase-one feasibility: project the origin with Dykstra and require the
    /// final iterate to satisfy every piece to within a residual floor.
    fn check_nonempty(&self) -> Result<()> {
        let metric = Metric::identity(self.dim());
        let pieces = self.pieces(&metric);
        let origin = DVector::zeros(self.dim());
        let out = dykstra(&pieces, &metric, &origin, PROJECTION_TOL, PROJECTION_MAX_ITER)?;
        let violation = self.violation(&out.point);
        if violation <= FEASIBILITY_FLOOR && out.point.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::EmptySet { violation })
        }
    }

    /// Per-coordinate bounds implied by the set (possibly infinite).
    pub fn coordinate_bounds(&self) -> (DVector<f64>, DVector<f64>) {
        let n = self.dim();
        let unbounded = || {
            (
                DVector::from_element(n, f64::NEG_INFINITY),
                DVector::from_element(n, f64::INFINITY),
            )
        };
        let axis_rows = |rows: Vec<(DVector<f64>, f64)>| {
            let (mut lo, mut hi) = unbounded();
            for (a, b) in rows {
                let nz: Vec<usize> = (0..n).filter(|&i| a[i] != 0.0).collect();
                if let [i] = nz[..] {
                    let bound = b / a[i];
                    if a[i] > 0.0 {
                        hi[i] = hi[i].min(bound);
                    } else {
                        lo[i] = lo[i].max(bound);
                    }
                }
            }
            (lo, hi)
        };
        match &self.kind {
            SetKind::Box { lower, upper } => (lower.clone(), upper.clone()),
            SetKind::Ball { center, radius } => (center.add_scalar(-radius), center.add_scalar(*radius)),
            SetKind::Halfspace { a, b } => axis_rows(vec![(a.clone(), *b)]),
            SetKind::Polyhedron { a, b } => axis_rows(
                a.row_iter()
                    .zip(b.iter())
                    .map(|(r, bi)| (r.transpose(), *bi))
                    .collect(),
            ),
            SetKind::Intersection(sets) => {
                let (mut lo, mut hi) = unbounded();
                for s in sets {
                    let (l, h) = s.coordinate_bounds();
                    lo = lo.zip_map(&l, f64::max);
                    hi = hi.zip_map(&h, f64::min);
                }
                (lo, hi)
            }
            SetKind::LinearPreimage { k_inv, inner, .. } => {
                let (l, h) = inner.coordinate_bounds();
                if l.iter().chain(h.iter()).any(|v| !v.is_finite()) {
                    return unbounded();
                }
                let mid = k_inv * (&l + &h) * 0.5;
                let half = k_inv.abs() * (&h - &l) * 0.5;
                (&mid - &half, &mid + &half)
            }
        }
    }

    /// Finite axis-aligned bounding box, if the set is bounded along every
    /// coordinate as far as its description reveals.
    pub fn bounding_box(&self) -> Option<(DVector<f64>, DVector<f64>)> {
        let (lo, hi) = self.coordinate_bounds();
        if lo.iter().chain(hi.iter()).all(|v| v.is_finite()) {
            Some((lo, hi))
        } else {
            None
        }
    }

    /// Draws `count` points from the set by rejection sampling from its
    /// bounding box (or `bounds`, when the caller supplies a superset box).
    pub fn sample<R: Rng + ?Sized>(
        &self,
        count: usize,
        rng: &mut R,
        bounds: Option<(&DVector<f64>, &DVector<f64>)>,
    ) -> Result<Vec<DVector<f64>>> {
        let (lo, hi) = match bounds {
            Some((l, h)) => {
                check_dim("sampling box", self.dim(), l.len())?;
                check_dim("sampling box", self.dim(), h.len())?;
                (l.clone(), h.clone())
            }
            None => self.bounding_box().ok_or_else(|| {
                Error::Sampling("set is unbounded; supply a bounding box".into())
            })?,
        };
        if lo.iter().chain(hi.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Sampling("sampling box must be finite".into()));
        }
        let max_attempts = 1000 * count + 10_000;
        let mut points = Vec::with_capacity(count);
        let mut attempts = 0;
        while points.len() < count && attempts < max_attempts {
            attempts += 1;
            let x = DVector::from_fn(self.dim(), |i, _| {
                if hi[i] > lo[i] {
                    rng.random_range(lo[i]..=hi[i])
                } else {
                    lo[i]
                }
            });
            if self.contains(&x, 0.0) {
                points.push(x);
            }
        }
        if points.len() < count {
            return Err(Error::Sampling(format!(
                "accepted {} of {count} points after {attempts} draws",
                points.len()
            )));
        }
        Ok(points)
    }
}

/// Empirical normal-cone test: the largest value of `⟨d, η − x̄⟩_P` over
/// `samples` random points `η` of the set. A value `≤ tol` certifies (up to
/// sampling) that `d` lies in the normal cone at `x̄`.
pub fn normal_cone_residual(
    set: &ConvexSet,
    metric: &Metric,
    xbar: &DVector<f64>,
    d: &DVector<f64>,
    samples: usize,
    seed: u64,
    bounds: Option<(&DVector<f64>, &DVector<f64>)>,
) -> Result<f64> {
    check_dim("normal cone base point", set.dim(), xbar.len())?;
    check_dim("normal cone direction", set.dim(), d.len())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pd = metric.matrix() * d;
    let points = set.sample(samples, &mut rng, bounds)?;
    Ok(points
        .iter()
        .map(|eta| pd.dot(&(eta - xbar)))
        .fold(f64::NEG_INFINITY, f64::max))
}

fn clamp(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(x.len(), |i, _| x[i].max(lower[i]).min(upper[i]))
}

/// `x − max(0, aᵀx − b)/(aᵀP⁻¹a) · P⁻¹a`.
fn project_halfspace(x: &DVector<f64>, a: &DVector<f64>, b: f64, p_inv_a: &DVector<f64>) -> DVector<f64> {
    let excess = a.dot(x) - b;
    if excess <= 0.0 {
        return x.clone();
    }
    x - p_inv_a * (excess / a.dot(p_inv_a))
}

/// Ball projection. Under a scaled identity it is a radial shrink; in
/// general the KKT point is `c + (P + μI)⁻¹P(x − c)` with the scalar `μ ≥ 0`
/// found by bisection on the (monotone) distance to the center.
fn project_ball(
    metric: &Metric,
    x: &DVector<f64>,
    center: &DVector<f64>,
    radius: f64,
) -> Result<ProjectionResult> {
    let z = x - center;
    let dist = z.norm();
    if dist <= radius {
        return Ok(ProjectionResult::exact(x.clone()));
    }
    let (vals, vecs) = metric.eigen();
    let scaled_identity = metric.is_diagonal() && vals.max() == vals.min();
    if scaled_identity {
        return Ok(ProjectionResult::exact(center + z * (radius / dist)));
    }

    let y = vecs.transpose() * &z;
    let shrink = |mu: f64| DVector::from_fn(y.len(), |i, _| vals[i] * y[i] / (vals[i] + mu));
    let (mut lo, mut hi) = (0.0, vals.max() * dist / radius);
    let mut iterations = 0;
    while iterations < 200 && hi - lo > f64::EPSILON * hi {
        iterations += 1;
        let mid = 0.5 * (lo + hi);
        if shrink(mid).norm() > radius {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let w = shrink(hi);
    let gap = (w.norm() - radius).abs();
    Ok(ProjectionResult {
        point: center + vecs * w,
        iterations,
        residual: gap,
    })
}

/// `c + (P + κM)⁻¹P(x − c)` with `κ` bisected onto the boundary.
fn project_ellipsoid(
    metric: &Metric,
    shape: &DMatrix<f64>,
    center: &DVector<f64>,
    radius: f64,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    let z = x - center;
    let value = |d: &DVector<f64>| d.dot(&(shape * d));
    let r2 = radius * radius;
    if value(&z) <= r2 {
        return Ok(x.clone());
    }
    let pz = metric.matrix() * &z;
    let step = |kappa: f64| -> Result<DVector<f64>> {
        (metric.matrix() + shape * kappa)
            .cholesky()
            .map(|c| c.solve(&pz))
            .ok_or(Error::NonFinite("ellipsoid multiplier system"))
    };
    let (mut lo, mut hi) = (0.0, metric.lambda_max() / shape.diagonal().max());
    let mut best = step(hi)?;
    while value(&best) > r2 {
        lo = hi;
        hi *= 4.0;
        if hi > 1e30 {
            return Err(Error::NonConvergence {
                iterations: 0,
                residual: value(&best).sqrt() - radius,
            });
        }
        best = step(hi)?;
    }
    for _ in 0..200 {
        if hi - lo <= 4.0 * f64::EPSILON * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let d = step(mid)?;
        if value(&d) <= r2 {
            hi = mid;
            best = d;
        } else {
            lo = mid;
        }
    }
    Ok(center + best)
}

/// A component with its own exact `P`-projection.
#[derive(Debug, Clone)]
enum Piece {
    Halfspace {
        a: DVector<f64>,
        b: f64,
        p_inv_a: DVector<f64>,
    },
    /// Box under a diagonal metric.
    Clamp(ConvexSet),
    /// `(ν − center)ᵀ shape (ν − center) ≤ radius²`; no shape means a ball.
    Ellipsoid {
        center: DVector<f64>,
        shape: Option<DMatrix<f64>>,
        radius: f64,
    },
}

impl Piece {
    fn project(&self, metric: &Metric, x: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Piece::Halfspace { a, b, p_inv_a } => Ok(project_halfspace(x, a, *b, p_inv_a)),
            Piece::Clamp(set) => match set.kind() {
                SetKind::Box { lower, upper } => Ok(clamp(x, lower, upper)),
                _ => unreachable!("clamp pieces are boxes"),
            },
            Piece::Ellipsoid { center, shape: None, radius } => Ok(project_ball(metric, x, center, *radius)?.point),
            Piece::Ellipsoid {
                center,
                shape: Some(shape),
                radius,
            } => project_ellipsoid(metric, shape, center, *radius, x),
        }
    }
}

struct DykstraOutcome {
    point: DVector<f64>,
    iterations: usize,
    residual: f64,
    converged: bool,
}

/// Dykstra's alternating projections in the `P` inner product; equivalent to
/// the Euclidean scheme in coordinates whitened by the metric's factor.
fn dykstra(
    pieces: &[Piece],
    metric: &Metric,
    x0: &DVector<f64>,
    tol: f64,
    max_iter: usize,
) -> Result<DykstraOutcome> {
    let polyhedral = pieces.iter().all(|p| matches!(p, Piece::Halfspace { .. }));
    let mut x = x0.clone();
    let mut increments = vec![DVector::zeros(x0.len()); pieces.len()];
    let mut residual = f64::INFINITY;

    for it in 1..=max_iter {
        let x_prev = x.clone();
        let mut change2 = 0.0;
        for (piece, inc) in pieces.iter().zip(increments.iter_mut()) {
            let shifted = &x + &*inc;
            let y = piece.project(metric, &shifted)?;
            let new_inc = shifted - &y;
            change2 += metric.norm_unchecked(&(&new_inc - &*inc)).powi(2);
            *inc = new_inc;
            x = y;
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dykstra iterate"));
        }
        residual = metric.norm_unchecked(&(&x - &x_prev)).max(change2.sqrt());

        let done = residual < tol;
        if polyhedral && (done || it.is_power_of_two() || it % 64 == 0) {
            if let Some(exact) = active_set_finish(pieces, x0, &increments) {
                return Ok(DykstraOutcome {
                    point: exact,
                    iterations: it,
                    residual: residual.min(tol),
                    converged: true,
                });
            }
        }
        if done {
            return Ok(DykstraOutcome {
                point: x,
                iterations: it,
                residual,
                converged: true,
            });
        }
    }
    Ok(DykstraOutcome {
        point: x,
        iterations: max_iter,
        residual,
        converged: false,
    })
}

type Row<'a> = (&'a DVector<f64>, f64, &'a DVector<f64>);

/// Solves `min ‖ν − x‖_P s.t. aᵢᵀν ≤ bᵢ` by a primal active-set loop warm
/// started from the constraints Dykstra currently treats as active. Returns
/// `None` unless the KKT conditions are verified.
fn active_set_finish(
    pieces: &[Piece],
    x: &DVector<f64>,
    increments: &[DVector<f64>],
) -> Option<DVector<f64>> {
    let rows: Vec<Row> = pieces
        .iter()
        .map(|p| match p {
            Piece::Halfspace { a, b, p_inv_a } => (a, *b, p_inv_a),
            _ => unreachable!("only called for polyhedral piece lists"),
        })
        .collect();
    let scale = 1.0 + x.amax();
    let mut warm: Vec<usize> = (0..rows.len())
        .filter(|&i| increments[i].amax() > 1e-14 * scale)
        .collect();
    warm.sort_by(|&i, &j| increments[j].amax().total_cmp(&increments[i].amax()));
    let mut active: Vec<usize> = Vec::new();
    for i in warm {
        if independent(&rows, &active, i) {
            active.push(i);
        }
    }

    for _ in 0..(4 * rows.len() + 4) {
        let (nu, multipliers) = if active.is_empty() {
            (x.clone(), DVector::zeros(0))
        } else {
            let gram = active_gram(&rows, &active);
            let rhs = DVector::from_fn(active.len(), |i, _| rows[active[i]].0.dot(x) - rows[active[i]].1);
            let y = gram.cholesky()?.solve(&rhs);
            if y.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let mut nu = x.clone();
            for (i, &idx) in active.iter().enumerate() {
                nu -= rows[idx].2 * y[i];
            }
            (nu, y)
        };

        let (min_pos, min_val) = multipliers
            .iter()
            .enumerate()
            .fold((usize::MAX, 0.0), |acc, (i, v)| if *v < acc.1 { (i, *v) } else { acc });
        if min_pos != usize::MAX && min_val < -1e-12 * scale {
            active.remove(min_pos);
            continue;
        }

        let excess = |(a, b, _): &Row, nu: &DVector<f64>| (a.dot(nu) - b) / (1.0 + b.abs() + a.norm() * nu.amax());
        let worst = rows
            .iter()
            .enumerate()
            .filter(|(i, _)| !active.contains(i))
            .map(|(i, row)| (i, excess(row, &nu)))
            .fold((usize::MAX, 1e-13), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
        if worst.0 != usize::MAX {
            let j = worst.0;
            if !independent(&rows, &active, j) {
                // Write a_j = Σ cᵢaᵢ over the active rows and drop the row
                // whose multiplier reaches zero first as a_j's grows.
                let gram = active_gram(&rows, &active);
                let cross = DVector::from_fn(active.len(), |i, _| rows[j].0.dot(rows[active[i]].2));
                let coef = gram.cholesky()?.solve(&cross);
                let drop = (0..active.len())
                    .filter(|&i| coef[i] > 1e-12)
                    .min_by(|&a, &b| (multipliers[a] / coef[a]).total_cmp(&(multipliers[b] / coef[b])))?;
                active.remove(drop);
            }
            active.push(j);
            continue;
        }
        return rows.iter().all(|row| excess(row, &nu) <= 1e-12).then_some(nu);
    }
    None
}

/// `Gᵢⱼ = aᵢᵀP⁻¹aⱼ` over the given rows.
fn active_gram(rows: &[Row], idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |i, j| rows[idx[i]].0.dot(rows[idx[j]].2))
}

/// Whether row `cand` keeps the active normals linearly independent.
fn independent(rows: &[Row], active: &[usize], cand: usize) -> bool {
    let mut idx = active.to_vec();
    idx.push(cand);
    let gram = active_gram(rows, &idx);
    let gmax = gram.diagonal().max();
    gram.cholesky()
        .is_some_and(|c| c.l().diagonal().iter().all(|d| d * d > 1e-10 * gmax))
}

/// Serializable description of a convex set, tagged by `"type"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SetSpec {
    /// Infinite entries leave a coordinate unbounded on that side.
    Box { lower: Vec<f64>, upper: Vec<f64> },
    Halfspace { a: Vec<f64>, b: f64 },
    Ball { center: Vec<f64>, radius: f64 },
    Polyhedron { a: Vec<Vec<f64>>, b: Vec<f64> },
    Intersection { sets: Vec<SetSpec> },
    LinearPreimage { k: Vec<Vec<f64>>, inner: std::boxed::Box<SetSpec> },
}

impl SetSpec {
    pub fn build(&self) -> Result<ConvexSet> {
        match self {
            SetSpec::Box { lower, upper } => {
                ConvexSet::new_box(DVector::from_column_slice(lower), DVector::from_column_slice(upper))
            }
            SetSpec::Halfspace { a, b } => ConvexSet::new_halfspace(DVector::from_column_slice(a), *b),
            SetSpec::Ball { center, radius } => {
                ConvexSet::new_ball(DVector::from_column_slice(center), *radius)
            }
            SetSpec::Polyhedron { a, b } => {
                ConvexSet::new_polyhedron(matrix_from_rows(a, "polyhedron.a")?, DVector::from_column_slice(b))
            }
            SetSpec::Intersection { sets } => {
                ConvexSet::intersection(sets.iter().map(SetSpec::build).collect::<Result<_>>()?)
            }
            SetSpec::LinearPreimage { k, inner } => {
                ConvexSet::linear_preimage(matrix_from_rows(k, "linear_preimage.k")?, inner.build()?)
            }
        }
    }
}

/// Dense matrix from row-major nested vectors.
pub fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<DMatrix<f64>> {
    let n = rows.len();
    let m = rows.first().map_or(0, Vec::len);
    if n == 0 || m == 0 || rows.iter().any(|r| r.len() != m) {
        return Err(Error::invalid(name, "rows must be non-empty and of equal length"));
    }
    Ok(DMatrix::from_fn(n, m, |i, j| rows[i][j]))
}
