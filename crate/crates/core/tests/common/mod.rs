#![allow(dead_code)]

use dpi_core::{ConvexSet, Metric};
use nalgebra::{dvector, DMatrix, DVector};
use rand::Rng;

pub fn random_matrix<R: Rng>(rng: &mut R, rows: usize, cols: usize, scale: f64) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-scale..scale))
}

pub fn random_vector<R: Rng>(rng: &mut R, n: usize, lo: f64, hi: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// `AᵀA + shift·I`, well conditioned for moderate `shift`.
pub fn random_spd<R: Rng>(rng: &mut R, n: usize, shift: f64) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n, 1.0);
    a.transpose() * a + DMatrix::identity(n, n) * shift
}

/// The pump-flow polygon `{0 ≤ u ≤ 45, u₁ + u₂ ≤ 85}`.
pub fn pump_polygon() -> ConvexSet {
    ConvexSet::intersection(vec![
        ConvexSet::new_box(dvector![0.0, 0.0], dvector![45.0, 45.0]).unwrap(),
        ConvexSet::new_halfspace(dvector![1.0, 1.0], 85.0).unwrap(),
    ])
    .unwrap()
}

/// Polygon membership with slack for accumulated grid-coordinate rounding.
pub fn in_pump_polygon(x: f64, y: f64) -> bool {
    let s = 1e-12;
    (-s..=45.0 + s).contains(&x) && (-s..=45.0 + s).contains(&y) && x + y <= 85.0 + s
}

fn quad(p: &DMatrix<f64>, dx: f64, dy: f64) -> f64 {
    p[(0, 0)] * dx * dx + 2.0 * p[(0, 1)] * dx * dy + p[(1, 1)] * dy * dy
}

/// Minimizes a function over the members of a 2-D grid region by exhaustive
/// search, refining around the incumbent level by level.
///
/// Each level scans a window of spacing `h` around the incumbent, then
/// shrinks `h` tenfold until it reaches `resolution`.
pub fn grid_minimize(
    f: impl Fn(f64, f64) -> f64,
    member: impl Fn(f64, f64) -> bool,
    lo: [f64; 2],
    hi: [f64; 2],
    coarse: f64,
    resolution: f64,
) -> [f64; 2] {
    let mut best = [f64::NAN; 2];
    let mut best_val = f64::INFINITY;
    let nx = ((hi[0] - lo[0]) / coarse).round() as i64;
    let ny = ((hi[1] - lo[1]) / coarse).round() as i64;
    for i in 0..=nx {
        for j in 0..=ny {
            let (x, y) = (lo[0] + i as f64 * coarse, lo[1] + j as f64 * coarse);
            if member(x, y) {
                let v = f(x, y);
                if v < best_val {
                    best_val = v;
                    best = [x, y];
                }
            }
        }
    }
    assert!(best_val.is_finite(), "grid has no member points");
    let mut h = coarse;
    while h > resolution {
        let window = 3.0 * h;
        h = (h / 10.0).max(resolution);
        let half = (window / h).ceil() as i64;
        // Re-centre until the incumbent stops moving, so a flat valley
        // cannot strand the search at the edge of its window.
        for _ in 0..10_000 {
            let centre = best;
            for i in -half..=half {
                for j in -half..=half {
                    let (x, y) = (centre[0] + i as f64 * h, centre[1] + j as f64 * h);
                    if member(x, y) {
                        let v = f(x, y);
                        if v < best_val {
                            best_val = v;
                            best = [x, y];
                        }
                    }
                }
            }
            if best == centre {
                break;
            }
        }
    }
    best
}

/// Brute-force `argmin_{ν ∈ polygon} ‖x − ν‖_P` on a grid.
pub fn grid_project_pump(p: &DMatrix<f64>, x: &DVector<f64>, resolution: f64) -> [f64; 2] {
    grid_minimize(
        |a, b| quad(p, x[0] - a, x[1] - b),
        in_pump_polygon,
        [0.0, 0.0],
        [45.0, 45.0],
        0.25,
        resolution,
    )
}

pub fn p_distance_sq(p: &DMatrix<f64>, x: &DVector<f64>, y: [f64; 2]) -> f64 {
    quad(p, x[0] - y[0], x[1] - y[1])
}

/// `max_ν ⟨x − p, ν − p⟩_P` over sampled members `ν`.
pub fn variational_gap(metric: &Metric, x: &DVector<f64>, p: &DVector<f64>, members: &[DVector<f64>]) -> f64 {
    let r = metric.matrix() * (x - p);
    members
        .iter()
        .map(|nu| r.dot(&(nu - p)))
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Affine `F(η) = Aη + b` with its exact constants in the `P` geometry.
pub struct Affine {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub mu: f64,
    pub lipschitz: f64,
}

impl Affine {
    pub fn apply(&self, eta: &DVector<f64>) -> DVector<f64> {
        &self.a * eta + &self.b
    }
}

/// Builds `A = R⁻¹MR` with `P = RᵀR` and `M = S + W` (`S` SPD, `W` skew),
/// so that `μ = λ_min(S)` and `L = σ_max(M)` hold exactly in the `P` norm.
pub fn random_affine<R: Rng>(rng: &mut R, metric: &Metric) -> Affine {
    let n = metric.dim();
    let shift = rng.random_range(0.05..1.0);
    let s = random_spd(rng, n, shift);
    let skew = rng.random_range(0.0..1.5);
    let k = random_matrix(rng, n, n, skew);
    let m = &s + (&k - k.transpose());
    let r = metric.factor().transpose();
    let r_inv = r.clone().try_inverse().unwrap();
    let mu = s.symmetric_eigenvalues().min();
    let lipschitz = m.clone().svd(false, false).singular_values.max();
    Affine {
        a: r_inv * m * r,
        b: random_vector(rng, n, -2.0, 2.0),
        mu,
        lipschitz,
    }
}

/// Random Schur-stable plant with `m` inputs and errors and `nw` disturbances.
pub fn random_lti<R: Rng>(rng: &mut R, n: usize, m: usize, nw: usize) -> dpi_core::plants::LtiPlant {
    let a = random_matrix(rng, n, n, 1.0);
    let radius = a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
    let target = rng.random_range(0.1..0.9);
    let a = if radius > 0.0 { a * (target / radius) } else { a };
    dpi_core::plants::LtiPlant::new(
        a,
        random_matrix(rng, n, m, 1.0),
        random_matrix(rng, n, nw, 1.0),
        random_matrix(rng, m, n, 1.0),
        random_matrix(rng, m, m, 0.5),
        random_matrix(rng, m, nw, 0.5),
        1.0,
    )
    .unwrap()
}
