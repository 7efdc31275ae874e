//! Quadruple-tank process.
//!
//! Levels `h ∈ ℝ⁴` (cm), pump flows `u ∈ ℝ²` (cm³/s). Tanks 3 and 4 drain
//! into tanks 1 and 2, and pump `i` splits its flow with ratio `γᵢ` between a
//! lower and an upper tank:
//!
//! ```text
//! ḣ₁ = (−a₁√(2gh₁) + a₃√(2gh₃) + γ₁u₁) / A₁
//! ḣ₂ = (−a₂√(2gh₂) + a₄√(2gh₄) + γ₂u₂) / A₂
//! ḣ₃ = (−a₃√(2gh₃) + (1 − γ₂)u₂) / A₃
//! ḣ₄ = (−a₄√(2gh₄) + (1 − γ₁)u₁) / A₄
//! ```
//!
//! The exogenous signal is the reference `r` for the two lower tanks and the
//! error is `e = (h₁ − r₁, h₂ − r₂)`. Outlet areas are calibrated so that a
//! chosen nominal pair `(h⋆, u⋆)` is an exact equilibrium.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector4};

use super::Plant;
use crate::error::{check_dim, Error, Result};

/// Slack for tiny negative inputs coming out of projections.
const INPUT_DOMAIN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FourTankParams {
    /// Tank cross-sections `A₁..A₄` (cm²).
    pub areas: [f64; 4],
    /// Flow split ratios `γ₁, γ₂ ∈ (0, 1)`.
    pub gamma: [f64; 2],
    /// Gravity (cm/s²).
    pub g: f64,
    /// Sampling period (s).
    pub ts: f64,
    /// RK4 substeps per sampling period.
    pub substeps: usize,
    /// Explicit outlet areas `a₁..a₄` (cm²); derived from the nominal point when absent.
    pub outlets: Option<[f64; 4]>,
    pub u_nominal: [f64; 2],
    pub h_nominal: [f64; 4],
}

impl Default for FourTankParams {
    fn default() -> Self {
        Self {
            areas: [28.0; 4],
            gamma: [0.7, 0.7],
            g: 981.0,
            ts: 10.0,
            substeps: 10,
            outlets: None,
            u_nominal: [32.64, 32.64],
            h_nominal: [10.0, 10.0, 5.38, 5.38],
        }
    }
}

#[derive(Debug, Clone)]
pub struct FourTankPlant {
    areas: Vector4<f64>,
    outlets: Vector4<f64>,
    gamma: [f64; 2],
    g: f64,
    ts: f64,
    substeps: usize,
    /// Steady-state flow-to-outlet-velocity matrix Π.
    pi: Matrix2<f64>,
}

impl FourTankPlant {
    pub fn new(params: &FourTankParams) -> Result<Self> {
        let FourTankParams {
            areas,
            gamma,
            g,
            ts,
            substeps,
            outlets,
            u_nominal,
            h_nominal,
        } = params;
        for (i, a) in areas.iter().enumerate() {
            if !(*a > 0.0 && a.is_finite()) {
                return Err(Error::invalid(format!("plant.areas[{i}]"), "must be positive"));
            }
        }
        for (i, gm) in gamma.iter().enumerate() {
            if !(*gm > 0.0 && *gm < 1.0) {
                return Err(Error::invalid(format!("plant.gamma[{i}]"), "must lie in (0, 1)"));
            }
        }
        if (gamma[0] + gamma[1] - 1.0).abs() < 1e-12 {
            return Err(Error::invalid("plant.gamma", "gamma1 + gamma2 = 1 makes Pi singular"));
        }
        if !(*g > 0.0 && g.is_finite()) {
            return Err(Error::invalid("plant.g", "must be positive"));
        }
        if !(*ts > 0.0 && ts.is_finite()) {
            return Err(Error::invalid("plant.ts", "must be positive"));
        }
        if *substeps == 0 {
            return Err(Error::invalid("plant.substeps", "must be at least 1"));
        }
        let outlets = match outlets {
            Some(a) => {
                for (i, v) in a.iter().enumerate() {
                    if !(*v > 0.0 && v.is_finite()) {
                        return Err(Error::invalid(format!("plant.outlets[{i}]"), "must be positive"));
                    }
                }
                *a
            }
            None => calibrate_outlets(gamma, *g, u_nominal, h_nominal)?,
        };
        let [a1, a2, _, _] = outlets;
        let pi = Matrix2::new(
            gamma[0] / a1,
            (1.0 - gamma[1]) / a1,
            (1.0 - gamma[0]) / a2,
            gamma[1] / a2,
        );
        Ok(Self {
            areas: Vector4::from(*areas),
            outlets: Vector4::from(outlets),
            gamma: *gamma,
            g: *g,
            ts: *ts,
            substeps: *substeps,
            pi,
        })
    }

    pub fn outlets(&self) -> [f64; 4] {
        self.outlets.into()
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Same plant with a different number of integrator substeps.
    pub fn with_substeps(&self, substeps: usize) -> Result<Self> {
        if substeps == 0 {
            return Err(Error::invalid("plant.substeps", "must be at least 1"));
        }
        Ok(Self {
            substeps,
            ..self.clone()
        })
    }

    /// The matrix Π with `π(ū) = (1/2g) diag(Πū) Πū` (levels of tanks 1, 2).
    pub fn pi_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_iterator(2, 2, self.pi.iter().copied())
    }

    /// `K = Π⁻¹`, which makes `η ↦ π(Kη)` diagonal.
    pub fn pi_inverse(&self) -> DMatrix<f64> {
        let inv = self.pi.try_inverse().expect("validated gamma keeps Pi invertible");
        DMatrix::from_iterator(2, 2, inv.iter().copied())
    }

    /// Continuous-time vector field.
    pub fn derivative(&self, h: &Vector4<f64>, u: &Vector2<f64>) -> Vector4<f64> {
        let phi = h.map(|v| (2.0 * self.g * v.max(0.0)).sqrt());
        let (a, s) = (&self.outlets, &self.areas);
        let [g1, g2] = self.gamma;
        Vector4::new(
            (-a[0] * phi[0] + a[2] * phi[2] + g1 * u[0]) / s[0],
            (-a[1] * phi[1] + a[3] * phi[3] + g2 * u[1]) / s[1],
            (-a[2] * phi[2] + (1.0 - g2) * u[1]) / s[2],
            (-a[3] * phi[3] + (1.0 - g1) * u[0]) / s[3],
        )
    }

    /// Classical RK4 over one sampling period, clamping levels at zero
    /// after every substep.
    pub fn integrate(&self, h: &Vector4<f64>, u: &Vector2<f64>) -> Result<Vector4<f64>> {
        let dt = self.ts / self.substeps as f64;
        let mut x = *h;
        for _ in 0..self.substeps {
            let k1 = self.derivative(&x, u);
            let k2 = self.derivative(&(x + k1 * (dt / 2.0)), u);
            let k3 = self.derivative(&(x + k2 * (dt / 2.0)), u);
            let k4 = self.derivative(&(x + k3 * dt), u);
            x += (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
            x.apply(|v| *v = v.max(0.0));
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("four-tank levels"));
            }
        }
        Ok(x)
    }

    fn check_input(&self, u: &DVector<f64>) -> Result<Vector2<f64>> {
        check_dim("tank input", 2, u.len())?;
        if u.iter().any(|v| *v < -INPUT_DOMAIN_TOL) {
            return Err(Error::Domain(format!(
                "steady state requires non-negative pump flows, got ({}, {})",
                u[0], u[1]
            )));
        }
        Ok(Vector2::new(u[0].max(0.0), u[1].max(0.0)))
    }

    /// `Πū`, the steady outlet velocities `√(2gh̄₁), √(2gh̄₂)`.
    fn steady_velocities(&self, u: &Vector2<f64>) -> Result<Vector2<f64>> {
        let v = self.pi * u;
        if v.iter().any(|x| *x < -INPUT_DOMAIN_TOL) {
            return Err(Error::Domain(format!(
                "Pi*u must be non-negative, got ({}, {})",
                v[0], v[1]
            )));
        }
        Ok(v.map(|x| x.max(0.0)))
    }
}

/// Outlet areas making `(h⋆, u⋆)` an equilibrium:
/// `a₃√(2gh₃) = (1−γ₂)u₂`, `a₄√(2gh₄) = (1−γ₁)u₁`,
/// `a₁√(2gh₁) = γ₁u₁ + (1−γ₂)u₂`, `a₂√(2gh₂) = γ₂u₂ + (1−γ₁)u₁`.
fn calibrate_outlets(gamma: &[f64; 2], g: f64, u: &[f64; 2], h: &[f64; 4]) -> Result<[f64; 4]> {
    if u.iter().chain(h.iter()).any(|v| v.is_nan() || *v <= 0.0) {
        return Err(Error::invalid(
            "plant.nominal",
            "calibration needs strictly positive nominal levels and flows",
        ));
    }
    let vel = |level: f64| (2.0 * g * level).sqrt();
    let [g1, g2] = *gamma;
    Ok([
        (g1 * u[0] + (1.0 - g2) * u[1]) / vel(h[0]),
        (g2 * u[1] + (1.0 - g1) * u[0]) / vel(h[1]),
        (1.0 - g2) * u[1] / vel(h[2]),
        (1.0 - g1) * u[0] / vel(h[3]),
    ])
}

impl Plant for FourTankPlant {
    fn state_dim(&self) -> usize {
        4
    }

    fn input_dim(&self) -> usize {
        2
    }

    fn error_dim(&self) -> usize {
        2
    }

    fn disturbance_dim(&self) -> usize {
        2
    }

    fn sample_time(&self) -> f64 {
        self.ts
    }

    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("tank levels", 4, x.len())?;
        check_dim("tank input", 2, u.len())?;
        check_dim("tank reference", 2, w.len())?;
        if x.iter().any(|v| !v.is_finite()) || u.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("four-tank step input"));
        }
        let h = Vector4::new(x[0], x[1], x[2], x[3]);
        let next = self.integrate(&h, &Vector2::new(u[0], u[1]))?;
        Ok(DVector::from_column_slice(next.as_slice()))
    }

    fn output(&self, x: &DVector<f64>, _u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("tank levels", 4, x.len())?;
        check_dim("tank reference", 2, w.len())?;
        Ok(DVector::from_vec(vec![x[0] - w[0], x[1] - w[1]]))
    }

    fn equilibrium_state(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("tank reference", 2, w.len())?;
        let u = self.check_input(u)?;
        let v = self.steady_velocities(&u)?;
        let two_g = 2.0 * self.g;
        let [g1, g2] = self.gamma;
        let upper3 = (1.0 - g2) * u[1] / self.outlets[2];
        let upper4 = (1.0 - g1) * u[0] / self.outlets[3];
        Ok(DVector::from_vec(vec![
            v[0] * v[0] / two_g,
            v[1] * v[1] / two_g,
            upper3 * upper3 / two_g,
            upper4 * upper4 / two_g,
        ]))
    }

    /// `(1/2g)·((Πū)₁², (Πū)₂²) − r`.
    fn equilibrium_error(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        check_dim("tank reference", 2, w.len())?;
        let u = self.check_input(u)?;
        let v = self.steady_velocities(&u)?;
        let two_g = 2.0 * self.g;
        Ok(DVector::from_vec(vec![
            v[0] * v[0] / two_g - w[0],
            v[1] * v[1] / two_g - w[1],
        ]))
    }
}
