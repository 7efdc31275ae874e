//! Discrete-time plant models `x⁺ = f(x, u, w)`, `e = h(x, u, w)` together
//! with their equilibrium maps `π_x(u, w)` and `π(u, w) = h(π_x(u, w), u, w)`.

mod four_tank;
mod lti;

pub use four_tank::{FourTankParams, FourTankPlant};
pub use lti::{davison_check, solve_lyapunov, DavisonReport, LtiPlant};

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::vi::Operator;

pub trait Plant: Send + Sync {
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn error_dim(&self) -> usize;
    fn disturbance_dim(&self) -> usize;
    /// Sampling period in seconds.
    fn sample_time(&self) -> f64;

    /// One sampling period of the dynamics.
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>>;

    /// Error output `h(x, u, w)`.
    fn output(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>>;

    /// Equilibrium state `π_x(u, w)`.
    fn equilibrium_state(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>>;

    /// Equilibrium input-to-error map `π(u, w)`.
    fn equilibrium_error(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        let x = self.equilibrium_state(u, w)?;
        self.output(&x, u, w)
    }
}

/// `η ↦ π(Kη, w)`, the operator whose VI the integral controller solves.
pub struct EquilibriumMap<'a> {
    pub plant: &'a dyn Plant,
    pub gain: &'a DMatrix<f64>,
    pub w: &'a DVector<f64>,
}

impl Operator for EquilibriumMap<'_> {
    fn apply(&self, eta: &DVector<f64>) -> Result<DVector<f64>> {
        self.plant.equilibrium_error(&(self.gain * eta), self.w)
    }
}
