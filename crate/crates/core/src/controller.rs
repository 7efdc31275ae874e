//! Integral controllers.
//!
//! [`DpiController`] is the damped projected integral law
//!
//! ```text
//! u_k     = K η_k
//! η_{k+1} = (1 − λ) η_k + λ Proj_Γ^P(η_k − (T_s/T_i) e_k)
//! ```
//!
//! with `Γ = {η : Kη ∈ C}`. Starting in `Γ`, every update is a convex
//! combination of two points of `Γ`, so `u_k ∈ C` for all `k` and the
//! integrator cannot wind up. [`ClassicalIntegralController`] is the
//! unconstrained law `η_{k+1} = η_k − (T_s/T_i) e_k`.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::metric::Metric;
use crate::sets::{ConvexSet, MEMBERSHIP_TOL};

/// How the controller state is initialized.
#[derive(Debug, Clone, PartialEq)]
pub enum Initialization {
    /// `η₀ = Proj_Γ^P(0)`.
    Default,
    /// `η₀ = Proj_Γ^P(K⁻¹u₀)`.
    FromInput(DVector<f64>),
    /// Explicit `η₀`, which must already lie in `Γ`.
    State(DVector<f64>),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DpiGains {
    /// Integral time constant `T_i` (s).
    pub ti: f64,
    /// Damping `λ ∈ (0, 1)`.
    pub lambda: f64,
    /// Permit `λ = 1` for experiments.
    pub allow_unit_damping: bool,
}

impl DpiGains {
    pub fn new(ti: f64, lambda: f64) -> Self {
        Self {
            ti,
            lambda,
            allow_unit_damping: false,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.ti > 0.0 && self.ti.is_finite()) {
            return Err(Error::invalid("ti", format!("must be positive, got {}", self.ti)));
        }
        let upper_ok = self.lambda < 1.0 || (self.allow_unit_damping && self.lambda == 1.0);
        if !(self.lambda > 0.0 && upper_ok) {
            return Err(Error::invalid(
                "lambda",
                format!("must lie in (0, 1), got {}", self.lambda),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct DpiController {
    eta: DVector<f64>,
    gain: DMatrix<f64>,
    ts: f64,
    gains: DpiGains,
    constraint: ConvexSet,
    gamma: ConvexSet,
    metric: Metric,
}

/// Result of one controller update.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlStep {
    /// Input applied during the step, `K η_k` from the pre-update state.
    pub u: DVector<f64>,
    /// Whether the projection had to be evaluated.
    pub projected: bool,
}

impl DpiController {
    /// Builds `Γ = {η : Kη ∈ C}` from a square invertible gain and
    /// initializes a feasible state.
    pub fn new(
        gain: DMatrix<f64>,
        constraint: ConvexSet,
        metric: Metric,
        ts: f64,
        gains: DpiGains,
        init: Initialization,
    ) -> Result<Self> {
        gains.validate()?;
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::invalid("ts", format!("must be positive, got {ts}")));
        }
        check_dim("constraint set", gain.nrows(), constraint.dim())?;
        let gamma = ConvexSet::linear_preimage(gain.clone(), constraint.clone())?;
        check_dim("controller metric", gamma.dim(), metric.dim())?;

        let eta = match init {
            Initialization::Default => {
                gamma.project(&metric, &DVector::zeros(gamma.dim()))?.point
            }
            Initialization::FromInput(u0) => {
                check_dim("initial input", gain.nrows(), u0.len())?;
                let k_inv = gain.clone().try_inverse().ok_or(Error::Singular("controller gain K"))?;
                gamma.project(&metric, &(k_inv * u0))?.point
            }
            Initialization::State(eta0) => {
                check_dim("initial controller state", gamma.dim(), eta0.len())?;
                if !gamma.contains(&eta0, MEMBERSHIP_TOL) {
                    return Err(Error::invalid("eta0", "initial controller state must lie in Gamma"));
                }
                eta0
            }
        };
        Ok(Self {
            eta,
            gain,
            ts,
            gains,
            constraint,
            gamma,
            metric,
        })
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn gains(&self) -> DpiGains {
        self.gains
    }

    pub fn sample_time(&self) -> f64 {
        self.ts
    }

    /// Integral step `α = T_s/T_i`.
    pub fn alpha(&self) -> f64 {
        self.ts / self.gains.ti
    }

    pub fn gamma(&self) -> &ConvexSet {
        &self.gamma
    }

    pub fn constraint(&self) -> &ConvexSet {
        &self.constraint
    }

    pub fn metric(&self) -> &Metric {
        &self.metric
    }

    /// Current output `Kη`.
    pub fn input(&self) -> DVector<f64> {
        &self.gain * &self.eta
    }

    /// Returns `Kη_k` and advances the state; the projection is only
    /// evaluated when the integral step leaves `Γ`.
    pub fn step(&mut self, e: &DVector<f64>) -> Result<ControlStep> {
        check_dim("error signal", self.eta.len(), e.len())?;
        let u = self.input();
        let candidate = &self.eta - e * self.alpha();
        let (target, projected) = if self.gamma.contains(&candidate, 0.0) {
            (candidate, false)
        } else {
            (self.gamma.project(&self.metric, &candidate)?.point, true)
        };
        let lambda = self.gains.lambda;
        self.eta = &self.eta * (1.0 - lambda) + target * lambda;
        Ok(ControlStep { u, projected })
    }

    /// `‖η − Proj_Γ^P(η − αe)‖_P` for a measured error `e`.
    pub fn natural_residual(&self, eta: &DVector<f64>, e: &DVector<f64>) -> Result<f64> {
        let p = self.gamma.project(&self.metric, &(eta - e * self.alpha()))?.point;
        self.metric.distance(eta, &p)
    }
}

/// `η_{k+1} = η_k − (T_s/T_i) e_k`, `u_k = Kη_k`.
#[derive(Debug, Clone)]
pub struct ClassicalIntegralController {
    eta: DVector<f64>,
    gain: DMatrix<f64>,
    ts: f64,
    ti: f64,
}

impl ClassicalIntegralController {
    pub fn new(gain: DMatrix<f64>, ts: f64, ti: f64, eta0: DVector<f64>) -> Result<Self> {
        if !(ts > 0.0 && ts.is_finite()) {
            return Err(Error::invalid("ts", format!("must be positive, got {ts}")));
        }
        if !(ti > 0.0 && ti.is_finite()) {
            return Err(Error::invalid("ti", format!("must be positive, got {ti}")));
        }
        check_dim("initial controller state", gain.ncols(), eta0.len())?;
        Ok(Self {
            eta: eta0,
            gain,
            ts,
            ti,
        })
    }

    pub fn state(&self) -> &DVector<f64> {
        &self.eta
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn alpha(&self) -> f64 {
        self.ts / self.ti
    }

    pub fn input(&self) -> DVector<f64> {
        &self.gain * &self.eta
    }

    pub fn step(&mut self, e: &DVector<f64>) -> Result<ControlStep> {
        check_dim("error signal", self.eta.len(), e.len())?;
        let u = self.input();
        self.eta -= e * self.alpha();
        Ok(ControlStep {
            u,
            projected: false,
        })
    }
}
