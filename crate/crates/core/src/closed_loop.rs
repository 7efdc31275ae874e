//! Plant/controller interconnection, trajectory records, steady-state VI
//! certificates and low-gain sweeps.
//!
//! Each sample runs `u_k = Kη_k`, `e_k = h(x_k, u_k, w)`, the controller
//! update on `e_k`, then `x_{k+1} = f(x_k, u_k, w)`.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::controller::{ClassicalIntegralController, DpiController, DpiGains, Initialization};
use crate::error::{check_dim, Error, Result};
use crate::metric::Metric;
use crate::plants::{EquilibriumMap, Plant};
use crate::sets::{normal_cone_residual, ConvexSet, MEMBERSHIP_TOL};
use crate::vi::{solve_vi, FbParams, ViProblem, ViSolution, DEFAULT_MAX_ITER, DEFAULT_TOL};

/// Threshold on `‖η_{k+1} − η_k‖_P + ‖ξ_k‖` over the final window.
pub const CONVERGENCE_TOL: f64 = 1e-6;
/// Fraction of the horizon inspected for convergence.
pub const CONVERGENCE_WINDOW: f64 = 0.1;
/// Deviation level below which samples are excluded from rate fits.
pub const DECAY_FIT_FLOOR: f64 = 1e-8;
pub const DEFAULT_NORMAL_CONE_SAMPLES: usize = 2000;

#[derive(Debug, Clone)]
pub enum ControllerSpec {
    Dpi {
        gain: DMatrix<f64>,
        constraint: ConvexSet,
        metric: Metric,
        gains: DpiGains,
        init: Initialization,
    },
    Classical {
        gain: DMatrix<f64>,
        ti: f64,
        eta0: DVector<f64>,
        metric: Metric,
    },
}

impl ControllerSpec {
    pub fn gain(&self) -> &DMatrix<f64> {
        match self {
            ControllerSpec::Dpi { gain, .. } | ControllerSpec::Classical { gain, .. } => gain,
        }
    }

    pub fn metric(&self) -> &Metric {
        match self {
            ControllerSpec::Dpi { metric, .. } | ControllerSpec::Classical { metric, .. } => metric,
        }
    }

    pub fn ti(&self) -> f64 {
        match self {
            ControllerSpec::Dpi { gains, .. } => gains.ti,
            ControllerSpec::Classical { ti, .. } => *ti,
        }
    }

    /// Same controller with a different `(T_i, λ)`; classical controllers
    /// ignore `λ`.
    pub fn with_gains(&self, ti: f64, lambda: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            ControllerSpec::Dpi { gains, .. } => {
                gains.ti = ti;
                gains.lambda = lambda;
            }
            ControllerSpec::Classical { ti: t, .. } => *t = ti,
        }
        out
    }

    fn build(&self, ts: f64) -> Result<ActiveController> {
        match self {
            ControllerSpec::Dpi {
                gain,
                constraint,
                metric,
                gains,
                init,
            } => Ok(ActiveController::Dpi(DpiController::new(
                gain.clone(),
                constraint.clone(),
                metric.clone(),
                ts,
                *gains,
                init.clone(),
            )?)),
            ControllerSpec::Classical { gain, ti, eta0, .. } => Ok(ActiveController::Classical(
                ClassicalIntegralController::new(gain.clone(), ts, *ti, eta0.clone())?,
            )),
        }
    }
}

#[allow(clippy::large_enum_variant)]
enum ActiveController {
    Dpi(DpiController),
    Classical(ClassicalIntegralController),
}

impl ActiveController {
    fn state(&self) -> &DVector<f64> {
        match self {
            ActiveController::Dpi(c) => c.state(),
            ActiveController::Classical(c) => c.state(),
        }
    }

    fn input(&self) -> DVector<f64> {
        match self {
            ActiveController::Dpi(c) => c.input(),
            ActiveController::Classical(c) => c.input(),
        }
    }

    fn step(&mut self, e: &DVector<f64>) -> Result<bool> {
        match self {
            ActiveController::Dpi(c) => c.step(e).map(|s| s.projected),
            ActiveController::Classical(c) => c.step(e).map(|s| s.projected),
        }
    }

    fn residual(&self, e: &DVector<f64>, metric: &Metric) -> Result<f64> {
        match self {
            ActiveController::Dpi(c) => c.natural_residual(c.state(), e),
            ActiveController::Classical(c) => metric.norm(&(e * c.alpha())),
        }
    }
}

/// Piecewise-constant exogenous signal change.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleEntry {
    pub start: usize,
    pub w: DVector<f64>,
}

#[derive(Clone)]
pub struct Scenario {
    pub plant: Arc<dyn Plant>,
    pub controller: ControllerSpec,
    /// Must start at step 0 with strictly increasing steps.
    pub schedule: Vec<ScheduleEntry>,
    pub horizon: usize,
    /// Defaults to `π_x(Kη₀, w₀)`.
    pub x0: Option<DVector<f64>>,
    /// Seed for the sampled normal-cone certificates.
    pub seed: u64,
    pub normal_cone_samples: usize,
    /// Optional input box (the operating region of the plant); steps whose
    /// input leaves it are counted, not rejected.
    pub input_region: Option<ConvexSet>,
}

impl Scenario {
    pub fn new(
        plant: Arc<dyn Plant>,
        controller: ControllerSpec,
        schedule: Vec<ScheduleEntry>,
        horizon: usize,
    ) -> Self {
        Self {
            plant,
            controller,
            schedule,
            horizon,
            x0: None,
            seed: 0,
            normal_cone_samples: DEFAULT_NORMAL_CONE_SAMPLES,
            input_region: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be at least 1"));
        }
        let first = self
            .schedule
            .first()
            .ok_or_else(|| Error::invalid("schedule", "needs at least one entry"))?;
        if first.start != 0 {
            return Err(Error::invalid("schedule", "first entry must start at step 0"));
        }
        for pair in self.schedule.windows(2) {
            if pair[1].start <= pair[0].start {
                return Err(Error::invalid("schedule", "steps must be strictly increasing"));
            }
        }
        for entry in &self.schedule {
            check_dim("schedule w", self.plant.disturbance_dim(), entry.w.len())?;
        }
        let gain = self.controller.gain();
        check_dim("gain rows", self.plant.input_dim(), gain.nrows())?;
        check_dim("gain columns", self.plant.error_dim(), gain.ncols())?;
        if let Some(x0) = &self.x0 {
            check_dim("x0", self.plant.state_dim(), x0.len())?;
        }
        Ok(())
    }

    /// Index of the schedule entry active at step `k`.
    pub fn segment_at(&self, k: usize) -> usize {
        self.schedule.partition_point(|s| s.start <= k).saturating_sub(1)
    }

    /// `[start, end)` step ranges of the schedule segments within the horizon.
    pub fn segments(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (i, s) in self.schedule.iter().enumerate() {
            if s.start >= self.horizon {
                break;
            }
            let end = self
                .schedule
                .get(i + 1)
                .map_or(self.horizon, |n| n.start.min(self.horizon));
            out.push((s.start, end));
        }
        out
    }

    pub fn with_gains(&self, ti: f64, lambda: f64) -> Self {
        Self {
            controller: self.controller.with_gains(ti, lambda),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub k: usize,
    pub t: f64,
    pub x: DVector<f64>,
    pub u: DVector<f64>,
    pub e: DVector<f64>,
    pub eta: DVector<f64>,
    /// Schedule segment index (selects `w`).
    pub segment: usize,
    /// Signed distance of `u_k` to the boundary of `C`.
    pub constraint_margin: f64,
    /// `‖η_k − Proj_Γ^P(η_k − (T_s/T_i)e_k)‖_P`.
    pub vi_residual: f64,
    pub projected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSummary {
    pub start: usize,
    pub end: usize,
    pub w: DVector<f64>,
    pub final_vi_residual: f64,
    /// `max ⟨−e, η − η_final⟩_P` over sampled `η ∈ Γ`; absent for
    /// classical controllers or unbounded `Γ`.
    pub normal_cone_residual: Option<f64>,
    pub tracking_error: f64,
    /// Signed distance of the final `η` to the boundary of `Γ`.
    pub gamma_margin: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRecord {
    pub steps: Vec<StepRecord>,
    /// Controller state after the final update.
    pub final_eta: DVector<f64>,
    pub final_x: DVector<f64>,
    pub segments: Vec<SegmentSummary>,
    pub input_region_exits: usize,
}

impl SimRecord {
    pub fn last(&self) -> &StepRecord {
        self.steps.last().expect("records are non-empty")
    }

    /// `η_{k+1}` for each logged step.
    pub fn next_eta(&self, k: usize) -> &DVector<f64> {
        self.steps.get(k + 1).map_or(&self.final_eta, |s| &s.eta)
    }
}

/// Runs the closed loop over the scenario's horizon.
pub fn simulate(scenario: &Scenario) -> Result<SimRecord> {
    scenario.validate()?;
    let plant = scenario.plant.as_ref();
    let ts = plant.sample_time();
    let metric = scenario.controller.metric().clone();
    let mut controller = scenario.controller.build(ts)?;
    let constraint = match &controller {
        ActiveController::Dpi(c) => Some(c.constraint().clone()),
        ActiveController::Classical(_) => None,
    };

    let mut x = match &scenario.x0 {
        Some(x0) => x0.clone(),
        None => plant.equilibrium_state(&controller.input(), &scenario.schedule[0].w)?,
    };

    let wrap = |step: usize| move |e: Error| Error::Simulation { step, source: Box::new(e) };
    let mut steps = Vec::with_capacity(scenario.horizon);
    let mut exits = 0;
    for k in 0..scenario.horizon {
        let segment = scenario.segment_at(k);
        let w = &scenario.schedule[segment].w;
        let eta = controller.state().clone();
        let u = controller.input();
        let e = plant.output(&x, &u, w).map_err(wrap(k))?;
        let constraint_margin = match &constraint {
            Some(c) => {
                if !c.contains(&u, MEMBERSHIP_TOL) {
                    return Err(Error::ConstraintViolation {
                        step: k,
                        margin: c.margin(&u),
                    });
                }
                c.margin(&u)
            }
            None => f64::INFINITY,
        };
        if let Some(region) = &scenario.input_region {
            if !region.contains(&u, MEMBERSHIP_TOL) {
                exits += 1;
            }
        }
        let vi_residual = controller.residual(&e, &metric).map_err(wrap(k))?;
        let projected = controller.step(&e).map_err(wrap(k))?;
        let next = plant.step(&x, &u, w).map_err(wrap(k))?;
        steps.push(StepRecord {
            k,
            t: k as f64 * ts,
            x: std::mem::replace(&mut x, next),
            u,
            e,
            eta,
            segment,
            constraint_margin,
            vi_residual,
            projected,
        });
    }

    let final_eta = controller.state().clone();
    let mut segments = Vec::new();
    for (i, (start, end)) in scenario.segments().into_iter().enumerate() {
        let last = &steps[end - 1];
        let (nc, gamma_margin) = match &controller {
            ActiveController::Dpi(c) => {
                let nc = normal_cone_residual(
                    c.gamma(),
                    &metric,
                    &last.eta,
                    &(-&last.e),
                    scenario.normal_cone_samples,
                    scenario.seed.wrapping_add(i as u64),
                    None,
                )
                .ok();
                (nc, c.gamma().margin(&last.eta))
            }
            ActiveController::Classical(_) => (None, f64::INFINITY),
        };
        segments.push(SegmentSummary {
            start,
            end,
            w: scenario.schedule[i].w.clone(),
            final_vi_residual: last.vi_residual,
            normal_cone_residual: nc,
            tracking_error: last.e.norm(),
            gamma_margin,
        });
    }

    Ok(SimRecord {
        steps,
        final_eta,
        final_x: x,
        segments,
        input_region_exits: exits,
    })
}

/// Fast-variable deviation `ξ_k = x_k − π_x(Kη_k, w_k)`.
pub fn change_of_coordinates(
    record: &SimRecord,
    plant: &dyn Plant,
    gain: &DMatrix<f64>,
    schedule: &[ScheduleEntry],
) -> Result<Vec<DVector<f64>>> {
    record
        .steps
        .iter()
        .map(|s| {
            let w = &schedule[s.segment].w;
            let xbar = plant
                .equilibrium_state(&(gain * &s.eta), w)
                .map_err(|e| Error::Simulation { step: s.k, source: Box::new(e) })?;
            Ok(&s.x - xbar)
        })
        .collect()
}

/// Largest `‖η_{k+1} − η_k‖_P + ‖ξ_k‖` over the final window of the run.
pub fn final_window_increment(record: &SimRecord, xi: &[DVector<f64>], metric: &Metric) -> f64 {
    let n = record.steps.len();
    let window = ((n as f64 * CONVERGENCE_WINDOW).ceil() as usize).clamp(1, n);
    (n - window..n)
        .map(|k| {
            let d_eta = record.next_eta(k) - &record.steps[k].eta;
            metric.norm_unchecked(&d_eta) + xi[k].norm()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Convergence {
    pub converged: bool,
    pub final_increment: f64,
    /// `ξ_k` for every logged step.
    pub deviation: Vec<DVector<f64>>,
}

/// Applies the final-window test to a finished run of `scenario`.
pub fn classify_convergence(scenario: &Scenario, record: &SimRecord) -> Result<Convergence> {
    let gain = scenario.controller.gain();
    let deviation = change_of_coordinates(record, scenario.plant.as_ref(), gain, &scenario.schedule)?;
    let final_increment = final_window_increment(record, &deviation, scenario.controller.metric());
    Ok(Convergence {
        converged: final_increment < CONVERGENCE_TOL,
        final_increment,
        deviation,
    })
}

/// Geometric rate `ρ` from a least-squares fit of `ln d_k ≈ c + k ln ρ`.
///
/// Samples after the sequence first drops below [`DECAY_FIT_FLOOR`] are
/// excluded, and the first tenth of what remains is treated as transient.
pub fn fit_decay_rate(deviation: &[f64]) -> Option<f64> {
    let end = deviation
        .iter()
        .position(|d| *d < DECAY_FIT_FLOOR)
        .unwrap_or(deviation.len());
    let mut start = end / 10;
    if end - start < 3 {
        start = 0;
    }
    if end - start < 3 {
        return None;
    }
    let pts: Vec<(f64, f64)> = (start..end).map(|k| (k as f64, deviation[k].ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    slope.is_finite().then(|| slope.exp())
}

/// Solves `VI_P(Γ, π∘K)` for the given `w` offline.
pub fn equilibrium_controller_state(
    scenario: &Scenario,
    w: &DVector<f64>,
    params: &FbParams,
) -> Result<ViSolution> {
    let ControllerSpec::Dpi {
        gain,
        constraint,
        metric,
        ..
    } = &scenario.controller
    else {
        return Err(Error::invalid("controller", "equilibrium VI needs a DP-I controller"));
    };
    let gamma = ConvexSet::linear_preimage(gain.clone(), constraint.clone())?;
    let op = EquilibriumMap {
        plant: scenario.plant.as_ref(),
        gain,
        w,
    };
    let problem = ViProblem::new(&op, &gamma, metric)?;
    let start = scenario
        .controller
        .build(scenario.plant.sample_time())?
        .state()
        .clone();
    solve_vi(&problem, params, &start, DEFAULT_TOL, DEFAULT_MAX_ITER)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub ti: f64,
    pub lambda: f64,
    pub converged: bool,
    /// Present only for converged runs with a usable fit window.
    pub decay_rate: Option<f64>,
    pub final_vi_residual: f64,
    pub final_normal_cone_residual: Option<f64>,
    pub final_increment: f64,
    /// Final error norm and the final `η`'s margin inside `Γ`.
    pub final_error: f64,
    pub final_gamma_margin: f64,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub sample_time: f64,
    pub mu: f64,
    pub lipschitz: f64,
    /// `T_i⋆ = T_s L² / (2μ)`.
    pub ti_star: f64,
    /// Offline VI solution for the final schedule segment.
    pub eta_bar: DVector<f64>,
    pub eta_bar_converged: bool,
    pub points: Vec<SweepPoint>,
}

impl StabilityReport {
    /// Largest grid `λ` such that every grid `λ′ ≤ λ` converged at this `T_i`.
    pub fn empirical_lambda_star(&self, ti: f64) -> Option<f64> {
        let mut pts: Vec<&SweepPoint> = self.points.iter().filter(|p| p.ti == ti).collect();
        pts.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
        pts.iter()
            .take_while(|p| p.converged)
            .last()
            .map(|p| p.lambda)
    }

    /// Points with `T_i ≥ factor·T_i⋆` and `λ ≤ lambda_max` that failed to
    /// converge with a decay rate below one. Nothing is claimed elsewhere.
    pub fn certified_failures(&self, factor: f64, lambda_max: f64) -> Vec<&SweepPoint> {
        self.points
            .iter()
            .filter(|p| p.ti >= factor * self.ti_star && p.lambda <= lambda_max)
            .filter(|p| !(p.converged && p.decay_rate.is_some_and(|r| r < 1.0)))
            .collect()
    }
}

/// `T_i⋆ = T_s L² / (2μ)`.
pub fn ti_threshold(sample_time: f64, mu: f64, lipschitz: f64) -> f64 {
    sample_time * lipschitz * lipschitz / (2.0 * mu)
}

/// Simulates every `(T_i, λ)` grid point (in parallel) and classifies
/// convergence. Failures of individual runs are recorded, not propagated.
pub fn gain_sweep(
    scenario: &Scenario,
    ti_values: &[f64],
    lambda_values: &[f64],
    mu: f64,
    lipschitz: f64,
) -> Result<StabilityReport> {
    scenario.validate()?;
    let ts = scenario.plant.sample_time();
    let params = FbParams::certified(mu, lipschitz, 0.9)?;
    let w_final = &scenario.schedule[scenario.segment_at(scenario.horizon - 1)].w;
    let vi = equilibrium_controller_state(scenario, w_final, &params)?;
    let eta_bar = vi.eta.clone();
    let last_start = scenario.segments().last().map_or(0, |s| s.0);

    let grid: Vec<(f64, f64)> = ti_values
        .iter()
        .flat_map(|&ti| lambda_values.iter().map(move |&l| (ti, l)))
        .collect();
    let points = grid
        .par_iter()
        .map(|&(ti, lambda)| sweep_point(scenario, ti, lambda, &eta_bar, last_start))
        .collect();

    Ok(StabilityReport {
        sample_time: ts,
        mu,
        lipschitz,
        ti_star: ti_threshold(ts, mu, lipschitz),
        eta_bar,
        eta_bar_converged: vi.converged,
        points,
    })
}

fn sweep_point(
    scenario: &Scenario,
    ti: f64,
    lambda: f64,
    eta_bar: &DVector<f64>,
    last_start: usize,
) -> SweepPoint {
    let failed = |msg: String| SweepPoint {
        ti,
        lambda,
        converged: false,
        decay_rate: None,
        final_vi_residual: f64::NAN,
        final_normal_cone_residual: None,
        final_increment: f64::NAN,
        final_error: f64::NAN,
        final_gamma_margin: f64::NAN,
        error: Some(msg),
    };
    let s = scenario.with_gains(ti, lambda);
    let record = match simulate(&s) {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    let Convergence {
        converged,
        final_increment,
        deviation: xi,
    } = match classify_convergence(&s, &record) {
        Ok(c) => c,
        Err(e) => return failed(e.to_string()),
    };
    let deviation: Vec<f64> = record.steps[last_start..]
        .iter()
        .zip(&xi[last_start..])
        .map(|(step, xi)| (xi.norm_squared() + (&step.eta - eta_bar).norm_squared()).sqrt())
        .collect();
    let decay_rate = if converged { fit_decay_rate(&deviation) } else { None };
    let seg = record.segments.last().expect("validated schedule");
    SweepPoint {
        ti,
        lambda,
        converged,
        decay_rate,
        final_vi_residual: seg.final_vi_residual,
        final_normal_cone_residual: seg.normal_cone_residual,
        final_increment,
        final_error: seg.tracking_error,
        final_gamma_margin: seg.gamma_margin,
        error: None,
    }
}
