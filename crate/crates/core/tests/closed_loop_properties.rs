//! Closed-loop behaviour: equilibria, the fast-variable recursion, the VI
//! certificate at rest and the gain sweep.

mod common;

use std::sync::Arc;

use dpi_core::closed_loop::{
    change_of_coordinates, classify_convergence, equilibrium_controller_state, gain_sweep, simulate,
    ControllerSpec, Scenario, ScheduleEntry,
};
use dpi_core::controller::{DpiGains, Initialization};
use dpi_core::plants::{FourTankParams, FourTankPlant, LtiPlant, Plant};
use dpi_core::sets::MEMBERSHIP_TOL;
use dpi_core::vi::FbParams;
use dpi_core::{ConvexSet, Error, Metric, Result};
use nalgebra::{dvector, DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tank_scenario(ti: f64, lambda: f64, schedule: Vec<ScheduleEntry>, horizon: usize) -> Scenario {
    let plant = FourTankPlant::new(&FourTankParams::default()).unwrap();
    let gain = plant.pi_inverse();
    let mut s = Scenario::new(
        Arc::new(plant),
        ControllerSpec::Dpi {
            gain,
            constraint: common::pump_polygon(),
            metric: Metric::identity(2),
            gains: DpiGains::new(ti, lambda),
            init: Initialization::FromInput(dvector![32.64, 32.64]),
        },
        schedule,
        horizon,
    );
    s.seed = 17;
    s
}

fn entry(start: usize, w: DVector<f64>) -> ScheduleEntry {
    ScheduleEntry { start, w }
}

#[test]
fn equilibrium_is_invariant() {
    let base = tank_scenario(15.0, 0.5, vec![entry(0, dvector![14.0, 11.0])], 300);
    let w = &base.schedule[0].w;
    let vi = equilibrium_controller_state(&base, w, &FbParams::certified(0.07, 0.18, 0.9).unwrap()).unwrap();
    assert!(vi.converged);
    let mut s = base.clone();
    if let ControllerSpec::Dpi { init, .. } = &mut s.controller {
        *init = Initialization::State(vi.eta.clone());
    }
    s.x0 = Some(s.plant.equilibrium_state(&(s.controller.gain() * &vi.eta), w).unwrap());
    let record = simulate(&s).unwrap();
    for step in &record.steps {
        assert!((&step.eta - &vi.eta).amax() <= 1e-8, "k = {}", step.k);
        assert!((&step.x - s.x0.as_ref().unwrap()).amax() <= 1e-8);
    }
}

#[test]
fn lti_fast_variable_recursion() {
    // ξₖ₊₁ = Aξₖ − (I − A)⁻¹BK(ηₖ₊₁ − ηₖ) within a schedule segment.
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let plant = Arc::new(common::random_lti(&mut rng, 3, 2, 1));
    let gain = plant.dc_gain().try_inverse().unwrap();
    let schedule = vec![entry(0, dvector![1.0]), entry(60, dvector![-3.0])];
    let mut s = Scenario::new(
        plant.clone(),
        ControllerSpec::Dpi {
            gain: gain.clone(),
            constraint: ConvexSet::new_box(dvector![-0.5, -0.5], dvector![0.5, 0.5]).unwrap(),
            metric: Metric::identity(2),
            gains: DpiGains::new(3.0, 0.7),
            init: Initialization::Default,
        },
        schedule.clone(),
        150,
    );
    s.x0 = Some(common::random_vector(&mut rng, 3, -1.0, 1.0));
    let record = simulate(&s).unwrap();
    let xi = change_of_coordinates(&record, plant.as_ref(), &gain, &schedule).unwrap();
    let a = plant.a();
    let coupling = plant.resolvent() * plant.b() * &gain;
    let mut saw_projection = false;
    for k in 0..record.steps.len() - 1 {
        saw_projection |= record.steps[k].projected;
        if record.steps[k + 1].segment != record.steps[k].segment {
            continue;
        }
        let d_eta = &record.steps[k + 1].eta - &record.steps[k].eta;
        let predicted = a * &xi[k] - &coupling * d_eta;
        assert!((&predicted - &xi[k + 1]).amax() <= 1e-10, "k = {k}");
    }
    assert!(saw_projection, "constraints never engaged");
}

#[test]
fn simulation_is_deterministic() {
    let schedule = vec![entry(0, dvector![10.0, 10.0]), entry(50, dvector![16.0, 12.0])];
    let s = tank_scenario(15.0, 0.95, schedule, 200);
    assert_eq!(simulate(&s).unwrap(), simulate(&s).unwrap());
}

#[test]
fn tank_run_certifies_the_variational_inequality() {
    let schedule = vec![
        entry(0, dvector![10.0, 10.0]),
        entry(100, dvector![12.0, 9.0]),
        entry(700, dvector![16.0, 12.0]),
        entry(1300, dvector![18.0, 18.0]),
    ];
    let s = tank_scenario(15.0, 0.95, schedule, 1900);
    let record = simulate(&s).unwrap();
    let c = common::pump_polygon();
    for step in &record.steps {
        assert!(c.contains(&step.u, MEMBERSHIP_TOL), "k = {}: u = {}", step.k, step.u);
    }
    let conv = classify_convergence(&s, &record).unwrap();
    assert!(conv.converged, "final increment {}", conv.final_increment);

    for seg in &record.segments {
        assert!(seg.final_vi_residual <= 1e-6, "{seg:?}");
        assert!(seg.normal_cone_residual.unwrap() <= 1e-6, "{seg:?}");
        if seg.gamma_margin > 1e-6 {
            assert!(seg.tracking_error <= 1e-6, "interior rest point with error: {seg:?}");
        }
    }
    // The first two set-points are reachable, the last two are not.
    let interior: Vec<bool> = record.segments.iter().map(|s| s.gamma_margin > 1e-6).collect();
    assert_eq!(interior, [true, true, false, false]);
    assert!(record.segments[3].tracking_error > 0.5);
}

#[test]
fn fast_variable_decays_on_the_tank() {
    let s = tank_scenario(15.0, 0.5, vec![entry(0, dvector![12.0, 9.0])], 1500);
    let record = simulate(&s).unwrap();
    let conv = classify_convergence(&s, &record).unwrap();
    assert!(conv.converged);
    let norms: Vec<f64> = conv.deviation.iter().map(|x| x.norm()).collect();
    let rate = dpi_core::closed_loop::fit_decay_rate(&norms[10..]).unwrap();
    assert!(rate < 1.0, "rate {rate}");
    assert!(norms.last().unwrap() < &1e-8);
}

/// A plant whose dynamics fail after a number of steps.
struct Faulty {
    inner: LtiPlant,
    fail_above: f64,
}

impl Plant for Faulty {
    fn state_dim(&self) -> usize {
        self.inner.state_dim()
    }
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }
    fn error_dim(&self) -> usize {
        self.inner.error_dim()
    }
    fn disturbance_dim(&self) -> usize {
        self.inner.disturbance_dim()
    }
    fn sample_time(&self) -> f64 {
        self.inner.sample_time()
    }
    fn step(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        if u.amax() > self.fail_above {
            return Err(Error::Domain("input outside the model's range".into()));
        }
        self.inner.step(x, u, w)
    }
    fn output(&self, x: &DVector<f64>, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.output(x, u, w)
    }
    fn equilibrium_state(&self, u: &DVector<f64>, w: &DVector<f64>) -> Result<DVector<f64>> {
        self.inner.equilibrium_state(u, w)
    }
}

#[test]
fn sweep_records_failed_runs() {
    let one = DMatrix::from_element(1, 1, 1.0);
    let zero = DMatrix::zeros(1, 1);
    let inner = LtiPlant::new(DMatrix::from_element(1, 1, 0.5), one.clone(), zero.clone(), one.clone(), zero, -one.clone(), 1.0)
        .unwrap();
    // π(u, w) = 2u − w; the set-point w = 1.9 needs u = 0.95 on [−1, 1].
    let plant = Arc::new(Faulty { inner, fail_above: 0.999 });
    let s = Scenario::new(
        plant,
        ControllerSpec::Dpi {
            gain: one,
            constraint: ConvexSet::new_box(dvector![-1.0], dvector![1.0]).unwrap(),
            metric: Metric::identity(1),
            gains: DpiGains::new(4.0, 0.5),
            init: Initialization::State(dvector![0.0]),
        },
        vec![entry(0, dvector![1.9])],
        3000,
    );
    // Aggressive gains saturate into the faulty range; gentle ones do not.
    let report = gain_sweep(&s, &[0.6, 40.0], &[0.9, 0.3], 2.0, 2.0).unwrap();
    assert_eq!(report.points.len(), 4);
    assert!((report.ti_star - 1.0).abs() < 1e-12);
    assert!((report.eta_bar[0] - 0.95).abs() < 1e-9);
    let failed: Vec<_> = report.points.iter().filter(|p| p.error.is_some()).collect();
    assert!(!failed.is_empty(), "{:#?}", report.points);
    for p in &failed {
        assert!(!p.converged && p.ti < 1.0, "{p:?}");
        assert!(p.error.as_ref().unwrap().contains("range"));
    }
    for p in report.points.iter().filter(|p| p.ti > 1.5) {
        assert!(p.converged && p.error.is_none(), "{p:?}");
        assert!(p.decay_rate.unwrap() < 1.0);
    }
}
