//! The controller state never leaves Γ, and away from the constraints the
//! damped controller is a classical integrator with gain λ·T_s/T_i.

mod common;

use std::sync::Arc;

use dpi_core::closed_loop::{simulate, ControllerSpec, Scenario, ScheduleEntry};
use dpi_core::controller::{ClassicalIntegralController, DpiController, DpiGains, Initialization};
use dpi_core::sets::MEMBERSHIP_TOL;
use dpi_core::{ConvexSet, Metric};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn state_stays_in_gamma_for_any_error_sequence(seed in any::<u64>(), lambda in 0.01..0.99f64, ti in 0.5..50.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let gain = DMatrix::identity(2, 2) + common::random_matrix(&mut rng, 2, 2, 0.5);
        prop_assume!(gain.determinant().abs() > 0.1);
        let metric = Metric::new(common::random_spd(&mut rng, 2, 0.2)).unwrap();
        let constraint = common::pump_polygon();
        let u0 = common::random_vector(&mut rng, 2, -10.0, 60.0);
        let mut c = DpiController::new(
            gain.clone(),
            constraint.clone(),
            metric,
            10.0,
            DpiGains::new(ti, lambda),
            Initialization::FromInput(u0),
        )
        .unwrap();
        let gamma = c.gamma().clone();
        for _ in 0..100 {
            prop_assert!(gamma.contains(c.state(), MEMBERSHIP_TOL));
            // Wild errors push the integral step far outside Γ.
            let scale = 10f64.powf(rng.random_range(-2.0..3.0));
            let e = common::random_vector(&mut rng, 2, -scale, scale);
            let step = c.step(&e).unwrap();
            prop_assert!(constraint.contains(&step.u, MEMBERSHIP_TOL), "u = {}", step.u);
        }
    }
}

#[test]
fn inactive_constraints_reduce_to_the_classical_integrator() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let gain = DMatrix::identity(3, 3) + common::random_matrix(&mut rng, 3, 3, 0.3);
    let huge = ConvexSet::new_box(DVector::from_element(3, -1e9), DVector::from_element(3, 1e9)).unwrap();
    let (ts, ti, lambda) = (0.5, 4.0, 0.6);
    let eta0 = common::random_vector(&mut rng, 3, -1.0, 1.0);
    let mut dpi = DpiController::new(
        gain.clone(),
        huge,
        Metric::identity(3),
        ts,
        DpiGains::new(ti, lambda),
        Initialization::State(eta0.clone()),
    )
    .unwrap();
    let mut classical = ClassicalIntegralController::new(gain, ts, ti / lambda, eta0).unwrap();
    for _ in 0..500 {
        let e = common::random_vector(&mut rng, 3, -1.0, 1.0);
        let a = dpi.step(&e).unwrap();
        let b = classical.step(&e).unwrap();
        assert!(!a.projected);
        assert!((a.u - b.u).amax() <= 1e-12);
        assert!((dpi.state() - classical.state()).amax() <= 1e-12);
    }
}

#[test]
fn closed_loop_reduction_on_an_lti_plant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let plant = Arc::new(common::random_lti(&mut rng, 3, 2, 1));
    let dc = plant.dc_gain();
    let gain = dc.try_inverse().unwrap();
    let (ti, lambda) = (8.0, 0.4);
    let huge = ConvexSet::new_box(DVector::from_element(2, -1e6), DVector::from_element(2, 1e6)).unwrap();
    let eta0 = DVector::zeros(2);
    let schedule = vec![
        ScheduleEntry { start: 0, w: DVector::from_element(1, 1.0) },
        ScheduleEntry { start: 200, w: DVector::from_element(1, -2.0) },
    ];
    let dpi = Scenario::new(
        plant.clone(),
        ControllerSpec::Dpi {
            gain: gain.clone(),
            constraint: huge,
            metric: Metric::identity(2),
            gains: DpiGains::new(ti, lambda),
            init: Initialization::State(eta0.clone()),
        },
        schedule.clone(),
        500,
    );
    let classical = Scenario::new(
        plant,
        ControllerSpec::Classical { gain, ti: ti / lambda, eta0, metric: Metric::identity(2) },
        schedule,
        500,
    );
    let a = simulate(&dpi).unwrap();
    let b = simulate(&classical).unwrap();
    for (sa, sb) in a.steps.iter().zip(&b.steps) {
        assert!(!sa.projected);
        assert!((&sa.eta - &sb.eta).amax() <= 1e-12, "k = {}", sa.k);
    }
    assert!((&a.final_eta - &b.final_eta).amax() <= 1e-12);
}
