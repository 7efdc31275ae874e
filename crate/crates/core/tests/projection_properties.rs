//! Idempotence, nonexpansiveness and the variational characterization of
//! weighted projections, over every set kind.

mod common;

use dpi_core::sets::MEMBERSHIP_TOL;
use dpi_core::{ConvexSet, Metric};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const DIM: usize = 2;

/// Builds one of the set kinds from a kind tag and a seed.
fn make_set(kind: u8, seed: u64) -> ConvexSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let center = common::random_vector(&mut rng, DIM, -3.0, 3.0);
    match kind {
        0 => {
            let half = common::random_vector(&mut rng, DIM, 0.1, 4.0);
            ConvexSet::new_box(&center - &half, &center + &half).unwrap()
        }
        1 => {
            let a = common::random_vector(&mut rng, DIM, -1.0, 1.0);
            ConvexSet::new_halfspace(a.clone(), a.dot(&center)).unwrap()
        }
        2 => ConvexSet::new_ball(center, rand::Rng::random_range(&mut rng, 0.5..4.0)).unwrap(),
        3 => {
            // Random polygon around `center`, non-empty by construction.
            let rows = 5;
            let a = common::random_matrix(&mut rng, rows, DIM, 1.0);
            let slack = common::random_vector(&mut rng, rows, 0.5, 3.0);
            let b = &a * &center + slack;
            ConvexSet::new_polyhedron(a, b).unwrap()
        }
        4 => {
            let half = common::random_vector(&mut rng, DIM, 1.0, 4.0);
            let a = common::random_vector(&mut rng, DIM, -1.0, 1.0);
            ConvexSet::intersection(vec![
                ConvexSet::new_box(&center - &half, &center + &half).unwrap(),
                ConvexSet::new_halfspace(a.clone(), a.dot(&center) + 0.3).unwrap(),
                ConvexSet::new_ball(center.clone(), 3.5).unwrap(),
            ])
            .unwrap()
        }
        _ => {
            let k = DMatrix::identity(DIM, DIM) + common::random_matrix(&mut rng, DIM, DIM, 0.4);
            ConvexSet::linear_preimage(k, common::pump_polygon()).unwrap()
        }
    }
}

fn make_metric(kind: u8, seed: u64) -> Metric {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    match kind {
        0 => Metric::identity(DIM),
        1 => Metric::new(DMatrix::from_diagonal(&common::random_vector(&mut rng, DIM, 0.2, 5.0))).unwrap(),
        _ => Metric::new(common::random_spd(&mut rng, DIM, 0.2)).unwrap(),
    }
}

fn point() -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-15.0..15.0f64, DIM).prop_map(DVector::from_vec)
}

/// Scale points for the preimage of the pump polygon so they land around it.
fn place(kind: u8, x: &DVector<f64>) -> DVector<f64> {
    if kind >= 5 {
        x * 3.0 + DVector::from_element(DIM, 20.0)
    } else {
        x.clone()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn projection_is_a_member_and_idempotent(kind in 0u8..6, mk in 0u8..3, seed in any::<u64>(), x in point()) {
        let set = make_set(kind, seed);
        let m = make_metric(mk, seed);
        let x = place(kind, &x);
        let p = set.project(&m, &x).unwrap().point;
        prop_assert!(set.contains(&p, MEMBERSHIP_TOL), "violation {}", set.violation(&p));
        let pp = set.project(&m, &p).unwrap().point;
        prop_assert!((&pp - &p).amax() <= 1e-9, "moved by {}", (&pp - &p).amax());
    }

    #[test]
    fn projection_is_nonexpansive(kind in 0u8..6, mk in 0u8..3, seed in any::<u64>(), x in point(), y in point()) {
        let set = make_set(kind, seed);
        let m = make_metric(mk, seed);
        let (x, y) = (place(kind, &x), place(kind, &y));
        let px = set.project(&m, &x).unwrap().point;
        let py = set.project(&m, &y).unwrap().point;
        let lhs = m.distance(&px, &py).unwrap();
        let rhs = m.distance(&x, &y).unwrap();
        prop_assert!(lhs <= rhs + 1e-9, "{lhs} > {rhs}");
    }

    #[test]
    fn variational_characterization(kind in 0u8..6, mk in 0u8..3, seed in any::<u64>(), x in point()) {
        let set = make_set(kind, seed);
        let m = make_metric(mk, seed);
        let x = place(kind, &x);
        let p = set.project(&m, &x).unwrap().point;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let (lo, hi) = set.bounding_box().unwrap_or_else(|| {
            (&p - DVector::from_element(DIM, 10.0), &p + DVector::from_element(DIM, 10.0))
        });
        let members = set.sample(100, &mut rng, Some((&lo, &hi))).unwrap();
        let gap = common::variational_gap(&m, &x, &p, &members);
        prop_assert!(gap <= 1e-9, "gap {gap}");
    }
}

#[test]
fn members_project_to_themselves_with_no_work() {
    let set = common::pump_polygon();
    let m = Metric::new(DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0])).unwrap();
    let x = DVector::from_vec(vec![32.64, 32.64]);
    let r = set.project(&m, &x).unwrap();
    assert_eq!(r.point, x);
    assert_eq!(r.iterations, 0);
}
