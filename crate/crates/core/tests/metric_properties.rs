use dpi_core::Metric;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn spd(n: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-2.0..2.0f64, n * n), 0.05..2.0f64).prop_map(move |(v, shift)| {
        let a = DMatrix::from_vec(n, n, v);
        a.transpose() * a + DMatrix::identity(n, n) * shift
    })
}

fn vector(n: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-10.0..10.0f64, n).prop_map(DVector::from_vec)
}

fn setup() -> impl Strategy<Value = (DMatrix<f64>, DVector<f64>, DVector<f64>)> {
    (1usize..5).prop_flat_map(|n| (spd(n), vector(n), vector(n)))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn cauchy_schwarz((p, x, y) in setup()) {
        let m = Metric::new(p).unwrap();
        let lhs = m.inner(&x, &y).unwrap().abs();
        let rhs = m.norm(&x).unwrap() * m.norm(&y).unwrap();
        prop_assert!(lhs <= rhs * (1.0 + 1e-12) + 1e-12, "{lhs} > {rhs}");
    }

    #[test]
    fn triangle_inequality((p, x, y) in setup()) {
        let m = Metric::new(p).unwrap();
        let lhs = m.norm(&(&x + &y)).unwrap();
        prop_assert!(lhs <= m.norm(&x).unwrap() + m.norm(&y).unwrap() + 1e-12);
    }

    #[test]
    fn norm_squared_is_self_inner((p, x, _y) in setup()) {
        let m = Metric::new(p).unwrap();
        let n2 = m.norm(&x).unwrap().powi(2);
        let ip = m.inner(&x, &x).unwrap();
        prop_assert!((n2 - ip).abs() <= 1e-12 * ip.max(1e-300));
    }

    #[test]
    fn inner_is_symmetric((p, x, y) in setup()) {
        let m = Metric::new(p).unwrap();
        let a = m.inner(&x, &y).unwrap();
        let b = m.inner(&y, &x).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }

    #[test]
    fn norm_dominates_smallest_eigenvalue((p, x, _y) in setup()) {
        let m = Metric::new(p).unwrap();
        let lhs = m.norm(&x).unwrap().powi(2);
        let rhs = m.lambda_min() * x.norm_squared();
        prop_assert!(lhs >= rhs * (1.0 - 1e-10) - 1e-12);
    }
}
