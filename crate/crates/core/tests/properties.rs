use acrom::diag::{fit_order, l2l2_relative_error, subspace_cosines};
use acrom::sparse::SparseOperator;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn diagonal_weight(d: &[f64]) -> SparseOperator<f64> {
    let t: Vec<(usize, usize, f64)> = d.iter().enumerate().map(|(i, &v)| (i, i, v)).collect();
    SparseOperator::from_triplets(d.len(), d.len(), &t)
}

proptest! {
    #[test]
    fn power_laws_recover_their_exponent(c in 0.01f64..100.0, p in 0.2f64..3.0, n in 2usize..6) {
        let dts: Vec<f64> = (0..n).map(|k| 1e-2 / 2f64.powi(k as i32)).collect();
        let errs: Vec<f64> = dts.iter().map(|d| c * d.powf(p)).collect();
        prop_assert!((fit_order(&dts, &errs).unwrap() - p).abs() < 1e-9);
    }

    #[test]
    fn scaled_trajectory_has_error_of_the_scale(
        s in 0.0f64..3.0,
        states in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 2..8),
        w in prop::collection::vec(0.1f64..2.0, 4),
    ) {
        prop_assume!(states.iter().flatten().any(|v| v.abs() > 1e-3));
        let times: Vec<f64> = (0..states.len()).map(|k| 0.1 * k as f64).collect();
        let scaled: Vec<Vec<f64>> = states.iter().map(|v| v.iter().map(|x| s * x).collect()).collect();
        let e = l2l2_relative_error(&times, &scaled, &times, &states, &diagonal_weight(&w)).unwrap();
        prop_assert!((e.value - (s - 1.0).abs()).abs() < 1e-12);
    }

    #[test]
    fn cosines_are_symmetric_and_bounded(
        seed in prop::collection::vec(-1.0f64..1.0, 6 * 5),
        w in prop::collection::vec(0.1f64..2.0, 6),
        k in 1usize..3,
        l in 1usize..4,
    ) {
        let m = DMatrix::from_column_slice(6, 5, &seed);
        let x = m.columns(0, k).into_owned();
        let y = m.columns(k, l.min(5 - k)).into_owned();
        let weight = diagonal_weight(&w);
        let a = subspace_cosines(&x, &y, &weight);
        let b = subspace_cosines(&y, &x, &weight);
        prop_assert!(a.iter().all(|&c| (-1e-12..=1.0 + 1e-12).contains(&c)));
        if let (Some(a0), Some(b0)) = (a.first(), b.first()) {
            prop_assert!((a0 - b0).abs() < 1e-10);
        }
    }
}
