use std::collections::BTreeMap;

use demand_forge::kernels::{accumulate, accumulate_lags, KernelSpec};
use proptest::prelude::*;

fn series(values: &[f64]) -> BTreeMap<i64, f64> {
    values.iter().enumerate().map(|(t, &v)| (t as i64, v)).collect()
}

proptest! {
    #[test]
    fn geometric_matches_direct_sum(
        values in prop::collection::vec(0.0..50.0f64, 1..40), delta in 0.0..1.0f64, k in 0..12usize
    ) {
        let spec = KernelSpec::geometric(delta, k);
        let out = accumulate(&series(&values), &spec).unwrap();
        for (t, score) in out {
            let t = t as usize;
            let direct: f64 = (0..=k.min(t)).map(|n| (1.0 - delta).powi(n as i32) * values[t - n]).sum();
            prop_assert!((score - direct).abs() <= 1e-9 * direct.max(1.0));
        }
    }

    #[test]
    fn accumulation_is_linear(
        a in prop::collection::vec(0.0..10.0f64, 20), b in prop::collection::vec(0.0..10.0f64, 20), c in 0.0..3.0f64
    ) {
        let spec = KernelSpec::default();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + c * y).collect();
        let lhs = accumulate(&series(&sum), &spec).unwrap();
        let ra = accumulate(&series(&a), &spec).unwrap();
        let rb = accumulate(&series(&b), &spec).unwrap();
        for (t, v) in lhs {
            prop_assert!((v - ra[&t] - c * rb[&t]).abs() < 1e-9);
        }
    }

    #[test]
    fn faster_decay_never_raises_scores(values in prop::collection::vec(0.0..10.0f64, 1..30), d1 in 0.0..0.5f64, extra in 0.0..0.5f64) {
        let slow = accumulate(&series(&values), &KernelSpec::geometric(d1, 6)).unwrap();
        let fast = accumulate(&series(&values), &KernelSpec::geometric(d1 + extra, 6)).unwrap();
        for (t, v) in fast {
            prop_assert!(v <= slow[&t] + 1e-12);
        }
    }

    #[test]
    fn lag_slice_agrees_with_series(values in prop::collection::vec(0.0..10.0f64, 8..20), delta in 0.0..0.14f64) {
        let spec = KernelSpec::linear(delta, 6);
        let out = accumulate(&series(&values), &spec).unwrap();
        let last = values.len() - 1;
        let lags: Vec<f64> = values.iter().rev().copied().collect();
        let direct = accumulate_lags(&lags, &spec).unwrap();
        prop_assert!((out[&(last as i64)] - direct).abs() < 1e-9);
    }
}

#[test]
fn missing_months_count_as_zero() {
    let raw = BTreeMap::from([(0, 10.0), (3, 5.0)]);
    let out = accumulate(&raw, &KernelSpec::geometric(0.5, 6)).unwrap();
    assert_eq!(out.len(), 4);
    assert!((out[&2] - 2.5).abs() < 1e-12);
    assert!((out[&3] - (5.0 + 1.25)).abs() < 1e-12);
}

#[test]
fn invalid_kernels_and_inputs() {
    assert!(KernelSpec::geometric(1.5, 3).validate().is_err());
    assert!(KernelSpec::linear(0.2, 6).validate().is_err());
    assert!(accumulate(&BTreeMap::from([(0, -1.0)]), &KernelSpec::default()).is_err());
    assert!(accumulate(&BTreeMap::new(), &KernelSpec::default()).unwrap().is_empty());
}
