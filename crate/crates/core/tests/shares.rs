mod common;

use common::{market, max_abs_diff};
use demand_forge::shares::{
    demand, invert_shares, nested_logit_shares, share_price_jacobian, shares_from_utilities, SIGMA_CEILING,
};
use demand_forge::{Error, ModelKind, UtilityParams};
use proptest::prelude::*;

fn logit_oracle(delta: &[f64]) -> Vec<f64> {
    let denom = 1.0 + delta.iter().map(|d| d.exp()).sum::<f64>();
    delta.iter().map(|d| d.exp() / denom).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn zero_sigma_is_plain_logit(m in market(10)) {
        let sh = nested_logit_shares(&m.mean_utilities, &m.groups, 0.0).unwrap();
        prop_assert!(max_abs_diff(&sh.shares, &logit_oracle(&m.mean_utilities)) < 1e-12);
    }

    #[test]
    fn shares_are_a_distribution(m in market(10), sigma in 0.0..0.95f64) {
        let sh = nested_logit_shares(&m.mean_utilities, &m.groups, sigma).unwrap();
        let total = sh.outside + sh.shares.iter().sum::<f64>();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(sh.shares.iter().all(|&s| s > 0.0) && sh.outside > 0.0);
        for g in 0..3 {
            let w: f64 = (0..m.len()).filter(|&j| m.groups[j] == g).map(|j| sh.within[j]).sum();
            prop_assert!(w == 0.0 || (w - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn inversion_round_trip(m in market(10), which in 0..4usize) {
        let sigma = [0.0, 0.5, 0.819, 0.94][which];
        let sh = nested_logit_shares(&m.mean_utilities, &m.groups, sigma).unwrap();
        let back = invert_shares(&sh.shares, &sh.within, sh.outside, sigma).unwrap();
        for (a, b) in back.iter().zip(&m.mean_utilities) {
            prop_assert!((a - b).abs() <= 1e-10 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn jacobian_matches_finite_differences(m in market(6), sigma in 0.0..0.9f64, cenl in any::<bool>()) {
        let params = UtilityParams::nested_logit(-1.3, sigma, 0.0, 0.0)
            .with_model(if cenl { ModelKind::Cenl } else { ModelKind::NestedLogit });
        let jac = share_price_jacobian(&m, &params).unwrap();
        let h = 1e-6;
        for k in 0..m.len() {
            let mut up = m.prices.clone();
            let mut dn = m.prices.clone();
            up[k] += h;
            dn[k] -= h;
            let du = demand(&m.reprice(&up, &params), &params).unwrap();
            let dd = demand(&m.reprice(&dn, &params), &params).unwrap();
            for j in 0..m.len() {
                let fd = (du[j] - dd[j]) / (2.0 * h);
                prop_assert!((fd - jac[(j, k)]).abs() < 1e-7, "({j},{k}) {fd} vs {}", jac[(j, k)]);
            }
        }
    }

    #[test]
    fn raising_own_utility_raises_own_share(m in market(8), sigma in 0.0..0.9f64, bump in 0.01..1.0f64) {
        let base = nested_logit_shares(&m.mean_utilities, &m.groups, sigma).unwrap();
        let mut d = m.mean_utilities.clone();
        d[0] += bump;
        let moved = nested_logit_shares(&d, &m.groups, sigma).unwrap();
        prop_assert!(moved.shares[0] > base.shares[0]);
        for j in 1..m.len() {
            prop_assert!(moved.shares[j] <= base.shares[j]);
        }
    }
}

#[test]
fn logit_model_ignores_sigma() {
    let m = common::snapshot(vec![1.0, 1.0], vec![-1.0, -0.5], vec![0, 0], vec![0, 1]);
    let params = UtilityParams::nested_logit(-1.0, 0.7, 0.0, 0.0).with_model(ModelKind::Logit);
    let sh = shares_from_utilities(&m, &params).unwrap();
    assert!(max_abs_diff(&sh.shares, &logit_oracle(&m.mean_utilities)) < 1e-12);
}

#[test]
fn sigma_is_clamped_and_negative_rejected() {
    let a = nested_logit_shares(&[-1.0, -2.0], &[0, 0], 1.0).unwrap();
    let b = nested_logit_shares(&[-1.0, -2.0], &[0, 0], SIGMA_CEILING).unwrap();
    assert_eq!(a, b);
    assert!(matches!(
        nested_logit_shares(&[-1.0], &[0], -0.1),
        Err(Error::InvalidParameter(_))
    ));
}

#[test]
fn extreme_utilities_stay_finite() {
    let sh = nested_logit_shares(&[40.0, -40.0, 0.0], &[0, 0, 1], 0.94).unwrap();
    assert!(sh.shares.iter().all(|s| s.is_finite()));
    assert!(sh.outside >= 0.0);
}

#[test]
fn inversion_rejects_degenerate_shares() {
    assert!(invert_shares(&[0.0], &[1.0], 0.5, 0.3).is_err());
    assert!(invert_shares(&[0.2], &[1.0], 1.0, 0.3).is_err());
}
