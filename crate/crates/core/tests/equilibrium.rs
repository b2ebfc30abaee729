mod common;

use common::{market, max_abs_diff, snapshot};
use demand_forge::equilibrium::{foc_residual, markups, recover_costs, solve_bertrand, BertrandOptions};
use demand_forge::shares::{demand, share_price_jacobian, MarketSnapshot};
use demand_forge::synth::brute_force_bertrand;
use demand_forge::{Error, ModelKind, UtilityParams};
use proptest::prelude::*;

fn model(cenl: bool) -> ModelKind {
    if cenl {
        ModelKind::Cenl
    } else {
        ModelKind::NestedLogit
    }
}

/// Profit derivative of each product's owner with respect to its price,
/// assembled directly from the Jacobian: `d_j + sum_{k owned} (p_k - c_k) J_kj`.
fn profit_gradient(snap: &MarketSnapshot, params: &UtilityParams, mc: &[f64]) -> Vec<f64> {
    let d = demand(snap, params).unwrap();
    let jac = share_price_jacobian(snap, params).unwrap();
    (0..snap.len())
        .map(|j| {
            d[j] + (0..snap.len())
                .filter(|&k| snap.firms[k] == snap.firms[j])
                .map(|k| (snap.prices[k] - mc[k]) * jac[(k, j)])
                .sum::<f64>()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn recovered_costs_satisfy_firm_first_order_conditions(
        m in market(6), sigma in 0.0..0.9f64, alpha in -3.0..-0.3f64, cenl in any::<bool>()
    ) {
        let params = UtilityParams::nested_logit(alpha, sigma, 0.0, 0.0).with_model(model(cenl));
        let c = recover_costs(&m, &params).unwrap();
        let grad = profit_gradient(&m, &params, &c.mc);
        prop_assert!(grad.iter().all(|g| g.abs() < 1e-10));
        prop_assert!(foc_residual(&m, &params, &c.mc).unwrap() < 1e-10);
    }

    #[test]
    fn markups_are_positive(m in market(6), sigma in 0.0..0.9f64, alpha in -3.0..-0.3f64) {
        let params = UtilityParams::nested_logit(alpha, sigma, 0.0, 0.0);
        prop_assert!(markups(&m, &params).unwrap().iter().all(|&x| x > 0.0));
    }

    #[test]
    fn solver_returns_to_observed_prices(
        m in market(5), sigma in 0.0..0.85f64, alpha in -3.0..-0.5f64, shock in 0.7..1.4f64, cenl in any::<bool>()
    ) {
        let params = UtilityParams::nested_logit(alpha, sigma, 0.0, 0.0).with_model(model(cenl));
        let c = recover_costs(&m, &params).unwrap();
        let start: Vec<f64> = m.prices.iter().map(|p| p * shock).collect();
        let moved = m.reprice(&start, &params);
        let eq = solve_bertrand(&moved, &params, &c.mc, BertrandOptions::default()).unwrap();
        prop_assert!(max_abs_diff(&eq.prices, &m.prices) < 1e-8);
        prop_assert!(eq.residual < 1e-10);
    }

    #[test]
    fn merger_raises_merging_prices(
        m in market(5), sigma in 0.0..0.85f64, costs in prop::collection::vec(0.1..0.6f64, 5)
    ) {
        prop_assume!(m.len() >= 2);
        let params = UtilityParams::nested_logit(-2.0, sigma, 0.0, 0.0);
        let n = m.len();
        let mc = &costs[..n];
        let separate = MarketSnapshot { firms: (0..n).collect(), ..m.clone() };
        let mut merged_firms: Vec<usize> = (0..n).collect();
        merged_firms[1] = 0;
        let merged = MarketSnapshot { firms: merged_firms, ..m.clone() };
        let a = solve_bertrand(&separate, &params, mc, BertrandOptions::default()).unwrap();
        let b = solve_bertrand(&merged, &params, mc, BertrandOptions::default()).unwrap();
        for j in 0..n {
            prop_assert!(b.prices[j] >= a.prices[j] - 1e-9, "product {j}: {} < {}", b.prices[j], a.prices[j]);
        }
    }
}

#[test]
fn brute_force_single_product() {
    for (cenl, alpha) in [(false, -1.5), (true, -2.5)] {
        let params = UtilityParams::nested_logit(alpha, 0.0, 0.0, 0.0).with_model(model(cenl));
        let m = snapshot(vec![1.0], vec![-0.5], vec![0], vec![0]);
        let mc = [0.6];
        let eq = solve_bertrand(&m, &params, &mc, BertrandOptions::default()).unwrap();
        let grid = brute_force_bertrand(&m, &params, &mc, (0.61, 5.0), 1e-6).unwrap();
        assert!((eq.prices[0] - grid[0]).abs() < 1e-5, "{:?} vs {:?}", eq.prices, grid);
    }
}

#[test]
fn brute_force_duopoly_and_joint_owner() {
    let params = UtilityParams::nested_logit(-1.8, 0.5, 0.0, 0.0);
    for firms in [vec![0, 1], vec![0, 0]] {
        let m = snapshot(vec![1.0, 1.0], vec![-0.8, -1.1], vec![0, 0], firms);
        let mc = [0.5, 0.4];
        let eq = solve_bertrand(&m, &params, &mc, BertrandOptions::default()).unwrap();
        let grid = brute_force_bertrand(&m, &params, &mc, (0.41, 6.0), 1e-6).unwrap();
        assert!(max_abs_diff(&eq.prices, &grid) < 1e-5, "{:?} vs {:?}", eq.prices, grid);
    }
}

#[test]
fn brute_force_flags_narrow_bracket() {
    let params = UtilityParams::nested_logit(-1.5, 0.0, 0.0, 0.0);
    let m = snapshot(vec![1.0], vec![-0.5], vec![0], vec![0]);
    assert!(matches!(
        brute_force_bertrand(&m, &params, &[0.6], (0.61, 0.9), 1e-4),
        Err(Error::GridTooCoarse(_))
    ));
}

#[test]
fn bad_costs_are_rejected() {
    let params = UtilityParams::nested_logit(-1.5, 0.3, 0.0, 0.0);
    let m = snapshot(vec![1.0, 1.2], vec![-0.5, -0.2], vec![0, 1], vec![0, 1]);
    assert!(solve_bertrand(&m, &params, &[0.5], BertrandOptions::default()).is_err());
    assert!(solve_bertrand(&m, &params, &[0.5, f64::NAN], BertrandOptions::default()).is_err());
}
