mod common;

use common::{market, prepared, snapshot};
use demand_forge::elasticity::{elasticities, group_mean_elasticities, Averaging};
use demand_forge::shares::{demand, nested_logit_shares};
use demand_forge::synth::SynthConfig;
use demand_forge::{DemandEstimate, DemandSpec, ModelKind, UtilityParams};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn analytic_matches_central_differences(m in market(6), sigma in 0.0..0.9f64, cenl in any::<bool>()) {
        let params = UtilityParams::nested_logit(-0.9, sigma, 0.0, 0.0)
            .with_model(if cenl { ModelKind::Cenl } else { ModelKind::NestedLogit });
        let e = elasticities(&m, &params).unwrap();
        let d0 = demand(&m, &params).unwrap();
        let h = 1e-6;
        for k in 0..m.len() {
            let mut up = m.prices.clone();
            let mut dn = m.prices.clone();
            up[k] += h;
            dn[k] -= h;
            let du = demand(&m.reprice(&up, &params), &params).unwrap();
            let dd = demand(&m.reprice(&dn, &params), &params).unwrap();
            for j in 0..m.len() {
                let fd = (du[j] - dd[j]) / (2.0 * h) * m.prices[k] / d0[j];
                prop_assert!((fd - e.values[(j, k)]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sign_structure(m in market(6), sigma in 0.0..0.9f64) {
        let params = UtilityParams::nested_logit(-1.1, sigma, 0.0, 0.0);
        let e = elasticities(&m, &params).unwrap();
        let n = m.len();
        for j in 0..n {
            prop_assert!(e.values[(j, j)] < 0.0);
            for k in 0..n {
                if j != k {
                    prop_assert!(e.values[(j, k)] > 0.0);
                }
            }
        }
        // for a fixed k, rivals in k's nest respond at least as much as rivals outside it
        for k in 0..n {
            let groups = &m.groups;
            let cross = |same: bool| (0..n).filter(move |&j| j != k && (groups[j] == groups[k]) == same);
            if let (Some(lo), Some(hi)) = (
                cross(false).map(|j| e.values[(j, k)]).reduce(f64::max),
                cross(true).map(|j| e.values[(j, k)]).reduce(f64::min),
            ) {
                prop_assert!(hi >= lo - 1e-12);
            }
        }
    }
}

#[test]
fn cenl_logit_own_elasticity_closed_form() {
    let m = snapshot(vec![1.2, 0.8, 1.5], vec![-1.0, -0.4, -2.0], vec![0, 0, 1], vec![0, 1, 2]);
    let alpha = -1.7;
    let params = UtilityParams::nested_logit(alpha, 0.0, 0.0, 0.0).with_model(ModelKind::Cenl);
    let s = nested_logit_shares(&m.mean_utilities, &m.groups, 0.0).unwrap().shares;
    let e = elasticities(&m, &params).unwrap();
    for (j, sj) in s.iter().enumerate() {
        assert!((e.values[(j, j)] - (alpha * (1.0 - sj) - 1.0)).abs() < 1e-12);
    }
}

#[test]
fn nested_logit_own_elasticity_closed_form() {
    let m = snapshot(vec![1.2, 0.8, 1.5], vec![-1.0, -0.4, -2.0], vec![0, 0, 1], vec![0, 1, 2]);
    let (alpha, sigma) = (-0.6, 0.8);
    let sh = nested_logit_shares(&m.mean_utilities, &m.groups, sigma).unwrap();
    let e = elasticities(&m, &UtilityParams::nested_logit(alpha, sigma, 0.0, 0.0)).unwrap();
    for j in 0..3 {
        let want = alpha * m.prices[j] * (1.0 / (1.0 - sigma) - sigma / (1.0 - sigma) * sh.within[j] - sh.shares[j]);
        assert!((e.values[(j, j)] - want).abs() < 1e-12);
    }
}

#[test]
fn group_table_on_synthetic_panel() {
    let cfg = SynthConfig::small(3, 2, 18);
    let (_, ds) = prepared(&cfg);
    let est = DemandEstimate::at_params(&ds, &DemandSpec::default(), cfg.params.clone()).unwrap();
    let table = group_mean_elasticities(&ds, &est, Averaging::Unweighted).unwrap();
    assert_eq!(table.columns.len(), ds.groups().len() + 1);
    assert_eq!(table.columns.last().unwrap().group, "All");
    let total: usize = table.columns[..ds.groups().len()].iter().map(|c| c.n_obs).sum();
    assert_eq!(total, table.columns.last().unwrap().n_obs);
    for c in &table.columns {
        assert!(c.own < 0.0 && c.cross_same > 0.0 && c.cross_other > 0.0);
        assert!(c.cross_same > c.cross_other);
    }
    let weighted = group_mean_elasticities(&ds, &est, Averaging::ShareWeighted).unwrap();
    assert_eq!(weighted.columns.len(), table.columns.len());
}
