//! Own and cross price elasticities, per market and averaged by group.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::estimator::DemandEstimate;
use crate::panel::PanelDataset;
use crate::shares::{shares_from_utilities, MarketSnapshot, ModelKind, UtilityParams};

/// `values[(j, k)]` is the elasticity of product j's demand with respect to
/// product k's price.
#[derive(Clone, Debug, PartialEq)]
pub struct ElasticityMatrix {
    pub product_ids: Vec<String>,
    pub groups: Vec<usize>,
    pub values: DMatrix<f64>,
}

/// Elasticity matrix at the snapshot's prices and utilities.
///
/// Nested logit:
/// `e_jk = alpha p_k (s_k/s_j) (D1/(1-sigma) - sigma/(1-sigma) s_{j|g} D2 - s_j)`,
/// with D1 the own indicator and D2 the same-group indicator. CENL uses
/// revenue shares, drops `p_k` (price enters in logs) and subtracts D1.
pub fn elasticities(snap: &MarketSnapshot, params: &UtilityParams) -> Result<ElasticityMatrix> {
    let sigma = params.effective_sigma()?;
    let sh = shares_from_utilities(snap, params)?;
    let n = snap.len();
    let cenl = params.model == ModelKind::Cenl;
    let values = DMatrix::from_fn(n, n, |j, k| {
        let d1 = if j == k { 1.0 } else { 0.0 };
        let d2 = if snap.groups[j] == snap.groups[k] { 1.0 } else { 0.0 };
        let bracket = d1 / (1.0 - sigma) - sigma / (1.0 - sigma) * sh.within[j] * d2 - sh.shares[j];
        let ratio = sh.shares[k] / sh.shares[j];
        if cenl {
            params.alpha * ratio * bracket - d1
        } else {
            params.alpha * snap.prices[k] * ratio * bracket
        }
    });
    Ok(ElasticityMatrix {
        product_ids: snap.product_ids.clone(),
        groups: snap.groups.clone(),
        values,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    /// Every observation counts once.
    #[default]
    Unweighted,
    /// Observations weighted by their market share.
    ShareWeighted,
}

/// Mean elasticities of one column (a product group or all products).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupElasticity {
    pub group: String,
    pub own: f64,
    /// Mean cross elasticity towards same-group rivals; NaN if there are none.
    pub cross_same: f64,
    /// Mean cross elasticity towards other groups; NaN if there are none.
    pub cross_other: f64,
    pub n_obs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ElasticityTable {
    /// One entry per group followed by an "All" entry.
    pub columns: Vec<GroupElasticity>,
    /// Cells left NaN for lack of pairs.
    pub flagged: Vec<String>,
}

#[derive(Clone, Copy, Default)]
struct Acc {
    own: (f64, f64),
    same: (f64, f64),
    other: (f64, f64),
    n: usize,
}

fn add(acc: &mut (f64, f64), v: f64, w: f64) {
    acc.0 += v * w;
    acc.1 += w;
}

fn mean(acc: (f64, f64)) -> f64 {
    if acc.1 > 0.0 {
        acc.0 / acc.1
    } else {
        f64::NAN
    }
}

/// Group means of observation-level own and cross elasticities. For each
/// observation the cross entries are first averaged over same-group and
/// other-group rivals; those per-observation values are then averaged by
/// the observation's group.
pub fn group_mean_elasticities(
    ds: &PanelDataset,
    est: &DemandEstimate,
    averaging: Averaging,
) -> Result<ElasticityTable> {
    let n_groups = ds.groups().len();
    let markets = est.snapshots(ds)?;
    let per_market: Vec<Vec<Acc>> = markets
        .par_iter()
        .map(|fm| -> Result<Vec<Acc>> {
            let mut acc = vec![Acc::default(); n_groups];
            let snap = &fm.snapshot;
            if snap.is_empty() {
                return Ok(acc);
            }
            let e = elasticities(snap, &est.params)?;
            let sh = shares_from_utilities(snap, &est.params)?;
            for j in 0..snap.len() {
                let w = match averaging {
                    Averaging::Unweighted => 1.0,
                    Averaging::ShareWeighted => sh.shares[j],
                };
                let g = snap.groups[j];
                let (mut same, mut other) = ((0.0, 0.0), (0.0, 0.0));
                for k in (0..snap.len()).filter(|&k| k != j) {
                    let target = if snap.groups[k] == g { &mut same } else { &mut other };
                    add(target, e.values[(j, k)], 1.0);
                }
                let a = &mut acc[g];
                add(&mut a.own, e.values[(j, j)], w);
                if same.1 > 0.0 {
                    add(&mut a.same, mean(same), w);
                }
                if other.1 > 0.0 {
                    add(&mut a.other, mean(other), w);
                }
                a.n += 1;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;

    let mut by_group = vec![Acc::default(); n_groups];
    for accs in &per_market {
        for (total, a) in by_group.iter_mut().zip(accs) {
            for (t, x) in [(&mut total.own, a.own), (&mut total.same, a.same), (&mut total.other, a.other)] {
                t.0 += x.0;
                t.1 += x.1;
            }
            total.n += a.n;
        }
    }
    let mut all = Acc::default();
    for a in &by_group {
        for (t, x) in [(&mut all.own, a.own), (&mut all.same, a.same), (&mut all.other, a.other)] {
            t.0 += x.0;
            t.1 += x.1;
        }
        all.n += a.n;
    }
    let names = ds.groups().iter().cloned().chain(std::iter::once("All".to_string()));
    let mut flagged = Vec::new();
    let columns = names
        .zip(by_group.iter().chain(std::iter::once(&all)))
        .map(|(group, a)| {
            let col = GroupElasticity {
                group,
                own: mean(a.own),
                cross_same: mean(a.same),
                cross_other: mean(a.other),
                n_obs: a.n,
            };
            for (label, v) in [("own", col.own), ("cross_same", col.cross_same), ("cross_other", col.cross_other)] {
                if v.is_nan() {
                    flagged.push(format!("{}:{label}", col.group));
                }
            }
            col
        })
        .collect();
    Ok(ElasticityTable { columns, flagged })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::shares::{invert_shares, nested_logit_shares};

    fn snap(prices: Vec<f64>, delta: Vec<f64>, groups: Vec<usize>) -> MarketSnapshot {
        let n = prices.len();
        MarketSnapshot {
            product_ids: (0..n).map(|i| format!("p{i}")).collect(),
            prices,
            mean_utilities: delta,
            groups,
            firms: (0..n).collect(),
            size: 1.0,
        }
    }

    #[test]
    fn logit_own_elasticity() {
        // s = 0.25 when delta = ln(1/3) for a single product
        let m = snap(vec![1.0], vec![(1.0f64 / 3.0).ln()], vec![0]);
        let p = UtilityParams::nested_logit(-2.0, 0.0, 0.0, 0.0).with_model(ModelKind::Logit);
        let e = elasticities(&m, &p).unwrap();
        assert!((e.values[(0, 0)] + 1.5).abs() < 1e-12);
    }

    #[test]
    fn cenl_own_elasticity_with_tiny_share() {
        let m = snap(vec![3.0], vec![-30.0], vec![0]);
        let p = UtilityParams::nested_logit(-0.5, 0.0, 0.0, 0.0).with_model(ModelKind::Cenl);
        let e = elasticities(&m, &p).unwrap();
        assert!((e.values[(0, 0)] + 1.5).abs() < 1e-12);
    }

    #[test]
    fn symmetric_duopoly_cross_entries() {
        let m = snap(vec![1.0, 1.0], vec![-1.0, -1.0], vec![0, 0]);
        let p = UtilityParams::nested_logit(-1.0, 0.5, 0.0, 0.0);
        let e = elasticities(&m, &p).unwrap();
        assert!((e.values[(0, 1)] - e.values[(1, 0)]).abs() < 1e-15);
        assert!(e.values[(0, 1)] > 0.0);
        assert!(e.values[(0, 0)] < 0.0);
    }

    #[test]
    fn higher_sigma_raises_same_group_cross_entries_at_fixed_shares() {
        let groups = vec![0, 0, 1];
        let sh = nested_logit_shares(&[-1.0, -1.5, -2.0], &groups, 0.3).unwrap();
        let cross = |sigma: f64| {
            let delta = invert_shares(&sh.shares, &sh.within, sh.outside, sigma).unwrap();
            let m = snap(vec![1.0, 1.2, 0.9], delta, groups.clone());
            let p = UtilityParams::nested_logit(-1.0, sigma, 0.0, 0.0);
            elasticities(&m, &p).unwrap().values[(0, 1)]
        };
        assert!(cross(0.8) > cross(0.5));
        assert!(cross(0.5) > cross(0.0));
    }
}
