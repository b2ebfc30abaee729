//! One-level nested-logit share evaluation, share inversion and the
//! share-price Jacobian.
//!
//! For CENL the same algebra applies to revenue shares, with price entering
//! utility as `alpha * ln p`. Quantity demand per unit of market size is then
//! `revenue_share / price`, and the Jacobian is taken of that quantity.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Logit,
    #[default]
    NestedLogit,
    Cenl,
}

impl ModelKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            ModelKind::Logit => "logit",
            ModelKind::NestedLogit => "nested_logit",
            ModelKind::Cenl => "cenl",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "logit" => Ok(ModelKind::Logit),
            "nested_logit" => Ok(ModelKind::NestedLogit),
            "cenl" => Ok(ModelKind::Cenl),
            other => Err(Error::InvalidSpec(format!("unknown model `{other}`"))),
        }
    }
}

/// Largest nesting parameter used when evaluating shares.
pub const SIGMA_CEILING: f64 = 1.0 - 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UtilityParams {
    pub alpha: f64,
    pub sigma: f64,
    pub beta1: f64,
    pub beta2: f64,
    #[serde(default)]
    pub gamma: BTreeMap<String, f64>,
    pub model: ModelKind,
}

impl UtilityParams {
    pub fn nested_logit(alpha: f64, sigma: f64, beta1: f64, beta2: f64) -> Self {
        UtilityParams {
            alpha,
            sigma,
            beta1,
            beta2,
            gamma: BTreeMap::new(),
            model: ModelKind::NestedLogit,
        }
    }

    pub fn with_model(mut self, model: ModelKind) -> Self {
        self.model = model;
        self
    }

    /// Nesting parameter used for share evaluation: zero for logit, clamped
    /// to [`SIGMA_CEILING`] from above.
    pub fn effective_sigma(&self) -> Result<f64> {
        if self.model == ModelKind::Logit {
            return Ok(0.0);
        }
        check_sigma(self.sigma)
    }

    /// Utility change when the price moves from `from` to `to`.
    pub fn price_utility_shift(&self, from: f64, to: f64) -> f64 {
        match self.model {
            ModelKind::Cenl => self.alpha * (to.ln() - from.ln()),
            _ => self.alpha * (to - from),
        }
    }
}

fn check_sigma(sigma: f64) -> Result<f64> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(Error::InvalidParameter(format!("nesting parameter {sigma} outside [0, 1)")));
    }
    Ok(sigma.min(SIGMA_CEILING))
}

/// Vectors describing one market at a given set of prices.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketSnapshot {
    pub product_ids: Vec<String>,
    pub prices: Vec<f64>,
    pub mean_utilities: Vec<f64>,
    pub groups: Vec<usize>,
    pub firms: Vec<usize>,
    /// Market size in packages (nested logit) or currency (CENL).
    pub size: f64,
}

impl MarketSnapshot {
    pub fn len(&self) -> usize {
        self.prices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prices.is_empty()
    }

    /// The same market at new prices, with mean utilities shifted through
    /// the price term.
    pub fn reprice(&self, prices: &[f64], params: &UtilityParams) -> MarketSnapshot {
        let mean_utilities = self
            .mean_utilities
            .iter()
            .zip(&self.prices)
            .zip(prices)
            .map(|((d, &p0), &p1)| d + params.price_utility_shift(p0, p1))
            .collect();
        MarketSnapshot {
            prices: prices.to_vec(),
            mean_utilities,
            ..self.clone()
        }
    }
}

/// Share decomposition of one market. `group[j]` is the share of product
/// j's group.
#[derive(Clone, Debug, PartialEq)]
pub struct MarketShares {
    pub within: Vec<f64>,
    pub group: Vec<f64>,
    pub shares: Vec<f64>,
    pub outside: f64,
}

fn group_index(groups: &[usize]) -> (Vec<usize>, usize) {
    let mut labels: Vec<usize> = groups.to_vec();
    labels.sort_unstable();
    labels.dedup();
    let idx = groups
        .iter()
        .map(|g| labels.binary_search(g).expect("label present"))
        .collect();
    (idx, labels.len())
}

/// Nested-logit shares from mean utilities. Inclusive values are formed
/// with per-nest max subtraction, and group terms with a max over the
/// outside option and all nests.
pub fn nested_logit_shares(delta: &[f64], groups: &[usize], sigma: f64) -> Result<MarketShares> {
    let sigma = check_sigma(sigma)?;
    if delta.len() != groups.len() {
        return Err(Error::InvalidParameter("utility and group vectors differ in length".into()));
    }
    if let Some(d) = delta.iter().find(|d| !d.is_finite()) {
        return Err(Error::DomainError(format!("mean utility {d} is not finite")));
    }
    let scale = 1.0 - sigma;
    let (gidx, n_groups) = group_index(groups);
    let mut nest_max = vec![f64::NEG_INFINITY; n_groups];
    for (d, &g) in delta.iter().zip(&gidx) {
        nest_max[g] = nest_max[g].max(d / scale);
    }
    let mut nest_sum = vec![0.0; n_groups];
    let mut expo = vec![0.0; delta.len()];
    for (j, (d, &g)) in delta.iter().zip(&gidx).enumerate() {
        expo[j] = (d / scale - nest_max[g]).exp();
        nest_sum[g] += expo[j];
    }
    // (1 - sigma) * ln(inclusive value) per nest
    let nest_term: Vec<f64> = (0..n_groups)
        .map(|g| scale * (nest_max[g] + nest_sum[g].ln()))
        .collect();
    let top = nest_term.iter().copied().fold(0.0_f64, f64::max);
    let outside_w = (-top).exp();
    let nest_w: Vec<f64> = nest_term.iter().map(|a| (a - top).exp()).collect();
    let denom = outside_w + nest_w.iter().sum::<f64>();
    let group_share: Vec<f64> = nest_w.iter().map(|w| w / denom).collect();

    let within: Vec<f64> = expo.iter().zip(&gidx).map(|(e, &g)| e / nest_sum[g]).collect();
    let group: Vec<f64> = gidx.iter().map(|&g| group_share[g]).collect();
    let shares: Vec<f64> = within.iter().zip(&group).map(|(w, g)| w * g).collect();
    let outside = outside_w / denom;
    if !outside.is_finite() || shares.iter().any(|s| !s.is_finite()) {
        return Err(Error::NumericOverflow("share evaluation produced non-finite values".into()));
    }
    Ok(MarketShares {
        within,
        group,
        shares,
        outside,
    })
}

/// Shares implied by a snapshot's mean utilities. For CENL these are
/// revenue shares.
pub fn shares_from_utilities(snap: &MarketSnapshot, params: &UtilityParams) -> Result<MarketShares> {
    nested_logit_shares(&snap.mean_utilities, &snap.groups, params.effective_sigma()?)
}

/// Mean utilities that reproduce observed shares:
/// `delta_j = ln(s_j / s_0) - sigma ln s_{j|g}`.
pub fn invert_shares(shares: &[f64], within: &[f64], outside: f64, sigma: f64) -> Result<Vec<f64>> {
    if shares.len() != within.len() {
        return Err(Error::InvalidParameter("share vectors differ in length".into()));
    }
    if !(outside > 0.0 && outside < 1.0) {
        return Err(Error::DomainError(format!("outside share {outside} outside (0, 1)")));
    }
    shares
        .iter()
        .zip(within)
        .map(|(&s, &w)| {
            if !(s > 0.0 && s < 1.0) || !(w > 0.0 && w <= 1.0) {
                return Err(Error::DomainError(format!(
                    "share {s} / within-group share {w} not strictly positive"
                )));
            }
            Ok((s / outside).ln() - sigma * w.ln())
        })
        .collect()
}

/// Quantity demanded per unit of market size: the share itself for
/// (nested) logit, revenue share over price for CENL.
pub fn demand(snap: &MarketSnapshot, params: &UtilityParams) -> Result<Vec<f64>> {
    let sh = shares_from_utilities(snap, params)?;
    Ok(match params.model {
        ModelKind::Cenl => sh.shares.iter().zip(&snap.prices).map(|(s, p)| s / p).collect(),
        _ => sh.shares,
    })
}

/// `J[(j, k)] = d demand_j / d p_k`, evaluated analytically.
pub fn share_price_jacobian(snap: &MarketSnapshot, params: &UtilityParams) -> Result<DMatrix<f64>> {
    let sigma = params.effective_sigma()?;
    let sh = nested_logit_shares(&snap.mean_utilities, &snap.groups, sigma)?;
    let n = snap.len();
    let nest = sigma / (1.0 - sigma);
    // d s_j / d delta_k
    let dshare = |j: usize, k: usize| -> f64 {
        let mut bracket = -sh.shares[k];
        if j == k {
            bracket += 1.0 / (1.0 - sigma);
        }
        if snap.groups[j] == snap.groups[k] {
            bracket -= nest * sh.within[k];
        }
        sh.shares[j] * bracket
    };
    let mut jac = DMatrix::zeros(n, n);
    for j in 0..n {
        for k in 0..n {
            jac[(j, k)] = match params.model {
                ModelKind::Cenl => {
                    let ds = params.alpha / snap.prices[k] * dshare(j, k);
                    let own = if j == k {
                        sh.shares[j] / (snap.prices[j] * snap.prices[j])
                    } else {
                        0.0
                    };
                    ds / snap.prices[j] - own
                }
                _ => params.alpha * dshare(j, k),
            };
        }
    }
    Ok(jac)
}

#[cfg(test)]
mod tests {
    use super::*;

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
    fn single_product_symmetric_point() {
        let s = nested_logit_shares(&[0.0], &[0], 0.0).unwrap();
        assert!((s.shares[0] - 0.5).abs() < 1e-15);
        assert!((s.outside - 0.5).abs() < 1e-15);
    }

    #[test]
    fn two_products_logit() {
        let s = nested_logit_shares(&[0.0, 0.0], &[0, 0], 0.0).unwrap();
        for x in &s.shares {
            assert!((x - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_products_nested() {
        let s = nested_logit_shares(&[0.0, 0.0], &[0, 0], 0.5).unwrap();
        let root2 = 2f64.sqrt();
        let group = root2 / (1.0 + root2);
        assert!((s.within[0] - 0.5).abs() < 1e-15);
        assert!((s.group[0] - group).abs() < 1e-12);
        assert!((group - 0.585786).abs() < 1e-6);
        assert!((s.shares[0] - 0.292893).abs() < 1e-6);
    }

    #[test]
    fn inversion_closed_form() {
        let d = invert_shares(&[0.25], &[1.0], 0.5, 0.0).unwrap();
        assert!((d[0] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn inversion_recovers_zero_utilities() {
        let s = nested_logit_shares(&[0.0, 0.0], &[0, 0], 0.5).unwrap();
        let d = invert_shares(&s.shares, &s.within, s.outside, 0.5).unwrap();
        assert!(d.iter().all(|x| x.abs() < 1e-10));
    }

    #[test]
    fn inversion_rejects_zero_share() {
        assert!(matches!(
            invert_shares(&[0.0], &[1.0], 0.5, 0.3),
            Err(Error::DomainError(_))
        ));
    }

    #[test]
    fn large_utilities_near_unit_sigma_stay_finite() {
        let s = nested_logit_shares(&[40.0, 39.0, -5.0], &[0, 0, 1], 0.94).unwrap();
        assert!(s.shares.iter().all(|x| x.is_finite()));
        assert!((s.shares.iter().sum::<f64>() + s.outside - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sigma_is_clamped_not_rejected() {
        let s = nested_logit_shares(&[0.0, 1.0], &[0, 0], 1.0).unwrap();
        assert!(s.shares.iter().all(|x| x.is_finite()));
        assert!(nested_logit_shares(&[0.0], &[0], -0.1).is_err());
    }

    #[test]
    fn logit_derivative() {
        let params = UtilityParams::nested_logit(-1.3, 0.0, 0.0, 0.0);
        let m = snap(vec![1.5], vec![0.4], vec![0]);
        let j = share_price_jacobian(&m, &params).unwrap();
        let s = nested_logit_shares(&[0.4], &[0], 0.0).unwrap().shares[0];
        assert!((j[(0, 0)] - (-1.3 * s * (1.0 - s))).abs() < 1e-15);
    }

    #[test]
    fn cross_group_entry() {
        let params = UtilityParams::nested_logit(-0.7, 0.8, 0.0, 0.0);
        let m = snap(vec![1.0, 2.0], vec![-1.0, -2.0], vec![0, 1]);
        let j = share_price_jacobian(&m, &params).unwrap();
        let s = nested_logit_shares(&m.mean_utilities, &m.groups, 0.8).unwrap().shares;
        // elasticity alpha p_k (s_k / s_j)(-s_j), converted back to a derivative
        let elasticity = -0.7 * 2.0 * (s[1] / s[0]) * -s[0];
        assert!((j[(0, 1)] - elasticity * s[0] / 2.0).abs() < 1e-15);
        assert!(j[(0, 1)] > 0.0);
    }
}
