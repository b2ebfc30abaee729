//! Multi-product Nash-Bertrand pricing: marginal cost recovery, equilibrium
//! solving and the regulated-price regime.
//!
//! With `d(p)` quantity demand per unit of market size and
//! `J[(j, k)] = d d_j / d p_k`, firm first-order conditions read
//! `d + (Omega o J') (p - mc) = 0`, where `Omega` marks common ownership.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::shares::{demand, share_price_jacobian, MarketSnapshot, ModelKind, UtilityParams};

/// `Omega[(j, k)] = 1` when products j and k share an owner.
pub fn ownership_matrix(firms: &[usize]) -> DMatrix<f64> {
    let n = firms.len();
    DMatrix::from_fn(n, n, |j, k| if firms[j] == firms[k] { 1.0 } else { 0.0 })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostVector {
    pub product_ids: Vec<String>,
    pub mc: Vec<f64>,
    pub warnings: Vec<String>,
}

/// Distinct owners in order of first appearance with their product indices.
fn firm_blocks(firms: &[usize]) -> Vec<(usize, Vec<usize>)> {
    let mut blocks: Vec<(usize, Vec<usize>)> = Vec::new();
    for (j, &f) in firms.iter().enumerate() {
        match blocks.iter_mut().find(|(g, _)| *g == f) {
            Some((_, v)) => v.push(j),
            None => blocks.push((f, vec![j])),
        }
    }
    blocks
}

/// Markups `p - mc = -(Omega o J')^{-1} d`, solved firm by firm.
pub fn markups(snap: &MarketSnapshot, params: &UtilityParams) -> Result<Vec<f64>> {
    let d = demand(snap, params)?;
    let jac = share_price_jacobian(snap, params)?;
    let mut out = vec![0.0; snap.len()];
    for (firm, idx) in firm_blocks(&snap.firms) {
        let n = idx.len();
        // block of (Omega o J') restricted to the firm's products
        let block = DMatrix::from_fn(n, n, |a, b| jac[(idx[b], idx[a])]);
        let rhs = DVector::from_iterator(n, idx.iter().map(|&j| d[j]));
        let scale = block.amax();
        let singular = || Error::SingularBlock {
            firm: firm.to_string(),
        };
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(singular());
        }
        let svd = block.clone().svd(false, false);
        if svd.singular_values.min() / svd.singular_values.max() < 1e-14 {
            return Err(singular());
        }
        let sol = block.lu().solve(&rhs).ok_or_else(singular)?;
        for (a, &j) in idx.iter().enumerate() {
            out[j] = -sol[a];
        }
    }
    Ok(out)
}

/// Marginal costs implied by observed prices under Bertrand conduct.
pub fn recover_costs(snap: &MarketSnapshot, params: &UtilityParams) -> Result<CostVector> {
    let mk = markups(snap, params)?;
    let mc: Vec<f64> = snap.prices.iter().zip(&mk).map(|(p, m)| p - m).collect();
    if let Some(bad) = mc.iter().find(|c| !c.is_finite()) {
        return Err(Error::NumericOverflow(format!("recovered marginal cost {bad}")));
    }
    let warnings = mc
        .iter()
        .zip(&snap.product_ids)
        .filter(|(c, _)| **c < 0.0)
        .map(|(c, id)| format!("negative marginal cost {c} for product {id}"))
        .collect::<Vec<_>>();
    for w in &warnings {
        log::debug!("{w}");
    }
    Ok(CostVector {
        product_ids: snap.product_ids.clone(),
        mc,
        warnings,
    })
}

/// `max_j |p_j - mc_j - markup_j(p)|` at the snapshot's prices.
pub fn foc_residual(snap: &MarketSnapshot, params: &UtilityParams, mc: &[f64]) -> Result<f64> {
    let mk = markups(snap, params)?;
    Ok(snap
        .prices
        .iter()
        .zip(mc)
        .zip(&mk)
        .map(|((p, c), m)| (p - c - m).abs())
        .fold(0.0, f64::max))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BertrandOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Initial step length on the fixed-point map; halved whenever the
    /// step grows.
    pub damping: f64,
}

impl Default for BertrandOptions {
    fn default() -> Self {
        BertrandOptions {
            tolerance: 1e-10,
            max_iterations: 10_000,
            damping: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub prices: Vec<f64>,
    /// Quantity demand per unit of market size at `prices`.
    pub demand: Vec<f64>,
    pub iterations: usize,
    /// FOC residual at `prices`.
    pub residual: f64,
}

/// Next price vector of the zeta-markup map `p <- mc + zeta(p)`, where the
/// Jacobian is split as `J = diag(lambda) - Gamma` with `lambda` the
/// own-share part of the diagonal and
/// `zeta = lambda^{-1} ((Omega o Gamma)' (p - mc) - d)`.
fn zeta_step(snap: &MarketSnapshot, params: &UtilityParams, mc: &[f64]) -> Result<Vec<f64>> {
    let sigma = params.effective_sigma()?;
    let d = demand(snap, params)?;
    let jac = share_price_jacobian(snap, params)?;
    let n = snap.len();
    let lambda: Vec<f64> = (0..n)
        .map(|j| match params.model {
            ModelKind::Cenl => d[j] * (params.alpha / (1.0 - sigma) - 1.0) / snap.prices[j],
            _ => params.alpha * d[j] / (1.0 - sigma),
        })
        .collect();
    (0..n)
        .map(|j| {
            if !(lambda[j] < 0.0) {
                return Err(Error::SingularBlock {
                    firm: snap.firms[j].to_string(),
                });
            }
            let owned: f64 = (0..n)
                .filter(|&k| snap.firms[k] == snap.firms[j])
                .map(|k| {
                    let gamma = if k == j { lambda[j] - jac[(j, j)] } else { -jac[(k, j)] };
                    gamma * (snap.prices[k] - mc[k])
                })
                .sum();
            Ok(mc[j] + (owned - d[j]) / lambda[j])
        })
        .collect()
}

/// Solves the Bertrand first-order conditions by the zeta-markup fixed
/// point, starting from the snapshot's prices. Mean utilities in `snap` are
/// those at the snapshot prices and are shifted through the price term as
/// prices move.
pub fn solve_bertrand(
    snap: &MarketSnapshot,
    params: &UtilityParams,
    mc: &[f64],
    opts: BertrandOptions,
) -> Result<Equilibrium> {
    if mc.len() != snap.len() || mc.iter().any(|c| !c.is_finite()) {
        return Err(Error::InvalidParameter("marginal costs must be finite, one per product".into()));
    }
    if snap.is_empty() {
        return Ok(Equilibrium {
            prices: Vec::new(),
            demand: Vec::new(),
            iterations: 0,
            residual: 0.0,
        });
    }
    let mut lambda = opts.damping;
    let mut prices = snap.prices.clone();
    let mut last_step = f64::INFINITY;
    let mut residual = f64::INFINITY;
    for it in 0..opts.max_iterations {
        let cur = snap.reprice(&prices, params);
        let target = zeta_step(&cur, params, mc)?;
        let step = prices
            .iter()
            .zip(&target)
            .map(|(p, t)| (p - t).abs())
            .fold(0.0, f64::max);
        if !step.is_finite() {
            return Err(Error::NoConvergence { iterations: it, residual: step });
        }
        if step < opts.tolerance {
            residual = foc_residual(&cur, params, mc)?;
            if residual < opts.tolerance {
                return Ok(Equilibrium {
                    demand: demand(&cur, params)?,
                    prices,
                    iterations: it,
                    residual,
                });
            }
        }
        if step > last_step {
            lambda = (lambda * 0.5).max(1e-3);
        }
        last_step = step;
        // keep prices positive for the log-price model
        prices = prices
            .iter()
            .zip(&target)
            .map(|(&p, &t)| {
                let next = p + lambda * (t - p);
                if next > 0.0 { next } else { 0.5 * p }
            })
            .collect();
    }
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        residual: if residual.is_finite() { residual } else { last_step },
    })
}

/// Regulated regime: counterfactual prices are the observed prices.
pub fn regulated_prices(observed: &[f64]) -> Vec<f64> {
    observed.to_vec()
}
