//! Counterfactual image-score scenarios: shifted mean utilities, simulated
//! volumes and revenues, and the advertising multiplier that reproduces a
//! revenue target.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::equilibrium::{recover_costs, solve_bertrand, BertrandOptions};
use crate::error::{Error, Result};
use crate::estimator::DemandEstimate;
use crate::panel::PanelDataset;
use crate::shares::{demand, MarketSnapshot};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "rule")]
pub enum ImageRule {
    /// Keep the target firm's own image score.
    #[default]
    Observed,
    /// Unweighted mean of all other firms' scores, period by period.
    MeanOfRivals,
    /// Another firm's score series.
    FollowFirm { firm: String },
    /// Explicit series on the regression scale, keyed by period.
    Custom { series: BTreeMap<i64, f64> },
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pricing {
    /// Prices stay at observed values.
    #[default]
    Regulated,
    /// Prices re-equilibrate under Nash-Bertrand conduct.
    Bertrand,
}

impl std::str::FromStr for Pricing {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regulated" => Ok(Pricing::Regulated),
            "bertrand" => Ok(Pricing::Bertrand),
            _ => Err(Error::Scenario(format!("unknown pricing regime `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub target_firm: String,
    #[serde(default)]
    pub image_rule: ImageRule,
    /// Proportional change in the target firm's cumulative advertising.
    #[serde(default)]
    pub ad_multiplier: f64,
    #[serde(default)]
    pub pricing: Pricing,
}

impl Scenario {
    pub fn identity(target_firm: &str) -> Self {
        Scenario {
            name: "identity".into(),
            target_firm: target_firm.into(),
            image_rule: ImageRule::Observed,
            ad_multiplier: 0.0,
            pricing: Pricing::Regulated,
        }
    }

    fn validate(&self, ds: &PanelDataset) -> Result<usize> {
        let target = ds
            .firm_index(&self.target_firm)
            .ok_or_else(|| Error::Scenario(format!("unknown target firm `{}`", self.target_firm)))?;
        if !(self.ad_multiplier.is_finite() && self.ad_multiplier >= -1.0) {
            return Err(Error::Scenario(format!("ad multiplier {} below -1", self.ad_multiplier)));
        }
        match &self.image_rule {
            ImageRule::FollowFirm { firm } if ds.firm_index(firm).is_none() => {
                return Err(Error::Scenario(format!("unknown firm `{firm}` in image rule")));
            }
            ImageRule::MeanOfRivals if ds.firms().len() < 2 => {
                return Err(Error::Scenario("mean of rivals needs at least two firms".into()));
            }
            ImageRule::Custom { series } => {
                if let Some(t) = ds.periods().into_iter().find(|t| !series.contains_key(t)) {
                    return Err(Error::Scenario(format!("custom series has no value for period {t}")));
                }
            }
            _ => {}
        }
        Ok(target)
    }
}

/// Counterfactual image score of the target firm at `period`, on the
/// regression scale.
fn cf_image(ds: &PanelDataset, rule: &ImageRule, target: usize, period: i64) -> Result<f64> {
    let image = &ds.scores()?.firm_image;
    Ok(match rule {
        ImageRule::Observed => image[target].at(period),
        ImageRule::MeanOfRivals => {
            let rivals: Vec<f64> = (0..image.len())
                .filter(|&f| f != target)
                .map(|f| image[f].at(period))
                .collect();
            rivals.iter().sum::<f64>() / rivals.len() as f64
        }
        ImageRule::FollowFirm { firm } => image[ds.firm_index(firm).expect("validated")].at(period),
        ImageRule::Custom { series } => series[&period],
    })
}

/// Counterfactual mean utility per observation (`None` where no fitted
/// utility exists): the fitted utility plus `beta1` times the image-score
/// change plus `beta2 * tau * cumadv`, applied to the target firm only.
pub fn cf_mean_utility(ds: &PanelDataset, est: &DemandEstimate, scenario: &Scenario) -> Result<Vec<Option<f64>>> {
    let target = scenario.validate(ds)?;
    let scores = ds.scores()?;
    let index = est.fitted_index(ds);
    let p = &est.params;
    ds.observations()
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let Some(f) = index[i] else {
                if o.volume > 0.0 {
                    return Err(Error::MissingResidual(ds.key(i).to_string()));
                }
                return Ok(None);
            };
            let mut d = est.fitted[f].mean_utility;
            if ds.firm_of(o.product) == target {
                let period = ds.markets()[o.market].period;
                let row = &scores.rows[i];
                d += p.beta1 * (cf_image(ds, &scenario.image_rule, target, period)? - row.imgscore);
                d += p.beta2 * scenario.ad_multiplier * row.cumadv;
            }
            Ok(Some(d))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub firm_id: String,
    pub observed_volume: f64,
    pub simulated_volume: f64,
    /// `(observed - simulated) / observed * 100`.
    pub volume_gap_pct: f64,
    pub observed_revenue: f64,
    pub simulated_revenue: f64,
    pub revenue_gap_pct: f64,
}

impl Outcome {
    fn new(firm_id: String, ov: f64, sv: f64, or: f64, sr: f64) -> Self {
        Outcome {
            firm_id,
            observed_volume: ov,
            simulated_volume: sv,
            volume_gap_pct: gap(ov, sv),
            observed_revenue: or,
            simulated_revenue: sr,
            revenue_gap_pct: gap(or, sr),
        }
    }
}

fn gap(observed: f64, simulated: f64) -> f64 {
    (observed - simulated) / observed * 100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PeriodOutcome {
    pub period: i64,
    #[serde(flatten)]
    pub outcome: Outcome,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImagePoint {
    pub period: i64,
    pub observed: f64,
    pub counterfactual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceSummary {
    pub firm_id: String,
    pub observed_mean_price: f64,
    pub simulated_mean_price: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub scenario: Scenario,
    /// One row per firm in id order.
    pub firms: Vec<Outcome>,
    pub total: Outcome,
    /// Per period and firm, followed by a `Total` row per period.
    pub monthly: Vec<PeriodOutcome>,
    /// Target firm image score, observed and counterfactual.
    pub image: Vec<ImagePoint>,
    pub prices: Vec<PriceSummary>,
}

/// Observed and simulated quantities of one row.
#[derive(Clone, Copy)]
struct RowResult {
    obs: usize,
    volume: f64,
    price: f64,
}

fn simulate_rows(ds: &PanelDataset, est: &DemandEstimate, scenario: &Scenario) -> Result<Vec<RowResult>> {
    let cf = cf_mean_utility(ds, est, scenario)?;
    let markets = est.snapshots(ds)?;
    let per_market: Vec<Vec<RowResult>> = markets
        .par_iter()
        .map(|fm| -> Result<Vec<RowResult>> {
            if fm.rows.is_empty() {
                return Ok(Vec::new());
            }
            let observed = &fm.snapshot;
            let cf_snap = MarketSnapshot {
                mean_utilities: fm.rows.iter().map(|&i| cf[i].expect("fitted row")).collect(),
                ..observed.clone()
            };
            let (prices, q) = match scenario.pricing {
                Pricing::Regulated => (observed.prices.clone(), demand(&cf_snap, &est.params)?),
                Pricing::Bertrand => {
                    let mc = recover_costs(observed, &est.params)?;
                    let eq = solve_bertrand(&cf_snap, &est.params, &mc.mc, BertrandOptions::default())?;
                    (eq.prices, eq.demand)
                }
            };
            Ok(fm
                .rows
                .iter()
                .enumerate()
                .map(|(k, &i)| RowResult {
                    obs: i,
                    volume: q[k] * observed.size,
                    price: prices[k],
                })
                .collect())
        })
        .collect::<Result<_>>()?;
    Ok(per_market.into_iter().flatten().collect())
}

/// Simulates a scenario over the whole panel.
pub fn simulate(ds: &PanelDataset, est: &DemandEstimate, scenario: &Scenario) -> Result<CounterfactualReport> {
    let target = scenario.validate(ds)?;
    let rows = simulate_rows(ds, est, scenario)?;
    let n_firms = ds.firms().len();
    let periods = ds.periods();
    // [observed volume, simulated volume, observed revenue, simulated revenue, observed price sum, simulated price sum, count]
    let mut firm_acc = vec![[0.0; 7]; n_firms];
    let mut month_acc = vec![vec![[0.0; 4]; n_firms]; periods.len()];
    for r in &rows {
        let o = &ds.observations()[r.obs];
        let f = ds.firm_of(o.product);
        let t = periods
            .binary_search(&ds.markets()[o.market].period)
            .expect("period listed");
        let vals = [o.volume, r.volume, o.revenue(), r.volume * r.price];
        for k in 0..4 {
            firm_acc[f][k] += vals[k];
            month_acc[t][f][k] += vals[k];
        }
        firm_acc[f][4] += o.price;
        firm_acc[f][5] += r.price;
        firm_acc[f][6] += 1.0;
    }
    let outcome = |id: &str, a: &[f64]| Outcome::new(id.to_string(), a[0], a[1], a[2], a[3]);
    let sum = |accs: &[[f64; 4]]| {
        let mut t = [0.0; 4];
        for a in accs {
            for k in 0..4 {
                t[k] += a[k];
            }
        }
        t
    };
    let firms: Vec<Outcome> = ds
        .firms()
        .iter()
        .zip(&firm_acc)
        .map(|(id, a)| outcome(id, &a[..4]))
        .collect();
    let firm4: Vec<[f64; 4]> = firm_acc.iter().map(|a| [a[0], a[1], a[2], a[3]]).collect();
    let total = outcome("Total", &sum(&firm4));
    let mut monthly = Vec::new();
    for (t, accs) in periods.iter().zip(&month_acc) {
        for (id, a) in ds.firms().iter().zip(accs) {
            monthly.push(PeriodOutcome {
                period: *t,
                outcome: outcome(id, a),
            });
        }
        monthly.push(PeriodOutcome {
            period: *t,
            outcome: outcome("Total", &sum(accs)),
        });
    }
    let image_series = &ds.scores()?.firm_image[target];
    let image = periods
        .iter()
        .map(|&t| {
            Ok(ImagePoint {
                period: t,
                observed: image_series.at(t),
                counterfactual: cf_image(ds, &scenario.image_rule, target, t)?,
            })
        })
        .collect::<Result<_>>()?;
    let prices = ds
        .firms()
        .iter()
        .zip(&firm_acc)
        .map(|(id, a)| PriceSummary {
            firm_id: id.clone(),
            observed_mean_price: a[4] / a[6],
            simulated_mean_price: a[5] / a[6],
        })
        .collect();
    Ok(CounterfactualReport {
        scenario: scenario.clone(),
        firms,
        total,
        monthly,
        image,
        prices,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TauOptions {
    pub tau_max: f64,
    /// Relative revenue tolerance of the bisection.
    pub tolerance: f64,
    pub grid_step: f64,
    /// Last multiplier on the emitted revenue curve.
    pub grid_max: f64,
    /// Restrict revenues to periods from this one on.
    pub from_period: Option<i64>,
    pub max_iterations: usize,
}

impl Default for TauOptions {
    fn default() -> Self {
        TauOptions {
            tau_max: 2.0,
            tolerance: 1e-8,
            grid_step: 0.2,
            grid_max: 1.0,
            from_period: None,
            max_iterations: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TauResult {
    pub tau: f64,
    pub target_revenue: f64,
    pub revenue_at_tau: f64,
    pub iterations: usize,
    /// `(tau, simulated revenue)` on the emitted grid.
    pub curve: Vec<(f64, f64)>,
}

fn grid(step: f64, max: f64) -> Vec<f64> {
    let n = (max / step + 1e-9).floor() as usize;
    (0..=n).map(|i| (i as f64 * step).min(max)).collect()
}

/// Finds the advertising multiplier at which the target firm's simulated
/// revenue under `scenario` equals `target_revenue` (default: its observed
/// revenue over the window).
pub fn ad_equivalence_tau(
    ds: &PanelDataset,
    est: &DemandEstimate,
    scenario: &Scenario,
    target_revenue: Option<f64>,
    opts: TauOptions,
) -> Result<TauResult> {
    let target = scenario.validate(ds)?;
    if !(opts.tau_max > 0.0 && opts.grid_step > 0.0 && opts.tolerance > 0.0) {
        return Err(Error::Scenario("tau_max, grid_step and tolerance must be positive".into()));
    }
    let in_window = |obs: usize| {
        let o = &ds.observations()[obs];
        ds.firm_of(o.product) == target
            && opts.from_period.is_none_or(|t0| ds.markets()[o.market].period >= t0)
    };
    let revenue = |tau: f64| -> Result<f64> {
        let sc = Scenario {
            ad_multiplier: tau,
            ..scenario.clone()
        };
        Ok(simulate_rows(ds, est, &sc)?
            .iter()
            .filter(|r| in_window(r.obs))
            .map(|r| r.volume * r.price)
            .sum())
    };
    let target_revenue = match target_revenue {
        Some(t) => t,
        None => (0..ds.observations().len())
            .filter(|&i| in_window(i))
            .map(|i| ds.observations()[i].revenue())
            .sum(),
    };
    if !(target_revenue > 0.0) {
        return Err(Error::Scenario(format!("target revenue {target_revenue} must be positive")));
    }

    let mut check_points = grid(opts.grid_step, opts.tau_max);
    if check_points.last() != Some(&opts.tau_max) {
        check_points.push(opts.tau_max);
    }
    let check: Vec<(f64, f64)> = check_points
        .iter()
        .map(|&t| Ok((t, revenue(t)?)))
        .collect::<Result<_>>()?;
    if let Some(w) = check.windows(2).find(|w| !(w[1].1 > w[0].1)) {
        return Err(Error::BracketFailure(format!(
            "simulated revenue is not increasing in tau between {} and {}",
            w[0].0, w[1].0
        )));
    }
    let curve: Vec<(f64, f64)> = grid(opts.grid_step, opts.grid_max)
        .into_iter()
        .map(|t| Ok((t, revenue(t)?)))
        .collect::<Result<_>>()?;

    let rel = |r: f64| (r - target_revenue) / target_revenue;
    let r_lo = check[0].1;
    let r_hi = check.last().expect("non-empty grid").1;
    if rel(r_lo).abs() < opts.tolerance {
        return Ok(TauResult {
            tau: 0.0,
            target_revenue,
            revenue_at_tau: r_lo,
            iterations: 0,
            curve,
        });
    }
    if r_lo > target_revenue || r_hi < target_revenue {
        return Err(Error::BracketFailure(format!(
            "target revenue {target_revenue} outside [{r_lo}, {r_hi}] on tau in [0, {}]",
            opts.tau_max
        )));
    }
    // start from the grid cell holding the root
    let cell = check
        .windows(2)
        .find(|w| w[0].1 <= target_revenue && target_revenue <= w[1].1)
        .expect("root bracketed");
    let (mut lo, mut hi) = (cell[0].0, cell[1].0);
    for it in 1..=opts.max_iterations {
        let mid = 0.5 * (lo + hi);
        let r = revenue(mid)?;
        if rel(r).abs() < opts.tolerance {
            return Ok(TauResult {
                tau: mid,
                target_revenue,
                revenue_at_tau: r,
                iterations: it,
                curve,
            });
        }
        if r < target_revenue {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Err(Error::BracketFailure(format!(
        "bisection stalled in [{lo}, {hi}] after {} iterations",
        opts.max_iterations
    )))
}
