//! Synthetic panels drawn from known demand parameters, and a grid-search
//! Bertrand solver for small markets.
//!
//! Prices load on a product cost shock shared by all regions, which makes
//! other-region prices a valid price instrument, and on the market's own
//! demand shock, which makes price endogenous. Shares are exact model shares.

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{attach_scores, ScoreConfig};
use crate::panel::{month_of_year, MarketDef, ObservationRecord, PanelDataset, ProductMeta};
use crate::shares::{demand, nested_logit_shares, MarketSnapshot, ModelKind, UtilityParams};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthProduct {
    pub product_id: String,
    pub firm_id: String,
    pub brand_id: String,
    pub group_id: String,
    pub is_cold: bool,
    /// Periods after the panel start before national launch; the product
    /// then rolls out one region per month.
    #[serde(default)]
    pub entry_offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub params: UtilityParams,
    pub seed: u64,
    pub products: Vec<SynthProduct>,
    /// Population per region; region ids are `R1`, `R2`, ...
    pub populations: Vec<f64>,
    pub periods: usize,
    pub start_period: i64,
    pub size_unit: f64,
    /// Monthly spending per head, used as the CENL market size.
    pub spend_per_capita: f64,
    /// Product-market cells removed at random after entry.
    pub absent_cells: usize,
    pub xi_sd: f64,
    /// Loading of the demand shock on price.
    pub endogeneity: f64,
    pub cost_rho: f64,
    pub cost_sd: f64,
    pub regional_price_sd: f64,
    pub base_price: (f64, f64),
    /// Poisson news rate per firm before and after the midpoint.
    pub news_rates: BTreeMap<String, (f64, f64)>,
    /// Typical monthly advertising per brand, in currency units.
    pub adv_scale: f64,
    pub target_outside_share: f64,
    pub scores: ScoreConfig,
}

fn default_products() -> Vec<SynthProduct> {
    // (firm, group, count)
    let layout = [
        ("F1", "red", 12),
        ("F1", "white", 1),
        ("F1", "soupless", 3),
        ("F1", "cold", 1),
        ("F2", "red", 4),
        ("F2", "white", 1),
        ("F2", "soupless", 1),
        ("F2", "cold", 1),
        ("F3", "red", 2),
        ("F3", "white", 1),
        ("F3", "soupless", 1),
        ("F4", "red", 1),
        ("F4", "soupless", 1),
    ];
    let entrants = [("P12", 10), ("P16", 20), ("P21", 30), ("P28", 40), ("P30", 50)];
    let mut out = Vec::new();
    let mut brand = 0;
    for (firm, group, count) in layout {
        for i in 0..count {
            if i % 2 == 0 {
                brand += 1;
            }
            let id = format!("P{:02}", out.len() + 1);
            let entry_offset = entrants.iter().find(|(p, _)| *p == id).map_or(0, |e| e.1);
            out.push(SynthProduct {
                product_id: id,
                firm_id: firm.into(),
                brand_id: format!("B{brand:02}"),
                group_id: group.into(),
                is_cold: group == "cold",
                entry_offset,
            });
        }
    }
    out
}

impl Default for SynthConfig {
    fn default() -> Self {
        let news_rates = [
            ("F1", (10.0, 10.0)),
            ("F2", (6.0, 30.0)),
            ("F3", (4.0, 4.0)),
            ("F4", (5.0, 5.0)),
        ]
        .into_iter()
        .map(|(f, r)| (f.to_string(), r))
        .collect();
        SynthConfig {
            params: UtilityParams::nested_logit(-0.578, 0.819, 0.177, 0.283),
            seed: 1,
            products: default_products(),
            populations: vec![9.7e6, 3.4e6, 2.4e6, 2.9e6, 1.5e6, 1.5e6],
            periods: 113,
            start_period: 2010 * 12 + 7,
            size_unit: 10.0,
            spend_per_capita: 4.0,
            absent_cells: 405,
            xi_sd: 0.12,
            endogeneity: 0.2,
            cost_rho: 0.8,
            cost_sd: 0.03,
            regional_price_sd: 0.02,
            base_price: (0.75, 1.05),
            news_rates,
            adv_scale: 5e8,
            target_outside_share: 0.65,
            scores: ScoreConfig::default(),
        }
    }
}

impl SynthConfig {
    /// Same configuration with fewer regions and periods, for fast tests.
    pub fn small(seed: u64, regions: usize, periods: usize) -> Self {
        let base = SynthConfig::default();
        SynthConfig {
            seed,
            populations: base.populations[..regions].to_vec(),
            periods,
            absent_cells: (base.absent_cells * regions * periods) / (6 * 113),
            products: base
                .products
                .into_iter()
                .map(|p| SynthProduct {
                    entry_offset: p.entry_offset.min(periods / 2),
                    ..p
                })
                .collect(),
            ..base
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.products.is_empty() || self.populations.is_empty() || self.periods == 0 {
            return bad("need at least one product, region and period".into());
        }
        if self.populations.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
            return bad("populations must be positive".into());
        }
        if self.products.iter().any(|p| p.entry_offset >= self.periods) {
            return bad("entry offset beyond the panel".into());
        }
        for (name, v) in [
            ("xi_sd", self.xi_sd),
            ("cost_sd", self.cost_sd),
            ("regional_price_sd", self.regional_price_sd),
            ("adv_scale", self.adv_scale),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if !(self.base_price.0 > 0.0 && self.base_price.1 > self.base_price.0) {
            return bad("base price range must be positive and increasing".into());
        }
        if !(self.target_outside_share > 0.0 && self.target_outside_share < 1.0) {
            return bad("target outside share must lie in (0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.params.sigma) || self.params.alpha >= 0.0 {
            return bad("need alpha < 0 and sigma in [0, 1)".into());
        }
        Ok(())
    }
}

/// Generated panel with the ground truth behind it.
#[derive(Clone, Debug)]
pub struct SynthPanel {
    pub dataset: PanelDataset,
    /// True mean utility per observation, in dataset order.
    pub delta: Vec<f64>,
    /// Demand shock per observation, in dataset order.
    pub xi: Vec<f64>,
    /// Calibrated utility intercept.
    pub intercept: f64,
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

const STREAM_PRODUCTS: u64 = 1;
const STREAM_PERIODS: u64 = 2;
const STREAM_LAYOUT: u64 = 3;
const STREAM_NEWS: u64 = 4;
const STREAM_ADV: u64 = 5;
const STREAM_MARKET: u64 = 1 << 32;

fn normal(sd: f64) -> Normal<f64> {
    Normal::new(0.0, sd).expect("finite sd")
}

struct Cell {
    product: usize,
    region: usize,
    t: usize,
}

/// Draws a synthetic panel.
pub fn generate(cfg: &SynthConfig) -> Result<SynthPanel> {
    cfg.validate()?;
    let n_prod = cfg.products.len();
    let n_reg = cfg.populations.len();
    let n_t = cfg.periods;
    let period = |t: usize| cfg.start_period + t as i64;
    let cenl = cfg.params.model == ModelKind::Cenl;

    // product level: base prices, quality, cost shock paths
    let mut rng = stream(cfg.seed, STREAM_PRODUCTS);
    let group_shift = |g: &str| match g {
        "white" => -0.5,
        "soupless" => -0.3,
        "cold" => -0.8,
        _ => 0.0,
    };
    let base: Vec<f64> = (0..n_prod)
        .map(|_| rng.random_range(cfg.base_price.0..cfg.base_price.1))
        .collect();
    let quality: Vec<f64> = cfg
        .products
        .iter()
        .map(|p| group_shift(&p.group_id) + normal(0.4).sample(&mut rng))
        .collect();
    let shock = normal(cfg.cost_sd);
    let stationary = cfg.cost_sd / (1.0 - cfg.cost_rho * cfg.cost_rho).max(1e-12).sqrt();
    let cost: Vec<Vec<f64>> = (0..n_prod)
        .map(|_| {
            let mut w = normal(stationary).sample(&mut rng);
            (0..n_t)
                .map(|_| {
                    w = cfg.cost_rho * w + shock.sample(&mut rng);
                    w
                })
                .collect()
        })
        .collect();

    // period and region effects
    let mut rng = stream(cfg.seed, STREAM_PERIODS);
    let region_fe: Vec<f64> = (0..n_reg).map(|_| normal(0.15).sample(&mut rng)).collect();
    let time_fe: Vec<f64> = (0..n_t)
        .map(|t| {
            let m = month_of_year(period(t)) as f64;
            0.1 * (std::f64::consts::TAU * m / 12.0).sin() + 0.002 * t as f64 + normal(0.03).sample(&mut rng)
        })
        .collect();
    let cold_fe = |t: usize| 1.2 * (std::f64::consts::TAU * (month_of_year(period(t)) as f64 - 7.0) / 12.0).cos();

    // which cells exist: staged entry, then random removals
    let mut cells: Vec<Cell> = Vec::with_capacity(n_prod * n_reg * n_t);
    for t in 0..n_t {
        for r in 0..n_reg {
            for (j, p) in cfg.products.iter().enumerate() {
                let launched = p.entry_offset == 0 || t >= p.entry_offset + r;
                if launched {
                    cells.push(Cell { product: j, region: r, t });
                }
            }
        }
    }
    let mut rng = stream(cfg.seed, STREAM_LAYOUT);
    if cfg.absent_cells >= cells.len() {
        return Err(Error::InvalidConfig("more absent cells than cells".into()));
    }
    let mut drop = vec![false; cells.len()];
    for i in sample(&mut rng, cells.len(), cfg.absent_cells) {
        drop[i] = true;
    }
    let cells: Vec<Cell> = cells
        .into_iter()
        .zip(drop)
        .filter(|(_, d)| !d)
        .map(|(c, _)| c)
        .collect();

    // firm news counts
    let firms: Vec<String> = {
        let mut f: Vec<String> = cfg.products.iter().map(|p| p.firm_id.clone()).collect();
        f.sort();
        f.dedup();
        f
    };
    let mut rng = stream(cfg.seed, STREAM_NEWS);
    let news: BTreeMap<&str, Vec<u64>> = firms
        .iter()
        .map(|f| {
            let (early, late) = cfg.news_rates.get(f).copied().unwrap_or((3.0, 3.0));
            let series = (0..n_t)
                .map(|t| {
                    let rate = if t < n_t / 2 {
                        early
                    } else {
                        early + (late - early) * (t - n_t / 2 + 1) as f64 / (n_t - n_t / 2) as f64
                    };
                    if rate > 0.0 {
                        Poisson::new(rate).expect("positive rate").sample(&mut rng) as u64
                    } else {
                        0
                    }
                })
                .collect();
            (f.as_str(), series)
        })
        .collect();

    // rival launches per firm and period, from national first appearance
    let mut launch_t: Vec<Option<usize>> = vec![None; n_prod];
    for c in &cells {
        let l = &mut launch_t[c.product];
        *l = Some(l.map_or(c.t, |x| x.min(c.t)));
    }
    let rival_launches = |firm: &str, t: usize| -> usize {
        (0..n_prod)
            .filter(|&j| launch_t[j] == Some(t) && t > 0 && cfg.products[j].firm_id != firm)
            .count()
    };

    // brand advertising: persistent log level, occasional campaigns, and a
    // response to rival launches
    let mut brands: Vec<(String, String)> = cfg
        .products
        .iter()
        .map(|p| (p.brand_id.clone(), p.firm_id.clone()))
        .collect();
    brands.sort();
    brands.dedup();
    let mut brand_present = vec![vec![false; n_t]; brands.len()];
    for c in &cells {
        let b = brands
            .binary_search_by(|(id, _)| id.as_str().cmp(&cfg.products[c.product].brand_id))
            .expect("brand listed");
        brand_present[b][c.t] = true;
    }
    let mut rng = stream(cfg.seed, STREAM_ADV);
    let adv: Vec<Vec<f64>> = brands
        .iter()
        .enumerate()
        .map(|(b, (_, firm))| {
            let level = normal(0.5).sample(&mut rng);
            let mut x = 0.0;
            (0..n_t)
                .map(|t| {
                    x = 0.7 * x + normal(0.3).sample(&mut rng);
                    let campaign = if rng.random::<f64>() < 0.15 { 4.0 } else { 1.0 };
                    let response = 1.0 + 0.5 * rival_launches(firm, t) as f64;
                    if brand_present[b][t] {
                        (cfg.adv_scale * (level + x).exp() * campaign * response).round()
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect();

    // market level draws, one stream per market
    let markets: Vec<(usize, usize)> = (0..n_t).flat_map(|t| (0..n_reg).map(move |r| (t, r))).collect();
    let draws: Vec<Vec<(f64, f64)>> = markets
        .par_iter()
        .map(|&(t, r)| {
            let mut rng = stream(cfg.seed, STREAM_MARKET + (t * n_reg + r) as u64);
            let xi = normal(cfg.xi_sd);
            let noise = normal(cfg.regional_price_sd);
            (0..n_prod).map(|_| (xi.sample(&mut rng), noise.sample(&mut rng))).collect()
        })
        .collect();

    let product_meta: Vec<ProductMeta> = cfg
        .products
        .iter()
        .map(|p| ProductMeta {
            product_id: p.product_id.clone(),
            firm_id: p.firm_id.clone(),
            brand_id: p.brand_id.clone(),
            group_id: p.group_id.clone(),
            is_cold: p.is_cold,
        })
        .collect();
    let region_id = |r: usize| format!("R{}", r + 1);
    let brand_of: Vec<usize> = cfg
        .products
        .iter()
        .map(|p| brands.binary_search_by(|(id, _)| id.as_str().cmp(&p.brand_id)).unwrap())
        .collect();
    let records = |volumes: &[f64], prices: &[f64]| -> Vec<ObservationRecord> {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| ObservationRecord {
                product_id: cfg.products[c.product].product_id.clone(),
                region_id: region_id(c.region),
                period: period(c.t),
                price: prices[i],
                volume: volumes[i],
                adv_raw: adv[brand_of[c.product]][c.t],
                news_raw: news[cfg.products[c.product].firm_id.as_str()][c.t],
                line: i + 2,
            })
            .collect()
    };
    let prices: Vec<f64> = cells
        .iter()
        .map(|c| {
            let (xi, noise) = draws[c.t * n_reg + c.region][c.product];
            let p = base[c.product] + cost[c.product][c.t] + noise + cfg.endogeneity * xi;
            p.max(0.2 * base[c.product])
        })
        .collect();
    let market_defs = |expenditure: &[f64]| -> Vec<MarketDef> {
        (0..n_t)
            .flat_map(|t| {
                (0..n_reg).map(move |r| MarketDef {
                    region_id: region_id(r),
                    period: period(t),
                    population: cfg.populations[r],
                    size_unit: cfg.size_unit,
                    expenditure_size: expenditure[r],
                })
            })
            .collect()
    };
    let spend: Vec<f64> = cfg.populations.iter().map(|p| p * cfg.spend_per_capita).collect();

    // scores exactly as the estimator will see them
    let scored = attach_scores(
        PanelDataset::from_records(
            product_meta.clone(),
            market_defs(&spend),
            records(&vec![0.0; cells.len()], &prices),
        )?,
        &cfg.scores,
    )?;
    let score_rows = scored.scores()?;
    let mut score_of: BTreeMap<(String, String, i64), (f64, f64)> = BTreeMap::new();
    for (i, row) in score_rows.rows.iter().enumerate() {
        let k = scored.key(i);
        score_of.insert((k.product_id, k.region_id, k.period), (row.imgscore, row.cumadv));
    }

    let p = &cfg.params;
    let xi: Vec<f64> = cells
        .iter()
        .map(|c| draws[c.t * n_reg + c.region][c.product].0)
        .collect();
    let partial: Vec<f64> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let prod = &cfg.products[c.product];
            let (img, cum) = score_of[&(prod.product_id.clone(), region_id(c.region), period(c.t))];
            let price_term = if cenl { prices[i].ln() } else { prices[i] };
            let cold = if prod.is_cold { cold_fe(c.t) } else { 0.0 };
            p.alpha * price_term
                + p.beta1 * img
                + p.beta2 * cum
                + quality[c.product]
                + time_fe[c.t]
                + region_fe[c.region]
                + cold
                + xi[i]
        })
        .collect();

    // rows of each market in `cells`
    let mut market_cells: Vec<Vec<usize>> = vec![Vec::new(); n_t * n_reg];
    for (i, c) in cells.iter().enumerate() {
        market_cells[c.t * n_reg + c.region].push(i);
    }
    let groups: Vec<usize> = {
        let mut g: Vec<&str> = cfg.products.iter().map(|p| p.group_id.as_str()).collect();
        g.sort();
        g.dedup();
        cfg.products
            .iter()
            .map(|p| g.binary_search(&p.group_id.as_str()).unwrap())
            .collect()
    };
    let sigma = p.sigma;
    let mean_outside = |c0: f64| -> Result<f64> {
        let outs = market_cells
            .par_iter()
            .map(|rows| {
                let d: Vec<f64> = rows.iter().map(|&i| partial[i] + c0).collect();
                let g: Vec<usize> = rows.iter().map(|&i| groups[cells[i].product]).collect();
                Ok(nested_logit_shares(&d, &g, sigma)?.outside)
            })
            .collect::<Result<Vec<f64>>>()?;
        Ok(outs.iter().sum::<f64>() / outs.len() as f64)
    };
    let (mut lo, mut hi) = (-30.0, 30.0);
    if mean_outside(lo)? < cfg.target_outside_share || mean_outside(hi)? > cfg.target_outside_share {
        return Err(Error::DegenerateMarket("cannot calibrate the utility intercept".into()));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        if mean_outside(mid)? > cfg.target_outside_share {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let intercept = 0.5 * (lo + hi);
    let delta: Vec<f64> = partial.iter().map(|d| d + intercept).collect();

    // volumes from exact shares
    let size_of = |c: &Cell| {
        if cenl {
            spend[c.region]
        } else {
            cfg.populations[c.region] * cfg.size_unit
        }
    };
    let mut volumes = vec![0.0; cells.len()];
    let params = UtilityParams {
        model: if cenl { ModelKind::Cenl } else { ModelKind::NestedLogit },
        ..p.clone()
    };
    for (m, rows) in market_cells.iter().enumerate() {
        if rows.is_empty() {
            continue;
        }
        let snap = MarketSnapshot {
            product_ids: Vec::new(),
            prices: rows.iter().map(|&i| prices[i]).collect(),
            mean_utilities: rows.iter().map(|&i| delta[i]).collect(),
            groups: rows.iter().map(|&i| groups[cells[i].product]).collect(),
            firms: vec![0; rows.len()],
            size: 0.0,
        };
        let sh = nested_logit_shares(&snap.mean_utilities, &snap.groups, sigma)?;
        if !(sh.outside > 0.0) {
            return Err(Error::DegenerateMarket(format!("market {m} has outside share {}", sh.outside)));
        }
        let q = demand(&snap, &params)?;
        for (k, &i) in rows.iter().enumerate() {
            volumes[i] = q[k] * size_of(&cells[i]);
        }
    }

    let expenditure: Vec<f64> = if cenl {
        spend.clone()
    } else {
        let mut total = vec![0.0; n_reg];
        for (i, c) in cells.iter().enumerate() {
            total[c.region] += volumes[i] * prices[i];
        }
        total.iter().map(|t| 2.0 * t / n_t as f64).collect()
    };
    let dataset = PanelDataset::from_records(product_meta, market_defs(&expenditure), records(&volumes, &prices))?;

    // reorder ground truth to dataset order
    let mut by_key: BTreeMap<(String, String, i64), usize> = BTreeMap::new();
    for (i, c) in cells.iter().enumerate() {
        by_key.insert(
            (cfg.products[c.product].product_id.clone(), region_id(c.region), period(c.t)),
            i,
        );
    }
    let order: Vec<usize> = (0..dataset.observations().len())
        .map(|i| {
            let k = dataset.key(i);
            by_key[&(k.product_id, k.region_id, k.period)]
        })
        .collect();
    Ok(SynthPanel {
        delta: order.iter().map(|&i| delta[i]).collect(),
        xi: order.iter().map(|&i| xi[i]).collect(),
        dataset,
        intercept,
    })
}

/// Grid-search Nash-Bertrand prices for markets of at most two products.
/// Each firm's best response is found on a coarse grid over `bracket` and
/// refined to `grid_step`; best responses are iterated to a fixed point.
pub fn brute_force_bertrand(
    snap: &MarketSnapshot,
    params: &UtilityParams,
    mc: &[f64],
    bracket: (f64, f64),
    grid_step: f64,
) -> Result<Vec<f64>> {
    let n = snap.len();
    if n == 0 || n > 2 || mc.len() != n {
        return Err(Error::InvalidParameter("brute force needs one or two products".into()));
    }
    if !(bracket.0 < bracket.1 && grid_step > 0.0) {
        return Err(Error::InvalidParameter("empty bracket or step".into()));
    }
    let joint = n == 2 && snap.firms[0] == snap.firms[1];
    let profit = |prices: &[f64], owned: &[usize]| -> Result<f64> {
        let q = demand(&snap.reprice(prices, params), params)?;
        Ok(owned.iter().map(|&j| (prices[j] - mc[j]) * q[j]).sum())
    };
    let best_response = |prices: &[f64], j: usize| -> Result<f64> {
        let owned: Vec<usize> = if joint { vec![0, 1] } else { vec![j] };
        let mut lo = bracket.0;
        let mut hi = bracket.1;
        let mut step = (hi - lo) / 1000.0;
        let mut best = lo;
        loop {
            let mut best_val = f64::NEG_INFINITY;
            let steps = ((hi - lo) / step).round() as usize;
            for s in 0..=steps {
                let x = (lo + s as f64 * step).min(hi);
                let mut trial = prices.to_vec();
                trial[j] = x;
                let v = profit(&trial, &owned)?;
                if v > best_val {
                    best_val = v;
                    best = x;
                }
            }
            if (best - bracket.0).abs() < step * 0.5 || (bracket.1 - best).abs() < step * 0.5 {
                return Err(Error::GridTooCoarse(format!(
                    "best response {best} for product {j} at the bracket edge"
                )));
            }
            if step <= grid_step {
                return Ok(best);
            }
            lo = (best - step).max(bracket.0);
            hi = (best + step).min(bracket.1);
            step = (step / 10.0).max(grid_step);
        }
    };
    let mut prices: Vec<f64> = snap.prices.iter().map(|p| p.clamp(bracket.0, bracket.1)).collect();
    for _ in 0..10_000 {
        let mut change = 0.0_f64;
        for j in 0..n {
            let br = best_response(&prices, j)?;
            change = change.max((br - prices[j]).abs());
            prices[j] = br;
        }
        if change <= grid_step {
            return Ok(prices);
        }
    }
    Err(Error::NoConvergence {
        iterations: 10_000,
        residual: f64::NAN,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_catalog_matches_layout() {
        let p = default_products();
        assert_eq!(p.len(), 30);
        let count = |f: &str| p.iter().filter(|x| x.firm_id == f).count();
        assert_eq!((count("F1"), count("F2"), count("F3"), count("F4")), (17, 7, 4, 2));
        let group = |g: &str| p.iter().filter(|x| x.group_id == g).count();
        assert_eq!((group("red"), group("white"), group("soupless"), group("cold")), (19, 3, 6, 2));
        assert_eq!(p.iter().filter(|x| x.entry_offset > 0).count(), 5);
    }

    #[test]
    fn small_panel_is_reproducible() {
        let cfg = SynthConfig::small(7, 3, 24);
        let a = generate(&cfg).unwrap();
        let b = generate(&cfg).unwrap();
        assert_eq!(a.delta, b.delta);
        assert_eq!(a.dataset.observations(), b.dataset.observations());
    }

    #[test]
    fn monopoly_grid_search() {
        let snap = MarketSnapshot {
            product_ids: vec!["a".into()],
            prices: vec![1.0],
            mean_utilities: vec![0.5],
            groups: vec![0],
            firms: vec![0],
            size: 1.0,
        };
        let params = UtilityParams::nested_logit(-1.0, 0.0, 0.0, 0.0).with_model(ModelKind::Logit);
        let p = brute_force_bertrand(&snap, &params, &[0.0], (0.1, 10.0), 1e-6).unwrap();
        let s = nested_logit_shares(&[0.5 - (p[0] - 1.0)], &[0], 0.0).unwrap().shares[0];
        assert!((p[0] - 1.0 / (1.0 - s)).abs() < 1e-5);
        assert!(matches!(
            brute_force_bertrand(&snap, &params, &[0.0], (0.1, 0.5), 1e-6),
            Err(Error::GridTooCoarse(_))
        ));
    }
}
