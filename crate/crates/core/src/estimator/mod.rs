//! Linear demand estimation: `ln(s/s0) = x beta + alpha p + sigma ln s_{j|g} + FE + xi`,
//! with fixed effects absorbed, 2SLS then two-step GMM, and standard errors
//! clustered by market.

pub mod absorb;
pub mod gmm;
pub mod instruments;

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::{month_of_year, ObsKey, PanelDataset};
use crate::shares::{MarketSnapshot, ModelKind, UtilityParams};

pub use absorb::{absorb, AbsorbOptions, Factor};
pub use gmm::Weighting;
pub use instruments::{build_instruments, InstrumentColumns, InstrumentKind};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeScheme {
    /// Separate product, period and region effects.
    #[default]
    ProductTimeRegion,
    /// Product effects plus one effect per (region, period) market.
    ProductMarket,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DemandSpec {
    pub model: ModelKind,
    pub fe_scheme: FeScheme,
    /// Month effects that apply only to cold products.
    pub cold_month: bool,
    /// Treat cumulative advertising as endogenous.
    pub endogenous_adv: bool,
    /// Excluded instruments; `None` picks the default set for the model.
    pub instruments: Option<Vec<InstrumentKind>>,
    pub weighting: Weighting,
    pub absorb_tolerance: f64,
    pub max_sweeps: usize,
}

impl Default for DemandSpec {
    fn default() -> Self {
        DemandSpec {
            model: ModelKind::NestedLogit,
            fe_scheme: FeScheme::ProductTimeRegion,
            cold_month: true,
            endogenous_adv: false,
            instruments: None,
            weighting: Weighting::TwoStepClustered,
            absorb_tolerance: 1e-10,
            max_sweeps: 500,
        }
    }
}

impl DemandSpec {
    pub fn instrument_set(&self) -> Vec<InstrumentKind> {
        if let Some(list) = &self.instruments {
            return list.clone();
        }
        let mut v = vec![InstrumentKind::HausmanPrice];
        if self.model != ModelKind::Logit {
            v.push(InstrumentKind::RivalCount);
        }
        if self.endogenous_adv {
            v.push(InstrumentKind::RivalEntry);
        }
        v
    }

    /// Regressor names in design order.
    pub fn regressors(&self) -> Vec<&'static str> {
        let mut v = vec!["alpha"];
        if self.model != ModelKind::Logit {
            v.push("sigma");
        }
        v.extend(["beta1", "beta2"]);
        v
    }

    pub fn is_endogenous(&self, name: &str) -> bool {
        matches!(name, "alpha" | "sigma") || (name == "beta2" && self.endogenous_adv)
    }
}

/// Estimation sample before fixed effects are absorbed.
#[derive(Clone, Debug)]
pub struct Design {
    /// Regressor names, one per column of `x`.
    pub names: Vec<&'static str>,
    pub instrument_names: Vec<&'static str>,
    /// Observation index of each row.
    pub rows: Vec<usize>,
    pub y: Vec<f64>,
    pub x: Vec<Vec<f64>>,
    pub excluded: Vec<Vec<f64>>,
    pub factors: Vec<Factor>,
    pub clusters: Vec<usize>,
    pub n_clusters: usize,
    pub dropped_zero_share: usize,
    pub dropped_no_instrument: usize,
}

impl Design {
    pub fn endogenous(&self, spec: &DemandSpec) -> Vec<usize> {
        (0..self.names.len()).filter(|&i| spec.is_endogenous(self.names[i])).collect()
    }

    pub fn exogenous(&self, spec: &DemandSpec) -> Vec<usize> {
        (0..self.names.len()).filter(|&i| !spec.is_endogenous(self.names[i])).collect()
    }
}

fn columns_to_matrix(cols: &[&Vec<f64>], n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i])
}

/// Assembles dependent variable, regressors, excluded instruments and
/// fixed-effect factors. Rows with zero volume, or without a defined
/// instrument value, are dropped and counted.
pub fn build_design(ds: &PanelDataset, spec: &DemandSpec) -> Result<Design> {
    let shares = ds.shares()?;
    let scores = ds.scores()?;
    let names = spec.regressors();
    let kinds = spec.instrument_set();
    let n_endog = names.iter().filter(|n| spec.is_endogenous(n)).count();
    if kinds.len() < n_endog {
        return Err(Error::InvalidSpec(format!(
            "{} excluded instruments for {n_endog} endogenous regressors",
            kinds.len()
        )));
    }
    if kinds.iter().enumerate().any(|(i, k)| kinds[..i].contains(k)) {
        return Err(Error::InvalidSpec("instrument listed twice".into()));
    }
    let cenl = spec.model == ModelKind::Cenl;
    let iv = build_instruments(ds, cenl);
    if kinds.contains(&InstrumentKind::HausmanPrice) && ds.regions().len() < 2 {
        return Err(Error::InvalidSpec("the Hausman price instrument needs at least two regions".into()));
    }

    let periods = ds.periods();
    let mut d = Design {
        names: names.clone(),
        instrument_names: kinds.iter().map(InstrumentKind::name).collect(),
        rows: Vec::new(),
        y: Vec::new(),
        x: vec![Vec::new(); names.len()],
        excluded: vec![Vec::new(); kinds.len()],
        factors: Vec::new(),
        clusters: Vec::new(),
        n_clusters: 0,
        dropped_zero_share: 0,
        dropped_no_instrument: 0,
    };
    let mut product_l = Vec::new();
    let mut period_l = Vec::new();
    let mut region_l = Vec::new();
    let mut market_l = Vec::new();
    let mut cold_l = Vec::new();
    for (i, o) in ds.observations().iter().enumerate() {
        if o.volume <= 0.0 {
            d.dropped_zero_share += 1;
            continue;
        }
        let hausman = iv.hausman[i];
        if kinds.contains(&InstrumentKind::HausmanPrice) && hausman.is_none() {
            d.dropped_no_instrument += 1;
            continue;
        }
        let sh = &shares.rows[i];
        let out = &shares.markets[o.market];
        let (s, w, s0) = if cenl {
            (sh.revenue_share, sh.within_revenue_share, out.revenue_outside)
        } else {
            (sh.share, sh.within_share, out.outside)
        };
        if !(s0 > 0.0) {
            return Err(Error::DomainError(format!("outside share {s0} at {}", ds.key(i))));
        }
        d.rows.push(i);
        d.y.push((s / s0).ln());
        for (c, name) in names.iter().enumerate() {
            let v = match *name {
                "alpha" if cenl => o.price.ln(),
                "alpha" => o.price,
                "sigma" => w.ln(),
                "beta1" => scores.rows[i].imgscore,
                _ => scores.rows[i].cumadv,
            };
            d.x[c].push(v);
        }
        for (c, k) in kinds.iter().enumerate() {
            d.excluded[c].push(match k {
                InstrumentKind::HausmanPrice => hausman.unwrap_or(f64::NAN),
                InstrumentKind::RivalCount => iv.rival_count[i],
                InstrumentKind::RivalEntry => iv.rival_entry[i],
            });
        }
        let market = &ds.markets()[o.market];
        product_l.push(o.product);
        period_l.push(periods.binary_search(&market.period).expect("period listed"));
        region_l.push(ds.region_of(o.market));
        market_l.push(o.market);
        cold_l.push(if ds.products()[o.product].is_cold {
            month_of_year(market.period) as usize
        } else {
            0
        });
    }
    if d.dropped_zero_share > 0 {
        log::info!("dropped {} zero-share rows", d.dropped_zero_share);
    }
    if d.dropped_no_instrument > 0 {
        log::info!(
            "dropped {} rows whose product sells in no other region that period",
            d.dropped_no_instrument
        );
    }
    if d.rows.is_empty() {
        return Err(Error::InvalidSpec("no usable observations".into()));
    }
    let compact = |levels: Vec<usize>| -> (Vec<usize>, usize) {
        let mut used: Vec<usize> = levels.clone();
        used.sort_unstable();
        used.dedup();
        let mapped = levels
            .iter()
            .map(|l| used.binary_search(l).expect("level present"))
            .collect();
        (mapped, used.len())
    };
    let (clusters, n_clusters) = compact(market_l.clone());
    d.clusters = clusters;
    d.n_clusters = n_clusters;
    d.factors.push(Factor::new("product", compact(product_l).0));
    match spec.fe_scheme {
        FeScheme::ProductTimeRegion => {
            d.factors.push(Factor::new("period", compact(period_l).0));
            d.factors.push(Factor::new("region", compact(region_l).0));
        }
        FeScheme::ProductMarket => d.factors.push(Factor::new("market", compact(market_l).0)),
    }
    if spec.cold_month && cold_l.iter().any(|&c| c > 0) {
        d.factors.push(Factor::new("cold_month", compact(cold_l).0));
    }
    Ok(d)
}

/// Absorbs the fixed effects of a design in place. Returns the sweep count.
pub fn absorb_design(d: &mut Design, opts: AbsorbOptions) -> Result<usize> {
    let mut cols: Vec<Vec<f64>> = std::iter::once(std::mem::take(&mut d.y))
        .chain(d.x.drain(..))
        .chain(d.excluded.drain(..))
        .collect();
    let sweeps = absorb(&mut cols, &d.factors, opts)?;
    let mut it = cols.into_iter();
    d.y = it.next().expect("y column");
    d.x = it.by_ref().take(d.names.len()).collect();
    d.excluded = it.collect();
    Ok(sweeps)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Coefficient {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
    /// First-stage F for endogenous regressors.
    pub sw_f: Option<f64>,
}

/// Mean utility (and structural error where estimated) of one observation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FittedRow {
    pub key: ObsKey,
    pub mean_utility: f64,
    pub xi: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemandEstimate {
    pub spec: DemandSpec,
    pub params: UtilityParams,
    pub coefficients: Vec<Coefficient>,
    pub covariance: Vec<Vec<f64>>,
    /// 2SLS coefficients from the first GMM step.
    pub first_step: Vec<f64>,
    pub instruments: Vec<String>,
    pub n_obs: usize,
    pub n_clusters: usize,
    pub dropped_zero_share: usize,
    pub dropped_no_instrument: usize,
    pub sweeps: usize,
    /// Largest entry of the weighted GMM first-order condition at the solution.
    pub gmm_foc: f64,
    pub warnings: Vec<String>,
    /// One row per positive-share observation, in dataset order.
    pub fitted: Vec<FittedRow>,
}

/// Positive-share rows of one market with their fitted mean utilities.
#[derive(Clone, Debug, PartialEq)]
pub struct FittedMarket {
    pub market: usize,
    /// Observation indices, aligned with the snapshot vectors.
    pub rows: Vec<usize>,
    pub snapshot: MarketSnapshot,
}

impl DemandEstimate {
    pub fn coefficient(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }

    /// Evaluates the model at given parameters without estimating: mean
    /// utilities come from share inversion and no residuals are attached.
    pub fn at_params(ds: &PanelDataset, spec: &DemandSpec, params: UtilityParams) -> Result<DemandEstimate> {
        let params = UtilityParams {
            model: spec.model,
            ..params
        };
        let fitted = fitted_rows(ds, &params, &[], &[])?;
        let names = spec.regressors();
        let coefficients = names
            .iter()
            .map(|&name| Coefficient {
                name: name.to_string(),
                estimate: match name {
                    "alpha" => params.alpha,
                    "sigma" => params.sigma,
                    "beta1" => params.beta1,
                    _ => params.beta2,
                },
                se: f64::NAN,
                sw_f: None,
            })
            .collect();
        Ok(DemandEstimate {
            spec: spec.clone(),
            params,
            coefficients,
            covariance: vec![vec![f64::NAN; names.len()]; names.len()],
            first_step: Vec::new(),
            instruments: Vec::new(),
            n_obs: 0,
            n_clusters: 0,
            dropped_zero_share: 0,
            dropped_no_instrument: 0,
            sweeps: 0,
            gmm_foc: 0.0,
            warnings: Vec::new(),
            fitted,
        })
    }

    /// Index into `fitted` for every observation, `None` for rows without
    /// a fitted mean utility.
    pub fn fitted_index(&self, ds: &PanelDataset) -> Vec<Option<usize>> {
        let lookup: HashMap<&ObsKey, usize> = self.fitted.iter().enumerate().map(|(i, f)| (&f.key, i)).collect();
        (0..ds.observations().len()).map(|i| lookup.get(&ds.key(i)).copied()).collect()
    }

    /// One snapshot per market at observed prices and fitted utilities.
    pub fn snapshots(&self, ds: &PanelDataset) -> Result<Vec<FittedMarket>> {
        let index = self.fitted_index(ds);
        let cenl = self.params.model == ModelKind::Cenl;
        (0..ds.markets().len())
            .map(|m| {
                let mut rows = Vec::new();
                let mut snap = MarketSnapshot {
                    product_ids: Vec::new(),
                    prices: Vec::new(),
                    mean_utilities: Vec::new(),
                    groups: Vec::new(),
                    firms: Vec::new(),
                    size: if cenl {
                        ds.markets()[m].expenditure_size
                    } else {
                        ds.markets()[m].size()
                    },
                };
                for i in ds.market_range(m) {
                    let o = &ds.observations()[i];
                    if o.volume <= 0.0 {
                        continue;
                    }
                    let f = index[i].ok_or_else(|| Error::MissingResidual(ds.key(i).to_string()))?;
                    rows.push(i);
                    snap.product_ids.push(ds.products()[o.product].product_id.clone());
                    snap.prices.push(o.price);
                    snap.mean_utilities.push(self.fitted[f].mean_utility);
                    snap.groups.push(ds.group_of(o.product));
                    snap.firms.push(ds.firm_of(o.product));
                }
                Ok(FittedMarket {
                    market: m,
                    rows,
                    snapshot: snap,
                })
            })
            .collect()
    }
}

/// Absorbed design matrices ready for the linear algebra.
struct Prepared {
    design: Design,
    sweeps: usize,
    y: DVector<f64>,
    x: DMatrix<f64>,
    /// Included exogenous regressors followed by excluded instruments.
    z: DMatrix<f64>,
}

fn prepare(ds: &PanelDataset, spec: &DemandSpec) -> Result<Prepared> {
    let mut design = build_design(ds, spec)?;
    let sweeps = absorb_design(
        &mut design,
        AbsorbOptions {
            tolerance: spec.absorb_tolerance,
            max_sweeps: spec.max_sweeps,
        },
    )?;
    let n = design.rows.len();
    let y = DVector::from_vec(design.y.clone());
    let x = columns_to_matrix(&design.x.iter().collect::<Vec<_>>(), n);
    let zcols: Vec<&Vec<f64>> = design
        .exogenous(spec)
        .into_iter()
        .map(|i| &design.x[i])
        .chain(design.excluded.iter())
        .collect();
    let z = columns_to_matrix(&zcols, n);
    Ok(Prepared {
        design,
        sweeps,
        y,
        x,
        z,
    })
}

/// Conditional first-stage F per endogenous regressor, in design order.
fn first_stage_f(p: &Prepared, spec: &DemandSpec) -> Result<Vec<f64>> {
    let d = &p.design;
    let n = d.rows.len();
    let exog = columns_to_matrix(&d.exogenous(spec).into_iter().map(|i| &d.x[i]).collect::<Vec<_>>(), n);
    let endog = columns_to_matrix(&d.endogenous(spec).into_iter().map(|i| &d.x[i]).collect::<Vec<_>>(), n);
    let excl = columns_to_matrix(&d.excluded.iter().collect::<Vec<_>>(), n);
    let endog = gmm::partial_out(&endog, &exog)?;
    let excl = gmm::partial_out(&excl, &exog)?;
    gmm::sanderson_windmeijer(&endog, &excl, &d.clusters, d.n_clusters)
}

/// Estimates the demand model by two-step GMM.
pub fn estimate(ds: &PanelDataset, spec: &DemandSpec) -> Result<DemandEstimate> {
    let p = prepare(ds, spec)?;
    let d = &p.design;
    let fit = gmm::two_step_gmm(&p.y, &p.x, &p.z, &d.clusters, d.n_clusters, spec.weighting)?;
    let sw = first_stage_f(&p, spec)?;
    let endog = d.endogenous(spec);

    let mut warnings = Vec::new();
    let coefficients: Vec<Coefficient> = d
        .names
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let sw_f = endog.iter().position(|&e| e == i).map(|k| sw[k]);
            if let Some(f) = sw_f {
                if !(f >= 10.0) {
                    warnings.push(format!("WeakIdentification: first-stage F for {name} is {f:.3}"));
                }
            }
            Coefficient {
                name: name.to_string(),
                estimate: fit.coefficients[i],
                se: fit.covariance[(i, i)].max(0.0).sqrt(),
                sw_f,
            }
        })
        .collect();
    let get = |name: &str| coefficients.iter().find(|c| c.name == name).map_or(0.0, |c| c.estimate);
    let sigma = get("sigma");
    if spec.model != ModelKind::Logit && !(0.0..1.0).contains(&sigma) {
        warnings.push(format!("nesting parameter estimate {sigma} lies outside [0, 1)"));
    }
    for w in &warnings {
        log::warn!("{w}");
    }
    let params = UtilityParams {
        alpha: get("alpha"),
        sigma,
        beta1: get("beta1"),
        beta2: get("beta2"),
        gamma: Default::default(),
        model: spec.model,
    };
    let fitted = fitted_rows(ds, &params, &d.rows, fit.residuals.as_slice())?;
    Ok(DemandEstimate {
        spec: spec.clone(),
        params,
        coefficients,
        covariance: (0..d.names.len())
            .map(|i| (0..d.names.len()).map(|j| fit.covariance[(i, j)]).collect())
            .collect(),
        first_step: fit.first_step.iter().copied().collect(),
        instruments: d.instrument_names.iter().map(|s| s.to_string()).collect(),
        n_obs: d.rows.len(),
        n_clusters: d.n_clusters,
        dropped_zero_share: d.dropped_zero_share,
        dropped_no_instrument: d.dropped_no_instrument,
        sweeps: p.sweeps,
        gmm_foc: fit.foc_max,
        warnings,
        fitted,
    })
}

/// Mean utilities `ln(s/s0) - sigma ln s_{j|g}` for every positive-share
/// row, with residuals attached to rows in the estimation sample.
fn fitted_rows(ds: &PanelDataset, params: &UtilityParams, rows: &[usize], xi: &[f64]) -> Result<Vec<FittedRow>> {
    let shares = ds.shares()?;
    let mut residual = vec![None; ds.observations().len()];
    for (&r, &u) in rows.iter().zip(xi) {
        residual[r] = Some(u);
    }
    let sigma = if params.model == ModelKind::Logit { 0.0 } else { params.sigma };
    let cenl = params.model == ModelKind::Cenl;
    Ok(ds
        .observations()
        .iter()
        .enumerate()
        .filter(|(_, o)| o.volume > 0.0)
        .map(|(i, o)| {
            let sh = &shares.rows[i];
            let out = &shares.markets[o.market];
            let (s, w, s0) = if cenl {
                (sh.revenue_share, sh.within_revenue_share, out.revenue_outside)
            } else {
                (sh.share, sh.within_share, out.outside)
            };
            FittedRow {
                key: ds.key(i),
                mean_utility: (s / s0).ln() - sigma * w.ln(),
                xi: residual[i],
            }
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstStageTerm {
    pub name: String,
    pub estimate: f64,
    pub se: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FirstStage {
    /// Endogenous regressor name.
    pub variable: String,
    pub terms: Vec<FirstStageTerm>,
    pub sw_f: f64,
    pub n_obs: usize,
}

/// OLS of each endogenous regressor on the exogenous regressors and the
/// excluded instruments, after absorbing the fixed effects.
pub fn first_stage_report(ds: &PanelDataset, spec: &DemandSpec) -> Result<Vec<FirstStage>> {
    let p = prepare(ds, spec)?;
    let d = &p.design;
    let sw = first_stage_f(&p, spec)?;
    let exog = d.exogenous(spec);
    let term_names: Vec<String> = exog
        .iter()
        .map(|&i| d.names[i].to_string())
        .chain(d.instrument_names.iter().map(|s| s.to_string()))
        .collect();
    d.endogenous(spec)
        .into_iter()
        .zip(sw)
        .map(|(e, f)| {
            let y = DVector::from_column_slice(&d.x[e]);
            let (b, cov, _) = gmm::ols_clustered(&y, &p.z, &d.clusters, d.n_clusters)?;
            Ok(FirstStage {
                variable: d.names[e].to_string(),
                terms: term_names
                    .iter()
                    .enumerate()
                    .map(|(k, name)| FirstStageTerm {
                        name: name.clone(),
                        estimate: b[k],
                        se: cov[(k, k)].max(0.0).sqrt(),
                    })
                    .collect(),
                sw_f: f,
                n_obs: d.rows.len(),
            })
        })
        .collect()
}
