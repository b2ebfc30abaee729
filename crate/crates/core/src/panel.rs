//! Panel data model: products, markets and product-by-market observations.
//!
//! A market is a `(region, period)` pair. Periods are consecutive month
//! counts (`year * 12 + month - 1`), so `t - n` is the n-th lag of `t` and
//! `period mod 12` is the calendar month.
//!
//! Datasets are validated on construction and immutable afterwards; share
//! and score tables are attached by returning a new dataset.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::ScoreTable;

/// Exact header of the observation file.
pub const PANEL_HEADER: [&str; 11] = [
    "product_id",
    "firm_id",
    "brand_id",
    "group_id",
    "is_cold",
    "region_id",
    "period",
    "price",
    "volume",
    "adv_raw",
    "news_raw",
];

/// Exact header of the markets file.
pub const MARKETS_HEADER: [&str; 5] = [
    "region_id",
    "period",
    "population",
    "size_unit",
    "expenditure_size",
];

pub const DEFAULT_SIZE_UNIT: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProductMeta {
    pub product_id: String,
    pub firm_id: String,
    pub brand_id: String,
    pub group_id: String,
    pub is_cold: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketDef {
    pub region_id: String,
    pub period: i64,
    pub population: f64,
    pub size_unit: f64,
    /// Market size in currency for revenue shares. `NaN` on input means
    /// "derive it": twice the region's average monthly spending.
    pub expenditure_size: f64,
}

impl MarketDef {
    /// Potential market size in packages.
    pub fn size(&self) -> f64 {
        self.population * self.size_unit
    }
}

/// One raw input row before indexing.
#[derive(Clone, Debug, PartialEq)]
pub struct ObservationRecord {
    pub product_id: String,
    pub region_id: String,
    pub period: i64,
    pub price: f64,
    pub volume: f64,
    pub adv_raw: f64,
    pub news_raw: u64,
    /// Source line, used in error messages.
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub product: usize,
    pub market: usize,
    pub price: f64,
    pub volume: f64,
    pub adv_raw: f64,
    pub news_raw: u64,
}

impl Observation {
    pub fn revenue(&self) -> f64 {
        self.price * self.volume
    }
}

/// Quantity and revenue shares of one observation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ShareRow {
    pub share: f64,
    pub within_share: f64,
    pub revenue_share: f64,
    pub within_revenue_share: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OutsideShares {
    pub outside: f64,
    pub revenue_outside: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ShareTable {
    pub rows: Vec<ShareRow>,
    pub markets: Vec<OutsideShares>,
}

/// Identifies an observation independently of dataset indexing.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObsKey {
    pub product_id: String,
    pub region_id: String,
    pub period: i64,
}

impl std::fmt::Display for ObsKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({}, {}, {})", self.product_id, self.region_id, self.period)
    }
}

#[derive(Clone, Debug)]
pub struct PanelDataset {
    products: Vec<ProductMeta>,
    firms: Vec<String>,
    groups: Vec<String>,
    brands: Vec<String>,
    regions: Vec<String>,
    product_firm: Vec<usize>,
    product_group: Vec<usize>,
    product_brand: Vec<usize>,
    markets: Vec<MarketDef>,
    market_region: Vec<usize>,
    observations: Vec<Observation>,
    market_rows: Vec<(usize, usize)>,
    shares: Option<ShareTable>,
    scores: Option<ScoreTable>,
}

/// Calendar month (1..=12) of a period index.
pub fn month_of_year(period: i64) -> u32 {
    period.rem_euclid(12) as u32 + 1
}

fn sorted_unique<'a>(items: impl Iterator<Item = &'a String>) -> Vec<String> {
    let mut v: Vec<String> = items.cloned().collect();
    v.sort();
    v.dedup();
    v
}

fn index_of(list: &[String], id: &str) -> usize {
    list.binary_search_by(|x| x.as_str().cmp(id))
        .expect("id present in sorted list")
}

impl PanelDataset {
    /// Builds and validates a dataset from declared products, market
    /// definitions and raw observation rows.
    pub fn from_records(
        products: Vec<ProductMeta>,
        markets: Vec<MarketDef>,
        records: Vec<ObservationRecord>,
    ) -> Result<Self> {
        let mut products = products;
        products.sort_by(|a, b| a.product_id.cmp(&b.product_id));
        for w in products.windows(2) {
            if w[0].product_id == w[1].product_id {
                return Err(Error::DuplicateKey {
                    line: 0,
                    first_line: 0,
                    key: format!("product {}", w[0].product_id),
                });
            }
        }
        let firms = sorted_unique(products.iter().map(|p| &p.firm_id));
        let groups = sorted_unique(products.iter().map(|p| &p.group_id));
        let brands = sorted_unique(products.iter().map(|p| &p.brand_id));
        let product_firm = products.iter().map(|p| index_of(&firms, &p.firm_id)).collect();
        let product_group = products.iter().map(|p| index_of(&groups, &p.group_id)).collect();
        let product_brand = products.iter().map(|p| index_of(&brands, &p.brand_id)).collect();

        let mut markets = markets;
        markets.sort_by(|a, b| (a.period, &a.region_id).cmp(&(b.period, &b.region_id)));
        for (i, m) in markets.iter().enumerate() {
            if i > 0 && markets[i - 1].period == m.period && markets[i - 1].region_id == m.region_id {
                return Err(Error::DuplicateKey {
                    line: 0,
                    first_line: 0,
                    key: format!("market ({}, {})", m.region_id, m.period),
                });
            }
            for (field, v) in [("population", m.population), ("size_unit", m.size_unit)] {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidValue {
                        line: 0,
                        field: field.into(),
                        reason: format!("market ({}, {}) has {v}", m.region_id, m.period),
                    });
                }
            }
            if !m.expenditure_size.is_nan() && !(m.expenditure_size.is_finite() && m.expenditure_size > 0.0)
            {
                return Err(Error::InvalidValue {
                    line: 0,
                    field: "expenditure_size".into(),
                    reason: format!("market ({}, {}) has {}", m.region_id, m.period, m.expenditure_size),
                });
            }
        }
        let regions = sorted_unique(markets.iter().map(|m| &m.region_id));
        let market_region: Vec<usize> = markets.iter().map(|m| index_of(&regions, &m.region_id)).collect();
        let market_lookup: HashMap<(&str, i64), usize> = markets
            .iter()
            .enumerate()
            .map(|(i, m)| ((m.region_id.as_str(), m.period), i))
            .collect();
        let product_lookup: HashMap<&str, usize> = products
            .iter()
            .enumerate()
            .map(|(i, p)| (p.product_id.as_str(), i))
            .collect();

        let mut seen: HashMap<(usize, usize), usize> = HashMap::with_capacity(records.len());
        let mut news_seen: HashMap<(usize, i64), (u64, usize)> = HashMap::new();
        let mut adv_seen: HashMap<(usize, i64), (f64, usize)> = HashMap::new();
        let mut observations = Vec::with_capacity(records.len());
        for r in &records {
            let product = *product_lookup
                .get(r.product_id.as_str())
                .ok_or_else(|| Error::OrphanProduct {
                    line: r.line,
                    product_id: r.product_id.clone(),
                })?;
            let market = *market_lookup
                .get(&(r.region_id.as_str(), r.period))
                .ok_or_else(|| Error::OrphanMarket {
                    line: r.line,
                    region_id: r.region_id.clone(),
                    period: r.period,
                })?;
            if let Some(first) = seen.insert((market, product), r.line) {
                return Err(Error::DuplicateKey {
                    line: r.line,
                    first_line: first,
                    key: format!("({}, {}, {})", r.product_id, r.region_id, r.period),
                });
            }
            check_row(r)?;
            let firm = product_firm_of(&products, &firms, product);
            match news_seen.get(&(firm, r.period)) {
                Some(&(v, _)) if v != r.news_raw => {
                    return Err(Error::InconsistentSeries {
                        line: r.line,
                        series: "news_raw".into(),
                        entity: firms[firm].clone(),
                        period: r.period,
                    })
                }
                Some(_) => {}
                None => {
                    news_seen.insert((firm, r.period), (r.news_raw, r.line));
                }
            }
            let brand = index_of(&brands, &products[product].brand_id);
            match adv_seen.get(&(brand, r.period)) {
                Some(&(v, _)) if v != r.adv_raw => {
                    return Err(Error::InconsistentSeries {
                        line: r.line,
                        series: "adv_raw".into(),
                        entity: brands[brand].clone(),
                        period: r.period,
                    })
                }
                Some(_) => {}
                None => {
                    adv_seen.insert((brand, r.period), (r.adv_raw, r.line));
                }
            }
            observations.push(Observation {
                product,
                market,
                price: r.price,
                volume: r.volume,
                adv_raw: r.adv_raw,
                news_raw: r.news_raw,
            });
        }
        observations.sort_by_key(|o| (o.market, o.product));

        let mut ds = PanelDataset {
            products,
            firms,
            groups,
            brands,
            regions,
            product_firm,
            product_group,
            product_brand,
            markets,
            market_region,
            observations,
            market_rows: Vec::new(),
            shares: None,
            scores: None,
        };
        ds.index_markets();
        ds.fill_expenditure_sizes();
        ds.check_market_sizes()?;
        Ok(ds)
    }

    fn index_markets(&mut self) {
        let mut rows = vec![(0usize, 0usize); self.markets.len()];
        let mut start = 0;
        while start < self.observations.len() {
            let m = self.observations[start].market;
            let mut end = start;
            while end < self.observations.len() && self.observations[end].market == m {
                end += 1;
            }
            rows[m] = (start, end);
            start = end;
        }
        self.market_rows = rows;
    }

    fn fill_expenditure_sizes(&mut self) {
        if !self.markets.iter().any(|m| m.expenditure_size.is_nan()) {
            return;
        }
        let mut total = vec![0.0; self.regions.len()];
        let mut count = vec![0usize; self.regions.len()];
        for (m, &(a, b)) in self.market_rows.iter().enumerate() {
            let r = self.market_region[m];
            total[r] += self.observations[a..b].iter().map(Observation::revenue).sum::<f64>();
            count[r] += 1;
        }
        for (m, def) in self.markets.iter_mut().enumerate() {
            if def.expenditure_size.is_nan() {
                let r = self.market_region[m];
                def.expenditure_size = 2.0 * total[r] / count[r] as f64;
            }
        }
    }

    fn check_market_sizes(&self) -> Result<()> {
        for (m, def) in self.markets.iter().enumerate() {
            let rows = self.market_observations(m);
            let volume: f64 = rows.iter().map(|o| o.volume).sum();
            if volume >= def.size() {
                return Err(Error::MarketSizeViolation {
                    region_id: def.region_id.clone(),
                    period: def.period,
                    detail: format!("total volume {volume} >= market size {}", def.size()),
                });
            }
            let revenue: f64 = rows.iter().map(Observation::revenue).sum();
            if revenue >= def.expenditure_size {
                return Err(Error::MarketSizeViolation {
                    region_id: def.region_id.clone(),
                    period: def.period,
                    detail: format!(
                        "total revenue {revenue} >= expenditure size {}",
                        def.expenditure_size
                    ),
                });
            }
        }
        Ok(())
    }

    pub fn products(&self) -> &[ProductMeta] {
        &self.products
    }
    pub fn firms(&self) -> &[String] {
        &self.firms
    }
    pub fn groups(&self) -> &[String] {
        &self.groups
    }
    pub fn brands(&self) -> &[String] {
        &self.brands
    }
    pub fn regions(&self) -> &[String] {
        &self.regions
    }
    pub fn markets(&self) -> &[MarketDef] {
        &self.markets
    }
    pub fn observations(&self) -> &[Observation] {
        &self.observations
    }
    pub fn firm_of(&self, product: usize) -> usize {
        self.product_firm[product]
    }
    pub fn group_of(&self, product: usize) -> usize {
        self.product_group[product]
    }
    pub fn brand_of(&self, product: usize) -> usize {
        self.product_brand[product]
    }
    pub fn region_of(&self, market: usize) -> usize {
        self.market_region[market]
    }
    pub fn firm_index(&self, firm_id: &str) -> Option<usize> {
        self.firms.binary_search_by(|f| f.as_str().cmp(firm_id)).ok()
    }

    /// Observation index range of a market.
    pub fn market_range(&self, market: usize) -> std::ops::Range<usize> {
        let (a, b) = self.market_rows[market];
        a..b
    }

    pub fn market_observations(&self, market: usize) -> &[Observation] {
        &self.observations[self.market_range(market)]
    }

    /// Sorted distinct periods.
    pub fn periods(&self) -> Vec<i64> {
        let mut p: Vec<i64> = self.markets.iter().map(|m| m.period).collect();
        p.dedup();
        p
    }

    /// Product indices owned by each firm, keyed by firm id.
    pub fn ownership(&self) -> BTreeMap<String, Vec<usize>> {
        let mut map: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (p, meta) in self.products.iter().enumerate() {
            map.entry(meta.firm_id.clone()).or_default().push(p);
        }
        map
    }

    pub fn key(&self, obs: usize) -> ObsKey {
        let o = &self.observations[obs];
        let m = &self.markets[o.market];
        ObsKey {
            product_id: self.products[o.product].product_id.clone(),
            region_id: m.region_id.clone(),
            period: m.period,
        }
    }

    pub fn shares(&self) -> Result<&ShareTable> {
        self.shares.as_ref().ok_or(Error::MissingAugmentation("share table"))
    }

    pub fn scores(&self) -> Result<&ScoreTable> {
        self.scores.as_ref().ok_or(Error::MissingAugmentation("score table"))
    }

    pub(crate) fn with_scores(mut self, scores: ScoreTable) -> Self {
        self.scores = Some(scores);
        self
    }

    /// Keeps only markets whose period is at least `min_period`, dropping
    /// their observations and any attached rows.
    pub(crate) fn retain_from_period(self, min_period: i64) -> Self {
        let keep_market: Vec<bool> = self.markets.iter().map(|m| m.period >= min_period).collect();
        let mut new_index = vec![usize::MAX; self.markets.len()];
        let mut markets = Vec::new();
        let mut market_region = Vec::new();
        for (i, m) in self.markets.iter().enumerate() {
            if keep_market[i] {
                new_index[i] = markets.len();
                markets.push(m.clone());
                market_region.push(self.market_region[i]);
            }
        }
        let keep_obs: Vec<bool> = self.observations.iter().map(|o| keep_market[o.market]).collect();
        let observations = self
            .observations
            .iter()
            .filter(|o| keep_market[o.market])
            .map(|o| Observation {
                market: new_index[o.market],
                ..o.clone()
            })
            .collect();
        let shares = self.shares.map(|t| ShareTable {
            rows: filter_by(&t.rows, &keep_obs),
            markets: filter_by(&t.markets, &keep_market),
        });
        let scores = self.scores.map(|mut s| {
            s.rows = filter_by(&s.rows, &keep_obs);
            s
        });
        let mut ds = PanelDataset {
            markets,
            market_region,
            observations,
            market_rows: Vec::new(),
            shares,
            scores,
            ..self
        };
        ds.index_markets();
        ds
    }
}

fn filter_by<T: Clone>(items: &[T], keep: &[bool]) -> Vec<T> {
    items
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(x, _)| x.clone())
        .collect()
}

fn product_firm_of(products: &[ProductMeta], firms: &[String], product: usize) -> usize {
    index_of(firms, &products[product].firm_id)
}

fn check_row(r: &ObservationRecord) -> Result<()> {
    let bad = |field: &str, reason: String| Error::InvalidValue {
        line: r.line,
        field: field.into(),
        reason,
    };
    if !(r.volume.is_finite() && r.volume >= 0.0) {
        return Err(bad("volume", format!("{} is not a non-negative number", r.volume)));
    }
    if !r.price.is_finite() || r.price < 0.0 || (r.volume > 0.0 && r.price <= 0.0) {
        return Err(bad("price", format!("{} must be positive where volume > 0", r.price)));
    }
    if !(r.adv_raw.is_finite() && r.adv_raw >= 0.0) {
        return Err(bad("adv_raw", format!("{} is not a non-negative number", r.adv_raw)));
    }
    Ok(())
}

/// Computes quantity, within-group, and revenue shares for every
/// observation, plus outside shares per market.
pub fn compute_shares(ds: PanelDataset) -> Result<PanelDataset> {
    let mut rows = vec![
        ShareRow {
            share: 0.0,
            within_share: 0.0,
            revenue_share: 0.0,
            within_revenue_share: 0.0,
        };
        ds.observations.len()
    ];
    let mut outside = Vec::with_capacity(ds.markets.len());
    let n_groups = ds.groups.len();
    for (m, def) in ds.markets.iter().enumerate() {
        let range = ds.market_range(m);
        let size = def.size();
        let exp = def.expenditure_size;
        let mut group_q = vec![0.0; n_groups];
        let mut group_r = vec![0.0; n_groups];
        let mut group_n = vec![0usize; n_groups];
        for o in &ds.observations[range.clone()] {
            let g = ds.product_group[o.product];
            group_q[g] += o.volume / size;
            group_r[g] += o.revenue() / exp;
            group_n[g] += 1;
        }
        for g in 0..n_groups {
            if group_n[g] > 0 && group_q[g] <= 0.0 {
                return Err(Error::ZeroGroupShare {
                    region_id: def.region_id.clone(),
                    period: def.period,
                    group_id: ds.groups[g].clone(),
                });
            }
        }
        for i in range {
            let o = &ds.observations[i];
            let g = ds.product_group[o.product];
            let s = o.volume / size;
            let r = o.revenue() / exp;
            rows[i] = ShareRow {
                share: s,
                within_share: s / group_q[g],
                revenue_share: r,
                within_revenue_share: r / group_r[g],
            };
        }
        outside.push(OutsideShares {
            outside: 1.0 - group_q.iter().sum::<f64>(),
            revenue_outside: 1.0 - group_r.iter().sum::<f64>(),
        });
    }
    Ok(PanelDataset {
        shares: Some(ShareTable {
            rows,
            markets: outside,
        }),
        ..ds
    })
}

fn column_map(headers: &csv::StringRecord, required: &[&str], file: &str) -> Result<Vec<usize>> {
    required
        .iter()
        .map(|col| {
            headers
                .iter()
                .position(|h| h.trim() == *col)
                .ok_or_else(|| Error::MissingColumn {
                    file: file.to_string(),
                    column: col.to_string(),
                })
        })
        .collect()
}

fn field(rec: &csv::StringRecord, idx: usize) -> &str {
    rec.get(idx).unwrap_or("").trim()
}

fn parse_num<T: std::str::FromStr>(rec: &csv::StringRecord, idx: usize, name: &str, line: usize) -> Result<T> {
    let raw = field(rec, idx);
    raw.parse().map_err(|_| Error::Parse {
        line,
        field: name.to_string(),
        value: raw.to_string(),
    })
}

fn parse_bool(raw: &str, line: usize) -> Result<bool> {
    match raw {
        "1" | "true" | "TRUE" | "True" => Ok(true),
        "0" | "false" | "FALSE" | "False" => Ok(false),
        _ => Err(Error::Parse {
            line,
            field: "is_cold".into(),
            value: raw.to_string(),
        }),
    }
}

/// Reads observation rows and the product metadata repeated on them.
pub fn read_observations<R: Read>(reader: R, file: &str) -> Result<(Vec<ProductMeta>, Vec<ObservationRecord>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let cols = column_map(rdr.headers()?, &PANEL_HEADER, file)?;
    let mut products: Vec<ProductMeta> = Vec::new();
    let mut product_line: HashMap<String, (usize, usize)> = HashMap::new();
    let mut records = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let meta = ProductMeta {
            product_id: field(&rec, cols[0]).to_string(),
            firm_id: field(&rec, cols[1]).to_string(),
            brand_id: field(&rec, cols[2]).to_string(),
            group_id: field(&rec, cols[3]).to_string(),
            is_cold: parse_bool(field(&rec, cols[4]), line)?,
        };
        match product_line.get(&meta.product_id) {
            Some(&(idx, first)) if products[idx] != meta => {
                return Err(Error::InconsistentProduct {
                    line,
                    product_id: meta.product_id.clone(),
                    detail: format!("differs from line {first}"),
                });
            }
            Some(_) => {}
            None => {
                product_line.insert(meta.product_id.clone(), (products.len(), line));
                products.push(meta.clone());
            }
        }
        records.push(ObservationRecord {
            product_id: meta.product_id,
            region_id: field(&rec, cols[5]).to_string(),
            period: parse_num(&rec, cols[6], "period", line)?,
            price: parse_num(&rec, cols[7], "price", line)?,
            volume: parse_num(&rec, cols[8], "volume", line)?,
            adv_raw: parse_num(&rec, cols[9], "adv_raw", line)?,
            news_raw: parse_num(&rec, cols[10], "news_raw", line)?,
            line,
        });
    }
    Ok((products, records))
}

pub fn read_markets<R: Read>(reader: R, file: &str) -> Result<Vec<MarketDef>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let cols = column_map(rdr.headers()?, &MARKETS_HEADER, file)?;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let size_unit = if field(&rec, cols[3]).is_empty() {
            DEFAULT_SIZE_UNIT
        } else {
            parse_num(&rec, cols[3], "size_unit", line)?
        };
        let expenditure_size = if field(&rec, cols[4]).is_empty() {
            f64::NAN
        } else {
            parse_num(&rec, cols[4], "expenditure_size", line)?
        };
        out.push(MarketDef {
            region_id: field(&rec, cols[0]).to_string(),
            period: parse_num(&rec, cols[1], "period", line)?,
            population: parse_num(&rec, cols[2], "population", line)?,
            size_unit,
            expenditure_size,
        });
    }
    Ok(out)
}

/// Loads and validates a panel from an observation file and a markets file.
pub fn load_panel(panel_csv: &Path, markets_csv: &Path) -> Result<PanelDataset> {
    let open = |p: &Path| std::fs::File::open(p).map_err(|e| Error::io(p.display().to_string(), e));
    let (products, records) = read_observations(open(panel_csv)?, &panel_csv.display().to_string())?;
    let markets = read_markets(open(markets_csv)?, &markets_csv.display().to_string())?;
    PanelDataset::from_records(products, markets, records)
}

/// Writes the canonical observation CSV: rows ordered by period, region,
/// product; numbers in shortest round-trip form.
pub fn write_panel_csv<W: Write>(ds: &PanelDataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(PANEL_HEADER)?;
    for o in &ds.observations {
        let p = &ds.products[o.product];
        let m = &ds.markets[o.market];
        w.write_record([
            p.product_id.as_str(),
            &p.firm_id,
            &p.brand_id,
            &p.group_id,
            if p.is_cold { "1" } else { "0" },
            &m.region_id,
            &m.period.to_string(),
            &o.price.to_string(),
            &o.volume.to_string(),
            &o.adv_raw.to_string(),
            &o.news_raw.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("panel csv", e))?;
    Ok(())
}

pub fn write_markets_csv<W: Write>(ds: &PanelDataset, writer: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(writer);
    w.write_record(MARKETS_HEADER)?;
    for m in &ds.markets {
        w.write_record([
            m.region_id.as_str(),
            &m.period.to_string(),
            &m.population.to_string(),
            &m.size_unit.to_string(),
            &m.expenditure_size.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("markets csv", e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MARKETS: &str = "region_id,period,population,size_unit,expenditure_size\nA,1,10,10,1000\n";

    fn load(panel: &str, markets: &str) -> Result<PanelDataset> {
        let (products, records) = read_observations(panel.as_bytes(), "panel")?;
        let markets = read_markets(markets.as_bytes(), "markets")?;
        PanelDataset::from_records(products, markets, records)
    }

    #[test]
    fn three_row_file_loads() {
        let panel = "product_id,firm_id,brand_id,group_id,is_cold,region_id,period,price,volume,adv_raw,news_raw\n\
                     p1,f1,b1,red,0,A,1,1.0,10,5,2\n\
                     p2,f1,b2,red,0,A,1,1.2,20,0,2\n\
                     p3,f2,b3,white,1,A,1,0.9,5,1,0\n";
        let ds = compute_shares(load(panel, MARKETS).unwrap()).unwrap();
        assert_eq!(ds.observations().len(), 3);
        let shares = ds.shares().unwrap();
        assert!((shares.rows[0].share - 0.1).abs() < 1e-15);
        assert!((shares.markets[0].outside - 0.65).abs() < 1e-12);
    }

    #[test]
    fn duplicate_row_is_rejected() {
        let panel = "product_id,firm_id,brand_id,group_id,is_cold,region_id,period,price,volume,adv_raw,news_raw\n\
                     p1,f1,b1,red,0,A,1,1.0,10,5,2\n\
                     p1,f1,b1,red,0,A,1,1.0,11,5,2\n";
        match load(panel, MARKETS) {
            Err(Error::DuplicateKey { line, first_line, .. }) => {
                assert_eq!((line, first_line), (3, 2));
            }
            other => panic!("expected DuplicateKey, got {other:?}"),
        }
    }

    #[test]
    fn oversized_market_is_rejected() {
        // M = 10 * 10 = 100; volume 110 = 1.1 M
        let panel = "product_id,firm_id,brand_id,group_id,is_cold,region_id,period,price,volume,adv_raw,news_raw\n\
                     p1,f1,b1,red,0,A,1,1.0,110,5,2\n";
        assert!(matches!(load(panel, MARKETS), Err(Error::MarketSizeViolation { .. })));
    }

    #[test]
    fn missing_column_is_named() {
        let panel = "product_id,firm_id,brand_id,group_id,is_cold,region_id,period,price,volume,adv_raw\n";
        match load(panel, MARKETS) {
            Err(Error::MissingColumn { column, .. }) => assert_eq!(column, "news_raw"),
            other => panic!("expected MissingColumn, got {other:?}"),
        }
    }

    #[test]
    fn orphan_market_is_rejected() {
        let panel = "product_id,firm_id,brand_id,group_id,is_cold,region_id,period,price,volume,adv_raw,news_raw\n\
                     p1,f1,b1,red,0,B,1,1.0,10,5,2\n";
        assert!(matches!(load(panel, MARKETS), Err(Error::OrphanMarket { line: 2, .. })));
    }

    #[test]
    fn orphan_product_is_rejected() {
        let markets = read_markets(MARKETS.as_bytes(), "m").unwrap();
        let rec = ObservationRecord {
            product_id: "ghost".into(),
            region_id: "A".into(),
            period: 1,
            price: 1.0,
            volume: 1.0,
            adv_raw: 0.0,
            news_raw: 0,
            line: 7,
        };
        let err = PanelDataset::from_records(vec![], markets, vec![rec]).unwrap_err();
        assert!(matches!(err, Error::OrphanProduct { line: 7, .. }));
    }

    #[test]
    fn single_product_shares() {
        let panel = "product_id,firm_id,brand_id,group_id,is_cold,region_id,period,price,volume,adv_raw,news_raw\n\
                     p1,f1,b1,red,0,A,1,2.0,25,0,0\n";
        let ds = compute_shares(load(panel, MARKETS).unwrap()).unwrap();
        let t = ds.shares().unwrap();
        assert_eq!(t.rows[0].share, 0.25);
        assert_eq!(t.markets[0].outside, 0.75);
        assert_eq!(t.rows[0].within_share, 1.0);
        assert_eq!(t.rows[0].revenue_share, 0.05);
    }

    #[test]
    fn within_group_shares() {
        let panel = "product_id,firm_id,brand_id,group_id,is_cold,region_id,period,price,volume,adv_raw,news_raw\n\
                     p1,f1,b1,red,0,A,1,1.0,10,0,0\n\
                     p2,f2,b2,red,0,A,1,1.0,30,0,0\n";
        let ds = compute_shares(load(panel, MARKETS).unwrap()).unwrap();
        let t = ds.shares().unwrap();
        assert!((t.rows[0].within_share - 0.25).abs() < 1e-15);
        assert!((t.rows[1].within_share - 0.75).abs() < 1e-15);
    }

    #[test]
    fn empty_market_has_unit_outside_share() {
        let markets = "region_id,period,population,size_unit,expenditure_size\nA,1,10,10,1000\nB,1,10,10,1000\n";
        let panel = "product_id,firm_id,brand_id,group_id,is_cold,region_id,period,price,volume,adv_raw,news_raw\n\
                     p1,f1,b1,red,0,A,1,1.0,10,0,0\n";
        let ds = compute_shares(load(panel, markets).unwrap()).unwrap();
        let t = ds.shares().unwrap();
        assert_eq!(t.markets[1].outside, 1.0);
        assert!(ds.market_observations(1).is_empty());
    }

    #[test]
    fn zero_group_share_is_rejected() {
        let panel = "product_id,firm_id,brand_id,group_id,is_cold,region_id,period,price,volume,adv_raw,news_raw\n\
                     p1,f1,b1,red,0,A,1,1.0,10,0,0\n\
                     p2,f2,b2,white,0,A,1,1.0,0,0,0\n";
        let ds = load(panel, MARKETS).unwrap();
        assert!(matches!(compute_shares(ds), Err(Error::ZeroGroupShare { .. })));
    }

    #[test]
    fn conflicting_news_counts_are_rejected() {
        let panel = "product_id,firm_id,brand_id,group_id,is_cold,region_id,period,price,volume,adv_raw,news_raw\n\
                     p1,f1,b1,red,0,A,1,1.0,10,0,3\n\
                     p2,f1,b2,red,0,A,1,1.0,10,0,4\n";
        assert!(matches!(load(panel, MARKETS), Err(Error::InconsistentSeries { line: 3, .. })));
    }

    #[test]
    fn blank_expenditure_size_is_twice_average_spending() {
        let markets = "region_id,period,population,size_unit,expenditure_size\nA,1,10,10,\nA,2,10,10,\n";
        let panel = "product_id,firm_id,brand_id,group_id,is_cold,region_id,period,price,volume,adv_raw,news_raw\n\
                     p1,f1,b1,red,0,A,1,1.0,10,0,0\n\
                     p1,f1,b1,red,0,A,2,1.0,20,0,0\n";
        let ds = load(panel, markets).unwrap();
        assert_eq!(ds.markets()[0].expenditure_size, 30.0);
        assert_eq!(ds.markets()[1].expenditure_size, 30.0);
    }

    #[test]
    fn month_of_year_wraps() {
        assert_eq!(month_of_year(2010 * 12 + 7), 8);
        assert_eq!(month_of_year(2019 * 12 + 11), 12);
    }
}
