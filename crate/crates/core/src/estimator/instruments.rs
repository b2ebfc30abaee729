//! Excluded instruments built from the panel itself.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::panel::PanelDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstrumentKind {
    /// Mean price of the same product in the other regions that period.
    HausmanPrice,
    /// Rival-firm products in the same group and market.
    RivalCount,
    /// Rival-firm products launched nationally this period.
    RivalEntry,
}

impl InstrumentKind {
    pub fn name(&self) -> &'static str {
        match self {
            InstrumentKind::HausmanPrice => "price_iv",
            InstrumentKind::RivalCount => "share_iv",
            InstrumentKind::RivalEntry => "adv_iv",
        }
    }
}

/// Instrument values aligned with `PanelDataset::observations`.
#[derive(Clone, Debug, PartialEq)]
pub struct InstrumentColumns {
    /// `None` where the product sells in no other region that period.
    pub hausman: Vec<Option<f64>>,
    pub rival_count: Vec<f64>,
    pub rival_entry: Vec<f64>,
}

/// Builds all instruments. `log_price` selects the Hausman average over
/// log prices instead of prices.
pub fn build_instruments(ds: &PanelDataset, log_price: bool) -> InstrumentColumns {
    let obs = ds.observations();
    let markets = ds.markets();
    let selling = |i: usize| obs[i].volume > 0.0;
    let price_term = |p: f64| if log_price { p.ln() } else { p };

    // (product, period) -> (sum, count) over selling rows
    let mut national: HashMap<(usize, i64), (f64, usize)> = HashMap::new();
    for (i, o) in obs.iter().enumerate() {
        if selling(i) {
            let e = national.entry((o.product, markets[o.market].period)).or_insert((0.0, 0));
            e.0 += price_term(o.price);
            e.1 += 1;
        }
    }
    let hausman = obs
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let (mut sum, mut n) = national
                .get(&(o.product, markets[o.market].period))
                .copied()
                .unwrap_or((0.0, 0));
            if selling(i) {
                sum -= price_term(o.price);
                n -= 1;
            }
            (n > 0).then(|| sum / n as f64)
        })
        .collect();

    let mut rival_count = vec![0.0; obs.len()];
    for m in 0..markets.len() {
        let range = ds.market_range(m);
        for i in range.clone() {
            let (g, f) = (ds.group_of(obs[i].product), ds.firm_of(obs[i].product));
            rival_count[i] = range
                .clone()
                .filter(|&k| {
                    selling(k) && ds.group_of(obs[k].product) == g && ds.firm_of(obs[k].product) != f
                })
                .count() as f64;
        }
    }

    // national launch period per product; products already selling in the
    // first panel period are not launches
    let first_period = markets.first().map(|m| m.period);
    let mut launch: Vec<Option<i64>> = vec![None; ds.products().len()];
    for (i, o) in obs.iter().enumerate() {
        if selling(i) {
            let t = markets[o.market].period;
            let l = &mut launch[o.product];
            *l = Some(l.map_or(t, |x: i64| x.min(t)));
        }
    }
    let mut launches: HashMap<i64, Vec<usize>> = HashMap::new();
    for (p, l) in launch.iter().enumerate() {
        if let Some(t) = *l {
            if Some(t) != first_period {
                launches.entry(t).or_default().push(p);
            }
        }
    }
    let rival_entry = obs
        .iter()
        .map(|o| {
            let f = ds.firm_of(o.product);
            launches
                .get(&markets[o.market].period)
                .map_or(0, |ps| ps.iter().filter(|&&p| ds.firm_of(p) != f).count()) as f64
        })
        .collect();

    InstrumentColumns {
        hausman,
        rival_count,
        rival_entry,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::{read_markets, read_observations};

    fn dataset() -> PanelDataset {
        let markets = "region_id,period,population,size_unit,expenditure_size\n\
                       A,1,100,10,10000\nB,1,100,10,10000\nC,1,100,10,10000\n\
                       A,2,100,10,10000\nB,2,100,10,10000\nC,2,100,10,10000\n";
        let panel = "product_id,firm_id,brand_id,group_id,is_cold,region_id,period,price,volume,adv_raw,news_raw\n\
                     p1,f1,b1,red,0,A,1,1.0,10,0,0\n\
                     p1,f1,b1,red,0,B,1,2.0,10,0,0\n\
                     p1,f1,b1,red,0,C,1,4.0,10,0,0\n\
                     p2,f2,b2,red,0,A,1,1.0,10,0,0\n\
                     p3,f2,b3,white,0,A,1,1.0,10,0,0\n\
                     p1,f1,b1,red,0,A,2,1.0,10,0,0\n\
                     p4,f2,b4,red,0,A,2,1.5,10,0,0\n\
                     p4,f2,b4,red,0,B,2,2.5,10,0,0\n";
        let (products, records) = read_observations(panel.as_bytes(), "p").unwrap();
        let markets = read_markets(markets.as_bytes(), "m").unwrap();
        PanelDataset::from_records(products, markets, records).unwrap()
    }

    fn row(ds: &PanelDataset, product: &str, region: &str, period: i64) -> usize {
        (0..ds.observations().len())
            .find(|&i| {
                let k = ds.key(i);
                k.product_id == product && k.region_id == region && k.period == period
            })
            .unwrap()
    }

    #[test]
    fn hausman_is_leave_one_region_out_mean() {
        let ds = dataset();
        let iv = build_instruments(&ds, false);
        assert_eq!(iv.hausman[row(&ds, "p1", "A", 1)], Some(3.0));
        assert_eq!(iv.hausman[row(&ds, "p1", "C", 1)], Some(1.5));
        assert_eq!(iv.hausman[row(&ds, "p2", "A", 1)], None);
        let logs = build_instruments(&ds, true);
        let h = logs.hausman[row(&ds, "p1", "A", 1)].unwrap();
        assert!((h - (2f64.ln() + 4f64.ln()) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn rival_counts_are_same_group_other_firm() {
        let ds = dataset();
        let iv = build_instruments(&ds, false);
        assert_eq!(iv.rival_count[row(&ds, "p1", "A", 1)], 1.0);
        assert_eq!(iv.rival_count[row(&ds, "p2", "A", 1)], 1.0);
        assert_eq!(iv.rival_count[row(&ds, "p3", "A", 1)], 0.0);
    }

    #[test]
    fn launches_count_for_rivals_only() {
        let ds = dataset();
        let iv = build_instruments(&ds, false);
        assert_eq!(iv.rival_entry[row(&ds, "p1", "A", 2)], 1.0);
        assert_eq!(iv.rival_entry[row(&ds, "p4", "A", 2)], 0.0);
        assert_eq!(iv.rival_entry[row(&ds, "p1", "A", 1)], 0.0);
    }
}
