#![allow(dead_code)]

use demand_forge::shares::MarketSnapshot;
use demand_forge::synth::{generate, SynthConfig, SynthPanel};
use demand_forge::{attach_scores, compute_shares, PanelDataset};
use proptest::prelude::*;

/// Synthetic panel together with the dataset the estimator sees.
pub fn prepared(cfg: &SynthConfig) -> (SynthPanel, PanelDataset) {
    let panel = generate(cfg).unwrap();
    let ds = attach_scores(compute_shares(panel.dataset.clone()).unwrap(), &cfg.scores).unwrap();
    (panel, ds)
}

pub fn snapshot(prices: Vec<f64>, delta: Vec<f64>, groups: Vec<usize>, firms: Vec<usize>) -> MarketSnapshot {
    MarketSnapshot {
        product_ids: (0..prices.len()).map(|i| format!("p{i}")).collect(),
        prices,
        mean_utilities: delta,
        groups,
        firms,
        size: 1.0,
    }
}

/// Random market of 1..=max products with up to three nests and owners.
pub fn market(max: usize) -> impl Strategy<Value = MarketSnapshot> {
    (1..=max).prop_flat_map(|n| {
        (
            prop::collection::vec(0.5..2.0f64, n),
            prop::collection::vec(-4.0..1.0f64, n),
            prop::collection::vec(0..3usize, n),
            prop::collection::vec(0..3usize, n),
        )
            .prop_map(|(p, d, g, f)| snapshot(p, d, g, f))
    })
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
