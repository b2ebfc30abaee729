//! Decay-weighted accumulation of firm news counts (image score) and brand
//! advertising spend (cumulative advertising).
//!
//! Geometric kernel: `score_t = sum_{n=0..k} (1 - delta)^n raw_{t-n}`.
//! Linear kernel:    `score_t = sum_{n=0..k} (1 - n delta) raw_{t-n}`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::panel::PanelDataset;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Geometric,
    Linear,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kind: KernelKind,
    /// Depreciation rate per month.
    pub delta: f64,
    /// Number of lags accumulated beyond the current month.
    pub k: usize,
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec {
            kind: KernelKind::Geometric,
            delta: 0.4,
            k: 6,
        }
    }
}

impl KernelSpec {
    pub fn geometric(delta: f64, k: usize) -> Self {
        KernelSpec {
            kind: KernelKind::Geometric,
            delta,
            k,
        }
    }

    pub fn linear(delta: f64, k: usize) -> Self {
        KernelSpec {
            kind: KernelKind::Linear,
            delta,
            k,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.delta.is_finite() || !(0.0..=1.0).contains(&self.delta) {
            return Err(Error::InvalidKernel(format!("delta {} outside [0, 1]", self.delta)));
        }
        if self.kind == KernelKind::Linear && self.k as f64 * self.delta >= 1.0 {
            return Err(Error::InvalidKernel(format!(
                "linear kernel needs k * delta < 1, got {} * {}",
                self.k, self.delta
            )));
        }
        Ok(())
    }

    /// Weight applied to lag `n`.
    pub fn weight(&self, n: usize) -> f64 {
        match self.kind {
            KernelKind::Geometric => (1.0 - self.delta).powi(n as i32),
            KernelKind::Linear => 1.0 - n as f64 * self.delta,
        }
    }
}

/// Score at one date from lags ordered current-first (`raw[n]` is lag n).
/// Lags beyond the slice are treated as unavailable.
pub fn accumulate_lags(raw: &[f64], spec: &KernelSpec) -> Result<f64> {
    spec.validate()?;
    let mut total = 0.0;
    for (n, &v) in raw.iter().enumerate().take(spec.k + 1) {
        if v < 0.0 {
            return Err(Error::NegativeInput {
                period: -(n as i64),
                value: v,
            });
        }
        total += spec.weight(n) * v;
    }
    Ok(total)
}

/// Accumulates a period-indexed series. The output covers every period from
/// the first to the last key; missing periods count as zero and lags before
/// the first key are dropped (truncated window).
pub fn accumulate(raw: &BTreeMap<i64, f64>, spec: &KernelSpec) -> Result<BTreeMap<i64, f64>> {
    spec.validate()?;
    if let Some((&period, &value)) = raw.iter().find(|(_, v)| !(**v >= 0.0)) {
        return Err(Error::NegativeInput { period, value });
    }
    let (Some(&first), Some(&last)) = (raw.keys().next(), raw.keys().next_back()) else {
        return Ok(BTreeMap::new());
    };
    let dense: Vec<f64> = (first..=last).map(|t| raw.get(&t).copied().unwrap_or(0.0)).collect();
    let weights: Vec<f64> = (0..=spec.k).map(|n| spec.weight(n)).collect();
    let mut out = BTreeMap::new();
    for (i, t) in (first..=last).enumerate() {
        let score = weights
            .iter()
            .enumerate()
            .take(i + 1)
            .map(|(n, w)| w * dense[i - n])
            .sum();
        out.insert(t, score);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreSeries {
    pub entity_id: String,
    pub values: BTreeMap<i64, f64>,
}

impl ScoreSeries {
    pub fn at(&self, period: i64) -> f64 {
        self.values.get(&period).copied().unwrap_or(0.0)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowMode {
    /// Early periods sum over whatever lags exist.
    #[default]
    Truncated,
    /// Periods without a full k-lag history are dropped.
    Strict,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScoreConfig {
    pub image_kernel: KernelSpec,
    pub adv_kernel: KernelSpec,
    /// Image scores enter regressions as `score / image_divisor`.
    pub image_divisor: f64,
    /// Cumulative advertising enters regressions as `score / adv_divisor`.
    pub adv_divisor: f64,
    pub window: WindowMode,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            image_kernel: KernelSpec::default(),
            adv_kernel: KernelSpec::default(),
            image_divisor: 100.0,
            adv_divisor: 1e10,
            window: WindowMode::Truncated,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub imgscore: f64,
    pub cumadv: f64,
}

/// Regression-scale scores: one row per observation plus the firm and brand
/// series they were read from.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    /// Scaled image score per firm, in `PanelDataset::firms` order.
    pub firm_image: Vec<ScoreSeries>,
    /// Scaled cumulative advertising per brand, in `PanelDataset::brands` order.
    pub brand_adv: Vec<ScoreSeries>,
    pub config: ScoreConfig,
}

/// Builds image and advertising scores and attaches them to every
/// observation. In strict mode the first `k` periods are dropped.
pub fn attach_scores(ds: PanelDataset, cfg: &ScoreConfig) -> Result<PanelDataset> {
    cfg.image_kernel.validate()?;
    cfg.adv_kernel.validate()?;
    for (name, d) in [("image_divisor", cfg.image_divisor), ("adv_divisor", cfg.adv_divisor)] {
        if !(d.is_finite() && d > 0.0) {
            return Err(Error::InvalidKernel(format!("{name} must be positive, got {d}")));
        }
    }
    let periods = ds.periods();
    let (Some(&first), Some(&last)) = (periods.first(), periods.last()) else {
        return Err(Error::InsufficientHistory("dataset has no periods".into()));
    };

    let mut news: Vec<BTreeMap<i64, f64>> = vec![BTreeMap::new(); ds.firms().len()];
    let mut adv: Vec<BTreeMap<i64, f64>> = vec![BTreeMap::new(); ds.brands().len()];
    for series in news.iter_mut().chain(adv.iter_mut()) {
        series.insert(first, 0.0);
        series.insert(last, 0.0);
    }
    for o in ds.observations() {
        let period = ds.markets()[o.market].period;
        news[ds.firm_of(o.product)].insert(period, o.news_raw as f64);
        adv[ds.brand_of(o.product)].insert(period, o.adv_raw);
    }

    let scale = |raw: &BTreeMap<i64, f64>, spec: &KernelSpec, div: f64, id: &str| -> Result<ScoreSeries> {
        let values = accumulate(raw, spec)?.into_iter().map(|(t, v)| (t, v / div)).collect();
        Ok(ScoreSeries {
            entity_id: id.to_string(),
            values,
        })
    };
    let firm_image = news
        .iter()
        .zip(ds.firms())
        .map(|(raw, id)| scale(raw, &cfg.image_kernel, cfg.image_divisor, id))
        .collect::<Result<Vec<_>>>()?;
    let brand_adv = adv
        .iter()
        .zip(ds.brands())
        .map(|(raw, id)| scale(raw, &cfg.adv_kernel, cfg.adv_divisor, id))
        .collect::<Result<Vec<_>>>()?;

    let rows = ds
        .observations()
        .iter()
        .map(|o| {
            let period = ds.markets()[o.market].period;
            ScoreRow {
                imgscore: firm_image[ds.firm_of(o.product)].at(period),
                cumadv: brand_adv[ds.brand_of(o.product)].at(period),
            }
        })
        .collect();
    let table = ScoreTable {
        rows,
        firm_image,
        brand_adv,
        config: cfg.clone(),
    };
    let ds = ds.with_scores(table);
    match cfg.window {
        WindowMode::Truncated => Ok(ds),
        WindowMode::Strict => {
            let horizon = cfg.image_kernel.k.max(cfg.adv_kernel.k) as i64;
            let cutoff = first + horizon;
            if cutoff > last {
                return Err(Error::InsufficientHistory(format!(
                    "strict window needs {horizon} lags but the panel spans {} periods",
                    last - first + 1
                )));
            }
            let dropped = ds.observations().iter().filter(|o| ds.markets()[o.market].period < cutoff).count();
            log::info!("strict window: dropping {dropped} observations before period {cutoff}");
            Ok(ds.retain_from_period(cutoff))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn series(values: &[f64]) -> BTreeMap<i64, f64> {
        values.iter().enumerate().map(|(i, &v)| (i as i64, v)).collect()
    }

    #[test]
    fn spike_at_current_lag() {
        let raw = [5.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert_eq!(accumulate_lags(&raw, &KernelSpec::geometric(0.4, 6)).unwrap(), 5.0);
    }

    #[test]
    fn undamped_sum() {
        let out = accumulate(&series(&[1.0; 5]), &KernelSpec::geometric(0.0, 2)).unwrap();
        assert_eq!(out[&4], 3.0);
        // truncated window at the start
        assert_eq!(out[&0], 1.0);
        assert_eq!(out[&1], 2.0);
    }

    #[test]
    fn linear_weights() {
        let v = accumulate_lags(&[1.0; 4], &KernelSpec::linear(0.3, 3)).unwrap();
        assert!((v - 2.2).abs() < 1e-12);
    }

    #[test]
    fn linear_kernel_must_keep_weights_positive() {
        assert!(matches!(
            KernelSpec::linear(0.3, 4).validate(),
            Err(Error::InvalidKernel(_))
        ));
        assert!(KernelSpec::geometric(1.2, 2).validate().is_err());
    }

    #[test]
    fn full_depreciation_is_identity() {
        let raw = series(&[3.0, 1.0, 4.0, 1.0, 5.0]);
        assert_eq!(accumulate(&raw, &KernelSpec::geometric(1.0, 6)).unwrap(), raw);
    }

    #[test]
    fn negative_input_is_rejected() {
        let raw = series(&[1.0, -1.0]);
        assert!(matches!(
            accumulate(&raw, &KernelSpec::default()),
            Err(Error::NegativeInput { period: 1, .. })
        ));
    }

    #[test]
    fn gaps_count_as_zero() {
        let raw: BTreeMap<i64, f64> = [(0, 1.0), (2, 1.0)].into_iter().collect();
        let out = accumulate(&raw, &KernelSpec::geometric(0.5, 3)).unwrap();
        assert_eq!(out[&1], 0.5);
        assert_eq!(out[&2], 1.25);
    }
}
