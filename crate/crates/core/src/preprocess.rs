//! Query-panel denoising: low-volume pruning, the quantile spike filter, and
//! regional enrichment of sparse state series.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoId, RegionMap};
use crate::ingest::QueryPanel;

#[derive(Debug, Error, PartialEq)]
pub enum PreprocessError {
    #[error("query panel is empty")]
    EmptyPanel,
    #[error("series of length {len} is too short for a {window}-day replacement window")]
    SeriesTooShort { len: usize, window: usize },
    #[error("invalid filter config: {0}")]
    InvalidConfig(String),
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IqrConfig {
    pub upper_quantile: f64,
    pub lower_quantile: f64,
    pub sigma_mult: f64,
    pub rolling_window_days: usize,
    pub replacement_window_days: usize,
}

impl Default for IqrConfig {
    fn default() -> Self {
        IqrConfig {
            upper_quantile: 0.999,
            lower_quantile: 0.01,
            sigma_mult: 3.0,
            rolling_window_days: 7,
            replacement_window_days: 3,
        }
    }
}

impl IqrConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = 0.0 < self.lower_quantile
            && self.lower_quantile < self.upper_quantile
            && self.upper_quantile < 1.0
            && self.sigma_mult > 0.0
            && self.rolling_window_days >= 1
            && self.replacement_window_days >= 1;
        if ok {
            Ok(())
        } else {
            Err(PreprocessError::InvalidConfig(format!("{self:?}")))
        }
    }
}

/// Linear-interpolation quantile (h = (n-1)p between order statistics).
pub fn quantile_type7(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    quantile_sorted(&sorted, p)
}

fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil().min((n - 1) as f64) as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn median(values: &[f64]) -> f64 {
    quantile_type7(values, 0.5)
}

/// Drops, per geo, each query whose mean frequency is strictly below the
/// median of all queries' means at that geo. Dropped series become `None`.
pub fn prune_low_volume(panel: &QueryPanel) -> Result<QueryPanel> {
    if panel.queries.is_empty() || panel.len == 0 || panel.series.is_empty() {
        return Err(PreprocessError::EmptyPanel);
    }
    let mut out = panel.clone();
    for series in out.series.values_mut() {
        let means: Vec<(usize, f64)> = series
            .iter()
            .enumerate()
            .filter_map(|(q, s)| {
                s.as_ref()
                    .map(|v| (q, v.iter().sum::<f64>() / v.len() as f64))
            })
            .collect();
        if means.is_empty() {
            continue;
        }
        let m = median(&means.iter().map(|x| x.1).collect::<Vec<_>>());
        for (q, mean) in means {
            if mean < m {
                series[q] = None;
            }
        }
    }
    Ok(out)
}

fn mean_std(window: &[f64]) -> (f64, f64) {
    let n = window.len() as f64;
    let mean = window.iter().sum::<f64>() / n;
    if window.len() < 2 {
        return (mean, 0.0);
    }
    let var = window.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Single left-to-right pass overwriting spikes and drops with the mean of
/// the previous `replacement_window_days` (already filtered) values.
///
/// Quantile thresholds come from the unfiltered input. A large outlier must
/// also clear `mean + sigma_mult * std` of the trailing rolling window
/// (sample std); a small outlier needs only the lower quantile. The first
/// `replacement_window_days` days are never touched.
pub fn iqr_filter(series: &[f64], cfg: &IqrConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n = series.len();
    let rw = cfg.replacement_window_days;
    if n <= rw {
        return Err(PreprocessError::SeriesTooShort { len: n, window: rw });
    }
    let mut sorted = series.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let q_hi = quantile_sorted(&sorted, cfg.upper_quantile);
    let q_lo = quantile_sorted(&sorted, cfg.lower_quantile);

    let mut out = series.to_vec();
    for t in rw..n {
        let v = out[t];
        let small = v < q_lo;
        let large = v > q_hi && {
            let from = t.saturating_sub(cfg.rolling_window_days);
            let (m, s) = mean_std(&out[from..t]);
            v > m + cfg.sigma_mult * s
        };
        if small || large {
            out[t] = out[t - rw..t].iter().sum::<f64>() / rw as f64;
        }
    }
    Ok(out)
}

/// Applies `iqr_filter` to every retained series. Series not longer than the
/// replacement window are left as-is.
pub fn filter_panel(panel: &QueryPanel, cfg: &IqrConfig) -> Result<QueryPanel> {
    cfg.validate()?;
    let mut out = panel.clone();
    for series in out.series.values_mut() {
        for s in series.iter_mut().flatten() {
            if s.len() > cfg.replacement_window_days {
                *s = iqr_filter(s, cfg)?;
            }
        }
    }
    Ok(out)
}

/// state ← (2/3)·state + (1/3)·region, datewise per query. A dropped state
/// series counts as zero, so it is filled from the region alone.
pub fn enrich_states(panel: &QueryPanel, regions: &RegionMap) -> QueryPanel {
    let mut out = panel.clone();
    for (geo, series) in out.series.iter_mut() {
        if !geo.is_state() {
            continue;
        }
        let Ok(region) = regions.region_of(geo) else {
            continue;
        };
        let Some(reg) = panel.series.get(&region) else {
            continue;
        };
        for (q, s) in series.iter_mut().enumerate() {
            let Some(r) = reg[q].as_ref() else {
                continue;
            };
            let state = s.take().unwrap_or_else(|| vec![0.0; r.len()]);
            *s = Some(
                state
                    .iter()
                    .zip(r)
                    .map(|(a, b)| 2.0 / 3.0 * a + 1.0 / 3.0 * b)
                    .collect(),
            );
        }
    }
    out
}

/// prune → filter (each level separately) → enrich.
pub fn preprocess(panel: &QueryPanel, cfg: &IqrConfig, regions: &RegionMap) -> Result<QueryPanel> {
    let pruned = prune_low_volume(panel)?;
    let filtered = filter_panel(&pruned, cfg)?;
    Ok(enrich_states(&filtered, regions))
}

/// Queries retained at `geo` after pruning.
pub fn retained_queries(panel: &QueryPanel, geo: &GeoId) -> Vec<String> {
    panel
        .series
        .get(geo)
        .map(|s| {
            s.iter()
                .enumerate()
                .filter(|(_, v)| v.is_some())
                .map(|(q, _)| panel.queries[q].clone())
                .collect()
        })
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;
    use std::collections::BTreeMap;

    fn panel_with(geo: GeoId, series: Vec<Vec<f64>>) -> QueryPanel {
        let len = series[0].len();
        let queries = (0..series.len()).map(|i| format!("q{i}")).collect();
        let mut map = BTreeMap::new();
        map.insert(geo, series.into_iter().map(Some).collect());
        QueryPanel {
            start: NaiveDate::from_ymd_opt(2020, 4, 1).unwrap(),
            len,
            queries,
            series: map,
        }
    }

    #[test]
    fn type7_quantiles() {
        let ramp: Vec<f64> = (1..=30).map(f64::from).collect();
        assert!((quantile_type7(&ramp, 0.01) - 1.29).abs() < 1e-12);
        assert!((quantile_type7(&ramp, 0.999) - 29.971).abs() < 1e-12);
        assert_eq!(quantile_type7(&[4.0], 0.3), 4.0);
    }

    #[test]
    fn prune_examples() {
        let g = GeoId::nation();
        let p = panel_with(g.clone(), vec![vec![10.0; 4], vec![4.0; 4], vec![1.0; 4]]);
        let out = prune_low_volume(&p).unwrap();
        assert_eq!(retained_queries(&out, &g), vec!["q0", "q1"]);

        let p = panel_with(g.clone(), vec![vec![1.0; 4]]);
        assert_eq!(retained_queries(&prune_low_volume(&p).unwrap(), &g), vec!["q0"]);

        let p = panel_with(g.clone(), vec![vec![2.0; 4]; 3]);
        assert_eq!(retained_queries(&prune_low_volume(&p).unwrap(), &g).len(), 3);
    }

    #[test]
    fn prune_empty() {
        let p = QueryPanel {
            start: NaiveDate::from_ymd_opt(2020, 4, 1).unwrap(),
            len: 0,
            queries: vec![],
            series: BTreeMap::new(),
        };
        assert_eq!(prune_low_volume(&p), Err(PreprocessError::EmptyPanel));
    }

    #[test]
    fn filter_constant_unchanged() {
        let s = vec![5.0; 40];
        assert_eq!(iqr_filter(&s, &IqrConfig::default()).unwrap(), s);
    }

    #[test]
    fn filter_single_spike() {
        let mut s = vec![10.0; 30];
        s[19] = 1000.0;
        let out = iqr_filter(&s, &IqrConfig::default()).unwrap();
        assert_eq!(out, vec![10.0; 30]);
    }

    #[test]
    fn filter_ramp_unchanged() {
        let ramp: Vec<f64> = (1..=30).map(f64::from).collect();
        assert_eq!(iqr_filter(&ramp, &IqrConfig::default()).unwrap(), ramp);
    }

    #[test]
    fn filter_small_outlier_replaced() {
        let mut s: Vec<f64> = (0..50).map(|i| 20.0 + (i % 5) as f64).collect();
        s[30] = 0.0;
        let out = iqr_filter(&s, &IqrConfig::default()).unwrap();
        assert_eq!(out[30], (s[27] + s[28] + s[29]) / 3.0);
        for t in 0..50 {
            if t != 30 {
                assert_eq!(out[t], s[t]);
            }
        }
    }

    #[test]
    fn filter_too_short() {
        assert_eq!(
            iqr_filter(&[1.0, 2.0, 3.0], &IqrConfig::default()),
            Err(PreprocessError::SeriesTooShort { len: 3, window: 3 })
        );
    }

    #[test]
    fn bad_config() {
        let cfg = IqrConfig {
            lower_quantile: 0.5,
            upper_quantile: 0.4,
            ..IqrConfig::default()
        };
        assert!(iqr_filter(&[1.0; 10], &cfg).is_err());
    }

    #[test]
    fn enrich_examples() {
        let regions = RegionMap::default();
        let ct = GeoId::state("CT").unwrap();
        let r1 = GeoId::region("R01").unwrap();
        let mut p = panel_with(ct.clone(), vec![vec![0.0, 6.0, 3.0]]);
        p.series.insert(r1.clone(), vec![Some(vec![9.0, 6.0, 9.0])]);
        let out = enrich_states(&p, &regions);
        let v = out.series(&ct, 0).unwrap();
        for (a, b) in v.iter().zip([3.0, 6.0, 5.0]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(out.series(&r1, 0).unwrap(), &[9.0, 6.0, 9.0]);
    }

    #[test]
    fn enrich_fills_dropped_state() {
        let regions = RegionMap::default();
        let ct = GeoId::state("CT").unwrap();
        let r1 = GeoId::region("R01").unwrap();
        let mut p = panel_with(ct.clone(), vec![vec![0.0, 0.0]]);
        p.series.get_mut(&ct).unwrap()[0] = None;
        p.series.insert(r1, vec![Some(vec![3.0, 6.0])]);
        let out = enrich_states(&p, &regions);
        assert_eq!(out.series(&ct, 0).unwrap(), &[1.0, 2.0]);
    }

    fn series_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..100.0, 10..80)
    }

    proptest! {
        #[test]
        fn filter_only_touches_quantile_extremes(s in series_strategy()) {
            let cfg = IqrConfig::default();
            let out = iqr_filter(&s, &cfg).unwrap();
            let hi = quantile_type7(&s, cfg.upper_quantile);
            let lo = quantile_type7(&s, cfg.lower_quantile);
            for t in 0..s.len() {
                if s[t] <= hi && s[t] >= lo {
                    prop_assert_eq!(out[t], s[t]);
                }
            }
            for t in 0..cfg.replacement_window_days {
                prop_assert_eq!(out[t], s[t]);
            }
        }

        #[test]
        fn filter_idempotent_when_clean(base in 10.0f64..50.0, spike in 3usize..40, n in 41usize..60) {
            // Repeated extremes keep the recomputed quantiles at the
            // series' own min and max once the spike is gone.
            let mut s: Vec<f64> = (0..n).map(|i| base + (i % 5) as f64).collect();
            s[spike] = base * 50.0;
            let cfg = IqrConfig::default();
            let once = iqr_filter(&s, &cfg).unwrap();
            prop_assert!(once[spike] < base * 50.0);
            let hi = quantile_type7(&once, cfg.upper_quantile);
            let lo = quantile_type7(&once, cfg.lower_quantile);
            prop_assert!(once.iter().all(|&v| v <= hi && v >= lo));
            prop_assert_eq!(iqr_filter(&once, &cfg).unwrap(), once);
        }

        #[test]
        fn enrich_linear_nonneg(a in prop::collection::vec(0.0f64..50.0, 5), b in prop::collection::vec(0.0f64..50.0, 5), k in 0.0f64..3.0) {
            let regions = RegionMap::default();
            let ct = GeoId::state("CT").unwrap();
            let r1 = GeoId::region("R01").unwrap();
            let run = |s: Vec<f64>, r: Vec<f64>| {
                let mut p = panel_with(ct.clone(), vec![s]);
                p.series.insert(r1.clone(), vec![Some(r)]);
                enrich_states(&p, &regions).series(&ct, 0).unwrap().to_vec()
            };
            let base = run(a.clone(), b.clone());
            prop_assert!(base.iter().all(|v| *v >= 0.0));
            let scaled = run(a.iter().map(|x| x * k).collect(), b.iter().map(|x| x * k).collect());
            for (x, y) in base.iter().zip(&scaled) {
                prop_assert!((x * k - y).abs() < 1e-9);
            }
        }

        #[test]
        fn prune_subset(means in prop::collection::vec(0.0f64..20.0, 1..12)) {
            let g = GeoId::nation();
            let p = panel_with(g.clone(), means.iter().map(|m| vec![*m; 3]).collect());
            let out = prune_low_volume(&p).unwrap();
            let kept = retained_queries(&out, &g);
            prop_assert!(!kept.is_empty());
            prop_assert_eq!(out.clone(), prune_low_volume(&p).unwrap());
            for q in &kept {
                prop_assert!(p.queries.contains(q));
            }
        }
    }
}
