//! Daily L1-penalized regressor on lagged deaths, lagged cases, optimally
//! lagged search frequencies and weekday indicators; one model per anchor day
//! and daily horizon, with coefficients smoothed over the last three anchors
//! and daily predictions summed into four weekly totals.

use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::LagTable;
use crate::geo::weekday_indicators;
use crate::solver::{self, DesignMatrix, SolverError};

#[derive(Debug, Error, PartialEq)]
pub enum ArgoError {
    #[error("anchor {anchor} horizon {horizon}: history starts too late (needs index {needed})")]
    InsufficientHistory {
        anchor: NaiveDate,
        horizon: usize,
        needed: i64,
    },
    #[error("invalid ARGO config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

pub type Result<T> = std::result::Result<T, ArgoError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureMode {
    /// Deaths, cases, queries and weekday indicators.
    Full,
    /// Queries and weekday indicators only (first step of the state model).
    GtOnly,
    /// Deaths, cases and weekday indicators; never reads the query panel.
    ArOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArgoConfig {
    /// Training rows per fit.
    pub train_days: usize,
    /// Death lags 0..=death_lags.
    pub death_lags: usize,
    pub case_offsets: Vec<usize>,
    pub max_horizon_days: usize,
    /// Anchors averaged for coefficient smoothing (T, T−1, …).
    pub smoothing_days: usize,
    pub cv_grid: usize,
}

impl Default for ArgoConfig {
    fn default() -> Self {
        ArgoConfig {
            train_days: 56,
            death_lags: 6,
            case_offsets: vec![7, 14, 21, 28],
            max_horizon_days: 28,
            smoothing_days: 3,
            cv_grid: 100,
        }
    }
}

impl ArgoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_days < 28 {
            return Err(ArgoError::InvalidConfig("train_days must be at least 28".into()));
        }
        if self.max_horizon_days < 1 || self.smoothing_days < 1 || self.cv_grid < 1 {
            return Err(ArgoError::InvalidConfig(
                "horizon, smoothing window and grid size must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Selected queries (in lag-table order) and their optimal lags.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct QuerySpec {
    pub names: Vec<String>,
    pub lags: Vec<usize>,
}

impl QuerySpec {
    pub fn from_table(table: &LagTable) -> Self {
        let sel = table.selected();
        QuerySpec {
            names: sel.iter().map(|(n, _)| n.to_string()).collect(),
            lags: sel.iter().map(|(_, l)| *l).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }
}

/// Daily inputs for one geo, all indexed from `start`. `queries` follows the
/// `QuerySpec` order.
#[derive(Debug, Clone)]
pub struct GeoInputs<'a> {
    pub start: NaiveDate,
    pub deaths: &'a [f64],
    pub cases: &'a [f64],
    pub queries: Vec<&'a [f64]>,
}

impl GeoInputs<'_> {
    pub fn len(&self) -> usize {
        self.deaths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deaths.is_empty()
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let off = (date - self.start).num_days();
        (off >= 0 && (off as usize) < self.len()).then_some(off as usize)
    }

    pub fn date_at(&self, i: usize) -> NaiveDate {
        self.start + Duration::days(i as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Column {
    /// y_{t−i}
    Death(usize),
    /// c_{t+ℓ−j}
    Case(usize),
    /// X_{k, t+ℓ−Ô_k}
    Query(usize, usize),
    /// Indicator for weekday r (0 = Monday) of day t+ℓ.
    Weekday(usize),
}

/// Column layout for one (mode, horizon).
#[derive(Debug, Clone)]
pub struct DesignLayout {
    horizon: usize,
    columns: Vec<Column>,
    names: Arc<[String]>,
    /// Most negative offset (relative to t for training rows) any column reads.
    reach_back: usize,
}

const WEEKDAYS: [&str; 6] = ["mon", "tue", "wed", "thu", "fri", "sat"];

impl DesignLayout {
    pub fn new(cfg: &ArgoConfig, mode: FeatureMode, spec: &QuerySpec, horizon: usize) -> Self {
        let mut columns = Vec::new();
        if mode != FeatureMode::GtOnly {
            columns.extend((0..=cfg.death_lags).map(Column::Death));
            let mut offsets: Vec<usize> = cfg.case_offsets.iter().map(|j| (*j).max(horizon)).collect();
            offsets.sort_unstable();
            offsets.dedup();
            columns.extend(offsets.into_iter().map(Column::Case));
        }
        if mode != FeatureMode::ArOnly {
            columns.extend(
                spec.lags
                    .iter()
                    .enumerate()
                    .map(|(k, lag)| Column::Query(k, (*lag).max(horizon))),
            );
        }
        columns.extend((0..6).map(Column::Weekday));
        let names: Arc<[String]> = columns
            .iter()
            .map(|c| match c {
                Column::Death(i) => format!("death_lag_{i}"),
                Column::Case(j) => format!("case_lag_{j}"),
                Column::Query(k, o) => format!("query:{}@{o}", spec.names[*k]),
                Column::Weekday(r) => format!("weekday_{}", WEEKDAYS[*r]),
            })
            .collect();
        let reach_back = columns
            .iter()
            .map(|c| match c {
                Column::Death(i) => *i as i64,
                Column::Case(j) => *j as i64 - horizon as i64,
                Column::Query(_, o) => *o as i64 - horizon as i64,
                Column::Weekday(_) => 0,
            })
            .max()
            .unwrap_or(0)
            .max(0) as usize;
        DesignLayout {
            horizon,
            columns,
            names,
            reach_back,
        }
    }

    pub fn names(&self) -> &Arc<[String]> {
        &self.names
    }

    pub fn width(&self) -> usize {
        self.columns.len()
    }

    fn value(&self, inputs: &GeoInputs<'_>, c: Column, t: usize) -> f64 {
        let l = self.horizon;
        match c {
            Column::Death(i) => inputs.deaths[t - i],
            Column::Case(j) => inputs.cases[t + l - j],
            Column::Query(k, o) => inputs.queries[k][t + l - o],
            Column::Weekday(r) => f64::from(weekday_indicators(inputs.date_at(t + l))[r]),
        }
    }
}

/// Training design, targets, and the prediction row for anchor `t_anchor`.
#[derive(Debug, Clone)]
pub struct Design {
    pub x: DesignMatrix,
    pub y: Vec<f64>,
    pub predict_row: Vec<f64>,
}

/// Rows t = T−M−ℓ+1 ..= T−ℓ with target y_{t+ℓ}.
pub fn build_design(
    inputs: &GeoInputs<'_>,
    anchor: usize,
    layout: &DesignLayout,
    cfg: &ArgoConfig,
) -> Result<Design> {
    let l = layout.horizon;
    let m = cfg.train_days;
    let first = anchor as i64 - m as i64 - l as i64 + 1;
    let needed = first - layout.reach_back as i64;
    if needed < 0 || anchor >= inputs.len() {
        return Err(ArgoError::InsufficientHistory {
            anchor: inputs.date_at(anchor),
            horizon: l,
            needed,
        });
    }
    let first = first as usize;
    let p = layout.width();
    let mut data = Vec::with_capacity(m * p);
    // Weekday indicators for the m target days, one week of patterns reused.
    let week: Vec<[u8; 6]> = (0..7).map(|d| weekday_indicators(inputs.date_at(first + l + d))).collect();
    for &c in &layout.columns {
        match c {
            Column::Death(i) => data.extend_from_slice(&inputs.deaths[first - i..first - i + m]),
            Column::Case(j) => data.extend_from_slice(&inputs.cases[first + l - j..first + l - j + m]),
            Column::Query(k, o) => data.extend_from_slice(&inputs.queries[k][first + l - o..first + l - o + m]),
            Column::Weekday(r) => data.extend((0..m).map(|d| f64::from(week[d % 7][r]))),
        }
    }
    let y = (first..first + m).map(|t| inputs.deaths[t + l]).collect();
    let predict_row = layout
        .columns
        .iter()
        .map(|&c| layout.value(inputs, c, anchor))
        .collect();
    Ok(Design {
        x: DesignMatrix::from_columns(m, data, layout.names.clone())?,
        y,
        predict_row,
    })
}

/// Intercept plus coefficients on the original scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub intercept: f64,
    pub values: Vec<f64>,
}

impl Coefficients {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.intercept + self.values.iter().zip(row).map(|(b, x)| b * x).sum::<f64>()
    }

    /// Coordinatewise mean; absent coordinates are zero.
    pub fn average(items: &[Coefficients]) -> Coefficients {
        let k = items.len() as f64;
        let p = items.iter().map(|c| c.values.len()).max().unwrap_or(0);
        let mut values = vec![0.0; p];
        let mut intercept = 0.0;
        for c in items {
            intercept += c.intercept;
            for (v, b) in values.iter_mut().zip(&c.values) {
                *v += b;
            }
        }
        Coefficients {
            intercept: intercept / k,
            values: values.into_iter().map(|v| v / k).collect(),
        }
    }
}

/// One geo's model family: layouts for every daily horizon of one mode.
#[derive(Debug, Clone)]
pub struct ArgoModel {
    cfg: ArgoConfig,
    mode: FeatureMode,
    layouts: Vec<DesignLayout>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DayPrediction {
    pub prediction: f64,
    pub coefficients: Coefficients,
    /// Number of anchors that went into the smoothed coefficients.
    pub anchors_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DailyForecast {
    pub anchor: NaiveDate,
    /// ŷ_{T+1} .. ŷ_{T+H}
    pub values: Vec<f64>,
    /// Smoothed coefficients per daily horizon.
    pub coefficients: Vec<Coefficients>,
}

impl ArgoModel {
    pub fn new(cfg: &ArgoConfig, mode: FeatureMode, spec: &QuerySpec) -> Result<Self> {
        cfg.validate()?;
        let layouts = (1..=cfg.max_horizon_days)
            .map(|l| DesignLayout::new(cfg, mode, spec, l))
            .collect();
        Ok(ArgoModel {
            cfg: cfg.clone(),
            mode,
            layouts,
        })
    }

    pub fn mode(&self) -> FeatureMode {
        self.mode
    }

    pub fn layout(&self, horizon: usize) -> &DesignLayout {
        &self.layouts[horizon - 1]
    }

    /// Cross-validated LASSO fit at a single anchor.
    pub fn fit_anchor(&self, inputs: &GeoInputs<'_>, anchor: usize, horizon: usize) -> Result<Coefficients> {
        let design = build_design(inputs, anchor, self.layout(horizon), &self.cfg)?;
        let fit = solver::lasso_fit_cv(&design.x, &design.y, self.cfg.cv_grid)?;
        Ok(Coefficients {
            intercept: fit.intercept,
            values: fit.coefficients,
        })
    }

    /// Prediction for day T+ℓ with coefficients averaged over anchors
    /// T, T−1, …; earlier anchors lacking history are skipped.
    pub fn fit_and_predict_day(
        &self,
        inputs: &GeoInputs<'_>,
        anchor: usize,
        horizon: usize,
    ) -> Result<DayPrediction> {
        let layout = self.layout(horizon);
        let design = build_design(inputs, anchor, layout, &self.cfg)?;
        let fit = solver::lasso_fit_cv(&design.x, &design.y, self.cfg.cv_grid)?;
        let mut fits = vec![Coefficients {
            intercept: fit.intercept,
            values: fit.coefficients,
        }];
        for back in 1..self.cfg.smoothing_days {
            if anchor < back {
                break;
            }
            match self.fit_anchor(inputs, anchor - back, horizon) {
                Ok(c) => fits.push(c),
                Err(ArgoError::InsufficientHistory { .. }) => break,
                Err(e) => return Err(e),
            }
        }
        let coefficients = Coefficients::average(&fits);
        Ok(DayPrediction {
            prediction: coefficients.predict(&design.predict_row),
            coefficients,
            anchors_used: fits.len(),
        })
    }

    /// All daily horizons 1..=H from anchor index `anchor`.
    pub fn daily_forecast(&self, inputs: &GeoInputs<'_>, anchor: usize) -> Result<DailyForecast> {
        let mut values = Vec::with_capacity(self.cfg.max_horizon_days);
        let mut coefficients = Vec::with_capacity(self.cfg.max_horizon_days);
        for l in 1..=self.cfg.max_horizon_days {
            let d = self.fit_and_predict_day(inputs, anchor, l)?;
            values.push(d.prediction);
            coefficients.push(d.coefficients);
        }
        Ok(DailyForecast {
            anchor: inputs.date_at(anchor),
            values,
            coefficients,
        })
    }

    /// Earliest anchor index with enough history for every horizon.
    pub fn first_anchor(&self) -> usize {
        self.layouts
            .iter()
            .map(|l| self.cfg.train_days + l.horizon - 1 + l.reach_back)
            .max()
            .unwrap_or(0)
    }
}

/// Week h = sum of days 7(h−1)+1 ..= 7h. Requires at least 28 values.
pub fn weekly_aggregate(daily: &[f64]) -> [f64; 4] {
    assert!(daily.len() >= 28, "need 28 daily values, got {}", daily.len());
    let mut out = [0.0; 4];
    for (h, o) in out.iter_mut().enumerate() {
        *o = daily[7 * h..7 * h + 7].iter().sum();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn start() -> NaiveDate {
        NaiveDate::from_ymd_opt(2020, 3, 1).unwrap()
    }

    struct Owned {
        deaths: Vec<f64>,
        cases: Vec<f64>,
        queries: Vec<Vec<f64>>,
    }

    impl Owned {
        fn inputs(&self) -> GeoInputs<'_> {
            GeoInputs {
                start: start(),
                deaths: &self.deaths,
                cases: &self.cases,
                queries: self.queries.iter().map(|q| q.as_slice()).collect(),
            }
        }
    }

    fn spec(lags: &[usize]) -> QuerySpec {
        QuerySpec {
            names: (0..lags.len()).map(|k| format!("q{k}")).collect(),
            lags: lags.to_vec(),
        }
    }

    #[test]
    fn horizon_one_layout() {
        let cfg = ArgoConfig::default();
        let layout = DesignLayout::new(&cfg, FeatureMode::Full, &spec(&[10, 20]), 1);
        assert_eq!(layout.width(), 7 + 4 + 2 + 6);
        assert!(layout.names().contains(&"case_lag_7".to_string()));
        assert!(layout.names().contains(&"case_lag_28".to_string()));
    }

    #[test]
    fn long_horizon_collapses_case_offsets() {
        let cfg = ArgoConfig::default();
        let layout = DesignLayout::new(&cfg, FeatureMode::Full, &spec(&[]), 28);
        let cases: Vec<&String> = layout.names().iter().filter(|n| n.starts_with("case")).collect();
        assert_eq!(cases, vec!["case_lag_28"]);
        let layout = DesignLayout::new(&cfg, FeatureMode::Full, &spec(&[]), 10);
        let cases: Vec<&String> = layout.names().iter().filter(|n| n.starts_with("case")).collect();
        assert_eq!(cases, vec!["case_lag_10", "case_lag_14", "case_lag_21", "case_lag_28"]);
    }

    #[test]
    fn column_counts_by_mode() {
        let cfg = ArgoConfig::default();
        let s = spec(&[5, 9, 30]);
        assert_eq!(DesignLayout::new(&cfg, FeatureMode::Full, &s, 1).width(), 7 + 4 + 3 + 6);
        assert_eq!(DesignLayout::new(&cfg, FeatureMode::GtOnly, &s, 1).width(), 3 + 6);
        assert_eq!(DesignLayout::new(&cfg, FeatureMode::ArOnly, &s, 1).width(), 7 + 4 + 6);
    }

    fn ramp_owned(n: usize) -> Owned {
        Owned {
            deaths: (0..n).map(|i| i as f64).collect(),
            cases: (0..n).map(|i| 1000.0 + i as f64).collect(),
            queries: vec![(0..n).map(|i| 5000.0 + i as f64).collect()],
        }
    }

    #[test]
    fn design_rows_and_alignment() {
        let cfg = ArgoConfig::default();
        let owned = ramp_owned(200);
        let inputs = owned.inputs();
        // O_k = 5 < ℓ = 7, so the adjusted lag is 7 and the column reads X_{k,t}.
        let layout = DesignLayout::new(&cfg, FeatureMode::Full, &spec(&[5]), 7);
        let anchor = 150;
        let d = build_design(&inputs, anchor, &layout, &cfg).unwrap();
        assert_eq!(d.x.rows(), 56);
        let first_t = anchor - 56 - 7 + 1;
        let names = layout.names();
        let col = |name: &str| names.iter().position(|n| n == name).unwrap();
        assert_eq!(names[col("query:q0@7")], "query:q0@7");
        assert_eq!(d.x.get(0, col("query:q0@7")), 5000.0 + first_t as f64);
        assert_eq!(d.x.get(0, col("death_lag_3")), (first_t - 3) as f64);
        assert_eq!(d.x.get(0, col("case_lag_14")), 1000.0 + (first_t + 7 - 14) as f64);
        assert_eq!(d.y[0], (first_t + 7) as f64);
        assert_eq!(d.y[55], anchor as f64);
        assert_eq!(d.predict_row[col("death_lag_0")], anchor as f64);
        assert_eq!(d.predict_row[col("query:q0@7")], 5000.0 + anchor as f64);
    }

    #[test]
    fn design_is_deterministic() {
        let cfg = ArgoConfig::default();
        let owned = ramp_owned(200);
        let layout = DesignLayout::new(&cfg, FeatureMode::Full, &spec(&[12]), 3);
        let a = build_design(&owned.inputs(), 120, &layout, &cfg).unwrap();
        let b = build_design(&owned.inputs(), 120, &layout, &cfg).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn insufficient_history() {
        let cfg = ArgoConfig::default();
        let owned = ramp_owned(200);
        let layout = DesignLayout::new(&cfg, FeatureMode::Full, &spec(&[35]), 28);
        assert!(matches!(
            build_design(&owned.inputs(), 60, &layout, &cfg),
            Err(ArgoError::InsufficientHistory { .. })
        ));
        let model = ArgoModel::new(&cfg, FeatureMode::Full, &spec(&[35])).unwrap();
        let first = model.first_anchor();
        for l in 1..=28 {
            build_design(&owned.inputs(), first, model.layout(l), &cfg).unwrap();
        }
        assert!(build_design(&owned.inputs(), first - 1, model.layout(28), &cfg).is_err());
    }

    #[test]
    fn constant_inputs_predict_the_constant() {
        let cfg = ArgoConfig::default();
        let owned = Owned {
            deaths: vec![42.0; 200],
            cases: vec![900.0; 200],
            queries: vec![vec![7.0; 200]],
        };
        let model = ArgoModel::new(&cfg, FeatureMode::Full, &spec(&[10])).unwrap();
        for l in [1, 9, 28] {
            let d = model.fit_and_predict_day(&owned.inputs(), 150, l).unwrap();
            assert!((d.prediction - 42.0).abs() < 1e-6);
            assert_eq!(d.anchors_used, 3);
        }
    }

    #[test]
    fn smoothing_identical_vectors() {
        let c = Coefficients {
            intercept: 1.5,
            values: vec![0.25, -2.0, 0.0],
        };
        let avg = Coefficients::average(&[c.clone(), c.clone(), c.clone()]);
        assert_eq!(avg, c);
    }

    #[test]
    fn smoothing_is_mean_of_anchor_fits() {
        let cfg = ArgoConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let n = 200;
        let q: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let deaths: Vec<f64> = (0..n)
            .map(|t| if t >= 12 { 3.0 * q[t - 12] + rng.random_range(0.0..1.0) } else { 0.0 })
            .collect();
        let owned = Owned {
            deaths,
            cases: (0..n).map(|_| rng.random_range(0.0..10.0)).collect(),
            queries: vec![q],
        };
        let model = ArgoModel::new(&cfg, FeatureMode::Full, &spec(&[12])).unwrap();
        let inputs = owned.inputs();
        let day = model.fit_and_predict_day(&inputs, 150, 4).unwrap();
        let fits: Vec<Coefficients> = [150, 149, 148]
            .into_iter()
            .map(|a| model.fit_anchor(&inputs, a, 4).unwrap())
            .collect();
        let avg = Coefficients::average(&fits);
        assert_eq!(day.coefficients, avg);
    }

    #[test]
    fn ar_only_ignores_queries() {
        let cfg = ArgoConfig {
            max_horizon_days: 3,
            ..ArgoConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 160;
        let clean = Owned {
            deaths: (0..n).map(|t| 50.0 + (t as f64 / 9.0).sin() * 10.0 + rng.random_range(0.0..2.0)).collect(),
            cases: (0..n).map(|_| rng.random_range(100.0..200.0)).collect(),
            queries: vec![(0..n).map(|_| rng.random_range(0.0..5.0)).collect()],
        };
        let poisoned = Owned {
            deaths: clean.deaths.clone(),
            cases: clean.cases.clone(),
            queries: vec![vec![1e9; n]],
        };
        let model = ArgoModel::new(&cfg, FeatureMode::ArOnly, &spec(&[10])).unwrap();
        let a = model.daily_forecast(&clean.inputs(), 140).unwrap();
        let b = model.daily_forecast(&poisoned.inputs(), 140).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weekly_examples() {
        assert_eq!(weekly_aggregate(&[1.0; 28]), [7.0; 4]);
        let ramp: Vec<f64> = (1..=28).map(f64::from).collect();
        assert_eq!(weekly_aggregate(&ramp), [28.0, 77.0, 126.0, 175.0]);
        let mut neg = vec![1.0; 28];
        neg[3] = -5.0;
        assert_eq!(weekly_aggregate(&neg)[0], 1.0);
    }

    proptest! {
        #[test]
        fn weekly_is_linear(f in prop::collection::vec(-100.0f64..100.0, 28), g in prop::collection::vec(-100.0f64..100.0, 28), a in -3.0f64..3.0) {
            let combo: Vec<f64> = f.iter().zip(&g).map(|(x, y)| a * x + y).collect();
            let lhs = weekly_aggregate(&combo);
            let wf = weekly_aggregate(&f);
            let wg = weekly_aggregate(&g);
            for h in 0..4 {
                prop_assert!((lhs[h] - (a * wf[h] + wg[h])).abs() < 1e-9);
            }
        }
    }
}
