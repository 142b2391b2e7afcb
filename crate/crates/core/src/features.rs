//! Per-query optimal lead lag against daily deaths and correlation-threshold
//! selection of the query subset used by every downstream model.

use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use chrono::{Duration, NaiveDate};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoId;
use crate::ingest::{DailySeries, QueryPanel};
use crate::solver::{self, DesignMatrix, SolverError};
use crate::stats;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("series do not cover {window} with lags up to {max_lag} days")]
    InsufficientHistory { window: DateWindow, max_lag: usize },
    #[error("selection window {0} must span more than two days")]
    WindowTooShort(DateWindow),
    #[error("lag range {0}..={1} is empty")]
    EmptyLagRange(usize, usize),
    #[error("no national series in the query panel")]
    NoNationalSeries,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error("lag table csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("lag table io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, FeatureError>;

/// Inclusive date range.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl DateWindow {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Self {
        DateWindow { start, end }
    }

    pub fn days(&self) -> usize {
        ((self.end - self.start).num_days() + 1).max(0) as usize
    }
}

impl std::fmt::Display for DateWindow {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Inclusive range of candidate lags in days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LagRange {
    pub min: usize,
    pub max: usize,
}

impl Default for LagRange {
    fn default() -> Self {
        LagRange { min: 4, max: 35 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagFit {
    pub lag: usize,
    pub mse: f64,
    /// The query was constant over the window at the chosen lag.
    pub degenerate: bool,
}

/// Aligned (deaths, lagged query) over `window`.
fn aligned(
    deaths: &DailySeries,
    query: &DailySeries,
    window: DateWindow,
    lag: usize,
) -> Option<(Vec<f64>, Vec<f64>)> {
    let y0 = deaths.index_of(window.start)?;
    deaths.index_of(window.end)?;
    let shift = Duration::days(lag as i64);
    let x0 = query.index_of(window.start - shift)?;
    query.index_of(window.end - shift)?;
    let n = window.days();
    Some((
        deaths.values[y0..y0 + n].to_vec(),
        query.values[x0..x0 + n].to_vec(),
    ))
}

/// Lag in `range` whose simple regression `y_t = a + b·x_{t−L}` over the
/// window has the lowest in-sample MSE; ties go to the smaller lag.
pub fn optimal_lag(
    deaths: &DailySeries,
    query: &DailySeries,
    window: DateWindow,
    range: LagRange,
) -> Result<LagFit> {
    if range.min > range.max {
        return Err(FeatureError::EmptyLagRange(range.min, range.max));
    }
    if window.days() <= 2 {
        return Err(FeatureError::WindowTooShort(window));
    }
    let names: Arc<[String]> = Arc::from(vec!["query".to_string()]);
    let mut best: Option<LagFit> = None;
    for lag in range.min..=range.max {
        let (y, x) = aligned(deaths, query, window, lag).ok_or(FeatureError::InsufficientHistory {
            window,
            max_lag: range.max,
        })?;
        let design = DesignMatrix::from_columns(y.len(), x, names.clone())?;
        let fit = match solver::ols_fit(&design, &y) {
            Ok(f) => {
                let fitted = design.predict(f.intercept, &f.coefficients);
                let mse = y
                    .iter()
                    .zip(&fitted)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / y.len() as f64;
                LagFit {
                    lag,
                    mse,
                    degenerate: false,
                }
            }
            Err(SolverError::SingularDesign) => LagFit {
                lag,
                mse: stats::pop_variance(&y),
                degenerate: true,
            },
            Err(e) => return Err(e.into()),
        };
        if best.is_none_or(|b| fit.mse < b.mse) {
            best = Some(fit);
        }
    }
    Ok(best.expect("nonempty lag range"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LagEntry {
    pub query: String,
    pub optimal_lag: usize,
    pub pearson_r: f64,
    pub selected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LagTable {
    /// Sorted by descending correlation, then name.
    pub entries: Vec<LagEntry>,
    pub window: Option<DateWindow>,
    pub lag_range: LagRange,
    pub threshold: f64,
}

impl LagTable {
    /// Selected queries with their lags, in table order.
    pub fn selected(&self) -> Vec<(&str, usize)> {
        self.entries
            .iter()
            .filter(|e| e.selected)
            .map(|e| (e.query.as_str(), e.optimal_lag))
            .collect()
    }

    pub fn get(&self, query: &str) -> Option<&LagEntry> {
        self.entries.iter().find(|e| e.query == query)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for e in &self.entries {
            w.serialize(e)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save<P: AsRef<Path>>(&self, path: P) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }

    /// Reads a `query,optimal_lag,pearson_r,selected` table. Window and
    /// threshold are not stored in the file.
    pub fn load<P: AsRef<Path>>(path: P) -> Result<LagTable> {
        let mut rdr = csv::Reader::from_path(path)?;
        let entries = rdr.deserialize().collect::<std::result::Result<Vec<LagEntry>, _>>()?;
        Ok(LagTable {
            entries,
            window: None,
            lag_range: LagRange::default(),
            threshold: f64::NAN,
        })
    }
}

/// Scores every query present at the national level: optimal lag, then the
/// Pearson correlation between deaths and the lagged query over the window.
/// A query is selected when its correlation exceeds `threshold`.
pub fn score_and_select(
    deaths: &DailySeries,
    panel: &QueryPanel,
    window: DateWindow,
    range: LagRange,
    threshold: f64,
) -> Result<LagTable> {
    let nation = GeoId::nation();
    if !panel.series.contains_key(&nation) {
        return Err(FeatureError::NoNationalSeries);
    }
    let candidates: Vec<(usize, DailySeries)> = (0..panel.queries.len())
        .filter_map(|q| panel.daily(&nation, q).map(|s| (q, s)))
        .collect();
    let mut entries = candidates
        .par_iter()
        .map(|(q, series)| {
            let fit = optimal_lag(deaths, series, window, range)?;
            let (y, x) = aligned(deaths, series, window, fit.lag).expect("checked by optimal_lag");
            let r = stats::pearson(&y, &x).unwrap_or(0.0);
            Ok(LagEntry {
                query: panel.queries[*q].clone(),
                optimal_lag: fit.lag,
                pearson_r: r,
                selected: r > threshold,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    entries.sort_by(|a, b| {
        b.pearson_r
            .total_cmp(&a.pearson_r)
            .then_with(|| a.query.cmp(&b.query))
    });
    Ok(LagTable {
        entries,
        window: Some(window),
        lag_range: range,
        threshold,
    })
}
