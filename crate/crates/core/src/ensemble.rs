//! Winner-takes-all ensemble, residual intervals, scoring and reports.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::geo::{self, GeoId};
use crate::ingest::SurveillancePanel;
use crate::stats;

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("no forecast could be aligned with truth")]
    EmptyEvaluation,
    #[error("{path}: line {line}: {msg}")]
    InvalidForecast { path: String, line: u64, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
}

pub type Result<T> = std::result::Result<T, EnsembleError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodId {
    #[serde(rename = "ARGO")]
    Argo,
    #[serde(rename = "ARGOX_2STEP")]
    Argox2Step,
    #[serde(rename = "ARGOX_NATCONSTRAINT")]
    ArgoxNatConstraint,
    #[serde(rename = "NAIVE")]
    Naive,
    #[serde(rename = "ENSEMBLE")]
    Ensemble,
}

/// Selection domain in tie-break priority order.
pub const CONSTITUENTS: [MethodId; 3] = [MethodId::Argo, MethodId::Argox2Step, MethodId::ArgoxNatConstraint];

impl MethodId {
    pub const ALL: [MethodId; 5] = [
        MethodId::Argo,
        MethodId::Argox2Step,
        MethodId::ArgoxNatConstraint,
        MethodId::Naive,
        MethodId::Ensemble,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MethodId::Argo => "ARGO",
            MethodId::Argox2Step => "ARGOX_2STEP",
            MethodId::ArgoxNatConstraint => "ARGOX_NATCONSTRAINT",
            MethodId::Naive => "NAIVE",
            MethodId::Ensemble => "ENSEMBLE",
        }
    }
}

impl fmt::Display for MethodId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MethodId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        MethodId::ALL
            .iter()
            .find(|m| m.name() == s)
            .copied()
            .ok_or_else(|| format!("unknown method {s:?}"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastRecord {
    pub geo: GeoId,
    pub method: MethodId,
    /// Saturday ending the latest observed week.
    pub forecast_date: NaiveDate,
    pub horizon: usize,
    pub point: f64,
    pub lo95: Option<f64>,
    pub hi95: Option<f64>,
    /// Ensemble records only.
    pub selected_method: Option<MethodId>,
    /// Ensemble fell back to ARGO for lack of history.
    pub fallback: bool,
}

impl ForecastRecord {
    pub fn new(geo: GeoId, method: MethodId, forecast_date: NaiveDate, horizon: usize, point: f64) -> Self {
        ForecastRecord {
            geo,
            method,
            forecast_date,
            horizon,
            point,
            lo95: None,
            hi95: None,
            selected_method: None,
            fallback: false,
        }
    }

    pub fn target_week_end(&self) -> NaiveDate {
        self.forecast_date + Duration::days(7 * self.horizon as i64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    /// Trailing weeks of realized errors used for selection.
    pub window: usize,
    /// One selection per (state, week) from MSE summed over horizons.
    pub pooled: bool,
    pub interval_window: usize,
    pub interval_min: usize,
    pub interval: IntervalKind,
    /// Multiplier for `IntervalKind::Normal`.
    pub interval_z: f64,
}

/// How a 95% interval is built from k trailing residuals with sample std s.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalKind {
    /// point ± z·s.
    Normal,
    /// Gaussian prediction interval for a fresh residual:
    /// point ± t_{k−1, 0.975}·s·sqrt(1 + 1/k).
    Predictive,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        EnsembleConfig {
            window: 15,
            pooled: false,
            interval_window: 15,
            interval_min: 8,
            interval: IntervalKind::Predictive,
            interval_z: 1.96,
        }
    }
}

/// Argmin of the MSEs in `CONSTITUENTS` order; ties keep the earlier method.
pub fn select_winner(mses: &[f64; 3]) -> MethodId {
    let mut best = 0;
    for k in 1..3 {
        if mses[k] < mses[best] {
            best = k;
        }
    }
    CONSTITUENTS[best]
}

/// Interval from the trailing `interval_window` residuals (see
/// `IntervalKind`); `None` with fewer than `interval_min` residuals.
pub fn build_interval(point: f64, residuals: &[f64], cfg: &EnsembleConfig) -> Option<(f64, f64)> {
    if residuals.len() < cfg.interval_min.max(2) {
        return None;
    }
    let recent = &residuals[residuals.len().saturating_sub(cfg.interval_window)..];
    let sd = stats::sample_std(recent)?;
    let half = match cfg.interval {
        IntervalKind::Normal => cfg.interval_z * sd,
        IntervalKind::Predictive => {
            let k = recent.len() as f64;
            let t = StudentsT::new(0.0, 1.0, k - 1.0).ok()?.inverse_cdf(0.975);
            t * sd * (1.0 + 1.0 / k).sqrt()
        }
    };
    Some((point - half, point + half))
}

/// Weekly totals keyed by (geo, week-ending Saturday).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeeklyValues {
    pub values: BTreeMap<(GeoId, NaiveDate), f64>,
}

impl WeeklyValues {
    /// Every fully observed week of every geo in the panel.
    pub fn from_panel(panel: &SurveillancePanel) -> Self {
        let mut values = BTreeMap::new();
        let mut week = geo::week_of(panel.start);
        if week.week_start() < panel.start {
            week = week.offset(1);
        }
        while week.week_end <= panel.end() {
            for g in panel.geos() {
                if let Some(v) = panel.weekly_deaths(g, week) {
                    values.insert((g.clone(), week.week_end), v);
                }
            }
            week = week.offset(1);
        }
        WeeklyValues { values }
    }

    pub fn get(&self, geo: &GeoId, week_end: NaiveDate) -> Option<f64> {
        self.values.get(&(geo.clone(), week_end)).copied()
    }
}

type SeriesKey = (GeoId, MethodId, usize);

/// Realized errors (realized − point) per (geo, method, horizon), ordered
/// by target week.
fn realized_errors(records: &[ForecastRecord], realized: &WeeklyValues) -> BTreeMap<SeriesKey, Vec<(NaiveDate, f64)>> {
    let mut out: BTreeMap<SeriesKey, Vec<(NaiveDate, f64)>> = BTreeMap::new();
    for r in records {
        if let Some(y) = realized.get(&r.geo, r.target_week_end()) {
            out.entry((r.geo.clone(), r.method, r.horizon))
                .or_default()
                .push((r.target_week_end(), y - r.point));
        }
    }
    for v in out.values_mut() {
        v.sort_by_key(|(d, _)| *d);
    }
    out
}

/// Errors whose target week is observed by `as_of`.
fn known_by(errors: Option<&Vec<(NaiveDate, f64)>>, as_of: NaiveDate) -> &[(NaiveDate, f64)] {
    match errors {
        Some(v) => {
            let end = v.partition_point(|(d, _)| *d <= as_of);
            &v[..end]
        }
        None => &[],
    }
}

fn trailing_mse(errs: &[(NaiveDate, f64)], window: usize) -> Option<f64> {
    if errs.len() < window {
        return None;
    }
    let recent = &errs[errs.len() - window..];
    Some(recent.iter().map(|(_, e)| e * e).sum::<f64>() / window as f64)
}

/// Attaches 95% intervals to every record from its own method's residuals
/// known at the forecast date.
pub fn attach_intervals(records: &mut [ForecastRecord], realized: &WeeklyValues, cfg: &EnsembleConfig) {
    let errors = realized_errors(records, realized);
    for r in records.iter_mut() {
        let known = known_by(errors.get(&(r.geo.clone(), r.method, r.horizon)), r.forecast_date);
        let res: Vec<f64> = known.iter().map(|(_, e)| *e).collect();
        if let Some((lo, hi)) = build_interval(r.point, &res, cfg) {
            r.lo95 = Some(lo);
            r.hi95 = Some(hi);
        } else {
            r.lo95 = None;
            r.hi95 = None;
        }
    }
}

/// Ensemble records for every (geo, forecast date, horizon) where all three
/// constituents are present. Selection uses errors against `realized` (the
/// input feed) for target weeks ending on or before the forecast date. The
/// ensemble copies the winner's point and interval.
pub fn build_ensemble(records: &[ForecastRecord], realized: &WeeklyValues, cfg: &EnsembleConfig) -> Vec<ForecastRecord> {
    let errors = realized_errors(records, realized);
    let mut by_slot: BTreeMap<(GeoId, NaiveDate, usize), [Option<&ForecastRecord>; 3]> = BTreeMap::new();
    for r in records {
        if let Some(k) = CONSTITUENTS.iter().position(|m| *m == r.method) {
            by_slot.entry((r.geo.clone(), r.forecast_date, r.horizon)).or_default()[k] = Some(r);
        }
    }
    let mse = |geo: &GeoId, method: MethodId, horizon: usize, as_of: NaiveDate| {
        trailing_mse(known_by(errors.get(&(geo.clone(), method, horizon)), as_of), cfg.window)
    };
    let mut out = Vec::new();
    for ((geo, date, horizon), slot) in &by_slot {
        let [Some(_), Some(_), Some(_)] = slot else {
            continue;
        };
        let horizons: Vec<usize> = if cfg.pooled {
            (1..=4).collect()
        } else {
            vec![*horizon]
        };
        let mut scores = [0.0; 3];
        let mut complete = true;
        for (k, m) in CONSTITUENTS.iter().enumerate() {
            for h in &horizons {
                match mse(geo, *m, *h, *date) {
                    Some(v) => scores[k] += v,
                    None => complete = false,
                }
            }
        }
        let (winner, fallback) = if complete {
            (select_winner(&scores), false)
        } else {
            (MethodId::Argo, true)
        };
        let src = slot[CONSTITUENTS.iter().position(|m| *m == winner).unwrap()].unwrap();
        out.push(ForecastRecord {
            geo: geo.clone(),
            method: MethodId::Ensemble,
            forecast_date: *date,
            horizon: *horizon,
            point: src.point,
            lo95: src.lo95,
            hi95: src.hi95,
            selected_method: Some(winner),
            fallback,
        });
    }
    out
}

/// One scorable prediction, from our records or a third-party CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub geo: GeoId,
    pub method: String,
    pub horizon: usize,
    pub target_week_end: NaiveDate,
    pub point: f64,
    pub lo95: Option<f64>,
    pub hi95: Option<f64>,
    pub selected_method: Option<String>,
}

impl From<&ForecastRecord> for Prediction {
    fn from(r: &ForecastRecord) -> Self {
        Prediction {
            geo: r.geo.clone(),
            method: r.method.name().to_string(),
            horizon: r.horizon,
            target_week_end: r.target_week_end(),
            point: r.point,
            lo95: r.lo95,
            hi95: r.hi95,
            selected_method: r.selected_method.map(|m| m.name().to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub rmse: f64,
    pub mae: f64,
    pub pearson_r: Option<f64>,
    pub n: usize,
}

pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.is_empty() || pred.len() != truth.len() {
        return Err(EnsembleError::EmptyEvaluation);
    }
    let n = pred.len() as f64;
    let sq: f64 = pred.iter().zip(truth).map(|(p, y)| (p - y) * (p - y)).sum();
    let ab: f64 = pred.iter().zip(truth).map(|(p, y)| (p - y).abs()).sum();
    Ok(Metrics {
        rmse: (sq / n).sqrt(),
        mae: ab / n,
        pearson_r: stats::pearson(pred, truth),
        n: pred.len(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub geo: String,
    pub method: String,
    pub horizon_weeks: usize,
    pub rmse: f64,
    pub mae: f64,
    pub pearson_r: Option<f64>,
    pub n_weeks: usize,
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub horizon_weeks: usize,
    pub rmse: f64,
    pub mae: f64,
    pub pearson_r: Option<f64>,
    pub n_geos: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub method: String,
    pub horizon_weeks: usize,
    pub covered: usize,
    pub total: usize,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreTable {
    pub rows: Vec<ScoreRow>,
    pub coverage: Vec<CoverageRow>,
}

/// Inclusive range of target-week ends to score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalWindow {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl EvalWindow {
    pub fn contains(&self, d: NaiveDate) -> bool {
        self.start <= d && d <= self.end
    }
}

/// Evaluation windows keyed by horizon. Horizons without a window are not
/// scored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalWindows(pub BTreeMap<usize, EvalWindow>);

impl EvalWindows {
    /// The same window at horizons 1..=4.
    pub fn uniform(w: EvalWindow) -> Self {
        EvalWindows((1..=4).map(|h| (h, w)).collect())
    }

    pub fn contains(&self, horizon: usize, d: NaiveDate) -> bool {
        self.0.get(&horizon).is_some_and(|w| w.contains(d))
    }
}

/// Scores predictions against `truth` (the truth feed) per (geo, method,
/// horizon). Predictions whose target week has no truth are counted in
/// `dropped`.
pub fn score(predictions: &[Prediction], truth: &WeeklyValues, window: Option<&EvalWindows>) -> Result<ScoreTable> {
    let mut groups: BTreeMap<(String, String, usize), (Vec<f64>, Vec<f64>, usize)> = BTreeMap::new();
    let mut cover: BTreeMap<(String, usize), (usize, usize)> = BTreeMap::new();
    for p in predictions {
        if let Some(w) = window {
            if !w.contains(p.horizon, p.target_week_end) {
                continue;
            }
        }
        let g = groups
            .entry((p.geo.to_string(), p.method.clone(), p.horizon))
            .or_default();
        match truth.get(&p.geo, p.target_week_end) {
            Some(y) => {
                g.0.push(p.point);
                g.1.push(y);
                if let (Some(lo), Some(hi)) = (p.lo95, p.hi95) {
                    let c = cover.entry((p.method.clone(), p.horizon)).or_default();
                    c.1 += 1;
                    if lo <= y && y <= hi {
                        c.0 += 1;
                    }
                }
            }
            None => g.2 += 1,
        }
    }
    let mut rows = Vec::new();
    for ((geo, method, horizon), (pred, obs, dropped)) in groups {
        if pred.is_empty() {
            continue;
        }
        let m = metrics(&pred, &obs)?;
        rows.push(ScoreRow {
            geo,
            method,
            horizon_weeks: horizon,
            rmse: m.rmse,
            mae: m.mae,
            pearson_r: m.pearson_r,
            n_weeks: m.n,
            dropped,
        });
    }
    if rows.is_empty() {
        return Err(EnsembleError::EmptyEvaluation);
    }
    let coverage = cover
        .into_iter()
        .map(|((method, horizon), (covered, total))| CoverageRow {
            method,
            horizon_weeks: horizon,
            covered,
            total,
            coverage: (total > 0).then(|| covered as f64 / total as f64),
        })
        .collect();
    Ok(ScoreTable { rows, coverage })
}

impl ScoreTable {
    /// Mean over geos per (method, horizon), restricted to `geo_filter`.
    pub fn summary(&self, geo_filter: impl Fn(&str) -> bool) -> Vec<SummaryRow> {
        let mut acc: BTreeMap<(String, usize), (f64, f64, f64, usize, usize)> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| geo_filter(&r.geo)) {
            let e = acc.entry((r.method.clone(), r.horizon_weeks)).or_default();
            e.0 += r.rmse;
            e.1 += r.mae;
            if let Some(p) = r.pearson_r {
                e.2 += p;
                e.4 += 1;
            }
            e.3 += 1;
        }
        acc.into_iter()
            .map(|((method, h), (rmse, mae, r, n, nr))| SummaryRow {
                method,
                horizon_weeks: h,
                rmse: rmse / n as f64,
                mae: mae / n as f64,
                pearson_r: (nr > 0).then(|| r / nr as f64),
                n_geos: n,
            })
            .collect()
    }

    pub fn get(&self, geo: &str, method: &str, horizon: usize) -> Option<&ScoreRow> {
        self.rows
            .iter()
            .find(|r| r.geo == geo && r.method == method && r.horizon_weeks == horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionRow {
    pub horizon_weeks: usize,
    pub method: String,
    pub selected: usize,
    pub share: f64,
}

/// Share of ensemble predictions choosing each constituent, per horizon.
pub fn selection_shares(predictions: &[Prediction]) -> Vec<SelectionRow> {
    let ensemble: Vec<&Prediction> = predictions
        .iter()
        .filter(|p| p.method == MethodId::Ensemble.name())
        .collect();
    let mut horizons: Vec<usize> = ensemble.iter().map(|p| p.horizon).collect();
    horizons.sort_unstable();
    horizons.dedup();
    let mut out = Vec::new();
    for h in horizons {
        let rows: Vec<&&Prediction> = ensemble.iter().filter(|p| p.horizon == h).collect();
        for m in CONSTITUENTS {
            let picked = rows
                .iter()
                .filter(|p| p.selected_method.as_deref() == Some(m.name()))
                .count();
            out.push(SelectionRow {
                horizon_weeks: h,
                method: m.name().to_string(),
                selected: picked,
                share: picked as f64 / rows.len() as f64,
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ForecastRow {
    forecast_date: NaiveDate,
    target_week_end: NaiveDate,
    horizon_weeks: usize,
    geo: String,
    method: String,
    point: f64,
    lo95: Option<f64>,
    hi95: Option<f64>,
    selected_method: Option<String>,
}

/// Deterministic report order: date, horizon, geo, method.
pub fn sort_records(records: &mut [ForecastRecord]) {
    records.sort_by(|a, b| {
        (a.forecast_date, a.horizon, &a.geo, a.method).cmp(&(b.forecast_date, b.horizon, &b.geo, b.method))
    });
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| EnsembleError::Csv {
        path: path.display().to_string(),
        source: e,
    })
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let err = |e: csv::Error| EnsembleError::Csv {
        path: path.display().to_string(),
        source: e,
    };
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r).map_err(err)?;
    }
    w.flush().map_err(|e| EnsembleError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

pub fn write_forecasts(path: &Path, records: &[ForecastRecord]) -> Result<()> {
    let rows: Vec<ForecastRow> = records
        .iter()
        .map(|r| ForecastRow {
            forecast_date: r.forecast_date,
            target_week_end: r.target_week_end(),
            horizon_weeks: r.horizon,
            geo: r.geo.to_string(),
            method: r.method.name().to_string(),
            point: r.point,
            lo95: r.lo95,
            hi95: r.hi95,
            selected_method: r.selected_method.map(|m| m.name().to_string()),
        })
        .collect();
    write_rows(path, &rows)
}

/// Reads a `forecasts.csv`-schema file. Method names are free-form so
/// third-party submissions can be scored; the target week must equal the
/// forecast date plus seven days per horizon week.
pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>> {
    let p = path.display().to_string();
    let mut rdr = csv::Reader::from_path(path).map_err(|e| EnsembleError::Csv {
        path: p.clone(),
        source: e,
    })?;
    let mut out = Vec::new();
    for (k, row) in rdr.deserialize::<ForecastRow>().enumerate() {
        let line = k as u64 + 2;
        let invalid = |msg: String| EnsembleError::InvalidForecast {
            path: p.clone(),
            line,
            msg,
        };
        let row = row.map_err(|e| invalid(e.to_string()))?;
        let geo = GeoId::parse(&row.geo).map_err(|e| invalid(e.to_string()))?;
        if !(1..=4).contains(&row.horizon_weeks) {
            return Err(invalid(format!("horizon {} outside 1..=4", row.horizon_weeks)));
        }
        if row.target_week_end != row.forecast_date + Duration::days(7 * row.horizon_weeks as i64) {
            return Err(invalid("target_week_end does not match forecast_date + 7·horizon".into()));
        }
        out.push(Prediction {
            geo,
            method: row.method,
            horizon: row.horizon_weeks,
            target_week_end: row.target_week_end,
            point: row.point,
            lo95: row.lo95,
            hi95: row.hi95,
            selected_method: row.selected_method,
        });
    }
    Ok(out)
}

/// Writes scores_by_state.csv, scores_summary.csv and coverage.csv.
/// The summary averages over states only.
pub fn write_scores(dir: &Path, table: &ScoreTable) -> Result<()> {
    write_rows(&dir.join("scores_by_state.csv"), &table.rows)?;
    let states: Vec<String> = geo::all_states().iter().map(|g| g.to_string()).collect();
    let summary = table.summary(|g| states.iter().any(|s| s == g));
    write_rows(&dir.join("scores_summary.csv"), &summary)?;
    write_rows(&dir.join("coverage.csv"), &table.coverage)
}

/// Scores, coverage and ensemble selection shares for `predictions`.
pub fn write_evaluation(
    dir: &Path,
    predictions: &[Prediction],
    truth: &WeeklyValues,
    window: Option<&EvalWindows>,
) -> Result<ScoreTable> {
    let table = score(predictions, truth, window)?;
    fs::create_dir_all(dir).map_err(|e| EnsembleError::Io {
        path: dir.display().to_string(),
        source: e,
    })?;
    write_scores(dir, &table)?;
    let in_window: Vec<Prediction> = predictions
        .iter()
        .filter(|p| window.is_none_or(|w| w.contains(p.horizon, p.target_week_end)))
        .cloned()
        .collect();
    write_rows(&dir.join("ensemble_selection.csv"), &selection_shares(&in_window))?;
    Ok(table)
}

/// All five report files. Nothing is written if scoring finds no aligned
/// pairs.
pub fn emit_reports(
    dir: &Path,
    records: &[ForecastRecord],
    truth: &WeeklyValues,
    window: Option<&EvalWindows>,
) -> Result<ScoreTable> {
    if records.is_empty() {
        return Err(EnsembleError::EmptyEvaluation);
    }
    let preds: Vec<Prediction> = records.iter().map(Prediction::from).collect();
    score(&preds, truth, window)?;
    let table = write_evaluation(dir, &preds, truth, window)?;
    write_forecasts(&dir.join("forecasts.csv"), records)?;
    Ok(table)
}

/// Per-horizon windows on which every method present has forecasts: at
/// horizon h, from the latest first target week of any method to the last
/// one-week-ahead target.
pub fn common_windows(predictions: &[Prediction]) -> EvalWindows {
    let mut first: BTreeMap<(usize, &str), NaiveDate> = BTreeMap::new();
    let mut end: Option<NaiveDate> = None;
    for p in predictions {
        let e = first.entry((p.horizon, p.method.as_str())).or_insert(p.target_week_end);
        *e = (*e).min(p.target_week_end);
        if p.horizon == 1 {
            end = Some(end.map_or(p.target_week_end, |d| d.max(p.target_week_end)));
        }
    }
    let mut out = EvalWindows::default();
    let Some(end) = end else {
        return out;
    };
    for ((h, _), d) in first {
        let w = out.0.entry(h).or_insert(EvalWindow { start: d, end });
        w.start = w.start.max(d);
    }
    out.0.retain(|_, w| w.start <= w.end);
    out
}
