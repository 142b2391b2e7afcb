//! Backtest orchestration: configuration, stage execution, the on-disk cache
//! of preprocessed query panels, and report emission.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::argo::{self, ArgoConfig, ArgoError, ArgoModel, DailyForecast, FeatureMode, GeoInputs, QuerySpec};
use crate::argox::{
    self, ArgoxError, SecondStepInput, Shrinkage, StateGrouping, WeeklyEstimateBundle, DEFAULT_ALONE,
    DEFAULT_EXCLUDED,
};
use crate::ensemble::{
    self, EnsembleConfig, EnsembleError, EvalWindow, EvalWindows, ForecastRecord, MethodId, Prediction, ScoreTable,
    WeeklyValues,
};
use crate::features::{self, DateWindow, FeatureError, LagRange, LagTable};
use crate::geo::{self, GeoError, GeoId, RegionMap};
use crate::ingest::{self, IngestError, QueryPanel, SourceTag, SurveillancePanel};
use crate::preprocess::{self, IqrConfig, PreprocessError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input file not found: {0}")]
    MissingInput(String),
    #[error("config: {0}")]
    Config(String),
    #[error("ingest: {0}")]
    Ingest(#[from] IngestError),
    #[error("ingest: region table: {0}")]
    Regions(#[from] GeoError),
    #[error("preprocess: {0}")]
    Preprocess(#[from] PreprocessError),
    #[error("select-features: {0}")]
    Features(#[from] FeatureError),
    #[error("argo: {geo} at {date}: {source}")]
    Argo {
        geo: String,
        date: NaiveDate,
        source: ArgoError,
    },
    #[error("argox: week ending {date}, horizon {horizon}: {source}")]
    Argox {
        date: NaiveDate,
        horizon: usize,
        source: ArgoxError,
    },
    #[error("argox: grouping: {0}")]
    Grouping(ArgoxError),
    #[error("evaluate: {0}")]
    Evaluate(#[from] EnsembleError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl PipelineError {
    /// Process exit status: 2 for a missing input file, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::MissingInput(_) => 2,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, PipelineError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |e| PipelineError::Io {
        path: path.display().to_string(),
        source: e,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub input_states: PathBuf,
    pub input_nation: Option<PathBuf>,
    pub truth_states: PathBuf,
    pub truth_nation: Option<PathBuf>,
    pub queries: PathBuf,
    /// `state,region` override of the HHS table.
    pub regions: Option<PathBuf>,
    pub out_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            input_states: "input_states.csv".into(),
            input_nation: None,
            truth_states: "truth_states.csv".into(),
            truth_nation: None,
            queries: "queries.csv".into(),
            regions: None,
            out_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureSettings {
    pub window: DateWindow,
    pub lag_range: LagRange,
    pub threshold: f64,
}

impl Default for FeatureSettings {
    fn default() -> Self {
        FeatureSettings {
            window: DateWindow::new(
                NaiveDate::from_ymd_opt(2020, 4, 1).unwrap(),
                NaiveDate::from_ymd_opt(2020, 6, 30).unwrap(),
            ),
            lag_range: LagRange::default(),
            threshold: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ArgoxSettings {
    pub alone_states: Vec<String>,
    pub excluded_from_constraint: Vec<String>,
    /// Weeks of (increment, predictor) pairs behind each covariance.
    pub cov_window: usize,
    pub shrinkage: Shrinkage,
    /// Replace `alone_states` by AK, HI and the lowest multiple-correlation
    /// states, computed on input-feed weeks up to the first forecast date.
    pub auto_alone: bool,
    pub auto_alone_count: usize,
}

impl Default for ArgoxSettings {
    fn default() -> Self {
        ArgoxSettings {
            alone_states: DEFAULT_ALONE.iter().map(|s| s.to_string()).collect(),
            excluded_from_constraint: DEFAULT_EXCLUDED.iter().map(|s| s.to_string()).collect(),
            cov_window: 30,
            shrinkage: Shrinkage::default(),
            auto_alone: false,
            auto_alone_count: 4,
        }
    }
}

/// Forecast Saturdays and the scored range of target weeks. Unset bounds
/// are derived from the data.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestSettings {
    pub first_forecast: Option<NaiveDate>,
    pub last_forecast: Option<NaiveDate>,
    pub eval_start: Option<NaiveDate>,
    pub eval_end: Option<NaiveDate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub features: FeatureSettings,
    pub argo: ArgoConfig,
    pub preprocess: IqrConfig,
    pub argox: ArgoxSettings,
    pub ensemble: EnsembleConfig,
    pub backtest: BacktestSettings,
    /// Worker threads; 0 uses every core.
    pub jobs: usize,
    pub clamp_nonneg: bool,
    /// Recorded in run metadata; the backtest itself draws no random numbers.
    pub seed: u64,
    /// Geos whose full-model coefficients go to coefficients.csv.
    pub trace_geos: Vec<String>,
    pub cache: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            paths: Paths::default(),
            features: FeatureSettings::default(),
            argo: ArgoConfig::default(),
            preprocess: IqrConfig::default(),
            argox: ArgoxSettings::default(),
            ensemble: EnsembleConfig::default(),
            backtest: BacktestSettings::default(),
            jobs: 0,
            clamp_nonneg: false,
            seed: 0,
            trace_geos: vec![geo::NATION_CODE.to_string()],
            cache: true,
        }
    }
}

impl PipelineConfig {
    /// Reads a JSON config; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(PipelineError::MissingInput(path.display().to_string()));
        }
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg: PipelineConfig =
            serde_json::from_str(&text).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        cfg.paths.rebase(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(PipelineError::Config(m));
        self.argo
            .validate()
            .map_err(|e| PipelineError::Config(e.to_string()))?;
        self.preprocess.validate()?;
        let f = &self.features;
        if f.window.start > f.window.end {
            return bad(format!("selection window {} is reversed", f.window));
        }
        if f.lag_range.min > f.lag_range.max {
            return bad("lag range is empty".into());
        }
        if !(-1.0..1.0).contains(&f.threshold) {
            return bad("threshold must lie in [-1, 1)".into());
        }
        let b = &self.backtest;
        for (a, z, what) in [
            (b.first_forecast, b.last_forecast, "forecast dates"),
            (b.eval_start, b.eval_end, "evaluation dates"),
        ] {
            if let (Some(a), Some(z)) = (a, z) {
                if a > z {
                    return bad(format!("{what} are not ordered"));
                }
            }
        }
        for d in [b.first_forecast, b.last_forecast].into_iter().flatten() {
            if !geo::is_saturday(d) {
                return bad(format!("forecast date {d} is not a Saturday"));
            }
        }
        if self.argox.cov_window < 2 {
            return bad("argox.cov_window must be at least 2".into());
        }
        let e = &self.ensemble;
        if e.window == 0 || e.interval_window < 2 || e.interval_min < 2 || !(e.interval_z > 0.0) {
            return bad("ensemble windows must be positive and interval_z > 0".into());
        }
        for g in &self.trace_geos {
            GeoId::parse(g).map_err(|e| PipelineError::Config(format!("trace_geos: {e}")))?;
        }
        self.grouping_override()?;
        Ok(())
    }

    fn grouping_override(&self) -> Result<StateGrouping> {
        StateGrouping::from_codes(&self.argox.alone_states, &self.argox.excluded_from_constraint)
            .map_err(PipelineError::Grouping)
    }
}

impl Paths {
    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.input_states);
        fix(&mut self.truth_states);
        fix(&mut self.queries);
        fix(&mut self.out_dir);
        for p in [&mut self.input_nation, &mut self.truth_nation, &mut self.regions]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = vec![&self.input_states, &self.truth_states, &self.queries];
        v.extend(
            [&self.input_nation, &self.truth_nation, &self.regions]
                .into_iter()
                .flatten()
                .map(|p| p.as_path()),
        );
        v
    }
}

/// Loaded feeds with region and nation series filled in.
#[derive(Debug, Clone)]
pub struct Inputs {
    pub regions: RegionMap,
    pub input: SurveillancePanel,
    pub truth: SurveillancePanel,
    pub queries: QueryPanel,
    /// sha256 of each input file, keyed by path.
    pub hashes: BTreeMap<String, String>,
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub fn load_inputs(cfg: &PipelineConfig) -> Result<Inputs> {
    for p in cfg.paths.inputs() {
        if !p.exists() {
            return Err(PipelineError::MissingInput(p.display().to_string()));
        }
    }
    let p = &cfg.paths;
    let regions = match &p.regions {
        Some(r) => RegionMap::from_csv(r)?,
        None => RegionMap::default(),
    };
    let input = ingest::load_feed(&p.input_states, p.input_nation.as_ref(), SourceTag::InputFeed, &regions)?;
    let truth = ingest::load_feed(&p.truth_states, p.truth_nation.as_ref(), SourceTag::TruthFeed, &regions)?;
    let queries = ingest::load_query_panel(&p.queries, &regions)?;
    let mut hashes = BTreeMap::new();
    for f in p.inputs() {
        hashes.insert(f.display().to_string(), sha256_file(f)?);
    }
    info!(
        "loaded {} geos over {}..{}, {} queries",
        input.deaths.len(),
        input.start,
        input.end(),
        queries.queries.len()
    );
    Ok(Inputs {
        regions,
        input,
        truth,
        queries,
        hashes,
    })
}

/// Cache key: query file and region table contents plus the preprocess
/// config section.
fn preprocess_key(cfg: &PipelineConfig, inputs: &Inputs) -> String {
    let mut h = Sha256::new();
    h.update(inputs.hashes[&cfg.paths.queries.display().to_string()].as_bytes());
    if let Some(r) = &cfg.paths.regions {
        h.update(inputs.hashes[&r.display().to_string()].as_bytes());
    }
    h.update(serde_json::to_vec(&cfg.preprocess).expect("config serializes"));
    hex::encode(h.finalize())[..16].to_string()
}

/// Every retained series of every geo in long format; absent rows mark
/// dropped series.
fn write_panel_cache(panel: &QueryPanel, path: &Path) -> Result<()> {
    let f = fs::File::create(path).map_err(io_err(path))?;
    let mut w = std::io::BufWriter::new(f);
    let mut body = || -> std::io::Result<()> {
        writeln!(w, "geo,query,values")?;
        for (g, qs) in &panel.series {
            for (q, s) in qs.iter().enumerate() {
                if let Some(v) = s {
                    let vals: Vec<String> = v.iter().map(|x| x.to_string()).collect();
                    writeln!(w, "{g},{},{}", panel.queries[q], vals.join(" "))?;
                }
            }
        }
        w.flush()
    };
    body().map_err(io_err(path))
}

fn read_panel_cache(path: &Path, template: &QueryPanel) -> Option<QueryPanel> {
    let text = fs::read_to_string(path).ok()?;
    let mut series: BTreeMap<GeoId, Vec<Option<Vec<f64>>>> = BTreeMap::new();
    for line in text.lines().skip(1) {
        let mut parts = line.splitn(3, ',');
        let g = GeoId::parse(parts.next()?).ok()?;
        let q = template.query_index(parts.next()?)?;
        let v: Vec<f64> = parts
            .next()?
            .split(' ')
            .map(|x| x.parse().ok())
            .collect::<Option<_>>()?;
        if v.len() != template.len {
            return None;
        }
        series.entry(g).or_insert_with(|| vec![None; template.queries.len()])[q] = Some(v);
    }
    for g in template.series.keys() {
        series.entry(g.clone()).or_insert_with(|| vec![None; template.queries.len()]);
    }
    Some(QueryPanel {
        start: template.start,
        len: template.len,
        queries: template.queries.clone(),
        series,
    })
}

/// prune → IQR filter → enrich, reusing a cached result when the query
/// file and preprocess settings are unchanged.
pub fn preprocess_queries(cfg: &PipelineConfig, inputs: &Inputs) -> Result<QueryPanel> {
    let cache_dir = cfg.paths.out_dir.join("cache");
    let path = cache_dir.join(format!("preprocessed-{}.csv", preprocess_key(cfg, inputs)));
    if cfg.cache {
        if let Some(p) = read_panel_cache(&path, &inputs.queries) {
            info!("preprocess: cache hit {}", path.display());
            return Ok(p);
        }
    }
    let panel = preprocess::preprocess(&inputs.queries, &cfg.preprocess, &inputs.regions)?;
    if cfg.cache {
        fs::create_dir_all(&cache_dir).map_err(io_err(&cache_dir))?;
        let tmp = path.with_extension("tmp");
        write_panel_cache(&panel, &tmp)?;
        fs::rename(&tmp, &path).map_err(io_err(&path))?;
    }
    Ok(panel)
}

/// Optimal lags and correlation selection on national input-feed deaths.
pub fn select_features(cfg: &PipelineConfig, inputs: &Inputs, panel: &QueryPanel) -> Result<LagTable> {
    let deaths = inputs
        .input
        .deaths(&GeoId::nation())
        .ok_or_else(|| PipelineError::Config("input feed has no national series".into()))?;
    let f = &cfg.features;
    let table = features::score_and_select(&deaths, panel, f.window, f.lag_range, f.threshold)?;
    info!(
        "select-features: {} of {} queries selected",
        table.selected().len(),
        table.entries.len()
    );
    Ok(table)
}

/// Daily data of one geo over the date range shared by both panels.
struct Aligned {
    start: NaiveDate,
    len: usize,
    deaths: Vec<f64>,
    cases: Vec<f64>,
    queries: Vec<Vec<f64>>,
}

impl Aligned {
    fn inputs(&self) -> GeoInputs<'_> {
        GeoInputs {
            start: self.start,
            deaths: &self.deaths,
            cases: &self.cases,
            queries: self.queries.iter().map(|q| q.as_slice()).collect(),
        }
    }
}

fn align(geo: &GeoId, input: &SurveillancePanel, panel: &QueryPanel, spec: &QuerySpec) -> Option<Aligned> {
    let start = input.start.max(panel.start);
    let end = input.end().min(panel.end());
    if end < start {
        return None;
    }
    let len = (end - start).num_days() as usize + 1;
    let off_i = (start - input.start).num_days() as usize;
    let off_q = (start - panel.start).num_days() as usize;
    let zeros = vec![0.0; len];
    Some(Aligned {
        start,
        len,
        deaths: input.deaths.get(geo)?[off_i..off_i + len].to_vec(),
        cases: input.cases.get(geo)?[off_i..off_i + len].to_vec(),
        queries: spec
            .names
            .iter()
            .map(|n| {
                panel
                    .query_index(n)
                    .and_then(|q| panel.series(geo, q))
                    .map(|s| s[off_q..off_q + len].to_vec())
                    .unwrap_or_else(|| zeros.clone())
            })
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub anchor_date: NaiveDate,
    pub geo: String,
    pub horizon_days: usize,
    pub feature: String,
    pub coefficient: f64,
}

/// Everything the forecasting stage produces.
#[derive(Debug, Clone)]
pub struct Backtest {
    pub forecast_dates: Vec<NaiveDate>,
    pub records: Vec<ForecastRecord>,
    pub trace: Vec<TraceRow>,
    pub grouping: StateGrouping,
    /// Forecast dates with second-step output, per horizon.
    pub argox_weeks: BTreeMap<usize, usize>,
    /// Ensemble slots per horizon skipped for lack of history.
    pub withheld: BTreeMap<usize, usize>,
    /// Alone-state multiple correlations when recomputed.
    pub multiple_correlations: Option<BTreeMap<GeoId, f64>>,
}

/// Forecast Saturdays inside the configured bounds with enough history for
/// every model. The default first date is the first feasible Saturday on or
/// after the end of the selection window.
fn forecast_dates(cfg: &PipelineConfig, start: NaiveDate, len: usize, first_anchor: usize) -> Result<Vec<NaiveDate>> {
    let earliest = start + Duration::days(first_anchor as i64);
    let end = start + Duration::days(len as i64 - 1);
    let sat_on_or_after = |d: NaiveDate| geo::week_of(d).week_end;
    let first = match cfg.backtest.first_forecast {
        Some(d) if d < earliest => {
            return Err(PipelineError::Config(format!(
                "first forecast date {d} lacks history; earliest feasible is {}",
                sat_on_or_after(earliest)
            )))
        }
        Some(d) => d,
        None => sat_on_or_after(earliest.max(cfg.features.window.end)),
    };
    let last = cfg
        .backtest
        .last_forecast
        .unwrap_or_else(|| geo::week_of(end).offset(if geo::is_saturday(end) { -1 } else { -2 }).week_end);
    if last > end {
        return Err(PipelineError::Config(format!("last forecast date {last} is after the data end {end}")));
    }
    let mut out = Vec::new();
    let mut d = first;
    while d <= last {
        out.push(d);
        d += Duration::days(7);
    }
    if out.is_empty() {
        return Err(PipelineError::Config(format!("no forecast Saturdays between {first} and {last}")));
    }
    Ok(out)
}

fn weekly_series(panel: &SurveillancePanel, geos: &[GeoId], until: NaiveDate) -> BTreeMap<GeoId, Vec<f64>> {
    let mut week = geo::week_of(panel.start);
    if week.week_start() < panel.start {
        week = week.offset(1);
    }
    let mut out: BTreeMap<GeoId, Vec<f64>> = BTreeMap::new();
    while week.week_end <= until.min(panel.end()) {
        for g in geos {
            if let Some(v) = panel.weekly_deaths(g, week) {
                out.entry(g.clone()).or_default().push(v);
            }
        }
        week = week.offset(1);
    }
    out
}

fn argo_err(geo: &GeoId, date: NaiveDate) -> impl FnOnce(ArgoError) -> PipelineError + '_ {
    move |e| PipelineError::Argo {
        geo: geo.to_string(),
        date,
        source: e,
    }
}

/// First-step fits, both second steps, the persistence baseline, intervals
/// and the ensemble. Must run inside the caller's thread pool.
pub fn run_forecasts(cfg: &PipelineConfig, inputs: &Inputs, panel: &QueryPanel, lags: &LagTable) -> Result<Backtest> {
    let spec = QuerySpec::from_table(lags);
    let full = ArgoModel::new(&cfg.argo, FeatureMode::Full, &spec).map_err(|e| PipelineError::Config(e.to_string()))?;
    let gt = ArgoModel::new(&cfg.argo, FeatureMode::GtOnly, &spec).map_err(|e| PipelineError::Config(e.to_string()))?;
    // States absent from the input feed are skipped; regions keep their
    // present members.
    let states: Vec<GeoId> = geo::all_states()
        .into_iter()
        .filter(|s| inputs.input.deaths.contains_key(s))
        .collect();
    if states.is_empty() {
        return Err(PipelineError::Config("input feed has no state series".into()));
    }
    let mut region_ids = states
        .iter()
        .map(|s| inputs.regions.region_of(s))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    region_ids.sort();
    region_ids.dedup();
    let nation = GeoId::nation();

    let mut aligned = BTreeMap::new();
    for g in states.iter().chain(&region_ids).chain(std::iter::once(&nation)) {
        let a = align(g, &inputs.input, panel, &spec)
            .ok_or_else(|| PipelineError::Config(format!("no overlapping data for {g}")))?;
        aligned.insert(g.clone(), a);
    }
    let any = &aligned[&nation];
    let first_anchor = full.first_anchor().max(gt.first_anchor());
    let dates = forecast_dates(cfg, any.start, any.len, first_anchor)?;
    info!(
        "forecast: {} Saturdays {}..{}",
        dates.len(),
        dates[0],
        dates[dates.len() - 1]
    );

    let mut jobs: Vec<(usize, GeoId, FeatureMode)> = Vec::new();
    for w in 0..dates.len() {
        jobs.push((w, nation.clone(), FeatureMode::Full));
        for s in &states {
            jobs.push((w, s.clone(), FeatureMode::Full));
            jobs.push((w, s.clone(), FeatureMode::GtOnly));
        }
        for r in &region_ids {
            jobs.push((w, r.clone(), FeatureMode::GtOnly));
        }
    }
    let fits: Vec<DailyForecast> = jobs
        .par_iter()
        .map(|(w, g, mode)| {
            let a = &aligned[g];
            let inputs = a.inputs();
            let anchor = inputs.index_of(dates[*w]).expect("forecast date inside data");
            let model = if *mode == FeatureMode::Full { &full } else { &gt };
            model.daily_forecast(&inputs, anchor).map_err(argo_err(g, dates[*w]))
        })
        .collect::<Result<_>>()?;
    let mut weekly: HashMap<(usize, GeoId, FeatureMode), [f64; 4]> = HashMap::new();
    let trace_geos: Vec<GeoId> = cfg.trace_geos.iter().filter_map(|g| GeoId::parse(g).ok()).collect();
    let mut trace = Vec::new();
    for ((w, g, mode), f) in jobs.iter().zip(&fits) {
        weekly.insert((*w, g.clone(), *mode), argo::weekly_aggregate(&f.values));
        if *mode == FeatureMode::Full && trace_geos.contains(g) {
            for (l, c) in f.coefficients.iter().enumerate() {
                let names = full.layout(l + 1).names();
                let mut push = |feature: &str, v: f64| {
                    trace.push(TraceRow {
                        anchor_date: f.anchor,
                        geo: g.to_string(),
                        horizon_days: l + 1,
                        feature: feature.to_string(),
                        coefficient: v,
                    })
                };
                push("intercept", c.intercept);
                for (n, v) in names.iter().zip(&c.values) {
                    push(n, *v);
                }
            }
        }
    }
    drop(fits);

    let mut records = Vec::new();
    for (w, &date) in dates.iter().enumerate() {
        let week = geo::week_of(date);
        for g in std::iter::once(&nation).chain(&states) {
            let argo_w = weekly[&(w, g.clone(), FeatureMode::Full)];
            let naive = ingest::persistence_forecast(&inputs.input, g, week)?;
            for h in 1..=4 {
                records.push(ForecastRecord::new(g.clone(), MethodId::Argo, date, h, argo_w[h - 1]));
                records.push(ForecastRecord::new(g.clone(), MethodId::Naive, date, h, naive[h - 1]));
            }
        }
    }

    let mut multiple_correlations = None;
    let grouping = if cfg.argox.auto_alone {
        let mut geos = states.clone();
        geos.extend(region_ids.iter().cloned());
        geos.push(nation.clone());
        let weekly_hist = weekly_series(&inputs.input, &geos, dates[0]);
        let corr = argox::state_multiple_correlations(&weekly_hist, &inputs.regions).map_err(PipelineError::Grouping)?;
        let alone = argox::select_alone_states(&corr, cfg.argox.auto_alone_count);
        multiple_correlations = Some(corr);
        let excluded = cfg
            .grouping_override()?
            .excluded;
        StateGrouping::new(&alone, &excluded).map_err(PipelineError::Grouping)?
    } else {
        cfg.grouping_override()?
    };
    let grouping = grouping.restrict(&states).map_err(PipelineError::Grouping)?;

    let realized_weekly = |date: NaiveDate| -> Result<Vec<f64>> {
        states
            .iter()
            .map(|s| {
                inputs
                    .input
                    .weekly_deaths(s, geo::week_of(date))
                    .ok_or_else(|| IngestError::IncompleteWeek {
                        geo: s.to_string(),
                        week: date,
                    })
                    .map_err(PipelineError::from)
            })
            .collect()
    };
    let last_weeks: Vec<Vec<f64>> = dates.iter().map(|d| realized_weekly(*d)).collect::<Result<_>>()?;
    let before_last: Vec<Vec<f64>> = dates
        .iter()
        .map(|d| realized_weekly(*d - Duration::days(7)))
        .collect::<Result<_>>()?;
    let to_map = |v: &[f64]| -> BTreeMap<GeoId, f64> { states.iter().cloned().zip(v.iter().copied()).collect() };

    let window = cfg.argox.cov_window;
    let shrink = cfg.argox.shrinkage;
    let mut argox_weeks = BTreeMap::new();
    let per_horizon: Vec<(usize, Vec<ForecastRecord>)> = (1..=4usize)
        .into_par_iter()
        .map(|h| -> Result<(usize, Vec<ForecastRecord>)> {
            let mut bundles = Vec::with_capacity(dates.len());
            for (w, &date) in dates.iter().enumerate() {
                let pick = |geos: &[GeoId], mode: FeatureMode| -> BTreeMap<GeoId, f64> {
                    geos.iter()
                        .map(|g| (g.clone(), weekly[&(w, g.clone(), mode)][h - 1]))
                        .collect()
                };
                let b = WeeklyEstimateBundle::assemble(
                    w as i64,
                    h,
                    &pick(&states, FeatureMode::GtOnly),
                    &pick(&region_ids, FeatureMode::GtOnly),
                    weekly[&(w, nation.clone(), FeatureMode::Full)][h - 1],
                    &to_map(&last_weeks[w]),
                    &to_map(&before_last[w]),
                    &inputs.regions,
                )
                .map_err(|e| PipelineError::Argox {
                    date,
                    horizon: h,
                    source: e,
                })?;
                bundles.push(b);
            }
            let mut out = Vec::new();
            for (w, &date) in dates.iter().enumerate() {
                if w < h + window - 1 {
                    continue;
                }
                let hist: Vec<(&WeeklyEstimateBundle, &[f64])> = (w + 1 - h - window..=w - h)
                    .map(|k| (&bundles[k], last_weeks[k + h].as_slice()))
                    .collect();
                let input = SecondStepInput {
                    current: &bundles[w],
                    history: &hist,
                };
                let ctx = |e: ArgoxError| PipelineError::Argox {
                    date,
                    horizon: h,
                    source: e,
                };
                let two = argox::argox_two_step(&input, &grouping, window, &shrink).map_err(ctx)?;
                let excluded: BTreeMap<GeoId, f64> = grouping
                    .excluded
                    .iter()
                    .map(|g| (g.clone(), weekly[&(w, g.clone(), FeatureMode::Full)][h - 1]))
                    .collect();
                let target = bundles[w].nat[0] - excluded.values().sum::<f64>();
                let nat = argox::argox_nat_constrained(&input, &grouping, target, &excluded, window, &shrink).map_err(ctx)?;
                for s in &states {
                    out.push(ForecastRecord::new(s.clone(), MethodId::Argox2Step, date, h, two[s]));
                    out.push(ForecastRecord::new(s.clone(), MethodId::ArgoxNatConstraint, date, h, nat[s]));
                }
            }
            Ok((h, out))
        })
        .collect::<Result<_>>()?;
    for (h, recs) in per_horizon {
        argox_weeks.insert(h, recs.len() / (2 * states.len()));
        records.extend(recs);
    }

    if cfg.clamp_nonneg {
        for r in &mut records {
            r.point = r.point.max(0.0);
        }
    }
    let realized = WeeklyValues::from_panel(&inputs.input);
    ensemble::attach_intervals(&mut records, &realized, &cfg.ensemble);
    let ens = ensemble::build_ensemble(&records, &realized, &cfg.ensemble);
    // The ensemble starts once its constituents have 15 weeks of errors;
    // earlier ARGO fallbacks are counted but not emitted.
    let mut withheld: BTreeMap<usize, usize> = (1..=4).map(|h| (h, 0)).collect();
    for e in ens.iter().filter(|e| e.fallback) {
        *withheld.entry(e.horizon).or_default() += 1;
    }
    records.extend(ens.into_iter().filter(|e| !e.fallback));
    ensemble::sort_records(&mut records);
    Ok(Backtest {
        forecast_dates: dates,
        records,
        trace,
        grouping,
        argox_weeks,
        withheld,
        multiple_correlations,
    })
}

/// Per-horizon common windows of `predictions`, with configured bounds
/// replacing the derived ones. Both bounds configured gives one window for
/// every horizon.
pub fn evaluation_window(cfg: &PipelineConfig, predictions: &[Prediction]) -> EvalWindows {
    let b = &cfg.backtest;
    if let (Some(start), Some(end)) = (b.eval_start, b.eval_end) {
        return EvalWindows::uniform(EvalWindow { start, end });
    }
    let mut w = ensemble::common_windows(predictions);
    for v in w.0.values_mut() {
        v.start = b.eval_start.unwrap_or(v.start);
        v.end = b.eval_end.unwrap_or(v.end);
    }
    w
}

pub fn truth_values(inputs: &Inputs) -> WeeklyValues {
    WeeklyValues::from_panel(&inputs.truth)
}

/// Scores `predictions` against the truth feed and writes score, coverage
/// and selection files into `dir`.
pub fn evaluate(cfg: &PipelineConfig, truth: &WeeklyValues, predictions: &[Prediction], dir: &Path) -> Result<ScoreTable> {
    let window = evaluation_window(cfg, predictions);
    Ok(ensemble::write_evaluation(dir, predictions, truth, Some(&window))?)
}

#[derive(Debug, Serialize)]
struct RunMetadata<'a> {
    version: &'static str,
    seed: u64,
    config: &'a PipelineConfig,
    input_sha256: &'a BTreeMap<String, String>,
    forecast_dates: (NaiveDate, NaiveDate, usize),
    evaluation_windows: EvalWindows,
    selected_queries: Vec<(&'a str, usize)>,
    alone_states: Vec<String>,
    excluded_from_constraint: Vec<String>,
    multiple_correlations: Option<BTreeMap<String, f64>>,
    argox_weeks_by_horizon: &'a BTreeMap<usize, usize>,
    ensemble_withheld_by_horizon: &'a BTreeMap<usize, usize>,
    shrinkage_jitter: f64,
    deviations: Vec<&'static str>,
}

const DEVIATIONS: [&str; 7] = [
    "cross-validation penalty path solved by exact lasso homotopy; final fit certified by coordinate descent",
    "full ARGO fitted for the nation and every state; regions use the search-only first step only",
    "alone states default to AK, HI, DE, KY, VT, ME (six listed although seven are mentioned)",
    "ensemble selection and intervals use realized values from the input feed; scoring uses the truth feed only",
    "ensemble emitted only once 15 weeks of constituent errors exist; evaluation windows are per-horizon common windows",
    "default first forecast date is the first feasible Saturday on or after the selection window end",
    "95% intervals are Student-t prediction intervals from the trailing residuals, not point ± 1.96·std",
];

pub const REPORT_FILES: [&str; 5] = [
    "forecasts.csv",
    "scores_by_state.csv",
    "scores_summary.csv",
    "ensemble_selection.csv",
    "coverage.csv",
];

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| PipelineError::Io {
        path: path.display().to_string(),
        source: e.into(),
    })?;
    for r in rows {
        w.serialize(r).map_err(|e| PipelineError::Io {
            path: path.display().to_string(),
            source: e.into(),
        })?;
    }
    w.flush().map_err(io_err(path))
}

#[derive(Debug)]
pub struct RunOutcome {
    pub backtest: Backtest,
    pub scores: ScoreTable,
    pub lag_table: LagTable,
    pub out_dir: PathBuf,
}

fn pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| PipelineError::Config(format!("thread pool: {e}")))
}

/// Runs `f` on a pool of `jobs` workers (0 = every core).
pub fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    Ok(pool(jobs)?.install(f))
}

/// The full backtest: every stage, then the five report files plus
/// lag_table.csv, coefficients.csv and run_metadata.json. Outputs are staged
/// and moved into place only on success.
pub fn run_backtest(cfg: &PipelineConfig) -> Result<RunOutcome> {
    cfg.validate()?;
    let out = cfg.paths.out_dir.clone();
    let staging = out.join(".staging");
    let result = with_pool(cfg.jobs, || -> Result<RunOutcome> {
        let inputs = load_inputs(cfg)?;
        let panel = preprocess_queries(cfg, &inputs)?;
        let lag_table = select_features(cfg, &inputs, &panel)?;
        let backtest = run_forecasts(cfg, &inputs, &panel, &lag_table)?;
        if staging.exists() {
            fs::remove_dir_all(&staging).map_err(io_err(&staging))?;
        }
        fs::create_dir_all(&staging).map_err(io_err(&staging))?;
        let truth = truth_values(&inputs);
        let preds: Vec<Prediction> = backtest.records.iter().map(Prediction::from).collect();
        let window = evaluation_window(cfg, &preds);
        let scores = ensemble::emit_reports(&staging, &backtest.records, &truth, Some(&window))?;
        lag_table
            .save(staging.join("lag_table.csv"))
            .map_err(PipelineError::Features)?;
        write_trace(&staging.join("coefficients.csv"), &backtest.trace)?;
        let d = &backtest.forecast_dates;
        let meta = RunMetadata {
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            config: cfg,
            input_sha256: &inputs.hashes,
            forecast_dates: (d[0], d[d.len() - 1], d.len()),
            evaluation_windows: window,
            selected_queries: lag_table.selected(),
            alone_states: backtest.grouping.alone.iter().map(|g| g.to_string()).collect(),
            excluded_from_constraint: backtest.grouping.excluded.iter().map(|g| g.to_string()).collect(),
            multiple_correlations: backtest
                .multiple_correlations
                .as_ref()
                .map(|m| m.iter().map(|(g, r)| (g.to_string(), *r)).collect()),
            argox_weeks_by_horizon: &backtest.argox_weeks,
            ensemble_withheld_by_horizon: &backtest.withheld,
            shrinkage_jitter: cfg.argox.shrinkage.jitter,
            deviations: DEVIATIONS.to_vec(),
        };
        let meta_path = staging.join("run_metadata.json");
        let json = serde_json::to_string_pretty(&meta).expect("metadata serializes");
        fs::write(&meta_path, json + "\n").map_err(io_err(&meta_path))?;
        Ok(RunOutcome {
            backtest,
            scores,
            lag_table,
            out_dir: out.clone(),
        })
    })
    .and_then(|r| r);
    match result {
        Ok(outcome) => {
            for entry in fs::read_dir(&staging).map_err(io_err(&staging))? {
                let entry = entry.map_err(io_err(&staging))?;
                let dest = out.join(entry.file_name());
                fs::rename(entry.path(), &dest).map_err(io_err(&dest))?;
            }
            fs::remove_dir(&staging).map_err(io_err(&staging))?;
            Ok(outcome)
        }
        Err(e) => {
            let _ = fs::remove_dir_all(&staging);
            Err(e)
        }
    }
}

/// Pipeline config pointing at a synthetic world written to `dir`, with
/// the selection window placed at the start of the data.
pub fn synthetic_config(world: &crate::synth::SynthConfig) -> PipelineConfig {
    let lag_max = world.lag_max.max(LagRange::default().max);
    let start = world.start + Duration::days(lag_max as i64);
    PipelineConfig {
        paths: Paths {
            input_states: crate::synth::INPUT_FILE.into(),
            truth_states: crate::synth::TRUTH_FILE.into(),
            queries: crate::synth::QUERY_FILE.into(),
            out_dir: "out".into(),
            ..Paths::default()
        },
        features: FeatureSettings {
            window: DateWindow::new(start, start + Duration::days(89)),
            ..FeatureSettings::default()
        },
        seed: world.seed,
        ..PipelineConfig::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_constants() {
        let c = PipelineConfig::default();
        assert_eq!(c.argo.train_days, 56);
        assert_eq!(c.argo.death_lags, 6);
        assert_eq!(c.argo.case_offsets, vec![7, 14, 21, 28]);
        assert_eq!(c.features.lag_range, LagRange { min: 4, max: 35 });
        assert_eq!(c.features.threshold, 0.5);
        assert_eq!(c.argox.cov_window, 30);
        assert_eq!(c.ensemble.window, 15);
        assert!(!c.clamp_nonneg);
        c.validate().unwrap();
    }

    #[test]
    fn config_round_trips_and_fills_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        fs::write(&p, r#"{"jobs": 3, "paths": {"queries": "q.csv"}}"#).unwrap();
        let c = PipelineConfig::load(&p).unwrap();
        assert_eq!(c.jobs, 3);
        assert_eq!(c.paths.queries, dir.path().join("q.csv"));
        assert_eq!(c.argo, ArgoConfig::default());
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn reversed_dates_rejected() {
        let mut c = PipelineConfig::default();
        c.backtest.first_forecast = NaiveDate::from_ymd_opt(2020, 8, 1);
        c.backtest.last_forecast = NaiveDate::from_ymd_opt(2020, 7, 4);
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
        let mut c = PipelineConfig::default();
        c.backtest.first_forecast = NaiveDate::from_ymd_opt(2020, 8, 3);
        assert!(matches!(c.validate(), Err(PipelineError::Config(_))));
    }

    #[test]
    fn missing_input_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = PipelineConfig::default();
        c.paths.rebase(dir.path());
        let e = load_inputs(&c).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("input_states.csv"));
    }

    #[test]
    fn panel_cache_round_trips() {
        let regions = RegionMap::default();
        let w = crate::synth::generate(&crate::synth::SynthConfig {
            weeks: 10,
            n_queries: 4,
            ..Default::default()
        })
        .unwrap();
        let raw = w.queries.with_aggregates(&regions);
        let p = preprocess::preprocess(&raw, &IqrConfig::default(), &regions).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_panel_cache(&p, &path).unwrap();
        assert_eq!(read_panel_cache(&path, &raw).unwrap(), p);
    }
}
