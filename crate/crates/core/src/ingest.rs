//! CSV ingestion: cumulative surveillance counts become daily increments,
//! long-format search-frequency files become a query panel with regional and
//! national series synthesized by summation.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::Write;
use std::path::Path;

use chrono::{Duration, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, EpiWeek, GeoError, GeoId, RegionMap};

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: String,
        line: u64,
        msg: String,
    },
    #[error("{path}: line {line}: dates for {geo} are not strictly increasing")]
    Order { path: String, geo: String, line: u64 },
    #[error("{path}: {geo} has no row for interior date {date}")]
    Gap {
        path: String,
        geo: String,
        date: NaiveDate,
    },
    #[error("{path}: line {line}: negative query frequency {value}")]
    Value { path: String, line: u64, value: f64 },
    #[error("{path}: line {line}: {source}")]
    Geo {
        path: String,
        line: u64,
        source: GeoError,
    },
    #[error("{path}: file has no data rows")]
    Empty { path: String },
    #[error("week ending {week} is not fully observed for {geo}")]
    IncompleteWeek { geo: String, week: NaiveDate },
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv { path: String, source: csv::Error },
}

pub type Result<T> = std::result::Result<T, IngestError>;

/// Contiguous daily series starting at `start`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DailySeries {
    pub start: NaiveDate,
    pub values: Vec<f64>,
}

impl DailySeries {
    pub fn new(start: NaiveDate, values: Vec<f64>) -> Self {
        DailySeries { start, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Last covered date. Panics on an empty series.
    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(self.values.len() as i64 - 1)
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let off = (date - self.start).num_days();
        (off >= 0 && (off as usize) < self.values.len()).then_some(off as usize)
    }

    pub fn get(&self, date: NaiveDate) -> Option<f64> {
        self.index_of(date).map(|i| self.values[i])
    }

    pub fn date_at(&self, i: usize) -> NaiveDate {
        self.start + Duration::days(i as i64)
    }

    /// Sum over the seven days of `week`, if all are covered.
    pub fn weekly_sum(&self, week: EpiWeek) -> Option<f64> {
        let first = self.index_of(week.week_start())?;
        self.index_of(week.week_end)?;
        Some(self.values[first..first + 7].iter().sum())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceTag {
    /// Unrevised feed used to build features.
    InputFeed,
    /// Retrospectively revised feed used only for scoring.
    TruthFeed,
}

impl fmt::Display for SourceTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SourceTag::InputFeed => f.write_str("input-feed"),
            SourceTag::TruthFeed => f.write_str("truth-feed"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Schema {
    /// `date,cases,deaths`
    Nation,
    /// `date,state,cases,deaths` (extra columns such as `fips` ignored)
    State,
}

/// Daily death and case increments per geo. All series share one date range.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveillancePanel {
    pub source: SourceTag,
    pub start: NaiveDate,
    pub len: usize,
    pub deaths: BTreeMap<GeoId, Vec<f64>>,
    pub cases: BTreeMap<GeoId, Vec<f64>>,
}

impl SurveillancePanel {
    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(self.len as i64 - 1)
    }

    pub fn geos(&self) -> impl Iterator<Item = &GeoId> {
        self.deaths.keys()
    }

    pub fn deaths(&self, geo: &GeoId) -> Option<DailySeries> {
        self.deaths
            .get(geo)
            .map(|v| DailySeries::new(self.start, v.clone()))
    }

    pub fn cases(&self, geo: &GeoId) -> Option<DailySeries> {
        self.cases
            .get(geo)
            .map(|v| DailySeries::new(self.start, v.clone()))
    }

    /// Weekly death total for `geo`, if the week lies inside the panel.
    pub fn weekly_deaths(&self, geo: &GeoId, week: EpiWeek) -> Option<f64> {
        let v = self.deaths.get(geo)?;
        let first = (week.week_start() - self.start).num_days();
        if first < 0 || first as usize + 7 > self.len {
            return None;
        }
        let first = first as usize;
        Some(v[first..first + 7].iter().sum())
    }

    /// Adds region sums and, when absent, the nation sum over states.
    pub fn with_aggregates(mut self, regions: &RegionMap) -> Self {
        for region in geo::all_regions() {
            let members = regions.members(&region);
            let d = sum_members(&self.deaths, &members, self.len);
            let c = sum_members(&self.cases, &members, self.len);
            self.deaths.insert(region.clone(), d);
            self.cases.insert(region, c);
        }
        let nation = GeoId::nation();
        if !self.deaths.contains_key(&nation) {
            let states = geo::all_states();
            let d = sum_members(&self.deaths, &states, self.len);
            let c = sum_members(&self.cases, &states, self.len);
            self.deaths.insert(nation.clone(), d);
            self.cases.insert(nation, c);
        }
        self
    }

    /// Takes the nation series from a separately loaded nation-schema panel,
    /// reindexed to this panel's dates (uncovered days are zero increments).
    pub fn with_nation(mut self, nation: &SurveillancePanel) -> Self {
        let g = GeoId::nation();
        if let (Some(d), Some(c)) = (nation.deaths.get(&g), nation.cases.get(&g)) {
            let d = reindex(nation.start, d, self.start, self.len);
            let c = reindex(nation.start, c, self.start, self.len);
            self.deaths.insert(g.clone(), d);
            self.cases.insert(g, c);
        }
        self
    }
}

fn reindex(src_start: NaiveDate, src: &[f64], start: NaiveDate, len: usize) -> Vec<f64> {
    (0..len)
        .map(|i| {
            let date = start + Duration::days(i as i64);
            let off = (date - src_start).num_days();
            if off >= 0 && (off as usize) < src.len() {
                src[off as usize]
            } else {
                0.0
            }
        })
        .collect()
}

fn sum_members(map: &BTreeMap<GeoId, Vec<f64>>, members: &[GeoId], len: usize) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for m in members {
        if let Some(v) = map.get(m) {
            for (o, x) in out.iter_mut().zip(v) {
                *o += x;
            }
        }
    }
    out
}

fn parse_date(path: &str, line: u64, s: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(s.trim(), "%Y-%m-%d").map_err(|e| IngestError::Parse {
        path: path.to_string(),
        line,
        msg: format!("bad date {s:?}: {e}"),
    })
}

fn parse_num(path: &str, line: u64, field: &str, s: &str) -> Result<f64> {
    let v: f64 = s.trim().parse().map_err(|_| IngestError::Parse {
        path: path.to_string(),
        line,
        msg: format!("bad {field} value {s:?}"),
    })?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(IngestError::Parse {
            path: path.to_string(),
            line,
            msg: format!("non-finite {field} value {s:?}"),
        })
    }
}

fn column(path: &str, headers: &csv::StringRecord, name: &str) -> Result<usize> {
    headers
        .iter()
        .position(|h| h.trim() == name)
        .ok_or_else(|| IngestError::Parse {
            path: path.to_string(),
            line: 1,
            msg: format!("missing column {name:?}"),
        })
}

struct CumRow {
    date: NaiveDate,
    cases: f64,
    deaths: f64,
}

/// Reads a cumulative surveillance CSV and converts it to daily increments.
///
/// A geo whose first report comes after the panel's first date gets zero
/// increments before it. A missing interior date is an error, never imputed.
pub fn load_surveillance<P: AsRef<Path>>(
    path: P,
    schema: Schema,
    source: SourceTag,
) -> Result<SurveillancePanel> {
    let path_s = path.as_ref().display().to_string();
    let mut rdr = csv::Reader::from_path(path.as_ref()).map_err(|e| IngestError::Csv {
        path: path_s.clone(),
        source: e,
    })?;
    let headers = rdr
        .headers()
        .map_err(|e| IngestError::Csv {
            path: path_s.clone(),
            source: e,
        })?
        .clone();
    let i_date = column(&path_s, &headers, "date")?;
    let i_cases = column(&path_s, &headers, "cases")?;
    let i_deaths = column(&path_s, &headers, "deaths")?;
    let i_state = match schema {
        Schema::State => Some(column(&path_s, &headers, "state")?),
        Schema::Nation => None,
    };

    let mut rows: BTreeMap<GeoId, Vec<CumRow>> = BTreeMap::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = k as u64 + 2;
        let rec = rec.map_err(|e| IngestError::Parse {
            path: path_s.clone(),
            line,
            msg: e.to_string(),
        })?;
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| IngestError::Parse {
                path: path_s.clone(),
                line,
                msg: "short row".to_string(),
            })
        };
        let geo = match i_state {
            Some(i) => {
                let name = field(i)?;
                if geo::TERRITORY_NAMES.contains(&name.trim()) {
                    continue;
                }
                geo::state_from_name_or_code(name).map_err(|e| IngestError::Geo {
                    path: path_s.clone(),
                    line,
                    source: e,
                })?
            }
            None => GeoId::nation(),
        };
        let date = parse_date(&path_s, line, field(i_date)?)?;
        let cases = parse_num(&path_s, line, "cases", field(i_cases)?)?;
        let deaths = parse_num(&path_s, line, "deaths", field(i_deaths)?)?;
        let entry = rows.entry(geo.clone()).or_default();
        if let Some(prev) = entry.last() {
            if date <= prev.date {
                return Err(IngestError::Order {
                    path: path_s,
                    geo: geo.to_string(),
                    line,
                });
            }
        }
        entry.push(CumRow {
            date,
            cases,
            deaths,
        });
    }
    if rows.is_empty() {
        return Err(IngestError::Empty { path: path_s });
    }

    let start = rows.values().map(|r| r[0].date).min().expect("nonempty");
    let end = rows
        .values()
        .map(|r| r.last().expect("nonempty").date)
        .max()
        .expect("nonempty");
    let len = (end - start).num_days() as usize + 1;

    let mut deaths = BTreeMap::new();
    let mut cases = BTreeMap::new();
    for (geo, rs) in rows {
        for w in rs.windows(2) {
            if (w[1].date - w[0].date).num_days() != 1 {
                return Err(IngestError::Gap {
                    path: path_s,
                    geo: geo.to_string(),
                    date: w[0].date + Duration::days(1),
                });
            }
        }
        let last = rs.last().expect("nonempty").date;
        if last != end {
            return Err(IngestError::Gap {
                path: path_s,
                geo: geo.to_string(),
                date: last + Duration::days(1),
            });
        }
        let offset = (rs[0].date - start).num_days() as usize;
        let mut d = vec![0.0; len];
        let mut c = vec![0.0; len];
        let (mut pd, mut pc) = (0.0, 0.0);
        for (i, r) in rs.iter().enumerate() {
            d[offset + i] = r.deaths - pd;
            c[offset + i] = r.cases - pc;
            pd = r.deaths;
            pc = r.cases;
        }
        deaths.insert(geo.clone(), d);
        cases.insert(geo, c);
    }
    Ok(SurveillancePanel {
        source,
        start,
        len,
        deaths,
        cases,
    })
}

/// Loads a state-schema feed, optionally a nation-schema feed, and fills the
/// region (and, if no nation file is given, nation) series by summation.
pub fn load_feed<P: AsRef<Path>>(
    states: P,
    nation: Option<P>,
    source: SourceTag,
    regions: &RegionMap,
) -> Result<SurveillancePanel> {
    let mut panel = load_surveillance(states, Schema::State, source)?;
    if let Some(n) = nation {
        let np = load_surveillance(n, Schema::Nation, source)?;
        panel = panel.with_nation(&np);
    }
    Ok(panel.with_aggregates(regions))
}

/// Writes the state-level panel back out as cumulative counts in the
/// `date,state,cases,deaths` schema.
pub fn write_state_feed<W: Write>(panel: &SurveillancePanel, out: W) -> std::io::Result<()> {
    let mut w = std::io::BufWriter::new(out);
    writeln!(w, "date,state,cases,deaths")?;
    let states: Vec<&GeoId> = panel.deaths.keys().filter(|g| g.is_state()).collect();
    let mut cum: HashMap<&GeoId, (f64, f64)> = HashMap::new();
    for i in 0..panel.len {
        let date = panel.start + Duration::days(i as i64);
        for g in &states {
            let e = cum.entry(g).or_insert((0.0, 0.0));
            e.0 += panel.cases[*g][i];
            e.1 += panel.deaths[*g][i];
            writeln!(w, "{date},{g},{},{}", e.0, e.1)?;
        }
    }
    w.flush()
}

/// Current week's observed deaths repeated for the next four weeks.
pub fn persistence_forecast(
    panel: &SurveillancePanel,
    geo: &GeoId,
    week: EpiWeek,
) -> Result<[f64; 4]> {
    let v = panel
        .weekly_deaths(geo, week)
        .ok_or_else(|| IngestError::IncompleteWeek {
            geo: geo.to_string(),
            week: week.week_end,
        })?;
    Ok([v; 4])
}

/// Daily search frequencies per (geo, query). A `None` series marks a query
/// that was dropped for that geo; consumers read it as all zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct QueryPanel {
    pub start: NaiveDate,
    pub len: usize,
    pub queries: Vec<String>,
    pub series: BTreeMap<GeoId, Vec<Option<Vec<f64>>>>,
}

impl QueryPanel {
    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(self.len as i64 - 1)
    }

    pub fn query_index(&self, name: &str) -> Option<usize> {
        self.queries.iter().position(|q| q == name)
    }

    pub fn series(&self, geo: &GeoId, query: usize) -> Option<&[f64]> {
        self.series.get(geo)?.get(query)?.as_deref()
    }

    pub fn daily(&self, geo: &GeoId, query: usize) -> Option<DailySeries> {
        self.series(geo, query)
            .map(|v| DailySeries::new(self.start, v.to_vec()))
    }

    /// Builds region and nation series as datewise sums of member states.
    /// Dropped state series contribute zero.
    pub fn with_aggregates(mut self, regions: &RegionMap) -> Self {
        let nq = self.queries.len();
        let sum = |series: &BTreeMap<GeoId, Vec<Option<Vec<f64>>>>, members: &[GeoId]| {
            (0..nq)
                .map(|q| {
                    let mut out = vec![0.0; self.len];
                    for m in members {
                        if let Some(Some(v)) = series.get(m).map(|s| &s[q]) {
                            for (o, x) in out.iter_mut().zip(v) {
                                *o += x;
                            }
                        }
                    }
                    Some(out)
                })
                .collect::<Vec<_>>()
        };
        for region in geo::all_regions() {
            let s = sum(&self.series, &regions.members(&region));
            self.series.insert(region, s);
        }
        let s = sum(&self.series, &geo::all_states());
        self.series.insert(GeoId::nation(), s);
        self
    }

    /// State-level series in the long `date,geo,query,value` schema.
    pub fn write_long<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = std::io::BufWriter::new(out);
        writeln!(w, "date,geo,query,value")?;
        let states: Vec<(&GeoId, &Vec<Option<Vec<f64>>>)> =
            self.series.iter().filter(|(g, _)| g.is_state()).collect();
        for i in 0..self.len {
            let date = self.start + Duration::days(i as i64);
            for (g, qs) in &states {
                for (q, s) in qs.iter().enumerate() {
                    if let Some(v) = s {
                        writeln!(w, "{date},{g},{},{}", self.queries[q], v[i])?;
                    }
                }
            }
        }
        w.flush()
    }
}

/// Reads a long-format query CSV (`date,geo,query,value`, state geos only).
/// Absent cells are zero. Queries are ordered by name.
pub fn load_query_panel<P: AsRef<Path>>(path: P, regions: &RegionMap) -> Result<QueryPanel> {
    let path_s = path.as_ref().display().to_string();
    let csv_err = |e: csv::Error| IngestError::Csv {
        path: path_s.clone(),
        source: e,
    };
    let mut rdr = csv::Reader::from_path(path.as_ref()).map_err(csv_err)?;
    let headers = rdr.headers().map_err(csv_err)?.clone();
    let i_date = column(&path_s, &headers, "date")?;
    let i_geo = column(&path_s, &headers, "geo")?;
    let i_query = column(&path_s, &headers, "query")?;
    let i_value = column(&path_s, &headers, "value")?;

    let mut cells: Vec<(NaiveDate, GeoId, usize, f64)> = Vec::new();
    let mut query_ids: HashMap<String, usize> = HashMap::new();
    let mut geo_cache: HashMap<String, GeoId> = HashMap::new();
    let mut last_date: Option<(String, NaiveDate)> = None;
    let mut rec = csv::StringRecord::new();
    let mut line = 1u64;
    while rdr.read_record(&mut rec).map_err(|e| IngestError::Parse {
        path: path_s.clone(),
        line: line + 1,
        msg: e.to_string(),
    })? {
        line += 1;
        let field = |i: usize| -> Result<&str> {
            rec.get(i).ok_or_else(|| IngestError::Parse {
                path: path_s.clone(),
                line,
                msg: "short row".to_string(),
            })
        };
        let ds = field(i_date)?;
        let date = match &last_date {
            Some((s, d)) if s == ds => *d,
            _ => {
                let d = parse_date(&path_s, line, ds)?;
                last_date = Some((ds.to_string(), d));
                d
            }
        };
        let gs = field(i_geo)?.trim();
        let geo = match geo_cache.get(gs) {
            Some(g) => g.clone(),
            None => {
                let g = GeoId::state(gs).map_err(|e| IngestError::Geo {
                    path: path_s.clone(),
                    line,
                    source: e,
                })?;
                geo_cache.insert(gs.to_string(), g.clone());
                g
            }
        };
        let qs = field(i_query)?.trim();
        let next = query_ids.len();
        let q = *query_ids.entry(qs.to_string()).or_insert(next);
        let value = parse_num(&path_s, line, "value", field(i_value)?)?;
        if value < 0.0 {
            return Err(IngestError::Value {
                path: path_s,
                line,
                value,
            });
        }
        cells.push((date, geo, q, value));
    }
    if cells.is_empty() {
        return Err(IngestError::Empty { path: path_s });
    }

    let mut names: Vec<(String, usize)> = query_ids.into_iter().collect();
    names.sort();
    let mut remap = vec![0usize; names.len()];
    for (new, (_, old)) in names.iter().enumerate() {
        remap[*old] = new;
    }
    let queries: Vec<String> = names.into_iter().map(|(n, _)| n).collect();

    let start = cells.iter().map(|c| c.0).min().expect("nonempty");
    let end = cells.iter().map(|c| c.0).max().expect("nonempty");
    let len = (end - start).num_days() as usize + 1;
    let mut series: BTreeMap<GeoId, Vec<Option<Vec<f64>>>> = BTreeMap::new();
    for g in geo::all_states() {
        series.insert(g, vec![Some(vec![0.0; len]); queries.len()]);
    }
    for (date, geo, q, v) in cells {
        let i = (date - start).num_days() as usize;
        if let Some(Some(s)) = series.get_mut(&geo).map(|s| &mut s[remap[q]]) {
            s[i] = v;
        }
    }
    Ok(QueryPanel {
        start,
        len,
        queries,
        series,
    }
    .with_aggregates(regions))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn write(dir: &tempfile::TempDir, name: &str, body: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn first_difference() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "n.csv",
            "date,cases,deaths\n2020-07-01,100,10\n2020-07-02,130,12\n",
        );
        let panel = load_surveillance(&p, Schema::Nation, SourceTag::InputFeed).unwrap();
        assert_eq!(panel.deaths[&GeoId::nation()], vec![10.0, 2.0]);
        assert_eq!(panel.cases[&GeoId::nation()], vec![100.0, 30.0]);
    }

    #[test]
    fn revision_gives_negative_increment() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "n.csv",
            "date,cases,deaths\n2020-07-01,100,10\n2020-07-02,130,9\n",
        );
        let panel = load_surveillance(&p, Schema::Nation, SourceTag::InputFeed).unwrap();
        assert_eq!(panel.deaths[&GeoId::nation()], vec![10.0, -1.0]);
    }

    #[test]
    fn interior_gap_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "n.csv",
            "date,cases,deaths\n2020-07-01,100,10\n2020-07-03,130,12\n",
        );
        let err = load_surveillance(&p, Schema::Nation, SourceTag::InputFeed).unwrap_err();
        match err {
            IngestError::Gap { date, .. } => assert_eq!(date, d("2020-07-02")),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn order_and_parse_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "n.csv",
            "date,cases,deaths\n2020-07-02,100,10\n2020-07-01,130,12\n",
        );
        assert!(matches!(
            load_surveillance(&p, Schema::Nation, SourceTag::InputFeed),
            Err(IngestError::Order { line: 3, .. })
        ));
        let p = write(&dir, "m.csv", "date,cases,deaths\n2020-07-01,x,10\n");
        assert!(matches!(
            load_surveillance(&p, Schema::Nation, SourceTag::InputFeed),
            Err(IngestError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn state_schema_with_fips_and_names() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "s.csv",
            "date,state,fips,cases,deaths\n\
             2020-07-01,Georgia,13,5,1\n\
             2020-07-01,Puerto Rico,72,5,1\n\
             2020-07-01,AL,01,3,0\n\
             2020-07-02,Georgia,13,9,4\n\
             2020-07-02,AL,01,3,2\n",
        );
        let panel = load_surveillance(&p, Schema::State, SourceTag::TruthFeed)
            .unwrap()
            .with_aggregates(&RegionMap::default());
        let ga = GeoId::state("GA").unwrap();
        assert_eq!(panel.deaths[&ga], vec![1.0, 3.0]);
        let r4 = GeoId::region("R04").unwrap();
        assert_eq!(panel.deaths[&r4], vec![1.0, 5.0]);
        assert_eq!(panel.deaths[&GeoId::nation()], vec![1.0, 5.0]);
        assert_eq!(panel.source, SourceTag::TruthFeed);
    }

    #[test]
    fn late_starting_geo_padded_with_zeros() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            &dir,
            "s.csv",
            "date,state,cases,deaths\n2020-07-01,GA,1,1\n2020-07-02,GA,2,2\n2020-07-02,AL,4,3\n",
        );
        let panel = load_surveillance(&p, Schema::State, SourceTag::InputFeed).unwrap();
        assert_eq!(panel.deaths[&GeoId::state("AL").unwrap()], vec![0.0, 3.0]);
    }

    #[test]
    fn persistence_examples() {
        let g = GeoId::nation();
        let mk = |days: [f64; 7]| SurveillancePanel {
            source: SourceTag::InputFeed,
            start: d("2020-06-28"),
            len: 7,
            deaths: [(g.clone(), days.to_vec())].into_iter().collect(),
            cases: [(g.clone(), vec![0.0; 7])].into_iter().collect(),
        };
        let wk = geo::week_of(d("2020-07-04"));
        assert_eq!(persistence_forecast(&mk([1.0; 7]), &g, wk).unwrap(), [7.0; 4]);
        assert_eq!(persistence_forecast(&mk([0.0; 7]), &g, wk).unwrap(), [0.0; 4]);
        let mut neg = [0.0; 7];
        neg[6] = -2.0;
        assert_eq!(persistence_forecast(&mk(neg), &g, wk).unwrap(), [-2.0; 4]);
        assert!(matches!(
            persistence_forecast(&mk([1.0; 7]), &g, wk.offset(1)),
            Err(IngestError::IncompleteWeek { .. })
        ));
    }

    #[test]
    fn query_panel_sums_and_fills() {
        let dir = tempfile::tempdir().unwrap();
        // CT and MA are both in R01.
        let p = write(
            &dir,
            "q.csv",
            "date,geo,query,value\n2020-07-01,CT,fever,3\n2020-07-01,MA,fever,5\n2020-07-02,CT,fever,1\n",
        );
        let panel = load_query_panel(&p, &RegionMap::default()).unwrap();
        let q = panel.query_index("fever").unwrap();
        let r1 = GeoId::region("R01").unwrap();
        assert_eq!(panel.series(&r1, q).unwrap(), &[8.0, 1.0]);
        let ma = GeoId::state("MA").unwrap();
        assert_eq!(panel.series(&ma, q).unwrap(), &[5.0, 0.0]);
        assert_eq!(panel.series(&GeoId::nation(), q).unwrap(), &[8.0, 1.0]);
    }

    #[test]
    fn query_panel_rejections() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "q.csv", "date,geo,query,value\n2020-07-01,CT,fever,-1\n");
        assert!(matches!(
            load_query_panel(&p, &RegionMap::default()),
            Err(IngestError::Value { .. })
        ));
        let p = write(&dir, "q2.csv", "date,geo,query,value\n2020-07-01,ZZ,fever,1\n");
        assert!(matches!(
            load_query_panel(&p, &RegionMap::default()),
            Err(IngestError::Geo {
                source: GeoError::NotAState(_),
                ..
            })
        ));
    }

    #[test]
    fn weekly_sum_bounds() {
        let s = DailySeries::new(d("2020-06-28"), (1..=8).map(f64::from).collect());
        assert_eq!(s.weekly_sum(geo::week_of(d("2020-07-04"))), Some(28.0));
        assert_eq!(s.weekly_sum(geo::week_of(d("2020-07-05"))), None);
        assert_eq!(s.end(), d("2020-07-05"));
    }
}
