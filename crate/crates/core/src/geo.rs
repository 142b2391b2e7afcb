//! Geographic identities (nation, HHS region, state) and the Saturday-ending
//! weekly calendar shared by every other module.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeoError {
    #[error("not a state code: {0:?}")]
    NotAState(String),
    #[error("not a region code: {0:?}")]
    NotARegion(String),
    #[error("region table: {0}")]
    Table(String),
    #[error("region table io: {0}")]
    Io(#[from] std::io::Error),
    #[error("region table csv: {0}")]
    Csv(#[from] csv::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeoLevel {
    Nation,
    Region,
    State,
}

/// A nation, HHS region (`R01`..`R10`) or state (two-letter code, `DC` included).
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct GeoId {
    level: GeoLevel,
    code: String,
}

impl GeoId {
    pub fn nation() -> Self {
        GeoId {
            level: GeoLevel::Nation,
            code: NATION_CODE.to_string(),
        }
    }

    pub fn region(code: &str) -> Result<Self, GeoError> {
        if REGION_CODES.contains(&code) {
            Ok(GeoId {
                level: GeoLevel::Region,
                code: code.to_string(),
            })
        } else {
            Err(GeoError::NotARegion(code.to_string()))
        }
    }

    pub fn state(code: &str) -> Result<Self, GeoError> {
        if STATE_CODES.contains(&code) {
            Ok(GeoId {
                level: GeoLevel::State,
                code: code.to_string(),
            })
        } else {
            Err(GeoError::NotAState(code.to_string()))
        }
    }

    /// Parses any of the three kinds of code.
    pub fn parse(code: &str) -> Result<Self, GeoError> {
        if code == NATION_CODE {
            Ok(Self::nation())
        } else if code.starts_with('R') && code.len() == 3 {
            Self::region(code)
        } else {
            Self::state(code)
        }
    }

    pub fn level(&self) -> GeoLevel {
        self.level
    }

    pub fn code(&self) -> &str {
        &self.code
    }

    pub fn is_state(&self) -> bool {
        self.level == GeoLevel::State
    }
}

impl fmt::Display for GeoId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.code)
    }
}

impl Serialize for GeoId {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.code)
    }
}

impl<'de> Deserialize<'de> for GeoId {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        GeoId::parse(&s).map_err(serde::de::Error::custom)
    }
}

pub const NATION_CODE: &str = "US";

pub const REGION_CODES: [&str; 10] = [
    "R01", "R02", "R03", "R04", "R05", "R06", "R07", "R08", "R09", "R10",
];

/// The 50 states plus DC, alphabetical by code.
pub const STATE_CODES: [&str; 51] = [
    "AK", "AL", "AR", "AZ", "CA", "CO", "CT", "DC", "DE", "FL", "GA", "HI", "IA", "ID", "IL", "IN",
    "KS", "KY", "LA", "MA", "MD", "ME", "MI", "MN", "MO", "MS", "MT", "NC", "ND", "NE", "NH", "NJ",
    "NM", "NV", "NY", "OH", "OK", "OR", "PA", "RI", "SC", "SD", "TN", "TX", "UT", "VA", "VT", "WA",
    "WI", "WV", "WY",
];

/// Standard HHS region membership.
const HHS_REGIONS: [(&str, &[&str]); 10] = [
    ("R01", &["CT", "ME", "MA", "NH", "RI", "VT"]),
    ("R02", &["NJ", "NY"]),
    ("R03", &["DE", "DC", "MD", "PA", "VA", "WV"]),
    ("R04", &["AL", "FL", "GA", "KY", "MS", "NC", "SC", "TN"]),
    ("R05", &["IL", "IN", "MI", "MN", "OH", "WI"]),
    ("R06", &["AR", "LA", "NM", "OK", "TX"]),
    ("R07", &["IA", "KS", "MO", "NE"]),
    ("R08", &["CO", "MT", "ND", "SD", "UT", "WY"]),
    ("R09", &["AZ", "CA", "HI", "NV"]),
    ("R10", &["AK", "ID", "OR", "WA"]),
];

const STATE_NAMES: [(&str, &str); 51] = [
    ("Alabama", "AL"),
    ("Alaska", "AK"),
    ("Arizona", "AZ"),
    ("Arkansas", "AR"),
    ("California", "CA"),
    ("Colorado", "CO"),
    ("Connecticut", "CT"),
    ("Delaware", "DE"),
    ("District of Columbia", "DC"),
    ("Florida", "FL"),
    ("Georgia", "GA"),
    ("Hawaii", "HI"),
    ("Idaho", "ID"),
    ("Illinois", "IL"),
    ("Indiana", "IN"),
    ("Iowa", "IA"),
    ("Kansas", "KS"),
    ("Kentucky", "KY"),
    ("Louisiana", "LA"),
    ("Maine", "ME"),
    ("Maryland", "MD"),
    ("Massachusetts", "MA"),
    ("Michigan", "MI"),
    ("Minnesota", "MN"),
    ("Mississippi", "MS"),
    ("Missouri", "MO"),
    ("Montana", "MT"),
    ("Nebraska", "NE"),
    ("Nevada", "NV"),
    ("New Hampshire", "NH"),
    ("New Jersey", "NJ"),
    ("New Mexico", "NM"),
    ("New York", "NY"),
    ("North Carolina", "NC"),
    ("North Dakota", "ND"),
    ("Ohio", "OH"),
    ("Oklahoma", "OK"),
    ("Oregon", "OR"),
    ("Pennsylvania", "PA"),
    ("Rhode Island", "RI"),
    ("South Carolina", "SC"),
    ("South Dakota", "SD"),
    ("Tennessee", "TN"),
    ("Texas", "TX"),
    ("Utah", "UT"),
    ("Vermont", "VT"),
    ("Virginia", "VA"),
    ("Washington", "WA"),
    ("West Virginia", "WV"),
    ("Wisconsin", "WI"),
    ("Wyoming", "WY"),
];

/// Territories that appear in public surveillance feeds but are outside the
/// 51-state domain. Rows for these are skipped on ingest.
pub const TERRITORY_NAMES: [&str; 10] = [
    "Puerto Rico",
    "Guam",
    "Virgin Islands",
    "Northern Mariana Islands",
    "American Samoa",
    "PR",
    "GU",
    "VI",
    "MP",
    "AS",
];

/// Resolves a two-letter code or a full state name to a state `GeoId`.
pub fn state_from_name_or_code(s: &str) -> Result<GeoId, GeoError> {
    let s = s.trim();
    if let Ok(g) = GeoId::state(s) {
        return Ok(g);
    }
    STATE_NAMES
        .iter()
        .find(|(name, _)| name.eq_ignore_ascii_case(s))
        .map(|(_, code)| GeoId::state(code).expect("embedded code"))
        .ok_or_else(|| GeoError::NotAState(s.to_string()))
}

pub fn all_states() -> Vec<GeoId> {
    STATE_CODES
        .iter()
        .map(|c| GeoId::state(c).expect("embedded code"))
        .collect()
}

pub fn all_regions() -> Vec<GeoId> {
    REGION_CODES
        .iter()
        .map(|c| GeoId::region(c).expect("embedded code"))
        .collect()
}

/// State → region assignment. Defaults to the standard HHS table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMap {
    by_state: BTreeMap<String, String>,
}

impl Default for RegionMap {
    fn default() -> Self {
        let mut by_state = BTreeMap::new();
        for (region, states) in HHS_REGIONS.iter() {
            for s in states.iter() {
                by_state.insert(s.to_string(), region.to_string());
            }
        }
        RegionMap { by_state }
    }
}

#[derive(Debug, Deserialize)]
struct RegionRow {
    state: String,
    region: String,
}

impl RegionMap {
    /// Loads an override table with header `state,region`. Every one of the
    /// 51 states must appear exactly once.
    pub fn from_csv<P: AsRef<Path>>(path: P) -> Result<Self, GeoError> {
        let mut rdr = csv::Reader::from_path(path)?;
        let mut by_state = BTreeMap::new();
        for row in rdr.deserialize() {
            let row: RegionRow = row?;
            let state = GeoId::state(row.state.trim())?;
            let region = GeoId::region(row.region.trim())?;
            if by_state
                .insert(state.code().to_string(), region.code().to_string())
                .is_some()
            {
                return Err(GeoError::Table(format!("duplicate state {state}")));
            }
        }
        if by_state.len() != STATE_CODES.len() {
            return Err(GeoError::Table(format!(
                "expected {} states, found {}",
                STATE_CODES.len(),
                by_state.len()
            )));
        }
        Ok(RegionMap { by_state })
    }

    pub fn region_of(&self, state: &GeoId) -> Result<GeoId, GeoError> {
        if state.level() != GeoLevel::State {
            return Err(GeoError::NotAState(state.code().to_string()));
        }
        let r = self
            .by_state
            .get(state.code())
            .ok_or_else(|| GeoError::NotAState(state.code().to_string()))?;
        GeoId::region(r)
    }

    /// Member states of `region`, alphabetical.
    pub fn members(&self, region: &GeoId) -> Vec<GeoId> {
        self.by_state
            .iter()
            .filter(|(_, r)| r.as_str() == region.code())
            .map(|(s, _)| GeoId::state(s).expect("validated"))
            .collect()
    }
}

/// `region_of` against the embedded HHS table.
pub fn region_of(state: &GeoId) -> Result<GeoId, GeoError> {
    RegionMap::default().region_of(state)
}

/// `region_of` for a raw code string; rejects anything that is not a state.
pub fn region_of_code(code: &str) -> Result<GeoId, GeoError> {
    region_of(&GeoId::state(code)?)
}

/// Saturday-ending week.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct EpiWeek {
    pub week_end: NaiveDate,
    pub index: i64,
}

fn epoch_saturday() -> NaiveDate {
    NaiveDate::from_ymd_opt(1970, 1, 3).expect("valid date")
}

impl EpiWeek {
    pub fn from_index(index: i64) -> Self {
        EpiWeek {
            week_end: epoch_saturday() + Duration::days(7 * index),
            index,
        }
    }

    pub fn week_start(&self) -> NaiveDate {
        self.week_end - Duration::days(6)
    }

    pub fn offset(&self, weeks: i64) -> Self {
        Self::from_index(self.index + weeks)
    }
}

pub fn week_of(date: NaiveDate) -> EpiWeek {
    let days_to_sat = (6 - date.weekday().num_days_from_sunday() as i64).rem_euclid(7);
    let week_end = date + Duration::days(days_to_sat);
    let index = (week_end - epoch_saturday()).num_days().div_euclid(7);
    EpiWeek { week_end, index }
}

/// One-hot Monday..Saturday; all zeros on Sunday.
pub fn weekday_indicators(date: NaiveDate) -> [u8; 6] {
    let mut out = [0u8; 6];
    if date.weekday() != Weekday::Sun {
        out[date.weekday().num_days_from_monday() as usize] = 1;
    }
    out
}

pub fn is_saturday(date: NaiveDate) -> bool {
    date.weekday() == Weekday::Sat
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn d(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    #[test]
    fn region_examples() {
        assert_eq!(region_of_code("GA").unwrap().code(), "R04");
        assert_eq!(region_of_code("DC").unwrap().code(), "R03");
        assert!(matches!(region_of_code("ZZ"), Err(GeoError::NotAState(_))));
        assert!(matches!(
            region_of(&GeoId::nation()),
            Err(GeoError::NotAState(_))
        ));
    }

    #[test]
    fn table_shape() {
        assert_eq!(STATE_CODES.len(), 51);
        assert_eq!(REGION_CODES.len(), 10);
        let map = RegionMap::default();
        let total: usize = all_regions().iter().map(|r| map.members(r).len()).sum();
        assert_eq!(total, 51);
        for s in all_states() {
            map.region_of(&s).unwrap();
        }
    }

    #[test]
    fn region_table_snapshot() {
        let map = RegionMap::default();
        let snapshot: Vec<String> = all_states()
            .iter()
            .map(|s| format!("{}:{}", s, map.region_of(s).unwrap()))
            .collect();
        assert_eq!(
            snapshot.join(","),
            "AK:R10,AL:R04,AR:R06,AZ:R09,CA:R09,CO:R08,CT:R01,DC:R03,DE:R03,FL:R04,GA:R04,\
HI:R09,IA:R07,ID:R10,IL:R05,IN:R05,KS:R07,KY:R04,LA:R06,MA:R01,MD:R03,ME:R01,MI:R05,\
MN:R05,MO:R07,MS:R04,MT:R08,NC:R04,ND:R08,NE:R07,NH:R01,NJ:R02,NM:R06,NV:R09,NY:R02,\
OH:R05,OK:R06,OR:R10,PA:R03,RI:R01,SC:R04,SD:R08,TN:R04,TX:R06,UT:R08,VA:R03,VT:R01,\
WA:R10,WI:R05,WV:R03,WY:R08"
        );
    }

    #[test]
    fn override_csv() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("regions.csv");
        let mut body = String::from("state,region\n");
        for s in STATE_CODES {
            let r = if s == "GA" { "R05" } else { "R01" };
            body.push_str(&format!("{s},{r}\n"));
        }
        std::fs::write(&path, &body).unwrap();
        let map = RegionMap::from_csv(&path).unwrap();
        assert_eq!(map.region_of(&GeoId::state("GA").unwrap()).unwrap().code(), "R05");

        std::fs::write(&path, "state,region\nGA,R04\n").unwrap();
        assert!(matches!(RegionMap::from_csv(&path), Err(GeoError::Table(_))));
    }

    #[test]
    fn full_names_resolve() {
        assert_eq!(state_from_name_or_code("Georgia").unwrap().code(), "GA");
        assert_eq!(
            state_from_name_or_code("District of Columbia").unwrap().code(),
            "DC"
        );
        assert!(state_from_name_or_code("Atlantis").is_err());
    }

    #[test]
    fn weekday_examples() {
        assert_eq!(weekday_indicators(d("2020-07-06")), [1, 0, 0, 0, 0, 0]);
        assert_eq!(weekday_indicators(d("2020-07-05")), [0, 0, 0, 0, 0, 0]);
        assert_eq!(weekday_indicators(d("2020-07-04")), [0, 0, 0, 0, 0, 1]);
    }

    #[test]
    fn week_examples() {
        assert_eq!(week_of(d("2020-07-04")).week_end, d("2020-07-04"));
        assert_eq!(week_of(d("2020-07-05")).week_end, d("2020-07-11"));
        assert_eq!(week_of(d("2021-10-09")).week_end, d("2021-10-09"));
        let w = week_of(d("2020-07-04"));
        assert_eq!(w.offset(1).week_end, d("2020-07-11"));
        assert_eq!(EpiWeek::from_index(w.index), w);
    }

    proptest! {
        #[test]
        fn week_contains_date(days in -20000i64..40000) {
            let date = epoch_saturday() + Duration::days(days);
            let w = week_of(date);
            let gap = (w.week_end - date).num_days();
            prop_assert!((0..=6).contains(&gap));
            prop_assert!(is_saturday(w.week_end));
            prop_assert_eq!(w.offset(1).week_end - w.week_end, Duration::days(7));
        }

        #[test]
        fn weekday_one_hot(days in -20000i64..40000) {
            let date = epoch_saturday() + Duration::days(days);
            let s: u8 = weekday_indicators(date).iter().sum();
            prop_assert_eq!(s == 0, date.weekday() == Weekday::Sun);
            prop_assert!(s <= 1);
        }
    }
}
