//! Seeded synthetic world: regional epidemic intensities, state death and
//! case feeds, and search-frequency series that lead deaths by planted lags.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{self, GeoId, RegionMap, STATE_CODES};
use crate::ingest::{self, QueryPanel, SourceTag, SurveillancePanel};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic config: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, SynthError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_states: usize,
    pub n_queries: usize,
    /// Share of queries that carry no signal.
    pub noise_query_fraction: f64,
    pub lag_min: usize,
    pub lag_max: usize,
    /// Signal-to-noise variance ratio of each state query series.
    pub snr: f64,
    /// Weight of the regional latent factor in each state's intensity.
    pub mixing: f64,
    pub weeks: usize,
    /// Per-day probability that a query value is multiplied into a spike.
    pub spike_rate: f64,
    /// Half-width of the multiplicative revision between input and truth.
    pub revision: f64,
    /// Scale on the sqrt(mean) death noise; 0 gives rounded intensities.
    pub death_noise: f64,
    /// Strength of the day-of-week reporting pattern on deaths; 0 (default)
    /// disables it, 1 applies `WEEKDAY_EFFECT` as is. The pattern shifts
    /// daily optimal lags by a day or two regardless of `snr`.
    pub weekday_effect: f64,
    /// Mean national deaths per day.
    pub national_deaths: f64,
    /// Days by which cases lead deaths.
    pub case_lead: usize,
    /// Sunday on which the world starts.
    pub start: NaiveDate,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 42,
            n_states: 51,
            n_queries: 40,
            noise_query_fraction: 0.25,
            lag_min: 4,
            lag_max: 35,
            snr: 5.0,
            mixing: 0.7,
            weeks: 80,
            spike_rate: 0.002,
            revision: 0.02,
            death_noise: 1.0,
            weekday_effect: 0.0,
            national_deaths: 1500.0,
            case_lead: 14,
            start: NaiveDate::from_ymd_opt(2020, 1, 5).unwrap(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(SynthError::Config(m));
        if self.n_states == 0 || self.n_states > STATE_CODES.len() {
            return bad(format!("n_states must be in 1..={}", STATE_CODES.len()));
        }
        if self.n_queries == 0 {
            return bad("n_queries must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.noise_query_fraction) {
            return bad("noise_query_fraction must lie in [0, 1]".into());
        }
        if self.lag_min < 1 || self.lag_min > self.lag_max {
            return bad(format!("lag range {}..={} is invalid", self.lag_min, self.lag_max));
        }
        if !(self.snr > 0.0) {
            return bad("snr must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.mixing) {
            return bad("mixing must lie in [0, 1]".into());
        }
        if self.weeks < 8 {
            return bad("weeks must be at least 8".into());
        }
        if !(0.0..1.0).contains(&self.spike_rate) {
            return bad("spike_rate must lie in [0, 1)".into());
        }
        if !(0.0..1.0).contains(&self.revision) || !(self.death_noise >= 0.0) {
            return bad("revision must lie in [0, 1) and death_noise be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.weekday_effect) {
            return bad("weekday_effect must lie in [0, 1]".into());
        }
        if !(self.national_deaths > 0.0) {
            return bad("national_deaths must be positive".into());
        }
        if self.start.weekday().num_days_from_sunday() != 0 {
            return bad(format!("start {} is not a Sunday", self.start));
        }
        Ok(())
    }

    pub fn days(&self) -> usize {
        self.weeks * 7
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthWorld {
    pub config: SynthConfig,
    pub input: SurveillancePanel,
    pub truth: SurveillancePanel,
    /// State-level series only.
    pub queries: QueryPanel,
    /// Planted lead in days, `None` for noise-only queries.
    pub planted: BTreeMap<String, Option<usize>>,
}

/// Reporting weekday effect on deaths, Sunday first.
const WEEKDAY_EFFECT: [f64; 7] = [0.85, 0.9, 1.08, 1.1, 1.06, 1.03, 0.98];

const STREAM_LATENT: u64 = 1;
const STREAM_QUERY_SPEC: u64 = 2;
const STREAM_DEATHS: u64 = 3;
const STREAM_CASES: u64 = 4;
const STREAM_QUERIES: u64 = 5;
const STREAM_REVISION: u64 = 6;

/// Independent generator per component so that changing one knob leaves
/// the other random draws untouched.
fn stream(seed: u64, component: u64, a: usize, b: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(component << 40 | (a as u64) << 20 | b as u64);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Sum of random-phase waves plus an Ornstein-Uhlenbeck texture.
fn latent(rng: &mut ChaCha8Rng, len: usize, waves: &[(f64, f64, f64)], ou_rho: f64, ou_sd: f64) -> Vec<f64> {
    let params: Vec<(f64, f64, f64)> = waves
        .iter()
        .map(|&(amp, lo, hi)| (amp, rng.random_range(lo..hi), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let mut ou = ou_sd * normal(rng);
    let innov = ou_sd * (1.0 - ou_rho * ou_rho).sqrt();
    (0..len)
        .map(|t| {
            let w: f64 = params
                .iter()
                .map(|(amp, period, phase)| amp * (2.0 * PI * t as f64 / period + phase).sin())
                .sum();
            let v = w + ou;
            ou = ou_rho * ou + innov * normal(rng);
            v
        })
        .collect()
}

fn round_to(v: f64, places: i32) -> f64 {
    let s = 10f64.powi(places);
    (v * s).round() / s
}

pub fn generate(cfg: &SynthConfig) -> Result<SynthWorld> {
    cfg.validate()?;
    let n = cfg.days();
    let horizon = n + cfg.lag_max.max(cfg.case_lead) + 1;
    let states: Vec<GeoId> = STATE_CODES[..cfg.n_states]
        .iter()
        .map(|c| GeoId::state(c).expect("embedded code"))
        .collect();
    let regions = RegionMap::default();

    let mut rng = stream(cfg.seed, STREAM_LATENT, 0, 0);
    let nation = latent(&mut rng, horizon, &[(0.6, 150.0, 250.0), (0.3, 60.0, 100.0)], 0.85, 0.12);
    let mut region_latent = BTreeMap::new();
    for (k, r) in geo::all_regions().into_iter().enumerate() {
        let mut rng = stream(cfg.seed, STREAM_LATENT, 1, k);
        let own = latent(&mut rng, horizon, &[(0.3, 80.0, 160.0)], 0.85, 0.1);
        let v: Vec<f64> = own.iter().zip(&nation).map(|(a, b)| a + b).collect();
        region_latent.insert(r, v);
    }
    let mut pops = Vec::with_capacity(states.len());
    let mut intensity = Vec::with_capacity(states.len());
    for (k, s) in states.iter().enumerate() {
        let mut rng = stream(cfg.seed, STREAM_LATENT, 2, k);
        pops.push((0.8 * normal(&mut rng)).exp());
        let own = latent(&mut rng, horizon, &[(0.2, 60.0, 140.0)], 0.85, 0.1);
        let reg = &region_latent[&regions.region_of(s).expect("state")];
        let v: Vec<f64> = (0..horizon)
            .map(|t| cfg.mixing * reg[t].exp() + (1.0 - cfg.mixing) * (nation[t] + own[t]).exp())
            .collect();
        intensity.push(v);
    }
    let total: f64 = pops.iter().sum();
    for (p, v) in pops.iter().zip(intensity.iter_mut()) {
        let scale = cfg.national_deaths * p / total;
        v.iter_mut().for_each(|x| *x *= scale);
    }

    let mut deaths = BTreeMap::new();
    let mut cases = BTreeMap::new();
    for (k, s) in states.iter().enumerate() {
        let mut rd = stream(cfg.seed, STREAM_DEATHS, k, 0);
        let mut rc = stream(cfg.seed, STREAM_CASES, k, 0);
        let d: Vec<f64> = (0..n)
            .map(|t| {
                let m = (1.0 + cfg.weekday_effect * (WEEKDAY_EFFECT[t % 7] - 1.0)) * intensity[k][t];
                (m + cfg.death_noise * m.sqrt() * normal(&mut rd)).round().max(0.0)
            })
            .collect();
        let c: Vec<f64> = (0..n)
            .map(|t| {
                let m = 40.0 * intensity[k][t + cfg.case_lead];
                (m + m.sqrt() * normal(&mut rc)).round().max(0.0)
            })
            .collect();
        deaths.insert(s.clone(), d);
        cases.insert(s.clone(), c);
    }

    let width = (cfg.n_queries as f64).log10().floor() as usize + 1;
    let names: Vec<String> = (1..=cfg.n_queries).map(|i| format!("q{i:0width$}")).collect();
    let mut spec_rng = stream(cfg.seed, STREAM_QUERY_SPEC, 0, 0);
    let n_noise = (cfg.noise_query_fraction * cfg.n_queries as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n_queries).collect();
    for i in (1..order.len()).rev() {
        let j = spec_rng.random_range(0..=i);
        order.swap(i, j);
    }
    let noise: Vec<bool> = {
        let mut v = vec![false; cfg.n_queries];
        for &q in &order[..n_noise] {
            v[q] = true;
        }
        v
    };
    let mut planted = BTreeMap::new();
    let mut spec = Vec::with_capacity(cfg.n_queries);
    for (q, name) in names.iter().enumerate() {
        let lag = spec_rng.random_range(cfg.lag_min..=cfg.lag_max);
        let scale = spec_rng.random_range(0.5..2.0);
        planted.insert(name.clone(), (!noise[q]).then_some(lag));
        spec.push((lag, scale));
    }

    let mut series = BTreeMap::new();
    for (k, s) in states.iter().enumerate() {
        let mean = intensity[k][..n].iter().sum::<f64>() / n as f64;
        let var = intensity[k][..n].iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        let mut per_query = Vec::with_capacity(cfg.n_queries);
        for (q, &(lag, scale)) in spec.iter().enumerate() {
            let mut rng = stream(cfg.seed, STREAM_QUERIES, k, q);
            let sd = if cfg.snr.is_finite() { (var / cfg.snr).sqrt() } else { 0.0 };
            let v: Vec<f64> = (0..n)
                .map(|t| {
                    let base = if noise[q] {
                        mean * (1.0 + 0.5 * normal(&mut rng))
                    } else {
                        intensity[k][t + lag] + sd * normal(&mut rng)
                    };
                    let mut x = (scale * base).max(0.0);
                    if rng.random::<f64>() < cfg.spike_rate {
                        x *= rng.random_range(5.0..15.0);
                    }
                    round_to(x, 2)
                })
                .collect();
            per_query.push(Some(v));
        }
        series.insert(s.clone(), per_query);
    }

    let mut truth_deaths = BTreeMap::new();
    for (k, (s, d)) in deaths.iter().enumerate() {
        let mut rng = stream(cfg.seed, STREAM_REVISION, k, 0);
        let r: Vec<f64> = d
            .iter()
            .map(|v| {
                let f = if cfg.revision > 0.0 {
                    rng.random_range(-cfg.revision..cfg.revision)
                } else {
                    0.0
                };
                (v * (1.0 + f)).round()
            })
            .collect();
        truth_deaths.insert(s.clone(), r);
    }

    let input = SurveillancePanel {
        source: SourceTag::InputFeed,
        start: cfg.start,
        len: n,
        deaths,
        cases: cases.clone(),
    };
    let truth = SurveillancePanel {
        source: SourceTag::TruthFeed,
        start: cfg.start,
        len: n,
        deaths: truth_deaths,
        cases,
    };
    let queries = QueryPanel {
        start: cfg.start,
        len: n,
        queries: names,
        series,
    };
    Ok(SynthWorld {
        config: cfg.clone(),
        input,
        truth,
        queries,
        planted,
    })
}

pub const INPUT_FILE: &str = "input_states.csv";
pub const TRUTH_FILE: &str = "truth_states.csv";
pub const QUERY_FILE: &str = "queries.csv";
pub const PLANTED_FILE: &str = "planted_lags.csv";
pub const CONFIG_FILE: &str = "synth_config.json";

impl SynthWorld {
    /// Writes the three feeds in the ingest schemas plus the planted lags
    /// and the generating config.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let io = |p: &Path| {
            let path = p.display().to_string();
            move |e: std::io::Error| SynthError::Io { path, source: e }
        };
        fs::create_dir_all(dir).map_err(io(dir))?;
        let create = |name: &str| {
            let p = dir.join(name);
            fs::File::create(&p).map_err(io(&p))
        };
        let p = dir.join(INPUT_FILE);
        ingest::write_state_feed(&self.input, create(INPUT_FILE)?).map_err(io(&p))?;
        let p = dir.join(TRUTH_FILE);
        ingest::write_state_feed(&self.truth, create(TRUTH_FILE)?).map_err(io(&p))?;
        let p = dir.join(QUERY_FILE);
        self.queries.write_long(create(QUERY_FILE)?).map_err(io(&p))?;
        let mut lags = String::from("query,planted_lag\n");
        for (q, l) in &self.planted {
            lags.push_str(&format!("{q},{}\n", l.map(|v| v.to_string()).unwrap_or_default()));
        }
        let p = dir.join(PLANTED_FILE);
        fs::write(&p, lags).map_err(io(&p))?;
        let p = dir.join(CONFIG_FILE);
        let json = serde_json::to_string_pretty(&self.config).expect("config serializes");
        fs::write(&p, json + "\n").map_err(io(&p))?;
        Ok(())
    }

    pub fn end(&self) -> NaiveDate {
        self.config.start + Duration::days(self.config.days() as i64 - 1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{self, DateWindow, LagRange};
    use crate::ingest::{load_feed, load_query_panel};

    fn small() -> SynthConfig {
        SynthConfig {
            weeks: 30,
            n_queries: 8,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate(&small()).unwrap().write(a.path()).unwrap();
        generate(&small()).unwrap().write(b.path()).unwrap();
        for f in [INPUT_FILE, TRUTH_FILE, QUERY_FILE, PLANTED_FILE, CONFIG_FILE] {
            assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
        }
        let c = generate(&SynthConfig { seed: 43, ..small() }).unwrap();
        assert_ne!(c.input, generate(&small()).unwrap().input);
    }

    #[test]
    fn written_world_passes_ingest() {
        let dir = tempfile::tempdir().unwrap();
        let w = generate(&small()).unwrap();
        w.write(dir.path()).unwrap();
        let regions = RegionMap::default();
        let input = load_feed(dir.path().join(INPUT_FILE), None, SourceTag::InputFeed, &regions).unwrap();
        assert_eq!(input.len, w.input.len);
        for (g, v) in &w.input.deaths {
            assert_eq!(&input.deaths[g], v);
        }
        let truth = load_feed(dir.path().join(TRUTH_FILE), None, SourceTag::TruthFeed, &regions).unwrap();
        assert_eq!(truth.deaths.len(), 51 + 10 + 1);
        let q = load_query_panel(dir.path().join(QUERY_FILE), &regions).unwrap();
        assert_eq!(q.queries, w.queries.queries);
        let ca = GeoId::state("CA").unwrap();
        assert_eq!(q.series(&ca, 3).unwrap(), w.queries.series(&ca, 3).unwrap());
    }

    #[test]
    fn config_is_validated() {
        for bad in [
            SynthConfig { snr: 0.0, ..small() },
            SynthConfig { mixing: 1.5, ..small() },
            SynthConfig { lag_min: 10, lag_max: 5, ..small() },
            SynthConfig { n_states: 52, ..small() },
            SynthConfig { weekday_effect: 1.5, ..small() },
            SynthConfig { start: NaiveDate::from_ymd_opt(2020, 1, 6).unwrap(), ..small() },
        ] {
            assert!(matches!(generate(&bad), Err(SynthError::Config(_))));
        }
    }

    #[test]
    fn noiseless_world_reveals_every_lag() {
        let cfg = SynthConfig {
            snr: f64::INFINITY,
            spike_rate: 0.0,
            weeks: 30,
            n_queries: 12,
            ..SynthConfig::default()
        };
        let w = generate(&cfg).unwrap();
        let regions = RegionMap::default();
        let panel = w.queries.clone().with_aggregates(&regions);
        let input = w.input.clone().with_aggregates(&regions);
        let deaths = input.deaths(&GeoId::nation()).unwrap();
        let window = DateWindow::new(
            NaiveDate::from_ymd_opt(2020, 4, 1).unwrap(),
            NaiveDate::from_ymd_opt(2020, 6, 30).unwrap(),
        );
        let nation = GeoId::nation();
        for (q, name) in panel.queries.iter().enumerate() {
            let Some(lag) = w.planted[name] else { continue };
            let fit = features::optimal_lag(&deaths, &panel.daily(&nation, q).unwrap(), window, LagRange::default())
                .unwrap();
            assert_eq!(fit.lag, lag, "{name}");
        }
    }
}
