use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::Context;
use argocast::ensemble::{self, Prediction};
use argocast::geo::GeoId;
use argocast::pipeline::{self, PipelineConfig, PipelineError, REPORT_FILES};
use argocast::preprocess;
use argocast::synth::{self, SynthConfig};
use clap::{Args, Parser, Subcommand};
use log::info;

#[derive(Parser)]
#[command(name = "argocast", version, about = "Backtest search-augmented death forecasts")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline config (JSON). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Seed recorded in run metadata; for `synth`, the world's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Clamp point forecasts at zero.
    #[arg(long, global = true)]
    clamp_nonneg: bool,
    /// Log progress to stderr.
    #[arg(short, long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic world and a pipeline config for it.
    Synth {
        /// Number of states (alphabetical by code).
        #[arg(long)]
        states: Option<usize>,
        /// Length of the world in weeks (default 80).
        #[arg(long)]
        weeks: Option<usize>,
        /// Signal-to-noise variance ratio of the query series (default 5).
        #[arg(long)]
        snr: Option<f64>,
        /// Number of search queries, a quarter of them noise (default 40).
        #[arg(long)]
        queries: Option<usize>,
    },
    /// Load every input and print a summary.
    IngestCheck,
    /// Prune, filter and enrich the query panel (cached under <out>/cache).
    Preprocess,
    /// Write <out>/lag_table.csv.
    SelectFeatures,
    /// Run the backtest and write all reports.
    Forecast,
    /// Score a forecasts.csv file against the truth feed.
    Evaluate {
        /// Forecast file; defaults to <out>/forecasts.csv.
        #[arg(long)]
        forecasts: Option<PathBuf>,
    },
    /// Print the summary, selection and coverage tables from <out>.
    Report,
}

fn load_config(g: &Global) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(o) = &g.out {
        cfg.paths.out_dir = o.clone();
    }
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if g.clamp_nonneg {
        cfg.clamp_nonneg = true;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

struct SynthArgs {
    states: Option<usize>,
    weeks: Option<usize>,
    snr: Option<f64>,
    queries: Option<usize>,
}

fn synth_cmd(g: &Global, a: SynthArgs) -> anyhow::Result<()> {
    let mut sc = SynthConfig::default();
    if let Some(s) = g.seed {
        sc.seed = s;
    }
    if let Some(n) = a.states {
        sc.n_states = n;
    }
    if let Some(w) = a.weeks {
        sc.weeks = w;
    }
    if let Some(s) = a.snr {
        sc.snr = s;
    }
    if let Some(q) = a.queries {
        sc.n_queries = q;
    }
    let dir = g.out.clone().unwrap_or_else(|| PathBuf::from("data"));
    let world = synth::generate(&sc)?;
    world.write(&dir)?;
    let mut cfg = pipeline::synthetic_config(&sc);
    if let Some(j) = g.jobs {
        cfg.jobs = j;
    }
    cfg.clamp_nonneg = g.clamp_nonneg;
    let path = dir.join("config.json");
    fs::write(&path, serde_json::to_string_pretty(&cfg)? + "\n").with_context(|| path.display().to_string())?;
    println!(
        "wrote synthetic world (seed {}, {} weeks, {} queries) to {}",
        sc.seed,
        sc.weeks,
        sc.n_queries,
        dir.display()
    );
    Ok(())
}

fn print_table(path: &Path) -> anyhow::Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split(',').collect()).collect();
    let cols = rows.iter().map(|r| r.len()).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.len()).max().unwrap_or(0))
        .collect();
    println!("{}", path.file_name().unwrap_or_default().to_string_lossy());
    for r in &rows {
        let line: Vec<String> = r.iter().enumerate().map(|(c, s)| format!("{s:>w$}", w = widths[c])).collect();
        println!("  {}", line.join("  "));
    }
    println!();
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Synth {
            states,
            weeks,
            snr,
            queries,
        } => synth_cmd(
            g,
            SynthArgs {
                states,
                weeks,
                snr,
                queries,
            },
        ),
        Command::IngestCheck => {
            let cfg = load_config(g)?;
            let inputs = pipeline::load_inputs(&cfg)?;
            for (name, p) in [("input", &inputs.input), ("truth", &inputs.truth)] {
                println!(
                    "{name} feed: {} geos, {}..{} ({} days)",
                    p.deaths.len(),
                    p.start,
                    p.end(),
                    p.len
                );
            }
            let q = &inputs.queries;
            println!("queries: {} over {}..{}", q.queries.len(), q.start, q.end());
            Ok(())
        }
        Command::Preprocess => {
            let cfg = load_config(g)?;
            let inputs = pipeline::load_inputs(&cfg)?;
            let panel = pipeline::with_pool(cfg.jobs, || pipeline::preprocess_queries(&cfg, &inputs))??;
            let nation = preprocess::retained_queries(&panel, &GeoId::nation());
            println!("retained at national level: {} of {}", nation.len(), panel.queries.len());
            Ok(())
        }
        Command::SelectFeatures => {
            let cfg = load_config(g)?;
            let inputs = pipeline::load_inputs(&cfg)?;
            let table = pipeline::with_pool(cfg.jobs, || -> Result<_, PipelineError> {
                let panel = pipeline::preprocess_queries(&cfg, &inputs)?;
                pipeline::select_features(&cfg, &inputs, &panel)
            })??;
            ensure_dir(&cfg.paths.out_dir)?;
            let path = cfg.paths.out_dir.join("lag_table.csv");
            table.save(&path).map_err(PipelineError::from)?;
            println!("{} of {} queries selected; wrote {}", table.selected().len(), table.entries.len(), path.display());
            Ok(())
        }
        Command::Forecast => {
            let cfg = load_config(g)?;
            let t = Instant::now();
            let outcome = pipeline::run_backtest(&cfg)?;
            let d = &outcome.backtest.forecast_dates;
            println!(
                "{} forecast weeks ({}..{}), {} records in {:.1}s; reports in {}",
                d.len(),
                d[0],
                d[d.len() - 1],
                outcome.backtest.records.len(),
                t.elapsed().as_secs_f64(),
                outcome.out_dir.display()
            );
            for f in REPORT_FILES {
                info!("wrote {}", outcome.out_dir.join(f).display());
            }
            Ok(())
        }
        Command::Evaluate { forecasts } => {
            let cfg = load_config(g)?;
            let path = forecasts.unwrap_or_else(|| cfg.paths.out_dir.join("forecasts.csv"));
            if !path.exists() {
                return Err(PipelineError::MissingInput(path.display().to_string()).into());
            }
            let inputs = pipeline::load_inputs(&cfg)?;
            let preds: Vec<Prediction> = ensemble::read_predictions(&path).map_err(PipelineError::from)?;
            let truth = pipeline::truth_values(&inputs);
            let table = pipeline::evaluate(&cfg, &truth, &preds, &cfg.paths.out_dir)?;
            println!("scored {} (geo, method, horizon) groups into {}", table.rows.len(), cfg.paths.out_dir.display());
            Ok(())
        }
        Command::Report => {
            let cfg = load_config(g)?;
            let dir = &cfg.paths.out_dir;
            for f in ["scores_summary.csv", "ensemble_selection.csv", "coverage.csv"] {
                let p = dir.join(f);
                if !p.exists() {
                    return Err(PipelineError::MissingInput(p.display().to_string()).into());
                }
                print_table(&p)?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = if cli.global.verbose { "info" } else { "warn" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e
                .downcast_ref::<PipelineError>()
                .map(|p| p.exit_code())
                .unwrap_or(1);
            ExitCode::from(code as u8)
        }
    }
}
