//! Experiment harness: single runs, paired-seed batches, discharge-price
//! sweeps and the timing benchmark.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use evpool_core::controllers::{Controller, ControllerConfig, ControllerKind, SolveDiagnostics};
use evpool_core::degradation::FleetDegradation;
use evpool_core::metrics::{self, BatchStats, RunStats};
use evpool_core::{Config, Environment, Scenario};
use rayon::prelude::*;
use serde::Serialize;

pub const DEFAULT_M_VALUES: [f64; 5] = [0.8, 0.9, 1.0, 1.1, 1.2];

/// Result of one simulated day.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub stats: RunStats,
    pub degradation: FleetDegradation,
    pub log: Vec<SolveDiagnostics>,
    pub trace_csv: Vec<u8>,
}

/// Overrides applied on top of the loaded configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub horizon: Option<usize>,
    pub m: Option<f64>,
}

pub fn apply(config: &Config, o: &Overrides) -> Result<Config> {
    let mut c = config.clone();
    if let Some(h) = o.horizon {
        c.simulation.horizon_steps = h;
    }
    if let Some(m) = o.m {
        if !(m > 0.0 && m <= 2.0) {
            bail!("discharge multiplier {m} outside (0, 2]");
        }
        c.simulation.discharge_multiplier = m;
    }
    c.validate()?;
    Ok(c)
}

/// Runs one controller over a full scenario.
pub fn simulate(scenario: &Scenario, kind: ControllerKind) -> Result<RunResult> {
    let mut env = Environment::reset(scenario);
    let mut ctrl = Controller::new(ControllerConfig::from_scenario(kind, scenario), scenario)?;
    while !env.is_done() {
        let plan = ctrl.act(&env);
        env.step(&plan.actions)?;
    }
    let (stats, degradation) = metrics::summarize_with_degradation(
        scenario.seed,
        kind.as_str(),
        scenario.dt_h(),
        env.records(),
        env.departures(),
        env.ev_traces(),
        &scenario.config.degradation,
        ctrl.log(),
    )?;
    let mut trace_csv = Vec::new();
    env.write_trace_csv(&mut trace_csv)?;
    Ok(RunResult { stats, degradation, log: ctrl.log().to_vec(), trace_csv })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text.as_bytes())
}

/// Writes trace, controller log, degradation and summary for one run.
pub fn run_single(config: &Config, kind: ControllerKind, seed: u64, out: &Path) -> Result<RunStats> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let scenario = Scenario::build(config, seed)?;
    let run = simulate(&scenario, kind)?;
    write(&out.join("trace.csv"), &run.trace_csv)?;

    let mut log = csv::Writer::from_writer(Vec::new());
    for d in &run.log {
        log.serialize(d)?;
    }
    write(&out.join("controller_log.csv"), &log.into_inner()?)?;

    let mut deg = csv::Writer::from_writer(Vec::new());
    for ev in &run.degradation.per_ev {
        deg.serialize(ev)?;
    }
    write(&out.join("degradation.csv"), &deg.into_inner()?)?;

    let batch = metrics::batch(std::slice::from_ref(&run.stats))?;
    json(&out.join("summary.json"), &Summary { runs: vec![run.stats.clone()], batches: vec![batch], failures: vec![] })?;
    Ok(run.stats)
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub seed: u64,
    pub controller: String,
    pub error: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub runs: Vec<RunStats>,
    pub batches: Vec<BatchStats>,
    pub failures: Vec<Failure>,
}

/// Paired-seed runs: every controller sees the same scenario per seed.
/// Failed cells are recorded and the batch continues.
pub fn batch_runs(config: &Config, kinds: &[ControllerKind], seeds: &[u64]) -> Result<Summary> {
    if seeds.is_empty() {
        bail!("batch needs at least one seed");
    }
    let cells: Vec<(u64, ControllerKind)> =
        seeds.iter().flat_map(|&s| kinds.iter().map(move |&k| (s, k))).collect();
    let results: Vec<((u64, ControllerKind), Result<RunStats>)> = cells
        .par_iter()
        .map(|&(seed, kind)| {
            let r = Scenario::build(config, seed)
                .map_err(anyhow::Error::from)
                .and_then(|sc| simulate(&sc, kind))
                .map(|r| r.stats);
            ((seed, kind), r)
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for ((seed, kind), r) in results {
        match r {
            Ok(s) => runs.push(s),
            Err(e) => failures.push(Failure { seed, controller: kind.to_string(), error: format!("{e:#}") }),
        }
    }
    let mut batches = Vec::new();
    for kind in kinds {
        let rows: Vec<RunStats> = runs.iter().filter(|r| r.controller == kind.as_str()).cloned().collect();
        if !rows.is_empty() {
            batches.push(metrics::batch(&rows)?);
        }
    }
    Ok(Summary { runs, batches, failures })
}

pub fn run_batch(config: &Config, kinds: &[ControllerKind], seeds: &[u64], out: &Path) -> Result<Summary> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let summary = batch_runs(config, kinds, seeds)?;
    let mut table = Vec::new();
    metrics::write_batch_csv(&summary.batches, &mut table)?;
    write(&out.join("batch.csv"), &table)?;
    let mut runs = Vec::new();
    metrics::write_runs_csv(&summary.runs, &mut runs)?;
    write(&out.join("runs.csv"), &runs)?;
    json(&out.join("summary.json"), &summary)?;
    Ok(summary)
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub m: f64,
    pub controller: String,
    pub seed: u64,
    pub profit_eur: f64,
}

/// One batch per discharge multiplier.
pub fn run_m_sweep(
    config: &Config,
    kinds: &[ControllerKind],
    seeds: &[u64],
    m_values: &[f64],
    out: &Path,
) -> Result<Vec<(f64, Summary)>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut all = Vec::new();
    let mut rows = csv::Writer::from_writer(Vec::new());
    let mut means = csv::Writer::from_writer(Vec::new());
    means.write_record(["m", "controller", "n", "profit_mean", "profit_std"])?;
    for &m in m_values {
        let cfg = apply(config, &Overrides { m: Some(m), ..Overrides::default() })?;
        let summary = batch_runs(&cfg, kinds, seeds)?;
        for r in &summary.runs {
            rows.serialize(SweepRow { m, controller: r.controller.clone(), seed: r.seed, profit_eur: r.profit_eur })?;
        }
        for b in &summary.batches {
            let p = b.get("profit_eur").unwrap_or_default();
            means.write_record([
                format!("{m}"),
                b.controller.clone(),
                b.n.to_string(),
                format!("{:.9}", p.mean),
                format!("{:.9}", p.std),
            ])?;
        }
        all.push((m, summary));
    }
    write(&out.join("m_sweep_profits.csv"), &rows.into_inner()?)?;
    write(&out.join("m_sweep_summary.csv"), &means.into_inner()?)?;
    Ok(all)
}

/// Grid for the timing benchmark.
#[derive(Debug, Clone)]
pub struct BenchSpec {
    pub evse_counts: Vec<usize>,
    pub horizons: Vec<usize>,
    pub transformers: usize,
    /// Controller steps timed per cell, taken from the busiest part of the day.
    pub steps: usize,
    /// Cells whose mean step time exceeds this are marked and skipped for
    /// larger EVSE counts of the same controller and horizon.
    pub cell_cap_ms: f64,
    pub kinds: Vec<ControllerKind>,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            evse_counts: (1..=12).map(|i| 5 * i).collect(),
            horizons: vec![10, 30],
            transformers: 3,
            steps: 4,
            cell_cap_ms: 13_500.0,
            kinds: ControllerKind::ALL.into_iter().filter(|k| k.is_mpc()).collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub controller: String,
    pub evse: usize,
    pub horizon: usize,
    pub steps: usize,
    pub mean_step_ms: f64,
    pub max_step_ms: f64,
    /// Steps where the solver gave up and the controller fell back to AFAP.
    pub fallback_steps: usize,
    pub capped: bool,
}

/// Mean per-step controller time (problem build plus solve) over a grid of
/// pool sizes and horizons. EV count scales with the EVSE count.
pub fn bench_runs(config: &Config, spec: &BenchSpec, seed: u64) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::new();
    for &kind in &spec.kinds {
        for &hz in &spec.horizons {
            let mut capped = false;
            for &n in &spec.evse_counts {
                if capped {
                    rows.push(BenchRow {
                        controller: kind.to_string(),
                        evse: n,
                        horizon: hz,
                        steps: 0,
                        mean_step_ms: f64::NAN,
                        max_step_ms: f64::NAN,
                        fallback_steps: 0,
                        capped: true,
                    });
                    continue;
                }
                let mut cfg = config.clone();
                cfg.simulation.n_chargers = n;
                cfg.simulation.n_transformers = spec.transformers.min(n);
                cfg.simulation.horizon_steps = hz;
                cfg.ev.n_evs = (n * 5).div_ceil(2);
                // Same limit per charger as the base configuration.
                let per_charger = config.transformer.power_limit_kw * config.simulation.n_transformers as f64
                    / config.simulation.n_chargers.max(1) as f64;
                cfg.transformer.power_limit_kw = per_charger * n as f64 / cfg.simulation.n_transformers as f64;
                cfg.validate()?;
                let scenario = Scenario::build(&cfg, seed)?;
                let (mean, max, fallback_steps) = time_cell(&scenario, kind, spec.steps)?;
                capped = mean > spec.cell_cap_ms;
                rows.push(BenchRow {
                    controller: kind.to_string(),
                    evse: n,
                    horizon: hz,
                    steps: spec.steps,
                    mean_step_ms: mean,
                    max_step_ms: max,
                    fallback_steps,
                    capped,
                });
            }
        }
    }
    Ok(rows)
}

/// Runs AFAP up to the busiest step, then times the controller from there.
fn time_cell(scenario: &Scenario, kind: ControllerKind, steps: usize) -> Result<(f64, f64, usize)> {
    let k = scenario.steps();
    let occupancy = |step: usize| {
        scenario.sessions.iter().filter(|s| s.arrival_step <= step && step < s.departure_step).count()
    };
    let busiest = (0..k).max_by_key(|&s| (occupancy(s), std::cmp::Reverse(s))).unwrap_or(0);
    let start = busiest.saturating_sub(steps / 2).min(k.saturating_sub(steps));
    let mut env = Environment::reset(scenario);
    let mut baseline = Controller::new(ControllerConfig::from_scenario(ControllerKind::Afap, scenario), scenario)?;
    while env.state().step < start {
        let plan = baseline.act(&env);
        env.step(&plan.actions)?;
    }
    let mut ctrl = Controller::new(ControllerConfig::from_scenario(kind, scenario), scenario)?;
    let mut times = Vec::new();
    while !env.is_done() && times.len() < steps {
        let t0 = Instant::now();
        let plan = ctrl.act(&env);
        times.push(t0.elapsed().as_secs_f64() * 1e3);
        env.step(&plan.actions)?;
    }
    let mean = times.iter().sum::<f64>() / times.len().max(1) as f64;
    let max = times.iter().copied().fold(0.0, f64::max);
    let fallbacks = ctrl.log().iter().filter(|d| d.fallback).count();
    Ok((mean, max, fallbacks))
}

pub fn run_bench(config: &Config, spec: &BenchSpec, seed: u64, out: &Path) -> Result<Vec<BenchRow>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let rows = bench_runs(config, spec, seed)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in &rows {
        w.serialize(r)?;
    }
    write(&out.join("bench.csv"), &w.into_inner()?)?;
    Ok(rows)
}

/// Parses `A..B` (inclusive), `A..=B` or a comma list.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let t = text.trim();
    if let Some((a, b)) = t.split_once("..") {
        let b = b.strip_prefix('=').unwrap_or(b);
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        if b < a {
            bail!("empty seed range {t}");
        }
        return Ok((a..=b).collect());
    }
    let seeds = t
        .split(',')
        .map(|s| s.trim().parse::<u64>().with_context(|| format!("bad seed `{s}`")))
        .collect::<Result<Vec<_>>>()?;
    if seeds.is_empty() {
        bail!("no seeds given");
    }
    Ok(seeds)
}

pub fn parse_m_list(text: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|s| {
            let m: f64 = s.trim().parse().with_context(|| format!("bad multiplier `{s}`"))?;
            if !(m > 0.0 && m <= 2.0) {
                bail!("discharge multiplier {m} outside (0, 2]");
            }
            Ok(m)
        })
        .collect()
}

pub fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
