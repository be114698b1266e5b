//! Run and batch statistics.

use std::io::Write;

use serde::Serialize;

use crate::controllers::SolveDiagnostics;
use crate::degradation::{run_degradation, DegradationParams, FleetDegradation};
use crate::error::CoreError;
use crate::simengine::{Departure, StepRecord};

/// Tolerance on the departure SoC when counting misses.
pub const DEPARTURE_TOL: f64 = 1e-3;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RunStats {
    pub seed: u64,
    pub controller: String,
    /// Cash flow from energy trading only; flexibility payments are excluded.
    pub profit_eur: f64,
    pub energy_charged_kwh: f64,
    pub energy_discharged_kwh: f64,
    pub sum_q_lost: f64,
    pub sum_d_cal: f64,
    pub sum_d_cyc: f64,
    pub overload_steps: usize,
    pub dr_steps: usize,
    pub dr_compliant_steps: usize,
    pub departures: usize,
    pub departure_misses: usize,
    pub flex_offered_kwh: f64,
    pub slack_steps: usize,
    pub fallback_steps: usize,
    pub mean_solve_ms: f64,
    pub max_solve_ms: f64,
}

impl RunStats {
    /// Share of DR-affected transformer steps without overload; 1 when no
    /// DR event occurred.
    pub fn dr_compliance(&self) -> f64 {
        if self.dr_steps == 0 {
            1.0
        } else {
            self.dr_compliant_steps as f64 / self.dr_steps as f64
        }
    }
}

/// Everything a finished run leaves behind that the statistics need.
pub struct RunTrace<'a> {
    pub seed: u64,
    pub controller: &'a str,
    pub dt_h: f64,
    pub records: &'a [StepRecord],
    pub departures: &'a [Departure],
    pub degradation: &'a FleetDegradation,
    pub log: &'a [SolveDiagnostics],
}

pub fn summarize(run: &RunTrace<'_>) -> RunStats {
    let dt = run.dt_h;
    let mut s = RunStats { seed: run.seed, controller: run.controller.to_string(), ..Default::default() };
    for r in run.records {
        s.profit_eur += r.cash_eur;
        s.energy_charged_kwh += r.p_charge_kw.iter().sum::<f64>() * dt;
        s.energy_discharged_kwh += r.p_discharge_kw.iter().sum::<f64>() * dt;
        for t in &r.transformers {
            s.overload_steps += t.overload as usize;
            if t.dr_active {
                s.dr_steps += 1;
                s.dr_compliant_steps += !t.overload as usize;
            }
        }
    }
    s.departures = run.departures.len();
    s.departure_misses = run
        .departures
        .iter()
        .filter(|d| d.soc < d.soc_required_min - DEPARTURE_TOL)
        .count();
    s.sum_d_cal = run.degradation.sum_d_cal;
    s.sum_d_cyc = run.degradation.sum_d_cyc;
    s.sum_q_lost = run.degradation.sum_q_lost;
    for d in run.log {
        s.flex_offered_kwh += d.total_flex_kw * dt;
        s.slack_steps += (d.slack_used > 1e-6) as usize;
        s.fallback_steps += d.fallback as usize;
        s.max_solve_ms = s.max_solve_ms.max(d.solve_ms);
    }
    if !run.log.is_empty() {
        s.mean_solve_ms = run.log.iter().map(|d| d.solve_ms).sum::<f64>() / run.log.len() as f64;
    }
    s
}

/// Degradation for a finished run followed by `summarize`.
pub fn summarize_with_degradation(
    seed: u64,
    controller: &str,
    dt_h: f64,
    records: &[StepRecord],
    departures: &[Departure],
    traces: &[crate::degradation::EvTrace],
    params: &DegradationParams,
    log: &[SolveDiagnostics],
) -> Result<(RunStats, FleetDegradation), CoreError> {
    let fleet = run_degradation(traces, dt_h, params)?;
    let stats = summarize(&RunTrace { seed, controller, dt_h, records, departures, degradation: &fleet, log });
    Ok((stats, fleet))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

const METRICS: [&str; 12] = [
    "profit_eur",
    "energy_charged_kwh",
    "energy_discharged_kwh",
    "sum_q_lost",
    "sum_d_cal",
    "sum_d_cyc",
    "overload_steps",
    "departure_misses",
    "flex_offered_kwh",
    "slack_steps",
    "mean_solve_ms",
    "max_solve_ms",
];

fn metric(r: &RunStats, name: &str) -> f64 {
    match name {
        "profit_eur" => r.profit_eur,
        "energy_charged_kwh" => r.energy_charged_kwh,
        "energy_discharged_kwh" => r.energy_discharged_kwh,
        "sum_q_lost" => r.sum_q_lost,
        "sum_d_cal" => r.sum_d_cal,
        "sum_d_cyc" => r.sum_d_cyc,
        "overload_steps" => r.overload_steps as f64,
        "departure_misses" => r.departure_misses as f64,
        "flex_offered_kwh" => r.flex_offered_kwh,
        "slack_steps" => r.slack_steps as f64,
        "mean_solve_ms" => r.mean_solve_ms,
        "max_solve_ms" => r.max_solve_ms,
        _ => unreachable!("unknown metric {name}"),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BatchStats {
    pub controller: String,
    pub n: usize,
    /// Set when `n == 1`; every `std` is then reported as 0.
    pub single_run: bool,
    pub metrics: Vec<(String, MeanStd)>,
    pub runs: Vec<RunStats>,
}

impl BatchStats {
    pub fn get(&self, name: &str) -> Option<MeanStd> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

/// Sample mean and (n-1) standard deviation of each metric.
pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd::default();
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return MeanStd { mean, std: 0.0 };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    MeanStd { mean, std: var.sqrt() }
}

pub fn batch(runs: &[RunStats]) -> Result<BatchStats, CoreError> {
    let first = runs.first().ok_or(CoreError::EmptyBatch)?;
    let metrics = METRICS
        .iter()
        .map(|&name| {
            let vals: Vec<f64> = runs.iter().map(|r| metric(r, name)).collect();
            (name.to_string(), mean_std(&vals))
        })
        .collect();
    Ok(BatchStats {
        controller: first.controller.clone(),
        n: runs.len(),
        single_run: runs.len() == 1,
        metrics,
        runs: runs.to_vec(),
    })
}

/// One row per controller with `mean` and `std` columns per metric.
pub fn write_batch_csv<W: Write>(batches: &[BatchStats], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["controller".to_string(), "n".to_string()];
    for m in METRICS {
        header.push(format!("{m}_mean"));
        header.push(format!("{m}_std"));
    }
    out.write_record(&header)?;
    for b in batches {
        let mut row = vec![b.controller.clone(), b.n.to_string()];
        for m in METRICS {
            let v = b.get(m).unwrap_or_default();
            row.push(format!("{:.9}", v.mean));
            row.push(format!("{:.9}", v.std));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-seed rows, suitable for distribution plots.
pub fn write_runs_csv<W: Write>(runs: &[RunStats], w: W) -> Result<(), csv::Error> {
    let mut out = csv::Writer::from_writer(w);
    for r in runs {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}
