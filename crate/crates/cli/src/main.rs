use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::{Parser, ValueEnum};
use evpool_cli::{
    apply, parse_m_list, parse_seeds, run_batch, run_bench, run_m_sweep, run_single, BenchSpec, Overrides,
    DEFAULT_M_VALUES,
};
use evpool_core::{load_config, Config, ControllerKind};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Mode {
    Single,
    Batch,
    MSweep,
    Bench,
}

/// EV charging pool simulator with MPC controllers.
#[derive(Debug, Parser)]
#[command(name = "evpool", version)]
struct Args {
    /// YAML configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "single")]
    mode: Mode,
    /// afap, empc_g2v, empc_v2g, ocmf_g2v or ocmf_v2g. Batch modes run all
    /// five when omitted.
    #[arg(long, value_parser = |s: &str| s.parse::<ControllerKind>())]
    controller: Option<ControllerKind>,
    #[arg(long)]
    horizon: Option<usize>,
    /// `A..B` inclusive or a comma list.
    #[arg(long)]
    seeds: Option<String>,
    /// Discharge price multiplier(s), comma separated.
    #[arg(long)]
    m: Option<String>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for batch modes.
    #[arg(long)]
    workers: Option<usize>,
    /// Bench: comma-separated EVSE counts.
    #[arg(long)]
    evse: Option<String>,
    /// Bench: comma-separated horizons.
    #[arg(long)]
    horizons: Option<String>,
    /// Bench: timed controller steps per cell.
    #[arg(long, default_value_t = 4)]
    bench_steps: usize,
}

fn usize_list(text: &str) -> Result<Vec<usize>> {
    text.split(',').map(|s| s.trim().parse().with_context(|| format!("bad number `{s}`"))).collect()
}

fn main() -> Result<()> {
    let args = Args::parse();
    if let Some(w) = args.workers {
        rayon::ThreadPoolBuilder::new().num_threads(w.max(1)).build_global()?;
    }
    let base = match &args.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    let single_m = match &args.m {
        Some(text) if !matches!(args.mode, Mode::MSweep) => {
            let list = parse_m_list(text)?;
            anyhow::ensure!(list.len() == 1, "--m takes a single value outside m-sweep mode");
            Some(list[0])
        }
        _ => None,
    };
    let config = apply(&base, &Overrides { horizon: args.horizon, m: single_m })?;
    let seeds = match &args.seeds {
        Some(s) => parse_seeds(s)?,
        None => vec![config.simulation.seed],
    };
    let kinds: Vec<ControllerKind> = match args.controller {
        Some(k) => vec![k],
        None => ControllerKind::ALL.to_vec(),
    };

    match args.mode {
        Mode::Single => {
            let kind = args.controller.unwrap_or(ControllerKind::EmpcV2g);
            let s = run_single(&config, kind, seeds[0], &args.out)?;
            println!(
                "{kind} seed {}: profit {:.2} EUR, charged {:.1} kWh, discharged {:.1} kWh, overloads {}, misses {}",
                s.seed, s.profit_eur, s.energy_charged_kwh, s.energy_discharged_kwh, s.overload_steps, s.departure_misses
            );
        }
        Mode::Batch => {
            let summary = run_batch(&config, &kinds, &seeds, &args.out)?;
            for b in &summary.batches {
                let p = b.get("profit_eur").unwrap_or_default();
                println!("{:<9} n={:<3} profit {:>8.2} +- {:.2} EUR", b.controller, b.n, p.mean, p.std);
            }
            for f in &summary.failures {
                eprintln!("failed: seed {} {}: {}", f.seed, f.controller, f.error);
            }
        }
        Mode::MSweep => {
            let m_values = match &args.m {
                Some(text) => parse_m_list(text)?,
                None => DEFAULT_M_VALUES.to_vec(),
            };
            for (m, summary) in run_m_sweep(&config, &kinds, &seeds, &m_values, &args.out)? {
                for b in &summary.batches {
                    let p = b.get("profit_eur").unwrap_or_default();
                    println!("m={m:<4} {:<9} profit {:>8.2} +- {:.2} EUR", b.controller, p.mean, p.std);
                }
            }
        }
        Mode::Bench => {
            let mut spec = BenchSpec { steps: args.bench_steps, ..BenchSpec::default() };
            if let Some(text) = &args.evse {
                spec.evse_counts = usize_list(text)?;
            }
            if let Some(text) = &args.horizons {
                spec.horizons = usize_list(text)?;
            }
            if args.controller.is_some() {
                spec.kinds = kinds;
            }
            for r in run_bench(&config, &spec, seeds[0], &args.out)? {
                println!(
                    "{:<9} evse={:<3} H={:<3} mean {:>9.1} ms  max {:>9.1} ms  fallbacks {}{}",
                    r.controller,
                    r.evse,
                    r.horizon,
                    r.mean_step_ms,
                    r.max_step_ms,
                    r.fallback_steps,
                    if r.capped { "  (capped)" } else { "" }
                );
            }
        }
    }
    Ok(())
}
