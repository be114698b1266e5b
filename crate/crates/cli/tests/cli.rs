use std::fs;
use std::path::Path;
use std::process::Command;

use evpool_cli::{apply, batch_runs, parse_m_list, parse_seeds, run_m_sweep, Overrides};
use evpool_core::{Config, ControllerKind};

fn evpool(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_evpool")).args(args).output().unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn single_run_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = evpool(&["--mode", "single", "--controller", "empc_v2g", "--seeds", "4", "--out", out]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let trace = String::from_utf8(read(dir.path(), "trace.csv")).unwrap();
    let header = trace.lines().next().unwrap();
    assert!(header.starts_with("step,charger_id,ev_id,soc,p_charge_kw,p_discharge_kw"), "{header}");
    // 96 steps for 10 chargers plus the header.
    assert_eq!(trace.lines().count(), 96 * 10 + 1);

    let log = String::from_utf8(read(dir.path(), "controller_log.csv")).unwrap();
    assert!(log.lines().next().unwrap().starts_with("step,status,objective"));
    assert!(!read(dir.path(), "degradation.csv").is_empty());

    let summary: serde_json::Value = serde_json::from_slice(&read(dir.path(), "summary.json")).unwrap();
    let run = &summary["runs"][0];
    assert_eq!(run["controller"], "empc_v2g");
    assert_eq!(run["seed"], 4);
    assert_eq!(run["overload_steps"], 0);
    assert_eq!(summary["batches"][0]["single_run"], true);
}

#[test]
fn single_runs_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        let res = evpool(&["--controller", "ocmf_g2v", "--seeds", "7", "--out", d.path().to_str().unwrap()]);
        assert!(res.status.success());
    }
    for name in ["trace.csv", "degradation.csv"] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
}

#[test]
fn bad_arguments_exit_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert!(!evpool(&["--controller", "greedy", "--out", out]).status.success());
    assert!(!evpool(&["--mode", "batch", "--seeds", "5..2", "--out", out]).status.success());
    assert!(!evpool(&["--m", "3.0", "--out", out]).status.success());
    assert!(!evpool(&["--config", "/nonexistent.yaml", "--out", out]).status.success());
}

#[test]
fn batch_mode_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let res = evpool(&["--mode", "batch", "--controller", "afap", "--seeds", "1..3", "--out", out]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let runs = String::from_utf8(read(dir.path(), "runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 4);
    let batch = String::from_utf8(read(dir.path(), "batch.csv")).unwrap();
    assert!(batch.contains("afap"));
}

#[test]
fn paired_seeds_share_scenarios() {
    let cfg = Config::default();
    let s = batch_runs(&cfg, &[ControllerKind::Afap, ControllerKind::EmpcG2v], &[3, 4]).unwrap();
    assert!(s.failures.is_empty());
    assert_eq!(s.runs.len(), 4);
    for seed in [3, 4] {
        let e: Vec<f64> = s.runs.iter().filter(|r| r.seed == seed).map(|r| r.energy_charged_kwh).collect();
        assert!((e[0] - e[1]).abs() < 1.0, "{e:?}");
    }
}

#[test]
fn m_sweep_leaves_g2v_untouched() {
    let dir = tempfile::tempdir().unwrap();
    let res = run_m_sweep(&Config::default(), &[ControllerKind::Afap], &[2], &[0.8, 1.2], dir.path()).unwrap();
    assert_eq!(res[0].1.runs[0].profit_eur.to_bits(), res[1].1.runs[0].profit_eur.to_bits());
    let rows = String::from_utf8(read(dir.path(), "m_sweep_profits.csv")).unwrap();
    assert_eq!(rows.lines().count(), 3);
}

#[test]
fn argument_parsers() {
    assert_eq!(parse_seeds("1..4").unwrap(), vec![1, 2, 3, 4]);
    assert_eq!(parse_seeds("2..=3").unwrap(), vec![2, 3]);
    assert_eq!(parse_seeds("5, 9").unwrap(), vec![5, 9]);
    assert!(parse_seeds("x").is_err());
    assert_eq!(parse_m_list("0.8,1.2").unwrap(), vec![0.8, 1.2]);
    assert!(parse_m_list("0").is_err());
    let c = apply(&Config::default(), &Overrides { horizon: Some(30), m: Some(0.9) }).unwrap();
    assert_eq!(c.simulation.horizon_steps, 30);
    assert_eq!(c.simulation.discharge_multiplier, 0.9);
    assert!(apply(&Config::default(), &Overrides { horizon: Some(0), m: None }).is_err());
}
