use std::time::Instant;

use evpool_core::prediction::{departure_constraints, soc_lower_bounds, HorizonView, LiftedModel};
use evpool_core::scenario::{seeded_rng, Config, EvSession, Scenario};
use evpool_core::simengine::{ChargerState, Forecast, PoolState};
use rand::Rng;

fn session(id: usize, charger: usize, a: usize, d: usize, soc: f64) -> EvSession {
    EvSession {
        id,
        charger_id: charger,
        arrival_step: a,
        departure_step: d,
        soc_arrival: soc,
        soc_required_min: 0.8,
        soc_required_max: 1.0,
        capacity_kwh: 50.0,
        soc_floor: 0.1,
        eta_charge: 1.0,
        eta_discharge: 1.0,
    }
}

fn view_for(sessions: Vec<EvSession>, k: usize, socs: &[f64], horizon: usize) -> (HorizonView, Scenario) {
    let mut sc = Scenario::build(&Config::default(), 1).unwrap();
    sc.sessions = sessions;
    let mut chargers = vec![ChargerState { connected: false, session: None, soc: 0.0 }; sc.chargers.len()];
    for (idx, s) in sc.sessions.iter().enumerate() {
        chargers[s.charger_id] = ChargerState { connected: true, session: Some(idx), soc: socs[idx] };
    }
    let state = PoolState { step: k, chargers };
    let forecast = Forecast { load_kw: vec![vec![0.0; horizon]], pv_kw: vec![vec![0.0; horizon]], dr_kw: vec![vec![0.0; horizon]] };
    (HorizonView::build(&state, &sc, horizon, forecast), sc)
}

#[test]
fn availability_and_input_gains() {
    let (v, _) = view_for(vec![session(0, 0, 0, 13, 0.5)], 10, &[0.5], 5);
    assert_eq!(v.xi[0], vec![1, 1, 1, 0, 0]);
    assert_eq!(v.xi[1], vec![0; 5]);
    assert_eq!(v.bc[1], vec![0.0; 5]);
    assert!((v.bc[0][0] - 0.005).abs() < 1e-15);
    assert!((v.bd[0][0] - 0.005).abs() < 1e-15);
}

#[test]
fn three_step_example() {
    let (v, _) = view_for(vec![session(0, 0, 0, 50, 0.5)], 0, &[0.5], 3);
    let m = LiftedModel::lift(&v);
    let mut p = vec![0.0; 2 * 3 * v.n_chargers];
    p[m.charge_col(0, 0)] = 22.0;
    p[m.charge_col(0, 2)] = 11.0;
    let x = m.predict(&p);
    let n = v.n_chargers;
    let traj = [x[0], x[n], x[2 * n]];
    for (got, want) in traj.iter().zip([0.61, 0.61, 0.665]) {
        assert!((got - want).abs() < 1e-12, "{traj:?}");
    }
}

#[test]
fn single_step_is_base_model() {
    let (v, _) = view_for(vec![session(0, 2, 0, 50, 0.3)], 0, &[0.3], 1);
    let m = LiftedModel::lift(&v);
    assert_eq!(m.a_stack[(2, 2)], 1.0);
    assert_eq!(m.g_stack[(2, m.charge_col(2, 0))], v.bc[2][0]);
    assert_eq!(m.g_stack[(2, m.discharge_col(2, 0))], -v.bd[2][0]);
    assert_eq!(m.a_stack[(0, 0)], 0.0);
}

/// Step-by-step recursion written independently of the lifted matrices.
fn simulate(v: &HorizonView, p: &[f64]) -> Vec<f64> {
    let n = v.n_chargers;
    let mut x = v.x0.clone();
    let mut out = Vec::with_capacity(n * v.horizon);
    for h in 0..v.horizon {
        for i in 0..n {
            let xi = v.xi[i][h] as f64;
            let pc = p[h * 2 * n + 2 * i];
            let pd = p[h * 2 * n + 2 * i + 1];
            x[i] = xi * x[i] + xi * (v.bc[i][h] * pc - v.bd[i][h] * pd);
        }
        out.extend_from_slice(&x);
    }
    out
}

#[test]
fn lifted_prediction_matches_recursion() {
    let start = Instant::now();
    let mut rng = seeded_rng(2024, 0);
    let mut worst: f64 = 0.0;
    for _ in 0..500 {
        let n = rng.gen_range(1..=6);
        let hz = rng.gen_range(1..=16);
        let mut xi = vec![vec![0u8; hz]; n];
        let mut bc = vec![vec![0.0; hz]; n];
        let mut bd = vec![vec![0.0; hz]; n];
        for i in 0..n {
            let e = rng.gen_range(20.0..100.0);
            let etac = rng.gen_range(0.85..=1.0);
            let etad = rng.gen_range(0.85..=1.0);
            for h in 0..hz {
                // Mostly connected, with gaps to exercise the annihilation.
                if rng.gen_bool(0.8) {
                    xi[i][h] = 1;
                    bc[i][h] = 0.25 * etac / e;
                    bd[i][h] = 0.25 / (e * etad);
                }
            }
        }
        let v = HorizonView {
            step: 0,
            horizon: hz,
            n_chargers: n,
            dt_h: 0.25,
            xi,
            bc,
            bd,
            session: vec![None; n],
            x0: (0..n).map(|_| rng.gen_range(0.0..1.0)).collect(),
            forecast: Forecast { load_kw: vec![], pv_kw: vec![], dr_kw: vec![] },
        };
        let p: Vec<f64> = (0..2 * n * hz).map(|_| rng.gen_range(0.0..22.0)).collect();
        let lifted = LiftedModel::lift(&v).predict(&p);
        let direct = simulate(&v, &p);
        for (a, b) in lifted.iter().zip(&direct) {
            worst = worst.max((a - b).abs());
        }
    }
    assert!(worst < 1e-10, "max error {worst:e}");
    assert!(start.elapsed().as_secs_f64() < 10.0);
}

#[test]
fn lower_bounds() {
    let (v, sc) = view_for(vec![session(0, 0, 0, 50, 0.05), session(1, 1, 0, 50, 0.5)], 0, &[0.05, 0.5], 4);
    let lb = soc_lower_bounds(&v, &sc);
    assert_eq!(lb[0], 0.05);
    assert_eq!(lb[1], 0.1);
    assert_eq!(lb[2], 0.0);
}

#[test]
fn departure_inside_horizon() {
    let k = 20;
    let (v, sc) = view_for(vec![session(0, 0, 0, k + 2, 0.5)], k, &[0.5], 10);
    let rows = departure_constraints(&v, &sc);
    assert_eq!(rows.len(), 1);
    // Block 1 constrains the SoC at step k + 2.
    assert_eq!(rows[0].block, 1);
    assert_eq!((rows[0].min_soc, rows[0].max_soc), (0.8, 1.0));
    assert!(!rows[0].terminal);
}

#[test]
fn terminal_reachability_bound() {
    let k = 20;
    let (v, sc) = view_for(vec![session(0, 0, 0, k + 14, 0.3)], k, &[0.3], 10);
    let rows = departure_constraints(&v, &sc);
    assert_eq!(rows[0].block, 9);
    assert!(rows[0].terminal);
    assert!((rows[0].min_soc - 0.36).abs() < 1e-12);

    // Far departures fall back to the discharge floor.
    let (v, sc) = view_for(vec![session(0, 0, 0, k + 40, 0.3)], k, &[0.3], 10);
    assert_eq!(departure_constraints(&v, &sc)[0].min_soc, 0.1);
}

#[test]
fn departure_on_horizon_boundary() {
    let k = 20;
    let (v, sc) = view_for(vec![session(0, 0, 0, k + 10, 0.3)], k, &[0.3], 10);
    let rows = departure_constraints(&v, &sc);
    assert_eq!(rows[0].block, 9);
    assert!(!rows[0].terminal);
    assert_eq!(rows[0].min_soc, 0.8);
}
