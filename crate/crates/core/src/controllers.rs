//! Charging strategies: the AFAP baseline and the receding-horizon eMPC and
//! OCMF controllers in G2V and V2G variants.

use std::collections::HashMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use evpool_milp::{solve, MilpProblem, Sense, SolverOptions};
use serde::Serialize;

use crate::error::CoreError;
use crate::prediction::{departure_constraints, soc_lower_bounds, HorizonView, LiftedModel};
use crate::scenario::{ChargerSpec, EvSession, Scenario};
use crate::simengine::{Environment, PoolState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerKind {
    Afap,
    EmpcG2v,
    EmpcV2g,
    OcmfG2v,
    OcmfV2g,
}

impl ControllerKind {
    pub const ALL: [ControllerKind; 5] = [
        ControllerKind::Afap,
        ControllerKind::OcmfG2v,
        ControllerKind::OcmfV2g,
        ControllerKind::EmpcG2v,
        ControllerKind::EmpcV2g,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Afap => "afap",
            Self::EmpcG2v => "empc_g2v",
            Self::EmpcV2g => "empc_v2g",
            Self::OcmfG2v => "ocmf_g2v",
            Self::OcmfV2g => "ocmf_v2g",
        }
    }

    pub fn is_v2g(self) -> bool {
        matches!(self, Self::EmpcV2g | Self::OcmfV2g)
    }

    pub fn is_ocmf(self) -> bool {
        matches!(self, Self::OcmfG2v | Self::OcmfV2g)
    }

    pub fn is_mpc(self) -> bool {
        self != Self::Afap
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ControllerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == norm)
            .ok_or_else(|| {
                format!("unknown controller `{s}` (expected afap, empc_g2v, empc_v2g, ocmf_g2v, ocmf_v2g)")
            })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerConfig {
    pub kind: ControllerKind,
    pub horizon: usize,
    /// EUR per unit of departure SoC shortfall in the elastic re-solve.
    pub slack_penalty: f64,
    pub node_limit: usize,
    pub time_limit: Duration,
    /// Forecast standard deviations of transformer headroom held back
    /// beyond the current step.
    pub margin_sigmas: f64,
    pub reserve_fraction: f64,
}

impl ControllerConfig {
    pub fn from_scenario(kind: ControllerKind, scenario: &Scenario) -> Self {
        let c = &scenario.config;
        Self {
            kind,
            horizon: c.simulation.horizon_steps,
            slack_penalty: c.solver.slack_penalty,
            node_limit: c.solver.node_limit,
            time_limit: Duration::from_secs_f64(c.solver.time_limit_s),
            margin_sigmas: c.solver.margin_sigmas,
            reserve_fraction: c.solver.reserve_fraction,
        }
    }

    /// Slack must never be cheaper than buying the energy outright.
    pub fn validate(&self, scenario: &Scenario) -> Result<(), CoreError> {
        if self.horizon < 1 {
            return Err(CoreError::field("horizon", "must be at least 1"));
        }
        let max_price = scenario
            .prices
            .charge_price
            .iter()
            .chain(&scenario.prices.discharge_price)
            .chain(&scenario.prices.flex_charge_price)
            .chain(&scenario.prices.flex_discharge_price)
            .fold(0.0f64, |m, p| m.max(p.abs()));
        let max_e = scenario.sessions.iter().map(|s| s.capacity_kwh).fold(0.0, f64::max);
        let floor = max_price * max_e / scenario.dt_h();
        if self.slack_penalty <= floor {
            return Err(CoreError::field(
                "slack_penalty",
                format!("{} must exceed max price * E / dt = {floor}", self.slack_penalty),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct SolveDiagnostics {
    pub step: usize,
    pub status: String,
    pub objective: f64,
    pub nodes: usize,
    pub solve_ms: f64,
    /// Departure SoC shortfall absorbed by slack, SoC units.
    pub slack_used: f64,
    /// Transformer excess absorbed by slack in the plan, kW.
    pub transformer_slack_kw: f64,
    /// Planned flexibility band at the current step, kW.
    pub total_flex_kw: f64,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionPlan {
    pub actions: Vec<f64>,
    /// `[charger][h]` planned powers in kW.
    pub planned_pc: Vec<Vec<f64>>,
    pub planned_pd: Vec<Vec<f64>>,
    pub planned_fc: Vec<Vec<f64>>,
    pub planned_fd: Vec<Vec<f64>>,
    pub diagnostics: SolveDiagnostics,
}

impl ActionPlan {
    fn empty(n: usize, horizon: usize, step: usize, status: &str) -> Self {
        Self {
            actions: vec![0.0; n],
            planned_pc: vec![vec![0.0; horizon]; n],
            planned_pd: vec![vec![0.0; horizon]; n],
            planned_fc: vec![vec![0.0; horizon]; n],
            planned_fd: vec![vec![0.0; horizon]; n],
            diagnostics: SolveDiagnostics { step, status: status.into(), ..Default::default() },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarKind {
    Charge,
    Discharge,
    Mode,
    FlexCharge,
    FlexDischarge,
    /// Energy stored, kWh, at the end of the step.
    Energy,
    DepartureSlack,
    TransformerSlack,
}

/// Identifies a variable independently of the step at which the problem
/// was built, so plans can be carried over between steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct VarKey {
    pub kind: VarKind,
    /// Charger index, or transformer index for transformer slack.
    pub unit: usize,
    pub abs_step: usize,
}

#[derive(Debug, Clone)]
pub struct MpcProblem {
    pub problem: MilpProblem,
    pub keys: Vec<VarKey>,
    pub index: HashMap<VarKey, usize>,
    pub step: usize,
    pub horizon: usize,
    pub n_chargers: usize,
}

impl MpcProblem {
    pub fn var(&self, kind: VarKind, unit: usize, h: usize) -> Option<usize> {
        self.index.get(&VarKey { kind, unit, abs_step: self.step + h }).copied()
    }

    pub fn value(&self, x: &[f64], kind: VarKind, unit: usize, h: usize) -> f64 {
        self.var(kind, unit, h).map_or(0.0, |j| x[j])
    }

    fn add(&mut self, key: VarKey, name: String, cost: f64, lo: f64, hi: f64) -> usize {
        let j = if key.kind == VarKind::Mode {
            self.problem.add_binary(name, cost)
        } else {
            self.problem.add_var(name, cost, lo, hi)
        };
        self.keys.push(key);
        self.index.insert(key, j);
        j
    }
}

/// Which optional parts of the formulation to include.
#[derive(Debug, Clone, Copy)]
pub struct Formulation {
    pub v2g: bool,
    pub flex: bool,
    /// Departure and transformer slack with this penalty; `None` builds the
    /// hard problem.
    pub elastic_penalty: Option<f64>,
    /// Forecast standard deviations of headroom reserved for `h >= 1`.
    pub margin_sigmas: f64,
    /// Derated charging power, as a fraction of rated, that must still
    /// reach the departure minimum from every planned state. `None`
    /// constrains only the departure and terminal states.
    pub reserve_fraction: Option<f64>,
}

/// Remaining energy (kWh) an EV needs to reach its departure minimum.
fn energy_needed(s: &EvSession, soc: f64) -> f64 {
    ((s.soc_required_min - soc) * s.capacity_kwh).max(0.0)
}

/// Steps at which charger flexibility is withheld: the EV must charge flat
/// out from there on to make its departure SoC, and the last step before
/// departure.
fn flex_blocked(view: &HorizonView, scenario: &Scenario, i: usize, h: usize) -> bool {
    let Some(sidx) = view.session[i] else { return true };
    let s = &scenario.sessions[sidx];
    let k = view.step + h;
    if k + 1 >= s.departure_step {
        return true;
    }
    let per_step = view.dt_h * s.eta_charge * scenario.chargers[i].max_charge_kw;
    let need = energy_needed(s, view.x0[i]);
    need > (s.departure_step - k) as f64 * per_step - 1e-9
}

/// Builds the eMPC or OCMF problem for the current view.
pub fn build_mpc(view: &HorizonView, scenario: &Scenario, form: Formulation) -> MpcProblem {
    let lifted = LiftedModel::lift(view);
    let k = view.step;
    let n = view.n_chargers;
    let dt = view.dt_h;
    let prices = &scenario.prices;
    let price = |series: &[f64], h: usize| series.get(k + h).copied().unwrap_or(0.0);
    let mut mp = MpcProblem {
        problem: MilpProblem::new(),
        keys: Vec::new(),
        index: HashMap::new(),
        step: k,
        horizon: view.horizon,
        n_chargers: n,
    };
    let lower = soc_lower_bounds(view, scenario);

    // Power, mode and flexibility variables with their coupling rows.
    let mut col_var: HashMap<usize, usize> = HashMap::new();
    for i in 0..n {
        let spec: &ChargerSpec = &scenario.chargers[i];
        for h in 0..view.horizon {
            if view.xi[i][h] == 0 {
                continue;
            }
            let key = |kind| VarKey { kind, unit: i, abs_step: k + h };
            let pbar_c = spec.max_charge_kw;
            let pbar_d = spec.max_discharge_kw;
            let pc = mp.add(key(VarKind::Charge), format!("pc_{i}_{h}"), dt * price(&prices.charge_price, h), 0.0, pbar_c);
            col_var.insert(lifted.charge_col(i, h), pc);
            let blocked = flex_blocked(view, scenario, i, h);
            let fc = form.flex.then(|| {
                let hi = if blocked { 0.0 } else { pbar_c };
                mp.add(key(VarKind::FlexCharge), format!("fc_{i}_{h}"), -dt * price(&prices.flex_charge_price, h), 0.0, hi)
            });
            if let Some(fc) = fc {
                mp.problem.add_constraint(vec![(fc, 1.0), (pc, -1.0)], Sense::Le, 0.0);
                mp.problem.add_constraint(vec![(pc, 1.0), (fc, 1.0)], Sense::Le, pbar_c);
            }
            if !form.v2g {
                continue;
            }
            let pd = mp.add(key(VarKind::Discharge), format!("pd_{i}_{h}"), -dt * price(&prices.discharge_price, h), 0.0, pbar_d);
            col_var.insert(lifted.discharge_col(i, h), pd);
            let z = mp.add(key(VarKind::Mode), format!("z_{i}_{h}"), 0.0, 0.0, 1.0);
            mp.problem.add_constraint(vec![(pc, 1.0), (z, -pbar_c)], Sense::Le, 0.0);
            mp.problem.add_constraint(vec![(pd, 1.0), (z, pbar_d)], Sense::Le, pbar_d);
            if form.flex {
                let hi = if blocked { 0.0 } else { pbar_d };
                let fd = mp.add(key(VarKind::FlexDischarge), format!("fd_{i}_{h}"), -dt * price(&prices.flex_discharge_price, h), 0.0, hi);
                mp.problem.add_constraint(vec![(fd, 1.0), (pd, -1.0)], Sense::Le, 0.0);
                mp.problem.add_constraint(vec![(pd, 1.0), (fd, 1.0)], Sense::Le, pbar_d);
            }
        }
    }

    // Stored energy per connected step from the lifted model, in kWh.
    let deps = departure_constraints(view, scenario);
    for i in 0..n {
        let Some(sidx) = view.session[i] else { continue };
        let sess = &scenario.sessions[sidx];
        let e = sess.capacity_kwh;
        let gain = sess.charge_gain(scenario.chargers[i].max_charge_kw, dt);
        for h in 0..view.active_steps(i) {
            let mut lo = lower[i];
            if let Some(rho) = form.reserve_fraction {
                // Stay inside the charging funnel, or catch up at full power.
                let after = sess.departure_step.saturating_sub(k + h + 1) as f64;
                let funnel = sess.soc_required_min - after * rho * gain;
                let reachable = view.x0[i] + (h + 1) as f64 * gain;
                lo = lo.max(funnel.min(reachable).min(1.0));
            }
            let mut hi: f64 = 1.0;
            let dep = deps.iter().find(|d| d.charger == i && d.block == h);
            if let Some(d) = dep {
                hi = hi.min(d.max_soc);
                if form.elastic_penalty.is_none() {
                    lo = lo.max(d.min_soc);
                }
            }
            let s = mp.add(
                VarKey { kind: VarKind::Energy, unit: i, abs_step: k + h + 1 },
                format!("e_{i}_{h}"),
                0.0,
                e * lo,
                e * hi.max(lo),
            );
            let mut row = vec![(s, 1.0)];
            for (col, g) in lifted.input_row(i, h) {
                if let Some(&j) = col_var.get(&col) {
                    row.push((j, -e * g));
                }
            }
            mp.problem.add_constraint(row, Sense::Eq, e * lifted.free_response(i, h));
            if let (Some(d), Some(penalty)) = (dep, form.elastic_penalty) {
                if d.min_soc > lo {
                    let sl = mp.add(
                        VarKey { kind: VarKind::DepartureSlack, unit: i, abs_step: k + h + 1 },
                        format!("ds_{i}_{h}"),
                        penalty,
                        0.0,
                        d.min_soc,
                    );
                    mp.problem.add_constraint(vec![(s, 1.0), (sl, e)], Sense::Ge, e * d.min_soc);
                }
            }
        }
    }

    // Transformer balance with forecast load and PV and announced DR. Slack
    // costs as much per kWh as a unit SoC shortfall of the largest battery.
    let max_capacity = scenario.sessions.iter().map(|s| s.capacity_kwh).fold(1.0, f64::max);
    for (g, t) in scenario.transformers.iter().enumerate() {
        for h in 0..view.horizon {
            let mut row = Vec::new();
            let mut offset_capacity = 0.0;
            for &i in &t.charger_ids {
                if let Some(pc) = mp.var(VarKind::Charge, i, h) {
                    row.push((pc, 1.0));
                }
                if let Some(pd) = mp.var(VarKind::Discharge, i, h) {
                    row.push((pd, -1.0));
                    offset_capacity += scenario.chargers[i].max_discharge_kw;
                }
            }
            if row.is_empty() {
                continue;
            }
            let f = &view.forecast;
            let mut rhs = t.power_limit_kw - f.dr_kw[g][h] - f.load_kw[g][h] + f.pv_kw[g][h];
            if h > 0 {
                let fp = &scenario.config.forecast;
                let sl = fp.load_std_fraction * f.load_kw[g][h];
                let sw = fp.pv_std_fraction * f.pv_kw[g][h];
                rhs -= form.margin_sigmas * sl.hypot(sw);
            }
            // The pool cannot offset more inflexible load than it can discharge.
            let rhs = rhs.max(-offset_capacity);
            if let Some(penalty) = form.elastic_penalty {
                let tau = mp.add(
                    VarKey { kind: VarKind::TransformerSlack, unit: g, abs_step: k + h },
                    format!("ts_{g}_{h}"),
                    penalty * dt / max_capacity,
                    0.0,
                    f64::INFINITY,
                );
                row.push((tau, -1.0));
            }
            mp.problem.add_constraint(row, Sense::Le, rhs);
        }
    }
    mp
}

pub fn build_empc(view: &HorizonView, scenario: &Scenario, v2g: bool) -> MpcProblem {
    build_mpc(view, scenario, Formulation { v2g, flex: false, elastic_penalty: None, margin_sigmas: 0.0, reserve_fraction: None })
}

pub fn build_ocmf(view: &HorizonView, scenario: &Scenario, v2g: bool) -> MpcProblem {
    build_mpc(view, scenario, Formulation { v2g, flex: true, elastic_penalty: None, margin_sigmas: 0.0, reserve_fraction: None })
}

/// Charge units still needed to reach the departure minimum, where one
/// unit is the energy of the lowest pilot increment over one step.
fn units_needed(s: &EvSession, soc: f64, unit_kwh: f64) -> i64 {
    let need = energy_needed(s, soc);
    if need <= 0.0 {
        0
    } else {
        (need / unit_kwh - 1e-9).ceil() as i64
    }
}

/// Per-charger pilot-level choice for one step. Levels are in units of
/// `rated / top_level`; valid levels are 0 and `min..=top`.
struct Snap {
    top: i64,
    min: i64,
}

impl Snap {
    fn new(spec: &ChargerSpec) -> Self {
        Self { top: spec.max_level() as i64, min: spec.min_level() as i64 }
    }

    fn is_level(&self, u: i64) -> bool {
        u == 0 || (self.min..=self.top).contains(&u)
    }

    /// G2V landing rule: after charging `u`, the remaining need must be zero
    /// or still reachable with whole pilot levels in the steps left.
    fn g2v_ok(&self, u: i64, need: i64, steps_left: i64) -> bool {
        if !self.is_level(u) || u > need {
            return false;
        }
        let rest = need - u;
        rest == 0 || (rest >= self.min && rest <= self.top * (steps_left - 1))
    }

    fn g2v_options(&self, need: i64, steps_left: i64) -> Vec<i64> {
        let opts: Vec<i64> = (0..=self.top).filter(|&u| self.g2v_ok(u, need, steps_left)).collect();
        if !opts.is_empty() {
            return opts;
        }
        // Unreachable target: charge as much as possible.
        vec![need.clamp(0, self.top).max(if need > 0 { self.min } else { 0 })]
    }

    fn nearest(options: &[i64], target: f64) -> i64 {
        let mut best = options[0];
        for &u in options {
            if (u as f64 - target).abs() < (best as f64 - target).abs() - 1e-9 {
                best = u;
            }
        }
        best
    }

    fn unit_kw(&self, rated: f64) -> f64 {
        rated / self.top as f64
    }
}

/// Converts planned first-step powers into pilot-level actions. G2V
/// controllers land exactly on the departure minimum so every G2V strategy
/// delivers the same energy; V2G controllers round discharge down and
/// charge to the nearest level that keeps the departure reachable. MPC
/// dispatch then steps chargers down until each transformer is within its
/// current headroom, even at the cost of the departure target.
pub fn dispatch(
    state: &PoolState,
    scenario: &Scenario,
    kind: ControllerKind,
    plan_pc: &[f64],
    plan_pd: &[f64],
    headroom_kw: &[f64],
) -> Vec<f64> {
    let k = state.step;
    let dt = scenario.dt_h();
    let n = state.chargers.len();
    let mut units = vec![0i64; n];
    let mut options: Vec<Vec<i64>> = vec![Vec::new(); n];
    let mut discharge = vec![false; n];
    let mut final_step = vec![false; n];
    for (i, c) in state.chargers.iter().enumerate() {
        let Some(sidx) = c.session else { continue };
        let s = &scenario.sessions[sidx];
        let spec = &scenario.chargers[i];
        let snap = Snap::new(spec);
        if snap.top == 0 {
            continue;
        }
        let unit_kw = snap.unit_kw(spec.max_charge_kw);
        let unit_kwh = unit_kw * dt * s.eta_charge;
        let need = units_needed(s, c.soc, unit_kwh);
        let steps_left = (s.departure_step - k) as i64;
        final_step[i] = steps_left <= 1;
        if !kind.is_v2g() {
            let opts = snap.g2v_options(need, steps_left);
            let target = if kind == ControllerKind::Afap { snap.top as f64 } else { plan_pc[i] / unit_kw };
            units[i] = Snap::nearest(&opts, target);
            options[i] = opts;
            continue;
        }
        if plan_pd[i] > plan_pc[i] {
            let d_unit_kw = snap.unit_kw(spec.max_discharge_kw);
            let mut u = (plan_pd[i] / d_unit_kw + 1e-9).floor() as i64;
            if u < snap.min {
                u = 0;
            }
            // Keep the departure reachable after discharging.
            let d_unit_kwh = d_unit_kw * dt / s.eta_discharge;
            while u > 0 {
                let extra = (u as f64 * d_unit_kwh / unit_kwh).ceil() as i64;
                if need + extra <= snap.top * (steps_left - 1) {
                    break;
                }
                u = if u - 1 < snap.min { 0 } else { u - 1 };
            }
            if u > 0 {
                units[i] = -u;
                discharge[i] = true;
                continue;
            }
        }
        let floor_u = (need - snap.top * (steps_left - 1)).max(0);
        let opts: Vec<i64> = (0..=snap.top).filter(|&u| snap.is_level(u) && u >= floor_u).collect();
        let opts = if opts.is_empty() { vec![snap.top] } else { opts };
        // Round up while the EV still needs energy, so rounding never
        // leaves a departure short.
        let target = plan_pc[i] / unit_kw;
        units[i] = if need > 0 && target > 1e-6 {
            opts.iter().copied().find(|&u| u as f64 >= target - 1e-6).unwrap_or(snap.top)
        } else {
            Snap::nearest(&opts, target)
        };
        options[i] = opts;
    }

    if kind.is_mpc() {
        for (g, t) in scenario.transformers.iter().enumerate() {
            let unit = |i: usize| scenario.chargers[i].max_charge_kw / scenario.chargers[i].max_level().max(1) as f64;
            let min_level = |i: usize| scenario.chargers[i].min_level() as i64;
            let dunit = |i: usize| scenario.chargers[i].max_discharge_kw / scenario.chargers[i].max_level().max(1) as f64;
            let cap = headroom_kw[g] + 1e-9;
            let total = |units: &[i64]| -> f64 {
                t.charger_ids
                    .iter()
                    .map(|&i| if units[i] >= 0 { units[i] as f64 * unit(i) } else { units[i] as f64 * dunit(i) })
                    .sum()
            };
            while total(&units) > cap {
                // Step down the charger that rounded up the most, sparing
                // EVs in their last step since they cannot catch up.
                let pick = t
                    .charger_ids
                    .iter()
                    .copied()
                    .filter(|&i| !discharge[i] && units[i] > 0)
                    .map(|i| {
                        // The transformer outranks the departure landing rule.
                        let lower = options[i]
                            .iter()
                            .copied()
                            .filter(|&u| u < units[i])
                            .max()
                            .unwrap_or(if units[i] > min_level(i) { units[i] - 1 } else { 0 });
                        (!final_step[i], units[i] as f64 * unit(i) - plan_pc[i], i, lower)
                    })
                    .max_by(|a, b| a.0.cmp(&b.0).then(a.1.total_cmp(&b.1)).then(b.2.cmp(&a.2)));
                let Some((_, _, i, lower)) = pick else { break };
                units[i] = lower;
            }
        }
    }

    (0..n)
        .map(|i| {
            let top = scenario.chargers[i].max_level().max(1) as f64;
            units[i] as f64 / top
        })
        .collect()
}

/// AFAP: full power for every connected EV still below its departure
/// minimum, landing exactly on it at the last charging step.
pub fn afap(state: &PoolState, scenario: &Scenario) -> Vec<f64> {
    let n = state.chargers.len();
    dispatch(state, scenario, ControllerKind::Afap, &vec![0.0; n], &vec![0.0; n], &[])
}

pub struct Controller {
    pub config: ControllerConfig,
    warm: HashMap<VarKey, f64>,
    log: Vec<SolveDiagnostics>,
}

impl Controller {
    pub fn new(config: ControllerConfig, scenario: &Scenario) -> Result<Self, CoreError> {
        if config.kind.is_mpc() {
            config.validate(scenario)?;
        }
        Ok(Self { config, warm: HashMap::new(), log: Vec::new() })
    }

    pub fn kind(&self) -> ControllerKind {
        self.config.kind
    }

    pub fn log(&self) -> &[SolveDiagnostics] {
        &self.log
    }

    fn options(&self) -> SolverOptions {
        SolverOptions {
            node_limit: self.config.node_limit,
            time_limit: self.config.time_limit,
            ..SolverOptions::default()
        }
    }

    fn warm_start(&self, mp: &MpcProblem) -> Option<Vec<f64>> {
        if self.warm.is_empty() {
            return None;
        }
        Some(
            mp.keys
                .iter()
                .map(|key| match self.warm.get(key) {
                    Some(&v) => v,
                    None if key.kind == VarKind::Mode => 1.0,
                    None => 0.0,
                })
                .collect(),
        )
    }

    /// One receding-horizon step: build the view, solve, apply the first
    /// slice. Infeasible problems are re-solved with penalized slack; a
    /// solver that stops without any feasible point falls back to AFAP.
    pub fn act(&mut self, env: &Environment<'_>) -> ActionPlan {
        let state = env.state();
        let scenario = env.scenario();
        let n = state.chargers.len();
        let hz = self.config.horizon;
        let k = state.step;
        if self.config.kind == ControllerKind::Afap {
            let mut plan = ActionPlan::empty(n, hz, k, "afap");
            plan.actions = afap(state, scenario);
            return plan;
        }
        if state.chargers.iter().all(|c| c.session.is_none()) {
            let plan = ActionPlan::empty(n, hz, k, "idle");
            self.log.push(plan.diagnostics.clone());
            self.warm.clear();
            return plan;
        }
        let start = Instant::now();
        let view = HorizonView::build(state, scenario, hz, env.forecast(hz));
        let kind = self.config.kind;
        let form = Formulation {
            v2g: kind.is_v2g(),
            flex: kind.is_ocmf(),
            elastic_penalty: None,
            margin_sigmas: self.config.margin_sigmas,
            reserve_fraction: Some(self.config.reserve_fraction),
        };
        let opts = self.options();

        let mut mp = build_mpc(&view, scenario, form);
        mp.problem.warm_start = self.warm_start(&mp);
        let mut sol = solve(&mp.problem, &opts).ok();
        let mut nodes = sol.as_ref().map_or(0, |s| s.node_count);
        let needs_elastic = sol.as_ref().map_or(true, |s| !s.has_solution());
        if needs_elastic {
            let elastic =
                Formulation { elastic_penalty: Some(self.config.slack_penalty), reserve_fraction: None, ..form };
            mp = build_mpc(&view, scenario, elastic);
            mp.problem.warm_start = self.warm_start(&mp);
            sol = solve(&mp.problem, &opts).ok();
            nodes += sol.as_ref().map_or(0, |s| s.node_count);
        }

        let mut plan = ActionPlan::empty(n, hz, k, "");
        let Some(sol) = sol.filter(|s| s.has_solution()) else {
            plan.actions = afap(state, scenario);
            plan.diagnostics.status = "fallback".into();
            plan.diagnostics.fallback = true;
            plan.diagnostics.nodes = nodes;
            plan.diagnostics.solve_ms = start.elapsed().as_secs_f64() * 1e3;
            self.warm.clear();
            self.log.push(plan.diagnostics.clone());
            return plan;
        };
        let x = &sol.values;
        for i in 0..n {
            for h in 0..hz {
                plan.planned_pc[i][h] = mp.value(x, VarKind::Charge, i, h);
                plan.planned_pd[i][h] = mp.value(x, VarKind::Discharge, i, h);
                plan.planned_fc[i][h] = mp.value(x, VarKind::FlexCharge, i, h);
                plan.planned_fd[i][h] = mp.value(x, VarKind::FlexDischarge, i, h);
            }
        }
        let mut slack = 0.0;
        let mut tslack = 0.0;
        for (j, key) in mp.keys.iter().enumerate() {
            match key.kind {
                VarKind::DepartureSlack => slack += x[j],
                VarKind::TransformerSlack if key.abs_step == k => tslack += x[j],
                _ => {}
            }
        }
        let pc0: Vec<f64> = plan.planned_pc.iter().map(|r| r[0]).collect();
        let pd0: Vec<f64> = plan.planned_pd.iter().map(|r| r[0]).collect();
        let headroom: Vec<f64> = (0..scenario.transformers.len())
            .map(|g| {
                let f = &view.forecast;
                scenario.transformers[g].power_limit_kw - f.dr_kw[g][0] - f.load_kw[g][0] + f.pv_kw[g][0]
            })
            .collect();
        plan.actions = dispatch(state, scenario, kind, &pc0, &pd0, &headroom);
        self.warm = mp.keys.iter().copied().zip(x.iter().copied()).collect();
        plan.diagnostics = SolveDiagnostics {
            step: k,
            status: if needs_elastic { format!("{}_elastic", sol.status) } else { sol.status.to_string() },
            objective: sol.objective,
            nodes,
            solve_ms: start.elapsed().as_secs_f64() * 1e3,
            slack_used: slack,
            transformer_slack_kw: tslack,
            total_flex_kw: (0..n).map(|i| plan.planned_fc[i][0] + plan.planned_fd[i][0]).sum(),
            fallback: false,
        };
        self.log.push(plan.diagnostics.clone());
        plan
    }

    pub fn write_log_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "step", "status", "objective", "nodes", "solve_ms", "slack_used", "transformer_slack_kw",
            "total_flex_kw", "fallback",
        ])?;
        for d in &self.log {
            out.write_record([
                d.step.to_string(),
                d.status.clone(),
                format!("{:.6}", d.objective),
                d.nodes.to_string(),
                format!("{:.3}", d.solve_ms),
                format!("{:.6}", d.slack_used),
                format!("{:.4}", d.transformer_slack_kw),
                format!("{:.4}", d.total_flex_kw),
                (d.fallback as u8).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}
