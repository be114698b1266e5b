//! Discrete-time charging pool plant: applies quantized actions, enforces
//! battery limits, settles cash flows and records transformer loading.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::degradation::EvTrace;
use crate::error::CoreError;
use crate::scenario::{seeded_rng, ChargerSpec, Direction, EvSession, Scenario, STREAM_FORECAST};

/// Tolerance when comparing a quantized level with a battery limit.
const LIMIT_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct ChargerState {
    pub connected: bool,
    /// Index into `Scenario::sessions`.
    pub session: Option<usize>,
    pub soc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PoolState {
    pub step: usize,
    pub chargers: Vec<ChargerState>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransformerStep {
    pub net_kw: f64,
    pub limit_kw: f64,
    pub overload: bool,
    pub dr_active: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Departure {
    pub ev_id: usize,
    pub step: usize,
    pub soc: f64,
    pub soc_required_min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    /// SoC per charger at the start of the step (0 when empty).
    pub soc: Vec<f64>,
    pub ev_ids: Vec<Option<usize>>,
    pub p_charge_kw: Vec<f64>,
    pub p_discharge_kw: Vec<f64>,
    pub transformers: Vec<TransformerStep>,
    pub price_charge: f64,
    pub price_discharge: f64,
    pub cash_eur: f64,
    pub arrivals: Vec<usize>,
    pub departures: Vec<Departure>,
}

/// Forecasts served to controllers at one step, indexed `[transformer][h]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub load_kw: Vec<Vec<f64>>,
    pub pv_kw: Vec<Vec<f64>>,
    pub dr_kw: Vec<Vec<f64>>,
}

/// Snaps a power request onto the charger's pilot levels: the nearest
/// level wins, ties go to the lower one.
pub fn quantize_power(requested_kw: f64, spec: &ChargerSpec, dir: Direction) -> Result<f64, CoreError> {
    if requested_kw < 0.0 || requested_kw.is_nan() {
        return Err(CoreError::NegativeRequest(requested_kw));
    }
    let mut best = 0.0;
    let mut best_dist = f64::INFINITY;
    for &n in &spec.current_levels {
        let p = spec.level_kw(n, dir);
        let dist = (p - requested_kw).abs();
        if dist < best_dist {
            best = p;
            best_dist = dist;
        }
    }
    Ok(best)
}

/// Largest pilot level not above `limit_kw`.
fn largest_level_below(spec: &ChargerSpec, dir: Direction, limit_kw: f64) -> f64 {
    spec.current_levels
        .iter()
        .map(|&n| spec.level_kw(n, dir))
        .filter(|&p| p <= limit_kw + LIMIT_EPS)
        .fold(0.0, f64::max)
}

/// Noisy forecast of `actual[k..k+h]`: Gaussian around each value with
/// standard deviation `rel_std * value`, truncated at zero. Steps past the
/// end of the series forecast zero.
pub fn forecast_series<R: Rng>(actual: &[f64], k: usize, h: usize, rel_std: f64, rng: &mut R) -> Vec<f64> {
    let unit = Normal::new(0.0, 1.0).expect("unit normal");
    (0..h)
        .map(|i| {
            let z: f64 = unit.sample(rng);
            match actual.get(k + i) {
                Some(&v) => (v + rel_std * v.abs() * z).max(0.0),
                None => 0.0,
            }
        })
        .collect()
}

/// SoC floor in effect for a connected EV: no discharge below the floor,
/// and none at all while already under it.
pub fn soc_lower_bound(soc: f64, session: &EvSession) -> f64 {
    soc.min(session.soc_floor)
}

pub struct Environment<'a> {
    scenario: &'a Scenario,
    state: PoolState,
    records: Vec<StepRecord>,
    traces: Vec<EvTrace>,
    departures: Vec<Departure>,
}

impl<'a> Environment<'a> {
    pub fn reset(scenario: &'a Scenario) -> Self {
        let n = scenario.chargers.len();
        let mut env = Self {
            scenario,
            state: PoolState {
                step: 0,
                chargers: vec![ChargerState { connected: false, session: None, soc: 0.0 }; n],
            },
            records: Vec::new(),
            traces: scenario
                .sessions
                .iter()
                .map(|s| EvTrace { ev_id: s.id, ..EvTrace::default() })
                .collect(),
            departures: Vec::new(),
        };
        env.connect_arrivals(0);
        env
    }

    pub fn scenario(&self) -> &Scenario {
        self.scenario
    }

    pub fn state(&self) -> &PoolState {
        &self.state
    }

    pub fn is_done(&self) -> bool {
        self.state.step >= self.scenario.steps()
    }

    pub fn records(&self) -> &[StepRecord] {
        &self.records
    }

    pub fn departures(&self) -> &[Departure] {
        &self.departures
    }

    pub fn ev_traces(&self) -> &[EvTrace] {
        &self.traces
    }

    fn connect_arrivals(&mut self, k: usize) -> Vec<usize> {
        let mut arrived = Vec::new();
        for (idx, s) in self.scenario.sessions.iter().enumerate() {
            if s.arrival_step == k {
                let c = &mut self.state.chargers[s.charger_id];
                c.connected = true;
                c.session = Some(idx);
                c.soc = s.soc_arrival;
                arrived.push(s.id);
            }
        }
        arrived
    }

    /// Load, PV and announced DR over `[k, k+horizon)`. The current step is
    /// measured exactly; later steps carry Gaussian forecast error. Noise is
    /// drawn from a per-step stream so every controller sees the same values.
    pub fn forecast(&self, horizon: usize) -> Forecast {
        let k = self.state.step;
        let sc = self.scenario;
        let mut rng = seeded_rng(sc.seed, STREAM_FORECAST + k as u64);
        let fp = &sc.config.forecast;
        let mut out = Forecast { load_kw: Vec::new(), pv_kw: Vec::new(), dr_kw: Vec::new() };
        for t in &sc.transformers {
            let mut load = forecast_series(&t.inflexible_load_kw, k, horizon, fp.load_std_fraction, &mut rng);
            let mut pv = forecast_series(&t.pv_generation_kw, k, horizon, fp.pv_std_fraction, &mut rng);
            if let (Some(l), Some(w)) = (load.first_mut(), pv.first_mut()) {
                *l = t.inflexible_load_kw.get(k).copied().unwrap_or(0.0);
                *w = t.pv_generation_kw.get(k).copied().unwrap_or(0.0);
            }
            out.load_kw.push(load);
            out.pv_kw.push(pv);
            out.dr_kw.push((0..horizon).map(|h| t.announced_dr_kw(k, k + h)).collect());
        }
        out
    }

    pub fn step(&mut self, actions: &[f64]) -> Result<&StepRecord, CoreError> {
        let sc = self.scenario;
        let n = sc.chargers.len();
        if actions.len() != n {
            return Err(CoreError::ActionLength { got: actions.len(), expected: n });
        }
        let k = self.state.step;
        if k >= sc.steps() {
            return Err(CoreError::Finished(k));
        }
        let dt = sc.dt_h();
        let mut rec = StepRecord {
            step: k,
            soc: self.state.chargers.iter().map(|c| c.soc).collect(),
            ev_ids: self.state.chargers.iter().map(|c| c.session.map(|s| sc.sessions[s].id)).collect(),
            p_charge_kw: vec![0.0; n],
            p_discharge_kw: vec![0.0; n],
            transformers: Vec::new(),
            price_charge: sc.prices.charge_price[k],
            price_discharge: sc.prices.discharge_price[k],
            cash_eur: 0.0,
            arrivals: Vec::new(),
            departures: Vec::new(),
        };

        for (i, c) in self.state.chargers.iter_mut().enumerate() {
            let Some(sidx) = c.session else { continue };
            let s = &sc.sessions[sidx];
            let spec = &sc.chargers[i];
            let a = if actions[i].is_finite() { actions[i].clamp(-1.0, 1.0) } else { 0.0 };
            let (mut pc, mut pd) = (0.0, 0.0);
            if a > 0.0 {
                let q = quantize_power(a * spec.max_charge_kw, spec, Direction::Charge)?;
                let room = (1.0 - c.soc).max(0.0) * s.capacity_kwh / (dt * s.eta_charge);
                pc = if q > room + LIMIT_EPS { largest_level_below(spec, Direction::Charge, room) } else { q };
            } else if a < 0.0 {
                let q = quantize_power(-a * spec.max_discharge_kw, spec, Direction::Discharge)?;
                let lb = soc_lower_bound(c.soc, s);
                let room = (c.soc - lb).max(0.0) * s.capacity_kwh * s.eta_discharge / dt;
                pd = if q > room + LIMIT_EPS { largest_level_below(spec, Direction::Discharge, room) } else { q };
            }
            let trace = &mut self.traces[sidx];
            trace.soc.push(c.soc);
            trace.power_kw.push(pc - pd);
            c.soc = (c.soc + dt / s.capacity_kwh * (s.eta_charge * pc - pd / s.eta_discharge)).clamp(0.0, 1.0);
            rec.p_charge_kw[i] = pc;
            rec.p_discharge_kw[i] = pd;
        }

        let sum_c: f64 = rec.p_charge_kw.iter().sum();
        let sum_d: f64 = rec.p_discharge_kw.iter().sum();
        rec.cash_eur = dt * (rec.price_discharge * sum_d - rec.price_charge * sum_c);
        for t in &sc.transformers {
            let phi: f64 = t.charger_ids.iter().map(|&i| rec.p_charge_kw[i] - rec.p_discharge_kw[i]).sum();
            let net_kw = phi + t.inflexible_load_kw[k] - t.pv_generation_kw[k];
            let limit_kw = t.limit_kw(k);
            rec.transformers.push(TransformerStep {
                net_kw,
                limit_kw,
                overload: net_kw > limit_kw + LIMIT_EPS,
                dr_active: t.dr_kw(k) > 0.0,
            });
        }

        let next = k + 1;
        self.state.step = next;
        for c in self.state.chargers.iter_mut() {
            let Some(sidx) = c.session else { continue };
            let s = &sc.sessions[sidx];
            if s.departure_step == next {
                let dep = Departure {
                    ev_id: s.id,
                    step: next,
                    soc: c.soc,
                    soc_required_min: s.soc_required_min,
                };
                rec.departures.push(dep.clone());
                self.departures.push(dep);
                *c = ChargerState { connected: false, session: None, soc: 0.0 };
            }
        }
        rec.arrivals = self.connect_arrivals(next);
        self.records.push(rec);
        Ok(self.records.last().expect("just pushed"))
    }

    /// Writes one row per (step, charger) with the applied powers and the
    /// transformer state of that charger's transformer.
    pub fn write_trace_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "step", "charger_id", "ev_id", "soc", "p_charge_kw", "p_discharge_kw", "transformer_id",
            "net_kw", "limit_kw", "overload", "price_charge", "price_discharge", "cash_eur",
        ])?;
        let dt = self.scenario.dt_h();
        for r in &self.records {
            for (i, spec) in self.scenario.chargers.iter().enumerate() {
                let t = &r.transformers[spec.transformer_id];
                let cash = dt * (r.price_discharge * r.p_discharge_kw[i] - r.price_charge * r.p_charge_kw[i]);
                out.write_record([
                    r.step.to_string(),
                    i.to_string(),
                    r.ev_ids[i].map(|e| e.to_string()).unwrap_or_default(),
                    format!("{:.6}", r.soc[i]),
                    format!("{:.4}", r.p_charge_kw[i]),
                    format!("{:.4}", r.p_discharge_kw[i]),
                    spec.transformer_id.to_string(),
                    format!("{:.4}", t.net_kw),
                    format!("{:.4}", t.limit_kw),
                    (t.overload as u8).to_string(),
                    format!("{:.6}", r.price_charge),
                    format!("{:.6}", r.price_discharge),
                    format!("{:.6}", cash),
                ])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}
