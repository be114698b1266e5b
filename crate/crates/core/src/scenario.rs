//! Scenario description: configuration file, domain types and the seeded
//! synthetic generators for sessions, loads, PV, prices and DR events.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::degradation::DegradationParams;
use crate::error::CoreError;

/// Random streams of one seed; each generator draws from its own stream so
/// changing one parameter never perturbs the others.
const STREAM_SESSIONS: u64 = 1;
const STREAM_SERIES: u64 = 2;
const STREAM_DR: u64 = 3;
const STREAM_PRICES: u64 = 4;
/// Forecast noise uses `STREAM_FORECAST + k` for step `k`.
pub const STREAM_FORECAST: u64 = 1 << 32;

pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub delta_t_min: f64,
    pub horizon_steps: usize,
    pub sim_steps: usize,
    pub n_chargers: usize,
    pub n_transformers: usize,
    pub discharge_multiplier: f64,
    pub seed: u64,
    pub ev_scenario_name: String,
    /// Clock hour of step 0.
    pub start_hour: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            delta_t_min: 15.0,
            horizon_steps: 10,
            sim_steps: 96,
            n_chargers: 10,
            n_transformers: 1,
            discharge_multiplier: 1.2,
            seed: 0,
            ev_scenario_name: "residential".into(),
            start_hour: 12.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChargerParams {
    pub max_charge_kw: f64,
    pub max_discharge_kw: f64,
    pub voltage_v: f64,
    pub phases: u32,
    pub min_current_a: u32,
    pub max_current_a: u32,
}

impl Default for ChargerParams {
    fn default() -> Self {
        Self {
            max_charge_kw: 22.0,
            max_discharge_kw: 22.0,
            voltage_v: 230.0,
            phases: 3,
            min_current_a: 6,
            max_current_a: 32,
        }
    }
}

/// Truncated Gaussian given by mean, standard deviation and support.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TruncGauss {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl TruncGauss {
    pub fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        if self.std <= 0.0 {
            return self.mean.clamp(self.min, self.max);
        }
        let normal = Normal::new(self.mean, self.std).expect("finite std");
        for _ in 0..1000 {
            let v = normal.sample(rng);
            if (self.min..=self.max).contains(&v) {
                return v;
            }
        }
        self.mean.clamp(self.min, self.max)
    }

    fn validate(&self, name: &str) -> Result<(), CoreError> {
        if !(self.std >= 0.0) || !(self.min <= self.max) {
            return Err(CoreError::field(name, "needs std >= 0 and min <= max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvParams {
    pub n_evs: usize,
    pub capacity_kwh: f64,
    pub soc_required_min: f64,
    pub soc_required_max: f64,
    pub soc_floor: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
    pub min_connection_h: f64,
    /// Arrival clock hour; values past 24 mean the next day.
    pub arrival_hour: TruncGauss,
    pub duration_h: TruncGauss,
    pub soc_arrival: TruncGauss,
    pub max_draws: usize,
}

impl Default for EvParams {
    fn default() -> Self {
        Self {
            n_evs: 25,
            capacity_kwh: 50.0,
            soc_required_min: 0.8,
            soc_required_max: 1.0,
            soc_floor: 0.1,
            eta_charge: 1.0,
            eta_discharge: 1.0,
            min_connection_h: 3.0,
            arrival_hour: TruncGauss { mean: 17.5, std: 3.5, min: 12.0, max: 32.0 },
            duration_h: TruncGauss { mean: 5.5, std: 2.5, min: 3.0, max: 12.0 },
            soc_arrival: TruncGauss { mean: 0.4, std: 0.2, min: 0.05, max: 0.7 },
            max_draws: 20_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransformerParams {
    pub power_limit_kw: f64,
    pub load_multiplier: f64,
    pub pv_multiplier: f64,
    /// Relative per-hour variation of the synthetic load shape.
    pub load_variation: f64,
    pub load_csv: Option<PathBuf>,
    pub pv_csv: Option<PathBuf>,
}

impl Default for TransformerParams {
    fn default() -> Self {
        Self {
            power_limit_kw: 400.0,
            load_multiplier: 1.0,
            pv_multiplier: 3.0,
            load_variation: 0.03,
            load_csv: None,
            pv_csv: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DrParams {
    pub events: usize,
    pub start_mean_hour: f64,
    pub start_std_hour: f64,
    pub duration_h: f64,
    pub capacity_reduction: f64,
    pub notice_min: f64,
}

impl Default for DrParams {
    fn default() -> Self {
        Self {
            events: 1,
            start_mean_hour: 18.0,
            start_std_hour: 1.0,
            duration_h: 1.0,
            capacity_reduction: 0.2,
            notice_min: 15.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PriceParams {
    /// Flexibility incentive as a fraction of the charge price.
    pub flex_fraction: f64,
    /// Standard deviation of the per-day price level factor.
    pub level_std: f64,
    /// Standard deviation of the per-hour multiplicative noise.
    pub hourly_std: f64,
    pub csv: Option<PathBuf>,
}

impl Default for PriceParams {
    fn default() -> Self {
        Self { flex_fraction: 0.5, level_std: 0.15, hourly_std: 0.12, csv: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForecastParams {
    pub load_std_fraction: f64,
    pub pv_std_fraction: f64,
}

impl Default for ForecastParams {
    fn default() -> Self {
        Self { load_std_fraction: 0.05, pv_std_fraction: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverParams {
    pub node_limit: usize,
    pub time_limit_s: f64,
    /// Penalty per unit of departure-SoC slack, EUR.
    pub slack_penalty: f64,
    /// Transformer rows beyond the current step keep this many forecast
    /// standard deviations of headroom in reserve.
    pub margin_sigmas: f64,
    /// Plans keep every EV able to reach its departure minimum while
    /// charging at this fraction of rated power.
    pub reserve_fraction: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        Self { node_limit: 60, time_limit_s: 5.0, slack_penalty: 1e4, margin_sigmas: 2.0, reserve_fraction: 0.8 }
    }
}

/// Full configuration file contents.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub simulation: SimConfig,
    pub charger: ChargerParams,
    pub ev: EvParams,
    pub transformer: TransformerParams,
    pub demand_response: DrParams,
    pub prices: PriceParams,
    pub forecast: ForecastParams,
    pub solver: SolverParams,
    pub degradation: DegradationParams,
    /// Directory that relative CSV paths resolve against.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

impl Config {
    pub fn dt_h(&self) -> f64 {
        self.simulation.delta_t_min / 60.0
    }

    pub fn steps_for_hours(&self, hours: f64) -> usize {
        (hours * 60.0 / self.simulation.delta_t_min).round().max(0.0) as usize
    }

    /// Clock hour (0..24) at the start of step `k`.
    pub fn clock_hour(&self, k: usize) -> f64 {
        (self.simulation.start_hour + k as f64 * self.dt_h()).rem_euclid(24.0)
    }

    pub fn validate(&self) -> Result<(), CoreError> {
        let s = &self.simulation;
        let positive = |name: &str, v: f64| -> Result<(), CoreError> {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CoreError::field(name, format!("must be positive, got {v}")))
            }
        };
        let nonneg = |name: &str, v: f64| -> Result<(), CoreError> {
            if v >= 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(CoreError::field(name, format!("must be nonnegative, got {v}")))
            }
        };
        positive("delta_t_min", s.delta_t_min)?;
        if s.horizon_steps < 1 {
            return Err(CoreError::field("horizon_steps", "must be at least 1"));
        }
        if s.sim_steps < 1 {
            return Err(CoreError::field("sim_steps", "must be at least 1"));
        }
        if s.n_transformers < 1 {
            return Err(CoreError::field("n_transformers", "must be at least 1"));
        }
        if s.n_chargers < s.n_transformers {
            return Err(CoreError::field("n_chargers", "must be at least n_transformers"));
        }
        if !(s.discharge_multiplier > 0.0 && s.discharge_multiplier <= 2.0) {
            return Err(CoreError::field("discharge_multiplier", "must lie in (0, 2]"));
        }
        let c = &self.charger;
        positive("max_charge_kw", c.max_charge_kw)?;
        nonneg("max_discharge_kw", c.max_discharge_kw)?;
        positive("voltage_v", c.voltage_v)?;
        if c.min_current_a < 1 || c.max_current_a < c.min_current_a {
            return Err(CoreError::field("min_current_a", "need 1 <= min_current_a <= max_current_a"));
        }
        let e = &self.ev;
        positive("capacity_kwh", e.capacity_kwh)?;
        if !(0.0 <= e.soc_floor
            && e.soc_floor <= e.soc_required_min
            && e.soc_required_min <= e.soc_required_max
            && e.soc_required_max <= 1.0)
        {
            return Err(CoreError::field(
                "soc_required_min",
                "need 0 <= soc_floor <= soc_required_min <= soc_required_max <= 1",
            ));
        }
        for (name, v) in [("eta_charge", e.eta_charge), ("eta_discharge", e.eta_discharge)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(CoreError::field(name, "must lie in (0, 1]"));
            }
        }
        nonneg("min_connection_h", e.min_connection_h)?;
        e.arrival_hour.validate("arrival_hour")?;
        e.duration_h.validate("duration_h")?;
        e.soc_arrival.validate("soc_arrival")?;
        if e.soc_arrival.min < 0.0 || e.soc_arrival.max > 1.0 {
            return Err(CoreError::field("soc_arrival", "support must lie in [0, 1]"));
        }
        let t = &self.transformer;
        positive("power_limit_kw", t.power_limit_kw)?;
        nonneg("load_multiplier", t.load_multiplier)?;
        nonneg("pv_multiplier", t.pv_multiplier)?;
        nonneg("load_variation", t.load_variation)?;
        let d = &self.demand_response;
        if !(0.0..1.0).contains(&d.capacity_reduction) {
            return Err(CoreError::field("capacity_reduction", "must lie in [0, 1)"));
        }
        nonneg("start_std_hour", d.start_std_hour)?;
        if d.events > 0 {
            if self.steps_for_hours(d.duration_h) < 1 {
                return Err(CoreError::field("duration_h", "must cover at least one step"));
            }
            if self.steps_for_hours(d.notice_min / 60.0) < 1 {
                return Err(CoreError::field("notice_min", "must cover at least one step"));
            }
        }
        nonneg("flex_fraction", self.prices.flex_fraction)?;
        nonneg("level_std", self.prices.level_std)?;
        nonneg("hourly_std", self.prices.hourly_std)?;
        nonneg("load_std_fraction", self.forecast.load_std_fraction)?;
        nonneg("pv_std_fraction", self.forecast.pv_std_fraction)?;
        if self.solver.node_limit < 1 {
            return Err(CoreError::field("node_limit", "must be at least 1"));
        }
        positive("time_limit_s", self.solver.time_limit_s)?;
        positive("slack_penalty", self.solver.slack_penalty)?;
        nonneg("margin_sigmas", self.solver.margin_sigmas)?;
        if !(self.solver.reserve_fraction > 0.0 && self.solver.reserve_fraction <= 1.0) {
            return Err(CoreError::field("reserve_fraction", "must be in (0, 1]"));
        }
        self.degradation.validate()
    }

    fn resolve(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }
}

/// Parses configuration text; an empty document yields all defaults.
pub fn parse_config(text: &str) -> Result<Config, CoreError> {
    let meaningful = text
        .lines()
        .any(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#') && l.trim() != "---");
    let cfg = if meaningful {
        serde_yaml::from_str::<Config>(text).map_err(|e| {
            let loc = e.location();
            CoreError::Parse {
                line: loc.as_ref().map(|l| l.line()),
                column: loc.as_ref().map(|l| l.column()),
                message: e.to_string(),
            }
        })?
    } else {
        Config::default()
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<Config, CoreError> {
    let text = fs::read_to_string(path)
        .map_err(|source| CoreError::Io { path: path.to_path_buf(), source })?;
    let mut cfg = parse_config(&text)?;
    cfg.base_dir = path.parent().map(Path::to_path_buf);
    Ok(cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Charge,
    Discharge,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChargerSpec {
    pub id: usize,
    pub transformer_id: usize,
    pub max_charge_kw: f64,
    pub max_discharge_kw: f64,
    pub voltage_v: f64,
    pub phases: u32,
    /// Allowed pilot currents in A: 0 followed by a contiguous range.
    pub current_levels: Vec<u32>,
}

impl ChargerSpec {
    pub fn rated_kw(&self, dir: Direction) -> f64 {
        match dir {
            Direction::Charge => self.max_charge_kw,
            Direction::Discharge => self.max_discharge_kw,
        }
    }

    pub fn max_level(&self) -> u32 {
        *self.current_levels.last().unwrap_or(&0)
    }

    pub fn min_level(&self) -> u32 {
        self.current_levels.iter().copied().find(|&l| l > 0).unwrap_or(0)
    }

    /// Power of pilot level `n`, normalized so the top level gives rated power.
    pub fn level_kw(&self, n: u32, dir: Direction) -> f64 {
        let top = self.max_level();
        if top == 0 {
            return 0.0;
        }
        self.rated_kw(dir) * n as f64 / top as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvSession {
    pub id: usize,
    pub charger_id: usize,
    pub arrival_step: usize,
    pub departure_step: usize,
    pub soc_arrival: f64,
    pub soc_required_min: f64,
    pub soc_required_max: f64,
    pub capacity_kwh: f64,
    pub soc_floor: f64,
    pub eta_charge: f64,
    pub eta_discharge: f64,
}

impl EvSession {
    /// SoC gained by one step at `p_kw` charging power.
    pub fn charge_gain(&self, p_kw: f64, dt_h: f64) -> f64 {
        dt_h * self.eta_charge * p_kw / self.capacity_kwh
    }

    pub fn check(&self, dt_h: f64, max_charge_kw: f64) -> Result<(), CoreError> {
        let bad = |reason: &str| CoreError::field(format!("session {}", self.id), reason);
        if !(0.0..=1.0).contains(&self.soc_arrival) {
            return Err(bad("soc_arrival outside [0, 1]"));
        }
        if self.arrival_step >= self.departure_step {
            return Err(bad("arrival must precede departure"));
        }
        if !(self.soc_floor <= self.soc_required_min
            && self.soc_required_min <= self.soc_required_max
            && self.soc_required_max <= 1.0)
        {
            return Err(bad("SoC limits out of order"));
        }
        if !(self.eta_charge > 0.0 && self.eta_charge <= 1.0)
            || !(self.eta_discharge > 0.0 && self.eta_discharge <= 1.0)
        {
            return Err(bad("efficiency outside (0, 1]"));
        }
        let steps = (self.departure_step - self.arrival_step) as f64;
        if self.soc_arrival + steps * self.charge_gain(max_charge_kw, dt_h) < self.soc_required_min {
            return Err(bad("departure SoC unreachable"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DrEvent {
    pub start_step: usize,
    pub duration_steps: usize,
    pub capacity_reduction: f64,
    pub notice_steps: usize,
}

impl DrEvent {
    pub fn is_active(&self, k: usize) -> bool {
        k >= self.start_step && k < self.start_step + self.duration_steps
    }

    /// Whether the event is known to controllers at step `k`.
    pub fn announced_at(&self, k: usize) -> bool {
        k + self.notice_steps >= self.start_step
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransformerSpec {
    pub id: usize,
    pub power_limit_kw: f64,
    pub charger_ids: Vec<usize>,
    pub inflexible_load_kw: Vec<f64>,
    pub pv_generation_kw: Vec<f64>,
    pub dr_events: Vec<DrEvent>,
}

impl TransformerSpec {
    /// Actual DR reduction at step `k`, kW.
    pub fn dr_kw(&self, k: usize) -> f64 {
        self.dr_events
            .iter()
            .filter(|e| e.is_active(k))
            .map(|e| e.capacity_reduction * self.power_limit_kw)
            .sum()
    }

    /// DR reduction at step `k` as known to a controller at step `now`.
    pub fn announced_dr_kw(&self, now: usize, k: usize) -> f64 {
        self.dr_events
            .iter()
            .filter(|e| e.is_active(k) && e.announced_at(now))
            .map(|e| e.capacity_reduction * self.power_limit_kw)
            .sum()
    }

    pub fn limit_kw(&self, k: usize) -> f64 {
        self.power_limit_kw - self.dr_kw(k)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PriceSchedule {
    pub charge_price: Vec<f64>,
    pub discharge_price: Vec<f64>,
    pub flex_charge_price: Vec<f64>,
    pub flex_discharge_price: Vec<f64>,
}

impl PriceSchedule {
    pub fn from_charge_prices(charge: Vec<f64>, m: f64, flex_fraction: f64) -> Self {
        Self {
            discharge_price: charge.iter().map(|p| m * p).collect(),
            flex_charge_price: charge.iter().map(|p| flex_fraction * p).collect(),
            flex_discharge_price: charge.iter().map(|p| flex_fraction * p).collect(),
            charge_price: charge,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: Config,
    pub seed: u64,
    pub chargers: Vec<ChargerSpec>,
    pub sessions: Vec<EvSession>,
    pub transformers: Vec<TransformerSpec>,
    pub prices: PriceSchedule,
}

impl Scenario {
    pub fn build(config: &Config, seed: u64) -> Result<Self, CoreError> {
        config.validate()?;
        let chargers = build_chargers(config);
        let sessions = generate_sessions(&mut seeded_rng(seed, STREAM_SESSIONS), config)?;
        let series = generate_transformer_series(&mut seeded_rng(seed, STREAM_SERIES), config)?;
        let mut dr_rng = seeded_rng(seed, STREAM_DR);
        let g = config.simulation.n_transformers;
        let transformers = series
            .into_iter()
            .enumerate()
            .map(|(id, (load, pv))| TransformerSpec {
                id,
                power_limit_kw: config.transformer.power_limit_kw,
                charger_ids: chargers
                    .iter()
                    .filter(|c| c.transformer_id == id)
                    .map(|c| c.id)
                    .collect(),
                inflexible_load_kw: load,
                pv_generation_kw: pv,
                dr_events: generate_dr_events(&mut dr_rng, config),
            })
            .collect::<Vec<_>>();
        debug_assert_eq!(transformers.len(), g);
        let prices = generate_prices(&mut seeded_rng(seed, STREAM_PRICES), config)?;
        Ok(Self { config: config.clone(), seed, chargers, sessions, transformers, prices })
    }

    pub fn dt_h(&self) -> f64 {
        self.config.dt_h()
    }

    pub fn steps(&self) -> usize {
        self.config.simulation.sim_steps
    }
}

/// Chargers are split into contiguous blocks, one per transformer.
pub fn build_chargers(cfg: &Config) -> Vec<ChargerSpec> {
    let n = cfg.simulation.n_chargers;
    let g = cfg.simulation.n_transformers.max(1);
    let c = &cfg.charger;
    let mut levels = vec![0];
    levels.extend(c.min_current_a..=c.max_current_a);
    (0..n)
        .map(|id| ChargerSpec {
            id,
            transformer_id: id * g / n,
            max_charge_kw: c.max_charge_kw,
            max_discharge_kw: c.max_discharge_kw,
            voltage_v: c.voltage_v,
            phases: c.phases,
            current_levels: levels.clone(),
        })
        .collect()
}

/// Draws sessions until `n_evs` are placed first-fit on free chargers.
pub fn generate_sessions<R: Rng>(rng: &mut R, cfg: &Config) -> Result<Vec<EvSession>, CoreError> {
    let n_chargers = cfg.simulation.n_chargers;
    let wanted = cfg.ev.n_evs;
    if n_chargers == 0 || wanted == 0 {
        return Ok(Vec::new());
    }
    let e = &cfg.ev;
    let k_max = cfg.simulation.sim_steps;
    let dt_h = cfg.dt_h();
    let min_steps = cfg.steps_for_hours(e.min_connection_h).max(1);
    let mut occupied: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n_chargers];
    let mut sessions = Vec::with_capacity(wanted);
    let mut attempts = 0;
    while sessions.len() < wanted {
        if attempts >= e.max_draws {
            return Err(CoreError::SessionSampling { placed: sessions.len(), wanted, attempts });
        }
        attempts += 1;
        let arrival_h = e.arrival_hour.sample(rng) - cfg.simulation.start_hour;
        let duration_h = e.duration_h.sample(rng);
        let soc = e.soc_arrival.sample(rng);
        if arrival_h < 0.0 {
            continue;
        }
        let a = cfg.steps_for_hours(arrival_h);
        let d = a + cfg.steps_for_hours(duration_h).max(min_steps);
        if d > k_max {
            continue;
        }
        let Some(slot) = (0..n_chargers)
            .find(|&i| occupied[i].iter().all(|&(a2, d2)| d <= a2 || d2 <= a))
        else {
            continue;
        };
        let session = EvSession {
            id: 0,
            charger_id: slot,
            arrival_step: a,
            departure_step: d,
            soc_arrival: soc,
            soc_required_min: e.soc_required_min,
            soc_required_max: e.soc_required_max,
            capacity_kwh: e.capacity_kwh,
            soc_floor: e.soc_floor,
            eta_charge: e.eta_charge,
            eta_discharge: e.eta_discharge,
        };
        if session.check(dt_h, cfg.charger.max_charge_kw).is_err() {
            continue;
        }
        occupied[slot].push((a, d));
        sessions.push(session);
    }
    sessions.sort_by_key(|s| (s.arrival_step, s.charger_id));
    for (id, s) in sessions.iter_mut().enumerate() {
        s.id = id;
    }
    Ok(sessions)
}

/// Normalized residential demand by clock hour, evening peak at 22:00.
const LOAD_SHAPE: [f64; 24] = [
    0.55, 0.48, 0.43, 0.40, 0.40, 0.42, 0.50, 0.60, 0.64, 0.58, 0.52, 0.50, 0.49, 0.47, 0.46,
    0.49, 0.54, 0.60, 0.64, 0.67, 0.70, 0.72, 1.00, 0.80,
];
const SUNRISE_H: f64 = 5.5;
const SUNSET_H: f64 = 21.5;

/// Day-ahead price shape in EUR/kWh by clock hour.
const PRICE_SHAPE: [f64; 24] = [
    0.14, 0.12, 0.11, 0.10, 0.10, 0.11, 0.14, 0.20, 0.24, 0.21, 0.17, 0.14, 0.12, 0.11, 0.11,
    0.13, 0.16, 0.22, 0.30, 0.33, 0.28, 0.22, 0.18, 0.16,
];

fn scale_to_peak(series: &mut [f64], peak: f64) {
    let max = series.iter().copied().fold(0.0, f64::max);
    if max > 0.0 && peak > 0.0 {
        let f = peak / max;
        series.iter_mut().for_each(|v| *v *= f);
    } else {
        series.iter_mut().for_each(|v| *v = 0.0);
    }
}

/// Reads a headered two-column CSV `(step, value)` of exactly `k` rows.
pub fn read_series_csv(path: &Path, k: usize) -> Result<Vec<f64>, CoreError> {
    let err = |message: String| CoreError::Csv { path: path.to_path_buf(), message };
    let mut reader = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let mut values = Vec::new();
    for (row, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| err(e.to_string()))?;
        let step: usize = rec
            .get(0)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| err(format!("row {}: bad step", row + 1)))?;
        if step != row {
            return Err(err(format!("row {}: expected step {row}, found {step}", row + 1)));
        }
        let v: f64 = rec
            .get(1)
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| err(format!("row {}: bad value", row + 1)))?;
        values.push(v);
    }
    if values.len() != k {
        return Err(CoreError::SeriesLength {
            what: path.display().to_string(),
            got: values.len(),
            expected: k,
        });
    }
    Ok(values)
}

/// Per-transformer inflexible load and PV series (kW). CSV files, when
/// configured, replace the synthetic shapes for every transformer.
pub fn generate_transformer_series<R: Rng>(
    rng: &mut R,
    cfg: &Config,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>, CoreError> {
    let k = cfg.simulation.sim_steps;
    let t = &cfg.transformer;
    let psi = t.power_limit_kw;
    let load_csv = t.load_csv.as_ref().map(|p| read_series_csv(&cfg.resolve(p), k)).transpose()?;
    let pv_csv = t.pv_csv.as_ref().map(|p| read_series_csv(&cfg.resolve(p), k)).transpose()?;
    for (what, series) in [("load", &load_csv), ("pv", &pv_csv)] {
        if let Some(s) = series {
            if s.iter().any(|v| *v < 0.0 || !v.is_finite()) {
                return Err(CoreError::field(what, "series must be finite and nonnegative"));
            }
        }
    }
    let noise = Normal::new(1.0, t.load_variation.max(0.0)).expect("finite std");
    let mut out = Vec::with_capacity(cfg.simulation.n_transformers);
    for _ in 0..cfg.simulation.n_transformers {
        let hourly: Vec<f64> =
            LOAD_SHAPE.iter().map(|v| v * noise.sample(rng).clamp(0.8, 1.2)).collect();
        let clouds: Vec<f64> = (0..24).map(|_| rng.gen_range(0.7..=1.0)).collect();
        let load = match &load_csv {
            Some(s) => s.clone(),
            None => {
                // Linear between the hourly anchors at the top of each hour.
                let mut l: Vec<f64> = (0..k)
                    .map(|s| {
                        let h = cfg.clock_hour(s);
                        let frac = h - h.floor();
                        let i = h.floor() as usize % 24;
                        hourly[i] * (1.0 - frac) + hourly[(i + 1) % 24] * frac
                    })
                    .collect();
                scale_to_peak(&mut l, t.load_multiplier * psi);
                l
            }
        };
        let pv = match &pv_csv {
            Some(s) => s.clone(),
            None => {
                let mut w: Vec<f64> = (0..k)
                    .map(|s| {
                        let h = cfg.clock_hour(s) + 0.5 * cfg.dt_h();
                        if h <= SUNRISE_H || h >= SUNSET_H {
                            0.0
                        } else {
                            let x = std::f64::consts::PI * (h - SUNRISE_H) / (SUNSET_H - SUNRISE_H);
                            x.sin().powi(2) * clouds[h as usize % 24]
                        }
                    })
                    .collect();
                scale_to_peak(&mut w, t.pv_multiplier * psi);
                w
            }
        };
        out.push((load, pv));
    }
    Ok(out)
}

pub fn generate_dr_events<R: Rng>(rng: &mut R, cfg: &Config) -> Vec<DrEvent> {
    let d = &cfg.demand_response;
    let k = cfg.simulation.sim_steps;
    let duration = cfg.steps_for_hours(d.duration_h).max(1);
    let notice = cfg.steps_for_hours(d.notice_min / 60.0).max(1);
    let normal = Normal::new(d.start_mean_hour, d.start_std_hour.max(0.0)).expect("finite std");
    let latest = k.saturating_sub(duration) as f64;
    (0..d.events)
        .map(|_| {
            let hour = normal.sample(rng);
            let offset = (hour - cfg.simulation.start_hour).rem_euclid(24.0);
            let start = (offset * 60.0 / cfg.simulation.delta_t_min).round().clamp(0.0, latest);
            DrEvent {
                start_step: start as usize,
                duration_steps: duration,
                capacity_reduction: d.capacity_reduction,
                notice_steps: notice,
            }
        })
        .collect()
}

/// Charge prices follow an hourly day-ahead shape scaled by a daily level
/// and per-hour noise; the other three series derive from them.
pub fn generate_prices<R: Rng>(rng: &mut R, cfg: &Config) -> Result<PriceSchedule, CoreError> {
    let k = cfg.simulation.sim_steps;
    let p = &cfg.prices;
    let charge = match &p.csv {
        Some(path) => read_series_csv(&cfg.resolve(path), k)?,
        None => {
            let level = Normal::new(1.0, p.level_std).expect("finite std").sample(rng).clamp(0.6, 1.5);
            let hourly = Normal::new(1.0, p.hourly_std).expect("finite std");
            let n_hours = (k as f64 * cfg.dt_h()).ceil() as usize + 1;
            let noise: Vec<f64> = (0..n_hours).map(|_| hourly.sample(rng).clamp(0.5, 1.5)).collect();
            (0..k)
                .map(|s| {
                    let elapsed = (s as f64 * cfg.dt_h()).floor() as usize;
                    let hour = cfg.clock_hour(s) as usize % 24;
                    PRICE_SHAPE[hour] * level * noise[elapsed]
                })
                .collect()
        }
    };
    Ok(PriceSchedule::from_charge_prices(
        charge,
        cfg.simulation.discharge_multiplier,
        p.flex_fraction,
    ))
}
