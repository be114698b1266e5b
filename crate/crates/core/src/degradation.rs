//! Post-hoc battery capacity-loss accounting. Losses are evaluated per EV
//! session and never fed back into the controllers.

use serde::{Deserialize, Serialize};

use crate::error::CoreError;

const KELVIN_OFFSET: f64 = 273.15;
const HOURS_PER_DAY: f64 = 24.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationParams {
    pub eps0: f64,
    pub eps1: f64,
    pub eps2: f64,
    /// Battery temperature in degrees Celsius.
    pub theta_c: f64,
    pub zeta0: f64,
    pub zeta1: f64,
    /// Battery age in days.
    pub t_tot_days: f64,
    /// Lifetime accumulated throughput in kWh.
    pub q_acc_kwh: f64,
}

impl Default for DegradationParams {
    fn default() -> Self {
        Self {
            eps0: 6.23e6,
            eps1: 1.38e6,
            eps2: 6976.0,
            theta_c: 28.0,
            zeta0: 4.02e-4,
            zeta1: 2.04e-3,
            t_tot_days: 730.0,
            q_acc_kwh: 11160.0,
        }
    }
}

impl DegradationParams {
    pub fn validate(&self) -> Result<(), CoreError> {
        let fields = [
            ("degradation.eps0", self.eps0),
            ("degradation.eps1", self.eps1),
            ("degradation.eps2", self.eps2),
            ("degradation.theta_c (in kelvin)", self.theta_c + KELVIN_OFFSET),
            ("degradation.zeta0", self.zeta0),
            ("degradation.zeta1", self.zeta1),
            ("degradation.t_tot_days", self.t_tot_days),
            ("degradation.q_acc_kwh", self.q_acc_kwh),
        ];
        for (name, v) in fields {
            if !(v > 0.0 && v.is_finite()) {
                return Err(CoreError::field(name, format!("must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct DegradationResult {
    pub d_cal: f64,
    pub d_cyc: f64,
    pub q_lost: f64,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Calendar ageing over a span of `duration_days` at the trace's mean SoC.
pub fn calendar_loss(
    soc_trace: &[f64],
    duration_days: f64,
    p: &DegradationParams,
) -> Result<f64, CoreError> {
    if soc_trace.is_empty() {
        return Err(CoreError::EmptyTrace);
    }
    let soc = mean(soc_trace);
    let theta_k = p.theta_c + KELVIN_OFFSET;
    Ok(0.75 * (p.eps0 * soc - p.eps1) * (-p.eps2 / theta_k).exp() * duration_days
        / p.t_tot_days.powf(0.25))
}

/// Cyclic ageing from energy throughput. Powers are signed kW (discharge
/// negative); `delta_t_h` is the step length in hours. The SoC-deviation
/// integral uses the step length in days so that its ratio to
/// `duration_days` is dimensionless.
pub fn cyclic_loss(
    soc_trace: &[f64],
    power_trace_kw: &[f64],
    delta_t_h: f64,
    duration_days: f64,
    p: &DegradationParams,
) -> Result<f64, CoreError> {
    if soc_trace.len() != power_trace_kw.len() {
        return Err(CoreError::LengthMismatch(soc_trace.len(), power_trace_kw.len()));
    }
    if soc_trace.is_empty() {
        return Err(CoreError::EmptyTrace);
    }
    let soc_mean = mean(soc_trace);
    let dt_days = delta_t_h / HOURS_PER_DAY;
    let deviation: f64 = soc_trace.iter().map(|s| (soc_mean - s).abs() * dt_days).sum();
    let throughput: f64 = power_trace_kw.iter().map(|pw| pw.abs() * delta_t_h).sum();
    Ok((p.zeta0 + p.zeta1 * deviation / duration_days) * throughput / p.q_acc_kwh.sqrt())
}

/// Per-EV traces covering the connected span of one session.
#[derive(Debug, Clone, Default)]
pub struct EvTrace {
    pub ev_id: usize,
    /// SoC at each connected step.
    pub soc: Vec<f64>,
    /// Applied power per connected step, kW (discharge negative).
    pub power_kw: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct EvDegradation {
    pub ev_id: usize,
    pub d_cal: f64,
    pub d_cyc: f64,
    pub q_lost: f64,
    pub energy_throughput_kwh: f64,
    pub mean_soc: f64,
}

#[derive(Debug, Clone, Default)]
pub struct FleetDegradation {
    pub per_ev: Vec<EvDegradation>,
    pub sum_d_cal: f64,
    pub sum_d_cyc: f64,
    pub sum_q_lost: f64,
}

/// Applies both loss terms to every EV over its connected span, where the
/// span length in days is the duration `T`.
pub fn run_degradation(
    traces: &[EvTrace],
    delta_t_h: f64,
    p: &DegradationParams,
) -> Result<FleetDegradation, CoreError> {
    let mut fleet = FleetDegradation::default();
    for t in traces {
        if t.soc.is_empty() {
            continue;
        }
        let days = t.soc.len() as f64 * delta_t_h / HOURS_PER_DAY;
        let d_cal = calendar_loss(&t.soc, days, p)?;
        let d_cyc = cyclic_loss(&t.soc, &t.power_kw, delta_t_h, days, p)?;
        fleet.sum_d_cal += d_cal;
        fleet.sum_d_cyc += d_cyc;
        fleet.sum_q_lost += d_cal + d_cyc;
        fleet.per_ev.push(EvDegradation {
            ev_id: t.ev_id,
            d_cal,
            d_cyc,
            q_lost: d_cal + d_cyc,
            energy_throughput_kwh: t.power_kw.iter().map(|pw| pw.abs() * delta_t_h).sum(),
            mean_soc: mean(&t.soc),
        });
    }
    Ok(fleet)
}
