//! Pool prediction model over a receding horizon.
//!
//! The state block `h` of the lifted model is the SoC vector at step
//! `k + h + 1`; the input block `h` holds `[P^c_1, P^d_1, ..., P^c_I, P^d_I]`
//! applied during step `k + h`.

use nalgebra::DMatrix;

use crate::scenario::Scenario;
use crate::simengine::{soc_lower_bound, Forecast, PoolState};

#[derive(Debug, Clone)]
pub struct HorizonView {
    pub step: usize,
    pub horizon: usize,
    pub n_chargers: usize,
    pub dt_h: f64,
    /// `xi[i][h]`: charger `i` holds a connected EV during step `k + h`.
    pub xi: Vec<Vec<u8>>,
    pub bc: Vec<Vec<f64>>,
    pub bd: Vec<Vec<f64>>,
    /// Session index per charger for currently connected EVs.
    pub session: Vec<Option<usize>>,
    pub x0: Vec<f64>,
    pub forecast: Forecast,
}

impl HorizonView {
    /// Future arrivals are invisible: only EVs connected now appear, and each
    /// stays available until its departure step.
    pub fn build(state: &PoolState, scenario: &Scenario, horizon: usize, forecast: Forecast) -> Self {
        let k = state.step;
        let n = state.chargers.len();
        let dt_h = scenario.dt_h();
        let mut xi = vec![vec![0u8; horizon]; n];
        let mut bc = vec![vec![0.0; horizon]; n];
        let mut bd = vec![vec![0.0; horizon]; n];
        let mut session = vec![None; n];
        for (i, c) in state.chargers.iter().enumerate() {
            let Some(sidx) = c.session else { continue };
            let s = &scenario.sessions[sidx];
            session[i] = Some(sidx);
            for h in 0..horizon {
                if k + h < s.departure_step {
                    xi[i][h] = 1;
                    bc[i][h] = dt_h * s.eta_charge / s.capacity_kwh;
                    bd[i][h] = dt_h / (s.capacity_kwh * s.eta_discharge);
                }
            }
        }
        Self {
            step: k,
            horizon,
            n_chargers: n,
            dt_h,
            xi,
            bc,
            bd,
            session,
            x0: state.chargers.iter().map(|c| c.soc).collect(),
            forecast,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.session.iter().all(Option::is_none)
    }

    /// Number of horizon steps during which charger `i` can exchange power.
    pub fn active_steps(&self, i: usize) -> usize {
        self.xi[i].iter().take_while(|&&v| v == 1).count()
    }
}

#[derive(Debug, Clone)]
pub struct LiftedModel {
    pub n_chargers: usize,
    pub horizon: usize,
    /// `H*I x I`.
    pub a_stack: DMatrix<f64>,
    /// `H*I x 2*H*I`.
    pub g_stack: DMatrix<f64>,
    pub x0: Vec<f64>,
}

impl LiftedModel {
    pub fn lift(view: &HorizonView) -> Self {
        let (n, hz) = (view.n_chargers, view.horizon);
        let mut a_stack = DMatrix::zeros(hz * n, n);
        let mut g_stack = DMatrix::zeros(hz * n, 2 * hz * n);
        for i in 0..n {
            // Running product of A over steps k..k+h.
            let mut prod = 1.0;
            for h in 0..hz {
                prod *= view.xi[i][h] as f64;
                a_stack[(h * n + i, i)] = prod;
                for l in 0..=h {
                    let carry: f64 = (l + 1..=h).map(|m| view.xi[i][m] as f64).product();
                    g_stack[(h * n + i, l * 2 * n + 2 * i)] = carry * view.bc[i][l];
                    g_stack[(h * n + i, l * 2 * n + 2 * i + 1)] = -carry * view.bd[i][l];
                }
            }
        }
        Self { n_chargers: n, horizon: hz, a_stack, g_stack, x0: view.x0.clone() }
    }

    pub fn charge_col(&self, i: usize, h: usize) -> usize {
        h * 2 * self.n_chargers + 2 * i
    }

    pub fn discharge_col(&self, i: usize, h: usize) -> usize {
        self.charge_col(i, h) + 1
    }

    /// Predicted SoC trajectory `X = A x0 + G P`.
    pub fn predict(&self, p: &[f64]) -> Vec<f64> {
        let x0 = nalgebra::DVector::from_column_slice(&self.x0);
        let pv = nalgebra::DVector::from_column_slice(p);
        (&self.a_stack * x0 + &self.g_stack * pv).iter().copied().collect()
    }

    /// Constant part of `x_{i,k+h+1}`.
    pub fn free_response(&self, i: usize, h: usize) -> f64 {
        self.a_stack[(h * self.n_chargers + i, i)] * self.x0[i]
    }

    /// Nonzero input coefficients of `x_{i,k+h+1}`.
    pub fn input_row(&self, i: usize, h: usize) -> Vec<(usize, f64)> {
        let r = h * self.n_chargers + i;
        (0..self.g_stack.ncols())
            .filter_map(|c| {
                let v = self.g_stack[(r, c)];
                (v != 0.0).then_some((c, v))
            })
            .collect()
    }
}

/// Lower SoC bound per charger, held constant across the horizon.
pub fn soc_lower_bounds(view: &HorizonView, scenario: &Scenario) -> Vec<f64> {
    (0..view.n_chargers)
        .map(|i| match view.session[i] {
            Some(s) if view.xi[i].first() == Some(&1) => soc_lower_bound(view.x0[i], &scenario.sessions[s]),
            _ => 0.0,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepartureConstraint {
    pub charger: usize,
    /// State block index: the row constrains `x_{k+block+1}`.
    pub block: usize,
    pub min_soc: f64,
    pub max_soc: f64,
    /// True for the reachability row of an EV leaving after the horizon.
    pub terminal: bool,
}

/// Departure rows for EVs leaving inside the horizon and reachability rows
/// at the terminal step for EVs leaving later.
pub fn departure_constraints(view: &HorizonView, scenario: &Scenario) -> Vec<DepartureConstraint> {
    let k = view.step;
    let hz = view.horizon;
    let lower = soc_lower_bounds(view, scenario);
    let mut out = Vec::new();
    for i in 0..view.n_chargers {
        let Some(sidx) = view.session[i] else { continue };
        let s = &scenario.sessions[sidx];
        let d = s.departure_step;
        if d <= k {
            continue;
        }
        if d <= k + hz {
            out.push(DepartureConstraint {
                charger: i,
                block: d - k - 1,
                min_soc: s.soc_required_min,
                max_soc: s.soc_required_max,
                terminal: false,
            });
        } else {
            let spec = &scenario.chargers[i];
            let remaining = (d - k - hz) as f64;
            let reach = s.soc_required_min - remaining * s.charge_gain(spec.max_charge_kw, view.dt_h);
            out.push(DepartureConstraint {
                charger: i,
                block: hz - 1,
                min_soc: reach.max(lower[i]),
                max_soc: 1.0,
                terminal: true,
            });
        }
    }
    out
}
