//! Dense bounded-variable simplex tableau.
//!
//! Every row `r` of the constraint matrix gets a logical variable
//! `s_r = a_r . x` whose bounds encode the row sense, so the working system
//! is `[A  -I] (x, s) = 0` with box bounds on all `n + m` columns. The
//! tableau stores `B^-1 [A -I]` row-major; row `r` reads
//! `x_B(r) + sum_{j nonbasic} t[r][j] x_j = 0`.

use std::sync::Arc;

use crate::problem::{MilpProblem, Sense};

const PIVOT_TOL: f64 = 1e-9;
const PRIMAL_TOL: f64 = 1e-9;
const DUAL_TOL: f64 = 1e-9;
const DROP_TOL: f64 = 1e-14;
/// Consecutive degenerate pivots tolerated before switching to Bland's rule.
const DEGENERATE_LIMIT: usize = 50;
const RECOMPUTE_EVERY: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum VarState {
    Basic,
    AtLower,
    AtUpper,
    /// Free nonbasic variable resting at zero.
    FreeZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum LpOutcome {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    /// Dual simplex proved the objective exceeds the cutoff.
    Cutoff,
}

#[derive(Debug)]
struct Original {
    rows: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone)]
pub(crate) struct Tableau {
    m: usize,
    n: usize,
    ncols: usize,
    t: Vec<f64>,
    d: Vec<f64>,
    cost: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    x: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    original: Arc<Original>,
    pub iterations: usize,
    pub max_iterations: usize,
}

impl Tableau {
    pub fn entries_needed(p: &MilpProblem) -> usize {
        let m = p.n_rows();
        m.saturating_mul(p.n_vars() + m)
    }

    pub fn new(p: &MilpProblem, max_iterations: usize) -> Self {
        let n = p.n_vars();
        let m = p.n_rows();
        let ncols = n + m;
        let mut t = vec![0.0; m * ncols];
        let mut lo = p.lower.clone();
        let mut hi = p.upper.clone();
        let mut rows = Vec::with_capacity(m);
        for (r, c) in p.constraints.iter().enumerate() {
            let row = &mut t[r * ncols..(r + 1) * ncols];
            for &(j, a) in &c.coeffs {
                row[j] -= a;
            }
            row[n + r] = 1.0;
            let (l, h) = match c.sense {
                Sense::Le => (f64::NEG_INFINITY, c.rhs),
                Sense::Ge => (c.rhs, f64::INFINITY),
                Sense::Eq => (c.rhs, c.rhs),
            };
            lo.push(l);
            hi.push(h);
            rows.push(
                row.iter()
                    .enumerate()
                    .filter(|(_, v)| **v != 0.0)
                    .map(|(j, v)| (j, *v))
                    .collect(),
            );
        }
        let mut cost = p.objective.clone();
        cost.resize(ncols, 0.0);
        let d = cost.clone();
        let mut state = vec![VarState::AtLower; ncols];
        let mut x = vec![0.0; ncols];
        for j in 0..n {
            let (l, h) = (lo[j], hi[j]);
            let prefer_upper = cost[j] < 0.0;
            state[j] = match (l.is_finite(), h.is_finite()) {
                (true, true) => {
                    if prefer_upper {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    }
                }
                (true, false) => VarState::AtLower,
                (false, true) => VarState::AtUpper,
                (false, false) => VarState::FreeZero,
            };
            x[j] = match state[j] {
                VarState::AtLower => l,
                VarState::AtUpper => h,
                _ => 0.0,
            };
        }
        let basis: Vec<usize> = (n..ncols).collect();
        for &b in &basis {
            state[b] = VarState::Basic;
        }
        let mut tab = Self {
            m,
            n,
            ncols,
            t,
            d,
            cost,
            lo,
            hi,
            x,
            basis,
            state,
            original: Arc::new(Original { rows }),
            iterations: 0,
            max_iterations,
        };
        tab.recompute_basics();
        tab
    }

    #[inline]
    fn row(&self, r: usize) -> &[f64] {
        &self.t[r * self.ncols..(r + 1) * self.ncols]
    }

    #[inline]
    fn at(&self, r: usize, j: usize) -> f64 {
        self.t[r * self.ncols + j]
    }

    pub fn objective(&self) -> f64 {
        (0..self.n).map(|j| self.cost[j] * self.x[j]).sum()
    }

    pub fn structural_values(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| self.x[j].clamp(self.lo[j], self.hi[j]))
            .collect()
    }

    fn recompute_basics(&mut self) {
        for r in 0..self.m {
            let row = self.row(r);
            let mut v = 0.0;
            for (j, &a) in row.iter().enumerate() {
                if a != 0.0 && self.state[j] != VarState::Basic {
                    v -= a * self.x[j];
                }
            }
            let b = self.basis[r];
            self.x[b] = v;
        }
    }

    fn recompute_reduced_costs(&mut self) {
        let mut d = self.cost.clone();
        for r in 0..self.m {
            let cb = self.cost[self.basis[r]];
            if cb != 0.0 {
                for (j, &a) in self.row(r).iter().enumerate() {
                    if a != 0.0 {
                        d[j] -= cb * a;
                    }
                }
            }
        }
        for &b in &self.basis {
            d[b] = 0.0;
        }
        self.d = d;
    }

    /// Rebuilds `B^-1 [A -I]` from the original rows for the current basis.
    /// Returns false if the basis is numerically singular.
    pub fn reinvert(&mut self) -> bool {
        let (m, ncols) = (self.m, self.ncols);
        let mut t = vec![0.0; m * ncols];
        for (r, row) in self.original.rows.iter().enumerate() {
            for &(j, v) in row {
                t[r * ncols + j] = v;
            }
        }
        let mut assigned = vec![false; m];
        let mut new_basis = vec![usize::MAX; m];
        let mut prow = vec![0.0; ncols];
        for &b in &self.basis {
            let mut best = None;
            let mut best_abs = 1e-11;
            for r in 0..m {
                if !assigned[r] {
                    let v = t[r * ncols + b].abs();
                    if v > best_abs {
                        best_abs = v;
                        best = Some(r);
                    }
                }
            }
            let Some(pr) = best else { return false };
            assigned[pr] = true;
            new_basis[pr] = b;
            let piv = t[pr * ncols + b];
            for j in 0..ncols {
                t[pr * ncols + j] /= piv;
            }
            prow.copy_from_slice(&t[pr * ncols..(pr + 1) * ncols]);
            for r in 0..m {
                if r == pr {
                    continue;
                }
                let f = t[r * ncols + b];
                if f != 0.0 {
                    let row = &mut t[r * ncols..(r + 1) * ncols];
                    for (v, &p) in row.iter_mut().zip(prow.iter()) {
                        *v -= f * p;
                    }
                    row[b] = 0.0;
                }
            }
        }
        self.t = t;
        self.basis = new_basis;
        self.recompute_reduced_costs();
        self.recompute_basics();
        true
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let ncols = self.ncols;
        let piv = self.at(r, q);
        {
            let row = &mut self.t[r * ncols..(r + 1) * ncols];
            let inv = 1.0 / piv;
            for v in row.iter_mut() {
                if *v != 0.0 {
                    *v *= inv;
                }
            }
            row[q] = 1.0;
        }
        let nz: Vec<(usize, f64)> = self
            .row(r)
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0.0)
            .map(|(j, v)| (j, *v))
            .collect();
        for i in 0..self.m {
            if i == r {
                continue;
            }
            let f = self.t[i * ncols + q];
            if f == 0.0 {
                continue;
            }
            let row = &mut self.t[i * ncols..(i + 1) * ncols];
            for &(j, p) in &nz {
                let v = row[j] - f * p;
                row[j] = if v.abs() < DROP_TOL { 0.0 } else { v };
            }
            row[q] = 0.0;
        }
        let dq = self.d[q];
        if dq != 0.0 {
            for &(j, p) in &nz {
                self.d[j] -= dq * p;
            }
            self.d[q] = 0.0;
        }
        let leaving = self.basis[r];
        self.basis[r] = q;
        self.state[q] = VarState::Basic;
        // Caller assigns the leaving variable's nonbasic state.
        self.state[leaving] = VarState::AtLower;
        self.iterations += 1;
        if self.iterations % RECOMPUTE_EVERY == 0 {
            self.recompute_basics();
        }
    }

    /// Moves nonbasic `q` by `delta` and propagates to the basic variables.
    fn shift_nonbasic(&mut self, q: usize, delta: f64) {
        if delta == 0.0 {
            return;
        }
        self.x[q] += delta;
        for r in 0..self.m {
            let a = self.at(r, q);
            if a != 0.0 {
                let b = self.basis[r];
                self.x[b] -= a * delta;
            }
        }
    }

    /// Changes the bounds of column `j` (structural index), keeping the
    /// basis. Nonbasic columns are moved onto the new bound.
    pub fn set_bounds(&mut self, j: usize, lo: f64, hi: f64) {
        self.lo[j] = lo;
        self.hi[j] = hi;
        if self.state[j] == VarState::Basic {
            return;
        }
        let (state, target) = match self.state[j] {
            VarState::AtUpper if hi.is_finite() => (VarState::AtUpper, hi),
            _ if lo.is_finite() => (VarState::AtLower, lo),
            _ if hi.is_finite() => (VarState::AtUpper, hi),
            _ => (VarState::FreeZero, 0.0),
        };
        self.state[j] = state;
        let delta = target - self.x[j];
        self.shift_nonbasic(j, delta);
    }

    fn is_fixed(&self, j: usize) -> bool {
        self.hi[j] - self.lo[j] <= 0.0
    }

    fn dual_feasible(&self) -> bool {
        (0..self.ncols).all(|j| {
            if self.is_fixed(j) {
                return true;
            }
            match self.state[j] {
                VarState::Basic => true,
                VarState::AtLower => self.d[j] >= -DUAL_TOL,
                VarState::AtUpper => self.d[j] <= DUAL_TOL,
                VarState::FreeZero => self.d[j].abs() <= DUAL_TOL,
            }
        })
    }

    fn primal_infeasibility(&self, b: usize) -> f64 {
        let v = self.x[b];
        if v < self.lo[b] - PRIMAL_TOL {
            self.lo[b] - v
        } else if v > self.hi[b] + PRIMAL_TOL {
            v - self.hi[b]
        } else {
            0.0
        }
    }

    fn primal_feasible(&self) -> bool {
        self.basis.iter().all(|&b| self.primal_infeasibility(b) == 0.0)
    }

    /// Solves from the current basis, choosing dual simplex when the basis is
    /// dual feasible and primal phase 1/2 otherwise.
    pub fn optimize(&mut self, cutoff: f64) -> LpOutcome {
        let outcome = if self.dual_feasible() {
            match self.dual(cutoff) {
                LpOutcome::Optimal => self.primal(false),
                other => other,
            }
        } else {
            match self.primal(true) {
                LpOutcome::Optimal => self.primal(false),
                other => other,
            }
        };
        if outcome == LpOutcome::Optimal {
            self.recompute_basics();
            if !self.primal_feasible() || !self.dual_feasible() {
                // Drift: rebuild from the original data and polish once.
                if !self.reinvert() {
                    return LpOutcome::IterationLimit;
                }
                return match self.primal(true) {
                    LpOutcome::Optimal => self.primal(false),
                    other => other,
                };
            }
        }
        outcome
    }

    /// Primal simplex. In phase 1 the objective is the sum of basic bound
    /// violations; phase 2 minimizes the true cost from a feasible basis.
    pub fn primal(&mut self, phase1: bool) -> LpOutcome {
        let mut degenerate = 0usize;
        let mut w = vec![0.0; self.m];
        let mut d1 = vec![0.0; self.ncols];
        loop {
            if self.iterations >= self.max_iterations {
                return LpOutcome::IterationLimit;
            }
            let bland = degenerate > DEGENERATE_LIMIT;
            let dvec: &[f64] = if phase1 {
                let mut any = false;
                for r in 0..self.m {
                    let b = self.basis[r];
                    w[r] = if self.x[b] < self.lo[b] - PRIMAL_TOL {
                        -1.0
                    } else if self.x[b] > self.hi[b] + PRIMAL_TOL {
                        1.0
                    } else {
                        0.0
                    };
                    any |= w[r] != 0.0;
                }
                if !any {
                    return LpOutcome::Optimal;
                }
                d1.iter_mut().for_each(|v| *v = 0.0);
                for r in 0..self.m {
                    if w[r] != 0.0 {
                        let wr = w[r];
                        for (j, &a) in self.row(r).iter().enumerate() {
                            if a != 0.0 {
                                d1[j] -= wr * a;
                            }
                        }
                    }
                }
                for &b in &self.basis {
                    d1[b] = 0.0;
                }
                &d1
            } else {
                &self.d
            };

            // Pricing.
            let mut entering: Option<(usize, f64)> = None;
            let mut best_score = 0.0;
            for j in 0..self.ncols {
                if self.state[j] == VarState::Basic || self.is_fixed(j) {
                    continue;
                }
                let dj = dvec[j];
                let dir = match self.state[j] {
                    VarState::AtLower if dj < -DUAL_TOL => 1.0,
                    VarState::AtUpper if dj > DUAL_TOL => -1.0,
                    VarState::FreeZero if dj.abs() > DUAL_TOL => -dj.signum(),
                    _ => continue,
                };
                if bland {
                    entering = Some((j, dir));
                    break;
                }
                if dj.abs() > best_score {
                    best_score = dj.abs();
                    entering = Some((j, dir));
                }
            }
            let Some((q, dir)) = entering else {
                if phase1 {
                    return LpOutcome::Infeasible;
                }
                return LpOutcome::Optimal;
            };

            // Ratio test. Basic x_B(r) moves by -t[r][q] * dir * theta.
            let range = self.hi[q] - self.lo[q];
            let limit_of = |tab: &Tableau, r: usize, relax: f64| -> Option<f64> {
                let alpha = tab.at(r, q) * dir;
                if alpha.abs() <= PIVOT_TOL {
                    return None;
                }
                let b = tab.basis[r];
                let (xb, l, h) = (tab.x[b], tab.lo[b], tab.hi[b]);
                if alpha > 0.0 {
                    // decreasing
                    if phase1 && xb > h + PRIMAL_TOL {
                        Some(((xb - h + relax) / alpha).max(0.0))
                    } else if phase1 && xb < l - PRIMAL_TOL {
                        None
                    } else if l.is_finite() {
                        Some(((xb - l + relax) / alpha).max(0.0))
                    } else {
                        None
                    }
                } else if phase1 && xb < l - PRIMAL_TOL {
                    Some(((l - xb + relax) / -alpha).max(0.0))
                } else if phase1 && xb > h + PRIMAL_TOL {
                    None
                } else if h.is_finite() {
                    Some(((h - xb + relax) / -alpha).max(0.0))
                } else {
                    None
                }
            };
            let mut leave: Option<usize> = None;
            let mut theta = f64::INFINITY;
            if bland {
                let mut best_idx = usize::MAX;
                for r in 0..self.m {
                    if let Some(lim) = limit_of(self, r, 0.0) {
                        let b = self.basis[r];
                        if lim < theta - 1e-12 || ((lim - theta).abs() <= 1e-12 && b < best_idx) {
                            theta = lim;
                            leave = Some(r);
                            best_idx = b;
                        }
                    }
                }
            } else {
                // Harris two-pass ratio test.
                let mut relaxed = f64::INFINITY;
                for r in 0..self.m {
                    if let Some(lim) = limit_of(self, r, PRIMAL_TOL) {
                        relaxed = relaxed.min(lim);
                    }
                }
                if relaxed.is_finite() {
                    let mut best_alpha = 0.0;
                    for r in 0..self.m {
                        if let Some(lim) = limit_of(self, r, 0.0) {
                            let a = self.at(r, q).abs();
                            if lim <= relaxed && a > best_alpha {
                                best_alpha = a;
                                theta = lim;
                                leave = Some(r);
                            }
                        }
                    }
                }
            }

            if range.is_finite() && range <= theta {
                // Bound flip.
                let delta = dir * range;
                self.shift_nonbasic(q, delta);
                self.state[q] = if dir > 0.0 { VarState::AtUpper } else { VarState::AtLower };
                self.x[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                self.iterations += 1;
                degenerate = 0;
                continue;
            }
            let Some(r) = leave else {
                if phase1 {
                    // Cannot happen with a bounded phase-1 objective; treat as stall.
                    return LpOutcome::Infeasible;
                }
                return LpOutcome::Unbounded;
            };
            if theta <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            let b = self.basis[r];
            let alpha = self.at(r, q) * dir;
            // Leaving variable lands on the bound it was heading to.
            let leaving_state = if alpha > 0.0 {
                if phase1 && self.x[b] > self.hi[b] + PRIMAL_TOL {
                    VarState::AtUpper
                } else {
                    VarState::AtLower
                }
            } else if phase1 && self.x[b] < self.lo[b] - PRIMAL_TOL {
                VarState::AtLower
            } else {
                VarState::AtUpper
            };
            self.shift_nonbasic(q, dir * theta);
            self.pivot(r, q);
            self.state[b] = leaving_state;
            self.x[b] = match leaving_state {
                VarState::AtUpper => self.hi[b],
                _ => self.lo[b],
            };
            // Keep the basic values consistent with the snapped leaving value.
            if self.iterations % 25 == 0 {
                self.recompute_basics();
            }
        }
    }

    /// Dual simplex from a dual-feasible basis. Stops early with
    /// [`LpOutcome::Cutoff`] once the objective exceeds `cutoff`.
    pub fn dual(&mut self, cutoff: f64) -> LpOutcome {
        let mut degenerate = 0usize;
        loop {
            if self.iterations >= self.max_iterations {
                return LpOutcome::IterationLimit;
            }
            if cutoff.is_finite() {
                let obj = self.objective();
                if obj > cutoff + 1e-9 * cutoff.abs().max(1.0) {
                    return LpOutcome::Cutoff;
                }
            }
            let bland = degenerate > DEGENERATE_LIMIT;
            // Leaving row: largest bound violation.
            let mut leave: Option<usize> = None;
            let mut worst = 0.0;
            let mut worst_var = usize::MAX;
            for r in 0..self.m {
                let b = self.basis[r];
                let v = self.primal_infeasibility(b);
                if v > 0.0 {
                    if bland {
                        if b < worst_var {
                            worst_var = b;
                            leave = Some(r);
                        }
                    } else if v > worst {
                        worst = v;
                        leave = Some(r);
                    }
                }
            }
            let Some(r) = leave else {
                return LpOutcome::Optimal;
            };
            let b = self.basis[r];
            let below = self.x[b] < self.lo[b];
            let target = if below { self.lo[b] } else { self.hi[b] };

            // Entering column: keeps reduced costs sign-feasible.
            let eligible = |tab: &Tableau, j: usize| -> Option<f64> {
                if tab.state[j] == VarState::Basic || tab.is_fixed(j) {
                    return None;
                }
                let a = tab.at(r, j);
                if a.abs() <= PIVOT_TOL {
                    return None;
                }
                // x_B changes by -a * delta_j; need sign(-a * delta_j) = +1 if below.
                let want_increase = below;
                let ok = match tab.state[j] {
                    VarState::AtLower => (a < 0.0) == want_increase,
                    VarState::AtUpper => (a > 0.0) == want_increase,
                    VarState::FreeZero => true,
                    VarState::Basic => false,
                };
                if ok {
                    Some(a)
                } else {
                    None
                }
            };
            let mut entering: Option<usize> = None;
            if bland {
                let mut best = f64::INFINITY;
                for j in 0..self.ncols {
                    if let Some(a) = eligible(self, j) {
                        let ratio = self.d[j].abs() / a.abs();
                        if ratio < best - 1e-12 {
                            best = ratio;
                            entering = Some(j);
                        }
                    }
                }
            } else {
                let mut relaxed = f64::INFINITY;
                for j in 0..self.ncols {
                    if let Some(a) = eligible(self, j) {
                        relaxed = relaxed.min((self.d[j].abs() + DUAL_TOL) / a.abs());
                    }
                }
                let mut best_alpha = 0.0;
                for j in 0..self.ncols {
                    if let Some(a) = eligible(self, j) {
                        let ratio = self.d[j].abs() / a.abs();
                        if ratio <= relaxed && a.abs() > best_alpha {
                            best_alpha = a.abs();
                            entering = Some(j);
                        }
                    }
                }
            }
            let Some(q) = entering else {
                return LpOutcome::Infeasible;
            };
            let a = self.at(r, q);
            if self.d[q].abs() / a.abs() <= 1e-12 {
                degenerate += 1;
            } else {
                degenerate = 0;
            }
            let delta = (self.x[b] - target) / a;
            self.shift_nonbasic(q, delta);
            self.pivot(r, q);
            self.state[b] = if below { VarState::AtLower } else { VarState::AtUpper };
            self.x[b] = target;
        }
    }
}
