//! Problem container, solver options and solution types.

use std::fmt;
use std::io::{self, Write};
use std::time::Duration;

use thiserror::Error;

/// Row sense of a linear constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

impl fmt::Display for Sense {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        })
    }
}

/// One sparse constraint row: `sum(coeff * x[var]) <sense> rhs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Constraint {
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Error, PartialEq)]
pub enum ProblemError {
    #[error("variable {var}: lower bound {lo} exceeds upper bound {hi}")]
    InvertedBounds { var: usize, lo: f64, hi: f64 },
    #[error("variable {var} is binary but its bounds [{lo}, {hi}] are not within [0, 1]")]
    BinaryBounds { var: usize, lo: f64, hi: f64 },
    #[error("constraint {row} references variable {var} but the problem has {n_vars} variables")]
    IndexOutOfRange { row: usize, var: usize, n_vars: usize },
    #[error("constraint {row} has a non-finite coefficient or right-hand side")]
    NonFiniteRow { row: usize },
    #[error("objective coefficient of variable {var} is not finite")]
    NonFiniteObjective { var: usize },
    #[error("warm start has {got} values, expected {expected}")]
    WarmStartLength { got: usize, expected: usize },
    #[error("problem has binary variables; use solve_milp")]
    HasBinaries,
    #[error("dense tableau would need {entries} entries (limit {limit})")]
    TooLarge { entries: usize, limit: usize },
}

/// Minimization problem with box bounds, sparse rows and an optional set of
/// binary variables.
#[derive(Debug, Clone, Default)]
pub struct MilpProblem {
    pub objective: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constraints: Vec<Constraint>,
    pub binary_mask: Vec<bool>,
    pub warm_start: Option<Vec<f64>>,
    pub names: Vec<String>,
}

impl MilpProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.constraints.len()
    }

    /// Adds a continuous variable and returns its index.
    pub fn add_var(&mut self, name: impl Into<String>, cost: f64, lo: f64, hi: f64) -> usize {
        self.objective.push(cost);
        self.lower.push(lo);
        self.upper.push(hi);
        self.binary_mask.push(false);
        self.names.push(name.into());
        self.objective.len() - 1
    }

    /// Adds a binary variable and returns its index.
    pub fn add_binary(&mut self, name: impl Into<String>, cost: f64) -> usize {
        let j = self.add_var(name, cost, 0.0, 1.0);
        self.binary_mask[j] = true;
        j
    }

    pub fn add_constraint(&mut self, coeffs: Vec<(usize, f64)>, sense: Sense, rhs: f64) -> usize {
        self.constraints.push(Constraint { coeffs, sense, rhs });
        self.constraints.len() - 1
    }

    pub fn has_binaries(&self) -> bool {
        self.binary_mask.iter().any(|&b| b)
    }

    pub fn validate(&self) -> Result<(), ProblemError> {
        let n = self.n_vars();
        for j in 0..n {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            if lo > hi || lo.is_nan() || hi.is_nan() {
                return Err(ProblemError::InvertedBounds { var: j, lo, hi });
            }
            if self.binary_mask[j] && (lo < 0.0 || hi > 1.0) {
                return Err(ProblemError::BinaryBounds { var: j, lo, hi });
            }
            if !self.objective[j].is_finite() {
                return Err(ProblemError::NonFiniteObjective { var: j });
            }
        }
        for (row, c) in self.constraints.iter().enumerate() {
            if !c.rhs.is_finite() {
                return Err(ProblemError::NonFiniteRow { row });
            }
            for &(var, a) in &c.coeffs {
                if var >= n {
                    return Err(ProblemError::IndexOutOfRange { row, var, n_vars: n });
                }
                if !a.is_finite() {
                    return Err(ProblemError::NonFiniteRow { row });
                }
            }
        }
        if let Some(ws) = &self.warm_start {
            if ws.len() != n {
                return Err(ProblemError::WarmStartLength { got: ws.len(), expected: n });
            }
        }
        Ok(())
    }

    /// Objective value of a point.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.objective.iter().zip(x).map(|(c, v)| c * v).sum()
    }

    /// Largest violation of bounds and rows at `x` (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for j in 0..self.n_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        for c in &self.constraints {
            let act: f64 = c.coeffs.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match c.sense {
                Sense::Le => act - c.rhs,
                Sense::Ge => c.rhs - act,
                Sense::Eq => (act - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        worst
    }

    /// Largest distance of a binary variable from {0, 1}.
    pub fn max_integrality_violation(&self, x: &[f64]) -> f64 {
        self.binary_mask
            .iter()
            .zip(x)
            .filter(|(b, _)| **b)
            .map(|(_, v)| (v - v.round()).abs())
            .fold(0.0, f64::max)
    }

    fn var_name(&self, j: usize) -> String {
        match self.names.get(j) {
            Some(n) if !n.is_empty() => sanitize(n),
            _ => format!("x{j}"),
        }
    }

    /// Writes the problem in CPLEX LP text format.
    pub fn write_lp<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(w, "\\ evpool-milp export")?;
        writeln!(w, "Minimize")?;
        write!(w, " obj:")?;
        let mut any = false;
        for (j, &c) in self.objective.iter().enumerate() {
            if c != 0.0 {
                write!(w, " {} {}", signed(c), self.var_name(j))?;
                any = true;
            }
        }
        if !any {
            write!(w, " 0 {}", self.var_name(0))?;
        }
        writeln!(w)?;
        writeln!(w, "Subject To")?;
        for (r, c) in self.constraints.iter().enumerate() {
            write!(w, " c{r}:")?;
            if c.coeffs.is_empty() {
                write!(w, " 0 {}", self.var_name(0))?;
            }
            for &(j, a) in &c.coeffs {
                write!(w, " {} {}", signed(a), self.var_name(j))?;
            }
            writeln!(w, " {} {}", c.sense, c.rhs)?;
        }
        writeln!(w, "Bounds")?;
        for j in 0..self.n_vars() {
            let (lo, hi) = (self.lower[j], self.upper[j]);
            let name = self.var_name(j);
            match (lo.is_finite(), hi.is_finite()) {
                (true, true) if lo == hi => writeln!(w, " {name} = {lo}")?,
                (true, true) => writeln!(w, " {lo} <= {name} <= {hi}")?,
                (true, false) => writeln!(w, " {name} >= {lo}")?,
                (false, true) => writeln!(w, " -inf <= {name} <= {hi}")?,
                (false, false) => writeln!(w, " {name} free")?,
            }
        }
        let bins: Vec<String> = (0..self.n_vars())
            .filter(|&j| self.binary_mask[j])
            .map(|j| self.var_name(j))
            .collect();
        if !bins.is_empty() {
            writeln!(w, "Binary")?;
            for chunk in bins.chunks(8) {
                writeln!(w, " {}", chunk.join(" "))?;
            }
        }
        writeln!(w, "End")
    }
}

fn signed(v: f64) -> String {
    if v < 0.0 {
        format!("- {}", -v)
    } else {
        format!("+ {v}")
    }
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '.' { c } else { '_' })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Optimal,
    Infeasible,
    Unbounded,
    NodeLimit,
    TimeLimit,
    /// The simplex iteration cap was hit or the basis became numerically unusable.
    NumericalFailure,
}

impl Status {
    pub fn as_str(&self) -> &'static str {
        match self {
            Status::Optimal => "optimal",
            Status::Infeasible => "infeasible",
            Status::Unbounded => "unbounded",
            Status::NodeLimit => "node_limit",
            Status::TimeLimit => "time_limit",
            Status::NumericalFailure => "numerical_failure",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct MilpSolution {
    pub status: Status,
    /// Best point found; empty when no feasible point is known.
    pub values: Vec<f64>,
    pub objective: f64,
    /// Lower bound on the optimum (minimization).
    pub best_bound: f64,
    /// Relative gap `(objective - best_bound) / max(1, |objective|)`.
    pub mip_gap: f64,
    pub node_count: usize,
    pub lp_iterations: usize,
    pub solve_time: Duration,
}

impl MilpSolution {
    pub fn has_solution(&self) -> bool {
        !self.values.is_empty()
    }

    pub(crate) fn empty(status: Status, solve_time: Duration) -> Self {
        let objective = match status {
            Status::Unbounded => f64::NEG_INFINITY,
            _ => f64::INFINITY,
        };
        Self {
            status,
            values: Vec::new(),
            objective,
            best_bound: objective,
            mip_gap: f64::INFINITY,
            node_count: 0,
            lp_iterations: 0,
            solve_time,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    pub node_limit: usize,
    pub time_limit: Duration,
    /// Primal feasibility tolerance.
    pub feas_tol: f64,
    /// Integrality tolerance for binaries.
    pub int_tol: f64,
    /// Simplex iterations allowed per LP solve.
    pub max_iterations: usize,
    /// Refuse problems whose dense tableau exceeds this many entries.
    pub max_tableau_entries: usize,
    /// Run the rounding heuristic every this many nodes (0 disables).
    pub heuristic_frequency: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            node_limit: 100_000,
            time_limit: Duration::from_secs(60),
            feas_tol: 1e-7,
            int_tol: 1e-6,
            max_iterations: 50_000,
            max_tableau_entries: 40_000_000,
            heuristic_frequency: 10,
        }
    }
}
