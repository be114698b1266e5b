use std::time::Instant;

use crate::problem::{MilpProblem, MilpSolution, ProblemError, SolverOptions, Status};
use crate::tableau::{LpOutcome, Tableau};

pub(crate) fn check_size(p: &MilpProblem, opts: &SolverOptions) -> Result<(), ProblemError> {
    let entries = Tableau::entries_needed(p);
    if entries > opts.max_tableau_entries {
        return Err(ProblemError::TooLarge { entries, limit: opts.max_tableau_entries });
    }
    Ok(())
}

/// Solves a continuous linear program (minimization).
pub fn solve_lp(p: &MilpProblem, opts: &SolverOptions) -> Result<MilpSolution, ProblemError> {
    p.validate()?;
    if p.has_binaries() {
        return Err(ProblemError::HasBinaries);
    }
    check_size(p, opts)?;
    let start = Instant::now();
    let mut tab = Tableau::new(p, opts.max_iterations);
    let outcome = tab.optimize(f64::INFINITY);
    let status = match outcome {
        LpOutcome::Optimal => Status::Optimal,
        LpOutcome::Infeasible => Status::Infeasible,
        LpOutcome::Unbounded => Status::Unbounded,
        LpOutcome::IterationLimit | LpOutcome::Cutoff => Status::NumericalFailure,
    };
    if status != Status::Optimal {
        let mut sol = MilpSolution::empty(status, start.elapsed());
        sol.lp_iterations = tab.iterations;
        return Ok(sol);
    }
    let values = tab.structural_values();
    if p.max_violation(&values) > opts.feas_tol {
        let mut sol = MilpSolution::empty(Status::NumericalFailure, start.elapsed());
        sol.lp_iterations = tab.iterations;
        return Ok(sol);
    }
    let objective = p.evaluate(&values);
    Ok(MilpSolution {
        status,
        values,
        objective,
        best_bound: objective,
        mip_gap: 0.0,
        node_count: 0,
        lp_iterations: tab.iterations,
        solve_time: start.elapsed(),
    })
}
