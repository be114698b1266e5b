//! Dense bounded-variable simplex and best-first branch-and-bound for small
//! mixed-binary linear programs.

mod branch;
mod lp;
mod problem;
mod tableau;

pub use branch::solve_milp;
pub use lp::solve_lp;
pub use problem::{
    Constraint, MilpProblem, MilpSolution, ProblemError, Sense, SolverOptions, Status,
};

/// Solves `p`, dispatching to [`solve_lp`] when it has no binary variables.
pub fn solve(p: &MilpProblem, opts: &SolverOptions) -> Result<MilpSolution, ProblemError> {
    if p.has_binaries() {
        solve_milp(p, opts)
    } else {
        solve_lp(p, opts)
    }
}
