use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::time::Instant;

use crate::lp::check_size;
use crate::problem::{MilpProblem, MilpSolution, ProblemError, SolverOptions, Status};
use crate::tableau::{LpOutcome, Tableau};

struct Node {
    bound: f64,
    seq: u64,
    parent: u64,
    fixes: Vec<(usize, f64)>,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Node {}

impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Node {
    // BinaryHeap is a max-heap: smallest bound first, then newest node so
    // equal-bound children are explored depth-first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

struct Incumbent {
    values: Vec<f64>,
    objective: f64,
}

struct Search<'a> {
    p: &'a MilpProblem,
    opts: &'a SolverOptions,
    binaries: Vec<usize>,
    incumbent: Option<Incumbent>,
    lp_iterations: usize,
}

impl Search<'_> {
    fn cutoff(&self) -> f64 {
        self.incumbent.as_ref().map_or(f64::INFINITY, |i| i.objective)
    }

    fn improves(&self, obj: f64) -> bool {
        let inc = self.cutoff();
        !inc.is_finite() || obj < inc - 1e-9 * inc.abs().max(1.0)
    }

    fn offer(&mut self, values: Vec<f64>) {
        if self.p.max_violation(&values) > self.opts.feas_tol
            || self.p.max_integrality_violation(&values) > self.opts.int_tol
        {
            return;
        }
        let objective = self.p.evaluate(&values);
        if self.improves(objective) {
            self.incumbent = Some(Incumbent { values, objective });
        }
    }

    /// Fixes every binary to the given 0/1 pattern and solves the remaining LP.
    fn fix_and_solve(&mut self, base: &Tableau, pattern: &[f64]) {
        let mut tab = base.clone();
        tab.iterations = 0;
        for &j in &self.binaries {
            let v = if pattern[j] >= 0.5 { 1.0 } else { 0.0 };
            tab.set_bounds(j, v, v);
        }
        let outcome = tab.optimize(self.cutoff());
        self.lp_iterations += tab.iterations;
        if outcome == LpOutcome::Optimal {
            self.offer(tab.structural_values());
        }
    }

    fn branching_var(&self, values: &[f64]) -> Option<usize> {
        let mut best = None;
        let mut best_frac = self.opts.int_tol;
        for &j in &self.binaries {
            let v = values[j];
            let frac = (v - v.floor()).min(v.ceil() - v);
            if frac > best_frac {
                best_frac = frac;
                best = Some(j);
            }
        }
        best
    }
}

/// Solves a mixed-binary linear program by best-first branch-and-bound.
///
/// When a node or time limit stops the search, the best incumbent found so
/// far is returned with its status and the remaining gap.
pub fn solve_milp(p: &MilpProblem, opts: &SolverOptions) -> Result<MilpSolution, ProblemError> {
    p.validate()?;
    check_size(p, opts)?;
    let start = Instant::now();
    let binaries: Vec<usize> = (0..p.n_vars()).filter(|&j| p.binary_mask[j]).collect();
    let mut search = Search { p, opts, binaries, incumbent: None, lp_iterations: 0 };

    let mut root = Tableau::new(p, opts.max_iterations);
    let outcome = root.optimize(f64::INFINITY);
    search.lp_iterations += root.iterations;
    root.iterations = 0;
    match outcome {
        LpOutcome::Optimal => {}
        LpOutcome::Infeasible => return Ok(finish(search, Status::Infeasible, f64::INFINITY, 1, start)),
        LpOutcome::Unbounded => {
            return Ok(finish(search, Status::Unbounded, f64::NEG_INFINITY, 1, start))
        }
        LpOutcome::IterationLimit | LpOutcome::Cutoff => {
            return Ok(finish(search, Status::NumericalFailure, f64::NEG_INFINITY, 1, start))
        }
    }

    if let Some(ws) = &p.warm_start {
        let ws = ws.clone();
        search.offer(ws.clone());
        if !search.binaries.is_empty() {
            search.fix_and_solve(&root, &ws);
        }
    }

    let mut heap = BinaryHeap::new();
    heap.push(Node { bound: root.objective(), seq: 0, parent: u64::MAX, fixes: Vec::new() });
    let mut next_seq = 1u64;
    let mut last: Option<(u64, Tableau)> = None;
    let mut nodes = 0usize;
    // Bound of nodes dropped after numerical trouble; keeps the gap honest.
    let mut lost_bound = f64::INFINITY;

    while let Some(node) = heap.pop() {
        if !search.improves(node.bound) {
            continue;
        }
        if nodes >= opts.node_limit || start.elapsed() >= opts.time_limit {
            let status =
                if nodes >= opts.node_limit { Status::NodeLimit } else { Status::TimeLimit };
            let bound = node.bound.min(lost_bound);
            let bound = heap.iter().map(|n| n.bound).fold(bound, f64::min);
            return Ok(finish(search, status, bound, nodes, start));
        }
        nodes += 1;

        let mut tab = match &last {
            Some((id, t)) if *id == node.parent => {
                let mut t = t.clone();
                if let Some(&(j, v)) = node.fixes.last() {
                    t.set_bounds(j, v, v);
                }
                t
            }
            _ if node.fixes.is_empty() => root.clone(),
            _ => {
                let mut t = root.clone();
                for &(j, v) in &node.fixes {
                    t.set_bounds(j, v, v);
                }
                t
            }
        };
        let outcome = tab.optimize(search.cutoff());
        search.lp_iterations += tab.iterations;
        tab.iterations = 0;
        match outcome {
            LpOutcome::Optimal => {}
            LpOutcome::Infeasible | LpOutcome::Cutoff | LpOutcome::Unbounded => continue,
            LpOutcome::IterationLimit => {
                lost_bound = lost_bound.min(node.bound);
                continue;
            }
        }
        let obj = tab.objective();
        if !search.improves(obj) {
            continue;
        }
        let values = tab.structural_values();
        let Some(j) = search.branching_var(&values) else {
            search.offer(values);
            continue;
        };
        let freq = opts.heuristic_frequency;
        if freq > 0 && (nodes - 1) % freq == 0 {
            search.fix_and_solve(&tab, &values);
            if !search.improves(obj) {
                continue;
            }
        }
        // The child nearer the relaxed value gets the larger sequence number
        // and so is explored first among equal bounds.
        let order = if values[j] >= 0.5 { [0.0, 1.0] } else { [1.0, 0.0] };
        for v in order {
            let mut fixes = node.fixes.clone();
            fixes.push((j, v));
            heap.push(Node { bound: obj, seq: next_seq, parent: node.seq, fixes });
            next_seq += 1;
        }
        last = Some((node.seq, tab));
    }

    // A subtree lost to numerical trouble voids both optimality and
    // infeasibility claims.
    let status = if lost_bound.is_finite() {
        Status::NumericalFailure
    } else if search.incumbent.is_some() {
        Status::Optimal
    } else {
        Status::Infeasible
    };
    let bound = search.cutoff().min(lost_bound);
    Ok(finish(search, status, bound, nodes, start))
}

fn finish(
    search: Search<'_>,
    status: Status,
    bound: f64,
    nodes: usize,
    start: Instant,
) -> MilpSolution {
    let lp_iterations = search.lp_iterations;
    match search.incumbent {
        Some(inc) => {
            let best_bound = bound.min(inc.objective);
            let mip_gap = if status == Status::Optimal {
                0.0
            } else {
                (inc.objective - best_bound) / inc.objective.abs().max(1.0)
            };
            MilpSolution {
                status,
                values: inc.values,
                objective: inc.objective,
                best_bound,
                mip_gap,
                node_count: nodes,
                lp_iterations,
                solve_time: start.elapsed(),
            }
        }
        None => {
            let mut sol = MilpSolution::empty(status, start.elapsed());
            if status != Status::Infeasible && status != Status::Unbounded {
                sol.best_bound = bound;
            }
            sol.node_count = nodes;
            sol.lp_iterations = lp_iterations;
            sol
        }
    }
}
