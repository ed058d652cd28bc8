//! Dolan-More style performance profiles over cost-versus-time traces.
//!
//! For problem `p` with start cost `F0` and best final cost `F*` over all
//! solvers, the target is `F_tau = F* + tau (F0 - F*)`. `T_tau(p, s)` is the
//! first wall-clock time at which solver `s` is at or below the target, and
//! `rho(s, alpha)` the percentage of problems with
//! `T_tau(p, s) <= alpha * min_s T_tau(p, s)`.

use std::fmt::Write as _;

use crate::trace::SolveTrace;

/// One solver's trajectory on one problem: `(elapsed ms, cost)` at the end of
/// every iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverRun {
    pub solver: String,
    pub curve: Vec<(f64, f64)>,
}

impl SolverRun {
    pub fn from_trace(solver: impl Into<String>, trace: &SolveTrace) -> Self {
        Self {
            solver: solver.into(),
            curve: trace.cost_curve(),
        }
    }

    pub fn final_cost(&self, f0: f64) -> f64 {
        self.curve.iter().map(|c| c.1).fold(f0, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemRuns {
    pub name: String,
    pub initial_cost: f64,
    pub runs: Vec<SolverRun>,
}

impl ProblemRuns {
    /// Smallest cost reached by any solver.
    pub fn best_cost(&self) -> f64 {
        self.runs.iter().map(|r| r.final_cost(self.initial_cost)).fold(self.initial_cost, f64::min)
    }

    pub fn target(&self, tau: f64) -> f64 {
        cost_threshold(self.initial_cost, self.best_cost(), tau)
    }

    /// `T_tau` for every run, in run order; infinity when never reached.
    pub fn times_to_target(&self, tau: f64) -> Vec<f64> {
        let target = self.target(tau);
        self.runs.iter().map(|r| time_to_target(&r.curve, target)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ProfileInput {
    pub problems: Vec<ProblemRuns>,
}

impl ProfileInput {
    /// Solver names in first-seen order.
    pub fn solvers(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for p in &self.problems {
            for r in &p.runs {
                if !out.contains(&r.solver) {
                    out.push(r.solver.clone());
                }
            }
        }
        out
    }
}

pub fn cost_threshold(f0: f64, f_best: f64, tau: f64) -> f64 {
    f_best + tau * (f0 - f_best)
}

pub fn time_to_target(curve: &[(f64, f64)], target: f64) -> f64 {
    curve.iter().find(|c| c.1 <= target).map_or(f64::INFINITY, |c| c.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileRow {
    pub solver: String,
    pub tau: f64,
    pub alpha: f64,
    pub rho: f64,
}

/// `rho(s, alpha)` for every solver, tau and alpha.
///
/// A problem where no solver reaches the target counts as unsolved for all.
/// Every solver must have run every problem.
pub fn performance_profile(input: &ProfileInput, taus: &[f64], alphas: &[f64]) -> Vec<ProfileRow> {
    let solvers = input.solvers();
    let n = input.problems.len().max(1) as f64;
    let mut rows = Vec::new();
    for &tau in taus {
        assert!(tau > 0.0 && tau < 1.0, "tau must lie in (0, 1)");
        // times[p][s]
        let times: Vec<Vec<f64>> = input
            .problems
            .iter()
            .map(|p| {
                let t = p.times_to_target(tau);
                solvers
                    .iter()
                    .map(|s| {
                        let k = p.runs.iter().position(|r| &r.solver == s).expect("solver missing a problem");
                        t[k]
                    })
                    .collect()
            })
            .collect();
        for (si, s) in solvers.iter().enumerate() {
            for &alpha in alphas {
                let solved = times
                    .iter()
                    .filter(|t| {
                        let best = t.iter().copied().fold(f64::INFINITY, f64::min);
                        t[si].is_finite() && t[si] <= alpha * best
                    })
                    .count();
                rows.push(ProfileRow {
                    solver: s.clone(),
                    tau,
                    alpha,
                    rho: 100.0 * solved as f64 / n,
                });
            }
        }
    }
    rows
}

pub fn profile_csv(rows: &[ProfileRow]) -> String {
    let mut out = String::from("solver,tau,alpha,rho\n");
    for r in rows {
        writeln!(out, "{},{},{},{}", r.solver, r.tau, r.alpha, r.rho).unwrap();
    }
    out
}
