//! Per-iteration solver records and their CSV export.

use std::fmt::Write as _;

use serde::Serialize;

/// Wall-clock milliseconds spent in each phase of one iteration.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PhaseTimings {
    pub jacobian: f64,
    pub assembly: f64,
    pub clustering: f64,
    pub rcs_solve: f64,
    pub back_substitution: f64,
    pub correction: f64,
}

impl PhaseTimings {
    pub fn total(&self) -> f64 {
        self.jacobian + self.assembly + self.clustering + self.rcs_solve + self.back_substitution + self.correction
    }
}

/// Clustering statistics of one stochastic iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ClusterStats {
    pub n_clusters: usize,
    pub max_cluster_size: usize,
    pub n_constraints: usize,
    pub correction_applied: bool,
    /// Observations left out of the split system because their virtual point
    /// block had a zero diagonal entry.
    pub dropped_observations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    /// 1-based iteration number.
    pub iter: usize,
    pub cost_before: f64,
    pub cost_after: f64,
    /// Damping used to compute this iteration's step.
    pub lambda: f64,
    pub accepted: bool,
    pub step_norm: f64,
    pub grad_norm: f64,
    pub timings: PhaseTimings,
    /// Wall-clock milliseconds since the solve started, at iteration end.
    pub elapsed_ms: f64,
    pub clusters: Option<ClusterStats>,
    /// Observations with degenerate projections at the iterate.
    pub degenerate: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    CostTolerance,
    GradientTolerance,
    ParameterTolerance,
    MaxIterations,
}

impl std::fmt::Display for TerminationReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::CostTolerance => "cost_tolerance",
            Self::GradientTolerance => "gradient_tolerance",
            Self::ParameterTolerance => "parameter_tolerance",
            Self::MaxIterations => "max_iterations",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveTrace {
    pub initial_cost: f64,
    pub records: Vec<IterationRecord>,
    pub termination: TerminationReason,
}

pub const CSV_HEADER: &str = "iter,cost_before,cost_after,lambda,accepted,step_norm,grad_norm,\
t_jacobian_ms,t_assembly_ms,t_clustering_ms,t_rcs_ms,t_backsub_ms,t_correction_ms";

pub const CLUSTER_CSV_COLUMNS: &str = "n_clusters,max_cluster_size,n_constraints,correction_applied";

impl SolveTrace {
    /// Cost at the final iterate.
    pub fn final_cost(&self) -> f64 {
        self.records.last().map_or(self.initial_cost, IterationRecord::resulting_cost)
    }

    pub fn iterations(&self) -> usize {
        self.records.len()
    }

    pub fn total_ms(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.elapsed_ms)
    }

    /// Costs after each accepted step, in order.
    pub fn accepted_costs(&self) -> Vec<f64> {
        self.records.iter().filter(|r| r.accepted).map(|r| r.cost_after).collect()
    }

    /// `(elapsed ms, current cost)` at the end of every iteration.
    pub fn cost_curve(&self) -> Vec<(f64, f64)> {
        self.records.iter().map(|r| (r.elapsed_ms, r.resulting_cost())).collect()
    }

    /// CSV export. Timing columns are left empty unless `with_timings`, which
    /// keeps repeated runs byte-identical. Cluster columns are appended when
    /// any iteration carries clustering statistics.
    pub fn to_csv(&self, with_timings: bool) -> String {
        let clustered = self.records.iter().any(|r| r.clusters.is_some());
        let mut out = String::from(CSV_HEADER);
        if clustered {
            out.push(',');
            out.push_str(CLUSTER_CSV_COLUMNS);
        }
        out.push('\n');
        for r in &self.records {
            write!(
                out,
                "{},{},{},{},{},{},{}",
                r.iter,
                r.cost_before,
                r.cost_after,
                r.lambda,
                u8::from(r.accepted),
                r.step_norm,
                r.grad_norm
            )
            .unwrap();
            let t = &r.timings;
            for v in [t.jacobian, t.assembly, t.clustering, t.rcs_solve, t.back_substitution, t.correction] {
                if with_timings {
                    write!(out, ",{v:.3}").unwrap();
                } else {
                    out.push(',');
                }
            }
            if clustered {
                match &r.clusters {
                    Some(c) => write!(
                        out,
                        ",{},{},{},{}",
                        c.n_clusters,
                        c.max_cluster_size,
                        c.n_constraints,
                        u8::from(c.correction_applied)
                    )
                    .unwrap(),
                    None => out.push_str(",,,,"),
                }
            }
            out.push('\n');
        }
        out
    }
}

impl IterationRecord {
    /// Cost of the iterate after this iteration's accept/reject decision.
    pub fn resulting_cost(&self) -> f64 {
        if self.accepted {
            self.cost_after
        } else {
            self.cost_before
        }
    }
}
