//! Solver selection shared by the CLI and the benchmark harness.

use std::fmt;
use std::str::FromStr;

use crate::clustering::ClusterCap;
use crate::error::Result;
use crate::lm::{lm_minimize, LinearSolver, LmConfig, SolveResult};
use crate::problem::BundleProblem;
use crate::stba::{stba_minimize, ClusterSchedule, Clusterer, StbaConfig};
use crate::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SolverKind {
    LmDense,
    LmPcg,
    Stba,
    StbaFixed,
}

impl SolverKind {
    pub const ALL: [SolverKind; 4] = [Self::LmDense, Self::LmPcg, Self::Stba, Self::StbaFixed];

    pub fn name(self) -> &'static str {
        match self {
            Self::LmDense => "lm-dense",
            Self::LmPcg => "lm-pcg",
            Self::Stba => "stba",
            Self::StbaFixed => "stba-fixed",
        }
    }

    pub fn is_stochastic(self) -> bool {
        matches!(self, Self::Stba | Self::StbaFixed)
    }
}

impl fmt::Display for SolverKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SolverKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown solver {s:?} (expected lm-dense, lm-pcg, stba or stba-fixed)"))
    }
}

/// Everything needed to run one solver on one problem.
#[derive(Debug, Clone, Copy)]
pub struct SolverSettings {
    pub solver: SolverKind,
    pub max_iterations: usize,
    pub lambda0: f64,
    pub huber_delta: f64,
    pub gamma: ClusterCap,
    pub beta: f64,
    pub seed: u64,
    pub workers: usize,
    pub tolerance: f64,
    pub clusterer: Clusterer,
    pub correction: bool,
}

impl Default for SolverSettings {
    fn default() -> Self {
        let lm = LmConfig::default();
        let stba = StbaConfig::default();
        Self {
            solver: SolverKind::Stba,
            max_iterations: lm.max_iterations,
            lambda0: lm.lambda0,
            huber_delta: lm.huber_delta,
            gamma: stba.gamma,
            beta: stba.beta,
            seed: stba.seed,
            workers: lm.workers,
            tolerance: lm.tolerance,
            clusterer: stba.clusterer,
            correction: stba.correction,
        }
    }
}

impl SolverSettings {
    pub fn lm_config(&self) -> LmConfig {
        LmConfig {
            max_iterations: self.max_iterations,
            lambda0: self.lambda0,
            tolerance: self.tolerance,
            huber_delta: self.huber_delta,
            workers: self.workers,
            linear_solver: match self.solver {
                SolverKind::LmDense => LinearSolver::Dense,
                SolverKind::LmPcg => LinearSolver::Pcg,
                _ => LinearSolver::Auto,
            },
            ..LmConfig::default()
        }
    }

    pub fn stba_config(&self) -> StbaConfig {
        StbaConfig {
            lm: self.lm_config(),
            gamma: self.gamma,
            beta: self.beta,
            schedule: if self.solver == SolverKind::StbaFixed {
                ClusterSchedule::Fixed
            } else {
                ClusterSchedule::Resample
            },
            clusterer: self.clusterer,
            seed: self.seed,
            correction: self.correction,
            ..StbaConfig::default()
        }
    }
}

pub fn solve<T: Real>(problem: &BundleProblem<T>, settings: &SolverSettings) -> Result<SolveResult<T>> {
    match settings.solver {
        SolverKind::LmDense | SolverKind::LmPcg => lm_minimize(problem, &settings.lm_config()),
        SolverKind::Stba | SolverKind::StbaFixed => stba_minimize(problem, &settings.stba_config()),
    }
}
