//! Stochastic bundle adjustment.
//!
//! A Levenberg-Marquardt bundle adjustment solver whose reduced camera system
//! is split, every iteration, into independent per-cluster systems. Cameras are
//! grouped by a randomized modularity-driven agglomerative clustering of the
//! covisibility graph; points shared across clusters are split into virtual
//! copies whose coupling is restored through a steepest-descent correction
//! when the trust region is small.
//!
//! The numeric core is generic over the scalar type (see [`Real`]); the
//! aliases at the crate root pin the common `f64` and `f32` instantiations.

pub mod bal;
pub mod bench;
pub mod clustering;
pub mod error;
pub mod jacobians;
pub mod linalg;
pub mod lm;
pub mod problem;
pub mod robust;
pub mod rotation;
pub mod scalar;
pub mod solver;
pub mod stba;
pub mod trace;

pub use error::{Error, Result};
pub use scalar::Real;

pub use clustering::{CameraGraph, ClusterAssignment, ClusterCap};
pub use lm::{LinearSolver, LmConfig};
pub use problem::{IngestOptions, IngestReport};
pub use robust::HuberKernel;
pub use solver::{SolverKind, SolverSettings};
pub use stba::{ClusterSchedule, Clusterer, StbaConfig};
pub use trace::{SolveTrace, TerminationReason};

/// Double-precision bundle adjustment problem.
pub type BundleProblem = problem::BundleProblem<f64>;
/// Single-precision bundle adjustment problem.
pub type BundleProblemF32 = problem::BundleProblem<f32>;
/// Double-precision camera.
pub type Camera = problem::Camera<f64>;
/// Double-precision observation.
pub type Observation = problem::Observation<f64>;
/// Double-precision 3D point.
pub type Point3D = problem::Point3D<f64>;
/// Double-precision per-observation Jacobian blocks.
pub type JacobianBlocks = jacobians::JacobianBlocks<f64>;
/// Double-precision normal-equation blocks.
pub type NormalBlocks = lm::NormalBlocks<f64>;
/// Double-precision solve output.
pub type SolveResult = lm::SolveResult<f64>;
