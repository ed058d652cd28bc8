//! Stochastic bundle adjustment step engine.
//!
//! Every iteration the cameras are partitioned into clusters. Each physical
//! point gets one virtual copy per cluster that observes it, which makes the
//! reduced camera system block diagonal over clusters. The cluster systems are
//! solved independently, and the point steps are recovered from the unsplit
//! normal equations. For large damping the gradient of the virtual points is
//! projected back onto the constraint that copies agree (diagonal Hessian
//! approximation).

use std::ops::Range;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, Matrix6x3, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::clustering::{build_camera_graph, cluster_deterministic, cluster_stochastic, CameraGraph, ClusterAssignment, ClusterCap};
use crate::error::{Error, Result};
use crate::jacobians::JacobianBlocks;
use crate::lm::{back_substitute, camera_blocks, damp, run_control_loop, LmConfig, NormalBlocks, SolveResult, StepAttempt, StepContext, StepEngine};
use crate::linalg::spd_inverse3;
use crate::problem::BundleProblem;
use crate::trace::{ClusterStats, PhaseTimings};
use crate::Real;

/// Damping at or above which the steepest-descent correction is applied.
pub const CORRECTION_THRESHOLD: f64 = 0.1;

/// Virtual copies of the physical points under a camera clustering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndex {
    /// Per physical point, its range of virtual indices.
    copies: Vec<Range<usize>>,
    virtual_point: Vec<usize>,
    virtual_cluster: Vec<usize>,
    /// Observation -> virtual point.
    obs_virtual: Vec<usize>,
    /// Observations of each virtual point, CSR layout.
    virtual_obs_start: Vec<usize>,
    virtual_obs: Vec<usize>,
    /// Virtual points owned by each cluster, ascending.
    cluster_virtuals: Vec<Vec<usize>>,
}

impl SplitIndex {
    pub fn num_virtual(&self) -> usize {
        self.virtual_point.len()
    }

    pub fn num_clusters(&self) -> usize {
        self.cluster_virtuals.len()
    }

    /// Virtual copies of physical point `j`; the first belongs to the lowest
    /// cluster id.
    pub fn copies(&self, j: usize) -> Range<usize> {
        self.copies[j].clone()
    }

    pub fn physical(&self, u: usize) -> usize {
        self.virtual_point[u]
    }

    pub fn cluster(&self, u: usize) -> usize {
        self.virtual_cluster[u]
    }

    pub fn observation_virtual(&self, k: usize) -> usize {
        self.obs_virtual[k]
    }

    pub fn virtual_observations(&self, u: usize) -> &[usize] {
        &self.virtual_obs[self.virtual_obs_start[u]..self.virtual_obs_start[u + 1]]
    }

    pub fn cluster_virtuals(&self, c: usize) -> &[usize] {
        &self.cluster_virtuals[c]
    }

    /// Number of 3-row constraint blocks, `sum_j (copies_j - 1)`.
    pub fn num_constraints(&self) -> usize {
        self.copies.iter().map(|r| r.len() - 1).sum()
    }

    /// Star-shaped constraints tying every copy to its point's first copy.
    pub fn constraints(&self) -> ConstraintSet {
        let mut rows = Vec::with_capacity(self.num_constraints());
        for r in &self.copies {
            for other in r.start + 1..r.end {
                rows.push((r.start, other));
            }
        }
        ConstraintSet { rows }
    }
}

/// Builds the virtual points: one per (point, observing cluster), enumerated by
/// point and then cluster id.
pub fn split_points<T: Real>(problem: &BundleProblem<T>, assignment: &ClusterAssignment) -> SplitIndex {
    let obs = problem.observations();
    let mut copies = Vec::with_capacity(problem.num_points());
    let mut virtual_point = Vec::new();
    let mut virtual_cluster = Vec::new();
    let mut obs_virtual = vec![0; obs.len()];
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut seen: Vec<(usize, usize)> = Vec::new();
    for j in 0..problem.num_points() {
        seen.clear();
        for k in problem.point_observations(j) {
            seen.push((assignment.cluster_of(obs[k].camera), k));
        }
        seen.sort_unstable();
        let start = virtual_point.len();
        for &(c, k) in &seen {
            if virtual_cluster.len() == start || *virtual_cluster.last().unwrap() != c {
                virtual_point.push(j);
                virtual_cluster.push(c);
                members.push(Vec::new());
            }
            let u = virtual_point.len() - 1;
            obs_virtual[k] = u;
            members[u].push(k);
        }
        copies.push(start..virtual_point.len());
    }
    let mut virtual_obs_start = Vec::with_capacity(members.len() + 1);
    let mut virtual_obs = Vec::with_capacity(obs.len());
    virtual_obs_start.push(0);
    for m in members {
        virtual_obs.extend(m);
        virtual_obs_start.push(virtual_obs.len());
    }
    let mut cluster_virtuals = vec![Vec::new(); assignment.num_clusters()];
    for (u, &c) in virtual_cluster.iter().enumerate() {
        cluster_virtuals[c].push(u);
    }
    SplitIndex {
        copies,
        virtual_point,
        virtual_cluster,
        obs_virtual,
        virtual_obs_start,
        virtual_obs,
        cluster_virtuals,
    }
}

/// Equality constraints `x'_a - x'_b = 0` between virtual copies, as
/// `(a, b)` pairs of virtual indices. Each pair stands for a 3-row block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConstraintSet {
    pub rows: Vec<(usize, usize)>,
}

impl ConstraintSet {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Dense `A` over the split parameter vector `[c; p']`.
    pub fn to_dense(&self, num_cameras: usize, num_virtual: usize) -> DMatrix<f64> {
        let cols = 6 * num_cameras + 3 * num_virtual;
        let mut a = DMatrix::zeros(3 * self.rows.len(), cols);
        for (r, &(x, y)) in self.rows.iter().enumerate() {
            for d in 0..3 {
                a[(3 * r + d, 6 * num_cameras + 3 * x + d)] = 1.0;
                a[(3 * r + d, 6 * num_cameras + 3 * y + d)] = -1.0;
            }
        }
        a
    }
}

/// Normal-equation blocks of the split problem.
#[derive(Debug, Clone)]
pub struct SplitBlocks<T: Real> {
    pub lambda: T,
    /// Damped camera blocks (same as the unsplit system).
    pub b: Vec<Matrix6<T>>,
    /// Damped virtual-point blocks.
    pub c: Vec<Matrix3<T>>,
    /// Inverses of `c`; zero for dropped virtual points.
    pub c_inv: Vec<Matrix3<T>>,
    /// Per observation `J_c^T J'_p`; zero for dropped observations.
    pub e: Vec<Matrix6x3<T>>,
    /// `-J_c^T f`
    pub v: DVector<T>,
    /// `-J'_p^T f`, one 3-vector per virtual point.
    pub w: DVector<T>,
    /// Virtual points left out of this iteration's split system.
    pub dropped: Vec<bool>,
    pub dropped_observations: usize,
}

impl<T: Real> SplitBlocks<T> {
    /// Diagonal of the damped split Hessian over `[c; p']`.
    pub fn hessian_diagonal(&self) -> DVector<T> {
        let m = self.b.len();
        let mut h = DVector::zeros(6 * m + 3 * self.c.len());
        for (i, b) in self.b.iter().enumerate() {
            for d in 0..6 {
                h[6 * i + d] = b[(d, d)];
            }
        }
        for (u, c) in self.c.iter().enumerate() {
            for d in 0..3 {
                h[6 * m + 3 * u + d] = c[(d, d)];
            }
        }
        h
    }
}

/// Accumulates `B`, `C'`, `E'` and `[v; w']` for the split problem.
///
/// A virtual point whose undamped block has a zero diagonal entry cannot be
/// eliminated; it is dropped for this iteration together with its observations.
pub fn assemble_split_blocks<T: Real>(
    problem: &BundleProblem<T>,
    blocks: &JacobianBlocks<T>,
    split: &SplitIndex,
    lambda: T,
) -> Result<SplitBlocks<T>> {
    let (h_cam, g_cam) = camera_blocks(problem, blocks);
    let b: Vec<Matrix6<T>> = h_cam.iter().map(|h| damp(h, lambda)).collect();
    let mut v = DVector::zeros(6 * b.len());
    for (i, g) in g_cam.iter().enumerate() {
        v.fixed_rows_mut::<6>(6 * i).copy_from(g);
    }

    let virtuals: Vec<Option<(Matrix3<T>, Matrix3<T>, Vector3<T>)>> = (0..split.num_virtual())
        .into_par_iter()
        .map(|u| {
            let mut h = Matrix3::zeros();
            let mut g = Vector3::zeros();
            for &k in split.virtual_observations(u) {
                let o = &blocks.blocks[k];
                h += o.point.transpose() * o.point;
                g -= o.point.transpose() * o.residual;
            }
            if (0..3).any(|d| h[(d, d)] <= T::zero()) {
                return None;
            }
            let c = damp(&h, lambda);
            Some((c, spd_inverse3(&c)?, g))
        })
        .collect();

    let nv = split.num_virtual();
    let mut c = Vec::with_capacity(nv);
    let mut c_inv = Vec::with_capacity(nv);
    let mut w = DVector::zeros(3 * nv);
    let mut dropped = vec![false; nv];
    let mut dropped_observations = 0;
    for (u, entry) in virtuals.into_iter().enumerate() {
        match entry {
            Some((cu, inv, g)) => {
                c.push(cu);
                c_inv.push(inv);
                w.fixed_rows_mut::<3>(3 * u).copy_from(&g);
            }
            None => {
                let any_diag_zero = {
                    let mut h = Matrix3::<T>::zeros();
                    for &k in split.virtual_observations(u) {
                        let o = &blocks.blocks[k];
                        h += o.point.transpose() * o.point;
                    }
                    (0..3).any(|d| h[(d, d)] <= T::zero())
                };
                if !any_diag_zero {
                    return Err(Error::SingularVirtualBlock { virtual_point: u });
                }
                dropped[u] = true;
                dropped_observations += split.virtual_observations(u).len();
                c.push(Matrix3::zeros());
                c_inv.push(Matrix3::zeros());
            }
        }
    }
    let e = blocks
        .blocks
        .par_iter()
        .enumerate()
        .map(|(k, o)| {
            if dropped[split.observation_virtual(k)] {
                Matrix6x3::zeros()
            } else {
                o.camera.transpose() * o.point
            }
        })
        .collect();
    Ok(SplitBlocks {
        lambda,
        b,
        c,
        c_inv,
        e,
        v,
        w,
        dropped,
        dropped_observations,
    })
}

/// Subtracts `A^T nu` from the virtual-point gradient `w'`, with
/// `nu = (A H^-1 A^T)^-1 A H^-1 g` and `H` the diagonal of the damped split
/// Hessian. The camera part of `g` is untouched because `A` does not act on it.
///
/// Per point and coordinate the star constraints give a system
/// `diag(1/h_b) + (1/h_0) 1 1^T`, inverted with Sherman-Morrison.
pub fn steepest_descent_correction<T: Real>(sb: &SplitBlocks<T>, split: &SplitIndex) -> DVector<T> {
    let mut w = sb.w.clone();
    let mut live: Vec<usize> = Vec::new();
    for j in 0..split.copies.len() {
        live.clear();
        live.extend(split.copies(j).filter(|&u| !sb.dropped[u]));
        if live.len() < 2 {
            continue;
        }
        for d in 0..3 {
            let h0 = sb.c[live[0]][(d, d)];
            let g0 = sb.w[3 * live[0] + d];
            // y_b = g_0/h_0 - g_b/h_b,  M = diag(1/h_b) + rho 1 1^T
            let rho = T::one() / h0;
            let mut dinv_y_sum = T::zero();
            let mut dinv_sum = T::zero();
            for &u in &live[1..] {
                let hb = sb.c[u][(d, d)];
                let y = g0 / h0 - sb.w[3 * u + d] / hb;
                dinv_y_sum += hb * y;
                dinv_sum += hb;
            }
            let scale = rho * dinv_y_sum / (T::one() + rho * dinv_sum);
            let mut nu_sum = T::zero();
            for &u in &live[1..] {
                let hb = sb.c[u][(d, d)];
                let y = g0 / h0 - sb.w[3 * u + d] / hb;
                let nu = hb * y - hb * scale;
                nu_sum += nu;
                w[3 * u + d] += nu;
            }
            w[3 * live[0] + d] -= nu_sum;
        }
    }
    w
}

/// Independent per-cluster reduced camera systems.
#[derive(Debug, Clone)]
pub struct SplitSystem<T: Real> {
    /// Cameras of each cluster, ascending.
    pub clusters: Vec<Vec<usize>>,
    /// Dense `S'_l` over the cluster's cameras in member order.
    pub s: Vec<DMatrix<T>>,
    pub b: Vec<DVector<T>>,
}

/// Forms `S'_l = B_l - E'_l C'^-1 E'_l^T` and `b_l = v_l - E'_l C'^-1 w'` for
/// every cluster. Blocks between cameras of different clusters never arise.
pub fn cluster_schur<T: Real>(
    problem: &BundleProblem<T>,
    sb: &SplitBlocks<T>,
    w: &DVector<T>,
    split: &SplitIndex,
    assignment: &ClusterAssignment,
) -> SplitSystem<T> {
    let obs = problem.observations();
    let mut local = vec![0usize; problem.num_cameras()];
    for c in 0..assignment.num_clusters() {
        for (li, &cam) in assignment.members(c).iter().enumerate() {
            local[cam] = li;
        }
    }
    let systems: Vec<(DMatrix<T>, DVector<T>)> = (0..assignment.num_clusters())
        .into_par_iter()
        .map(|c| {
            let members = assignment.members(c);
            let n = 6 * members.len();
            let mut s = DMatrix::zeros(n, n);
            let mut b = DVector::zeros(n);
            for (li, &cam) in members.iter().enumerate() {
                s.fixed_view_mut::<6, 6>(6 * li, 6 * li).copy_from(&sb.b[cam]);
                b.fixed_rows_mut::<6>(6 * li).copy_from(&sb.v.fixed_rows::<6>(6 * cam));
            }
            let mut y: Vec<Matrix6x3<T>> = Vec::new();
            for &u in split.cluster_virtuals(c) {
                if sb.dropped[u] {
                    continue;
                }
                let ks = split.virtual_observations(u);
                y.clear();
                y.extend(ks.iter().map(|&k| sb.e[k] * sb.c_inv[u]));
                let wu = w.fixed_rows::<3>(3 * u);
                for (a, &k) in ks.iter().enumerate() {
                    let li = local[obs[k].camera];
                    let mut rows = b.fixed_rows_mut::<6>(6 * li);
                    rows -= y[a] * wu;
                    for &k2 in ks {
                        let lj = local[obs[k2].camera];
                        let mut blk = s.fixed_view_mut::<6, 6>(6 * li, 6 * lj);
                        blk -= y[a] * sb.e[k2].transpose();
                    }
                }
            }
            (s, b)
        })
        .collect();
    let (s, b) = systems.into_iter().unzip();
    SplitSystem {
        clusters: (0..assignment.num_clusters()).map(|c| assignment.members(c).to_vec()).collect(),
        s,
        b,
    }
}

/// Dense Cholesky per cluster; the camera steps are scattered back into the
/// global camera layout.
pub fn solve_clusters<T: Real>(sys: &SplitSystem<T>, num_cameras: usize) -> Result<DVector<T>> {
    let solutions: Vec<Result<DVector<T>>> = sys
        .s
        .par_iter()
        .zip(sys.b.par_iter())
        .enumerate()
        .map(|(c, (s, b))| {
            let chol = s.clone().cholesky().ok_or(Error::NotPositiveDefinite { cluster: Some(c) })?;
            Ok(chol.solve(b))
        })
        .collect();
    let mut dc = DVector::zeros(6 * num_cameras);
    for (members, sol) in sys.clusters.iter().zip(solutions) {
        let sol = sol?;
        for (li, &cam) in members.iter().enumerate() {
            dc.fixed_rows_mut::<6>(6 * cam).copy_from(&sol.fixed_rows::<6>(6 * li));
        }
    }
    Ok(dc)
}

/// Point steps from the unsplit system, shared by all virtual copies.
pub fn unified_point_update<T: Real>(problem: &BundleProblem<T>, nb: &NormalBlocks<T>, dc: &DVector<T>) -> DVector<T> {
    back_substitute(problem, nb, dc)
}

/// Diagnostics of one split step.
#[derive(Debug, Clone)]
pub struct StbaStep<T: Real> {
    pub dc: DVector<T>,
    pub dp: DVector<T>,
    pub stats: ClusterStats,
}

/// One full split step for a given clustering: assemble, optionally correct,
/// reduce per cluster, solve, update points.
pub fn stba_step<T: Real>(
    problem: &BundleProblem<T>,
    blocks: &JacobianBlocks<T>,
    normal: &NormalBlocks<T>,
    assignment: &ClusterAssignment,
    correct: bool,
) -> Result<StbaStep<T>> {
    let mut timings = PhaseTimings::default();
    split_step(problem, blocks, normal, assignment, correct, &mut timings)
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn split_step<T: Real>(
    problem: &BundleProblem<T>,
    blocks: &JacobianBlocks<T>,
    normal: &NormalBlocks<T>,
    assignment: &ClusterAssignment,
    correct: bool,
    timings: &mut PhaseTimings,
) -> Result<StbaStep<T>> {
    let t = Instant::now();
    let split = split_points(problem, assignment);
    let sb = assemble_split_blocks(problem, blocks, &split, normal.lambda)?;
    timings.assembly += ms_since(t);

    let n_constraints = split.num_constraints();
    let correction_applied = correct && n_constraints > 0;
    let t = Instant::now();
    let w = if correction_applied {
        steepest_descent_correction(&sb, &split)
    } else {
        sb.w.clone()
    };
    timings.correction = ms_since(t);

    let t = Instant::now();
    let sys = cluster_schur(problem, &sb, &w, &split, assignment);
    timings.assembly += ms_since(t);

    let t = Instant::now();
    let dc = solve_clusters(&sys, problem.num_cameras())?;
    timings.rcs_solve = ms_since(t);

    let t = Instant::now();
    let dp = unified_point_update(problem, normal, &dc);
    timings.back_substitution = ms_since(t);

    Ok(StbaStep {
        dc,
        dp,
        stats: ClusterStats {
            n_clusters: assignment.num_clusters(),
            max_cluster_size: assignment.max_size(),
            n_constraints,
            correction_applied,
            dropped_observations: sb.dropped_observations,
        },
    })
}

/// When the clustering is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClusterSchedule {
    /// A fresh clustering every iteration.
    #[default]
    Resample,
    /// The first clustering is reused for the whole solve.
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Clusterer {
    #[default]
    Stochastic,
    /// Greedy merging, no randomness.
    Greedy,
}

#[derive(Debug, Clone, Copy)]
pub struct StbaConfig {
    pub lm: LmConfig,
    pub gamma: ClusterCap,
    pub beta: f64,
    pub schedule: ClusterSchedule,
    pub clusterer: Clusterer,
    pub seed: u64,
    pub correction: bool,
    pub correction_threshold: f64,
}

impl Default for StbaConfig {
    fn default() -> Self {
        Self {
            lm: LmConfig::default(),
            gamma: ClusterCap::default(),
            beta: 10.0,
            schedule: ClusterSchedule::Resample,
            clusterer: Clusterer::Stochastic,
            seed: 0,
            correction: true,
            correction_threshold: CORRECTION_THRESHOLD,
        }
    }
}

impl StbaConfig {
    pub fn validate(&self) -> Result<()> {
        self.lm.validate()?;
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return Err(Error::Config("beta must be positive and finite".into()));
        }
        Ok(())
    }

    /// Clustering used at 0-based `iteration`, before schedule caching.
    pub fn draw_clustering(&self, graph: &CameraGraph, iteration: usize) -> ClusterAssignment {
        if self.gamma.is_unbounded() {
            return ClusterAssignment::single_cluster(graph.num_nodes());
        }
        match self.clusterer {
            Clusterer::Greedy => cluster_deterministic(graph, self.gamma),
            Clusterer::Stochastic => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                rng.set_stream(iteration as u64);
                cluster_stochastic(graph, self.gamma, self.beta, &mut rng)
            }
        }
    }
}

struct StbaEngine {
    config: StbaConfig,
    graph: CameraGraph,
    fixed: Option<ClusterAssignment>,
}

impl<T: Real> StepEngine<T> for StbaEngine {
    fn step(&mut self, ctx: &StepContext<'_, T>, timings: &mut PhaseTimings) -> StepAttempt<T> {
        let t = Instant::now();
        let assignment = match (self.config.schedule, &self.fixed) {
            (ClusterSchedule::Fixed, Some(a)) => a.clone(),
            _ => {
                let a = self.config.draw_clustering(&self.graph, ctx.iteration);
                if self.config.schedule == ClusterSchedule::Fixed {
                    self.fixed = Some(a.clone());
                }
                a
            }
        };
        timings.clustering = ms_since(t);
        let correct = self.config.correction && ctx.normal.lambda.as_f64() >= self.config.correction_threshold;
        match split_step(ctx.problem, ctx.blocks, ctx.normal, &assignment, correct, timings) {
            Ok(s) => StepAttempt {
                step: Ok((s.dc, s.dp)),
                clusters: Some(s.stats),
            },
            Err(e) => StepAttempt {
                step: Err(e),
                clusters: Some(ClusterStats {
                    n_clusters: assignment.num_clusters(),
                    max_cluster_size: assignment.max_size(),
                    n_constraints: 0,
                    correction_applied: false,
                    dropped_observations: 0,
                }),
            },
        }
    }
}

/// Runs stochastic bundle adjustment.
pub fn stba_minimize<T: Real>(problem: &BundleProblem<T>, config: &StbaConfig) -> Result<SolveResult<T>> {
    config.validate()?;
    let mut engine = StbaEngine {
        config: *config,
        graph: build_camera_graph(problem),
        fixed: None,
    };
    Ok(run_control_loop(problem, &config.lm, &mut engine))
}
