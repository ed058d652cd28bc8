//! Levenberg-Marquardt baseline: normal-equation blocks, Schur complement on
//! the point blocks, reduced camera system solve and point back-substitution,
//! plus the trust-region control loop shared with the stochastic solver.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DVector, Matrix3, Matrix6, Matrix6x3, SMatrix, Vector3, Vector6};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::jacobians::{weighted_blocks, JacobianBlocks};
use crate::linalg::{block_jacobi_pcg, dense_cholesky_solve, spd_inverse3, BlockSparse6, PcgOptions};
use crate::problem::{total_cost, BundleProblem, Objective};
use crate::robust::HuberKernel;
use crate::trace::{ClusterStats, IterationRecord, PhaseTimings, SolveTrace, TerminationReason};
use crate::Real;

/// Above this camera count `LinearSolver::Auto` switches from dense Cholesky
/// to PCG.
pub const DENSE_CAMERA_LIMIT: usize = 800;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    #[default]
    Auto,
    Dense,
    Pcg,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RcsMethod {
    DenseCholesky,
    BlockJacobiPcg(PcgOptions),
}

/// Settings of the trust-region loop shared by all solvers.
#[derive(Debug, Clone, Copy)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub lambda0: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Cost, gradient and parameter tolerance.
    pub tolerance: f64,
    /// Huber scale in pixels; infinity disables the kernel.
    pub huber_delta: f64,
    pub workers: usize,
    pub linear_solver: LinearSolver,
    pub pcg: PcgOptions,
    pub degenerate_penalty: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            lambda0: 1e-4,
            lambda_min: 1e-12,
            lambda_max: 1e12,
            tolerance: 1e-6,
            huber_delta: 0.5,
            workers: 1,
            linear_solver: LinearSolver::Auto,
            pcg: PcgOptions::default(),
            degenerate_penalty: 1e10,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.lambda0 > 0.0 && self.lambda_min > 0.0 && self.lambda_min <= self.lambda_max) {
            return Err(Error::Config("damping bounds must be positive and ordered".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be non-negative".into()));
        }
        if !(self.huber_delta > 0.0) {
            return Err(Error::Config("Huber scale must be positive".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        Ok(())
    }

    pub fn objective<T: Real>(&self) -> Objective<T> {
        Objective {
            kernel: HuberKernel::new(self.huber_delta),
            degenerate_penalty: T::lit(self.degenerate_penalty),
        }
    }

    pub fn rcs_method(&self, num_cameras: usize) -> RcsMethod {
        match self.linear_solver {
            LinearSolver::Dense => RcsMethod::DenseCholesky,
            LinearSolver::Pcg => RcsMethod::BlockJacobiPcg(self.pcg),
            LinearSolver::Auto if num_cameras <= DENSE_CAMERA_LIMIT => RcsMethod::DenseCholesky,
            LinearSolver::Auto => RcsMethod::BlockJacobiPcg(self.pcg),
        }
    }
}

/// Damping with the multiplicative schedule of the control loop.
#[derive(Debug, Clone, Copy)]
pub struct DampingState {
    lambda: f64,
    min: f64,
    max: f64,
    pub iteration: usize,
    pub consecutive_failures: usize,
}

impl DampingState {
    pub const FACTOR: f64 = 3.0;

    pub fn new(config: &LmConfig) -> Self {
        Self {
            lambda: config.lambda0.clamp(config.lambda_min, config.lambda_max),
            min: config.lambda_min,
            max: config.lambda_max,
            iteration: 0,
            consecutive_failures: 0,
        }
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn accept(&mut self) {
        self.lambda = (self.lambda / Self::FACTOR).clamp(self.min, self.max);
        self.consecutive_failures = 0;
    }

    pub fn reject(&mut self) {
        self.lambda = (self.lambda * Self::FACTOR).clamp(self.min, self.max);
        self.consecutive_failures += 1;
    }
}

/// Blocks of the damped normal equations
/// `[B E; E^T C] [dc; dp] = [v; w]`.
#[derive(Debug, Clone)]
pub struct NormalBlocks<T: Real> {
    pub lambda: T,
    /// Damped camera blocks, one per camera.
    pub b: Vec<Matrix6<T>>,
    /// Damped point blocks, one per point.
    pub c: Vec<Matrix3<T>>,
    pub c_inv: Vec<Matrix3<T>>,
    /// Camera-point coupling, one block per observation (problem order).
    pub e: Vec<Matrix6x3<T>>,
    /// `-J_c^T f`
    pub v: DVector<T>,
    /// `-J_p^T f`
    pub w: DVector<T>,
}

impl<T: Real> NormalBlocks<T> {
    /// Infinity norm of the gradient `J^T f = -[v; w]`.
    pub fn gradient_inf_norm(&self) -> T {
        self.v.amax().max(self.w.amax())
    }
}

/// `m + lambda * diag(m)`
pub(crate) fn damp<T: Real, const N: usize>(m: &SMatrix<T, N, N>, lambda: T) -> SMatrix<T, N, N> {
    let mut out = *m;
    for d in 0..N {
        out[(d, d)] += lambda * m[(d, d)];
    }
    out
}

/// Undamped camera Hessian blocks and gradients `(J_c^T J_c, -J_c^T f)`.
pub(crate) fn camera_blocks<T: Real>(
    problem: &BundleProblem<T>,
    blocks: &JacobianBlocks<T>,
) -> (Vec<Matrix6<T>>, Vec<Vector6<T>>) {
    (0..problem.num_cameras())
        .into_par_iter()
        .map(|i| {
            let mut h = Matrix6::zeros();
            let mut g = Vector6::zeros();
            for &k in problem.camera_observations(i) {
                let b = &blocks.blocks[k];
                h += b.camera.transpose() * b.camera;
                g -= b.camera.transpose() * b.residual;
            }
            (h, g)
        })
        .unzip()
}

/// Accumulates the damped normal-equation blocks from per-observation Jacobians.
pub fn assemble_normal_blocks<T: Real>(
    problem: &BundleProblem<T>,
    blocks: &JacobianBlocks<T>,
    lambda: T,
) -> Result<NormalBlocks<T>> {
    let (h_cam, g_cam) = camera_blocks(problem, blocks);
    let b: Vec<Matrix6<T>> = h_cam.iter().map(|h| damp(h, lambda)).collect();

    let points: Vec<Option<(Matrix3<T>, Matrix3<T>, Vector3<T>)>> = (0..problem.num_points())
        .into_par_iter()
        .map(|j| {
            let mut h = Matrix3::zeros();
            let mut g = Vector3::zeros();
            for k in problem.point_observations(j) {
                let o = &blocks.blocks[k];
                h += o.point.transpose() * o.point;
                g -= o.point.transpose() * o.residual;
            }
            let c = damp(&h, lambda);
            spd_inverse3(&c).map(|inv| (c, inv, g))
        })
        .collect();

    let mut c = Vec::with_capacity(points.len());
    let mut c_inv = Vec::with_capacity(points.len());
    let mut w = DVector::zeros(3 * points.len());
    for (j, p) in points.into_iter().enumerate() {
        let (cj, inv, g) = p.ok_or(Error::SingularPointBlock { point: j })?;
        c.push(cj);
        c_inv.push(inv);
        w.fixed_rows_mut::<3>(3 * j).copy_from(&g);
    }
    let mut v = DVector::zeros(6 * b.len());
    for (i, g) in g_cam.iter().enumerate() {
        v.fixed_rows_mut::<6>(6 * i).copy_from(g);
    }
    let e = blocks.blocks.par_iter().map(|o| o.camera.transpose() * o.point).collect();
    Ok(NormalBlocks {
        lambda,
        b,
        c,
        c_inv,
        e,
        v,
        w,
    })
}

/// Camera-only system `S dc = rhs` after eliminating the points.
#[derive(Debug, Clone)]
pub struct ReducedCameraSystem<T: Real> {
    pub s: BlockSparse6<T>,
    pub rhs: DVector<T>,
}

/// Forms `S = B - E C^-1 E^T` and `rhs = v - E C^-1 w`.
pub fn schur_reduce<T: Real>(problem: &BundleProblem<T>, nb: &NormalBlocks<T>) -> ReducedCameraSystem<T> {
    let obs = problem.observations();
    let y: Vec<Matrix6x3<T>> = (0..obs.len())
        .into_par_iter()
        .map(|k| nb.e[k] * nb.c_inv[obs[k].point])
        .collect();
    let rows: Vec<(Vec<(usize, Matrix6<T>)>, Vector6<T>)> = (0..problem.num_cameras())
        .into_par_iter()
        .map(|i| {
            let mut row: BTreeMap<usize, Matrix6<T>> = BTreeMap::new();
            row.insert(i, nb.b[i]);
            let mut rhs: Vector6<T> = nb.v.fixed_rows::<6>(6 * i).into_owned();
            for &k in problem.camera_observations(i) {
                let p = obs[k].point;
                rhs -= y[k] * nb.w.fixed_rows::<3>(3 * p);
                for k2 in problem.point_observations(p) {
                    let blk = row.entry(obs[k2].camera).or_insert_with(Matrix6::zeros);
                    *blk -= y[k] * nb.e[k2].transpose();
                }
            }
            (row.into_iter().collect(), rhs)
        })
        .collect();
    let mut rhs = DVector::zeros(6 * rows.len());
    let mut s_rows = Vec::with_capacity(rows.len());
    for (i, (row, r)) in rows.into_iter().enumerate() {
        rhs.fixed_rows_mut::<6>(6 * i).copy_from(&r);
        s_rows.push(row);
    }
    ReducedCameraSystem {
        s: BlockSparse6 { rows: s_rows },
        rhs,
    }
}

pub fn solve_rcs<T: Real>(rcs: &ReducedCameraSystem<T>, method: &RcsMethod) -> Result<DVector<T>> {
    match method {
        RcsMethod::DenseCholesky => dense_cholesky_solve(rcs.s.to_dense(), &rcs.rhs),
        RcsMethod::BlockJacobiPcg(opts) => block_jacobi_pcg(&rcs.s, &rcs.rhs, opts).map(|(x, _)| x),
    }
}

/// Point steps `dp_j = C_j^-1 (w_j - sum_i E_ij^T dc_i)`.
pub fn back_substitute<T: Real>(problem: &BundleProblem<T>, nb: &NormalBlocks<T>, dc: &DVector<T>) -> DVector<T> {
    let obs = problem.observations();
    let steps: Vec<Vector3<T>> = (0..problem.num_points())
        .into_par_iter()
        .map(|j| {
            let mut r: Vector3<T> = nb.w.fixed_rows::<3>(3 * j).into_owned();
            for k in problem.point_observations(j) {
                r -= nb.e[k].transpose() * dc.fixed_rows::<6>(6 * obs[k].camera);
            }
            nb.c_inv[j] * r
        })
        .collect();
    let mut dp = DVector::zeros(3 * steps.len());
    for (j, s) in steps.iter().enumerate() {
        dp.fixed_rows_mut::<3>(3 * j).copy_from(s);
    }
    dp
}

/// One exact LM step from assembled blocks: `(dc, dp)`.
pub fn lm_step<T: Real>(
    problem: &BundleProblem<T>,
    nb: &NormalBlocks<T>,
    method: &RcsMethod,
) -> Result<(DVector<T>, DVector<T>)> {
    let rcs = schur_reduce(problem, nb);
    let dc = solve_rcs(&rcs, method)?;
    let dp = back_substitute(problem, nb, &dc);
    Ok((dc, dp))
}

#[derive(Debug, Clone)]
pub struct SolveResult<T: Real> {
    pub params: DVector<T>,
    pub trace: SolveTrace,
}

impl<T: Real> SolveResult<T> {
    pub fn final_problem(&self, problem: &BundleProblem<T>) -> BundleProblem<T> {
        problem.with_params(&self.params)
    }
}

/// Inputs available to a step engine in one iteration.
pub(crate) struct StepContext<'a, T: Real> {
    pub problem: &'a BundleProblem<T>,
    pub blocks: &'a JacobianBlocks<T>,
    pub normal: &'a NormalBlocks<T>,
    /// 0-based iteration index.
    pub iteration: usize,
}

pub(crate) struct StepAttempt<T: Real> {
    pub step: Result<(DVector<T>, DVector<T>)>,
    pub clusters: Option<ClusterStats>,
}

/// Computes the parameter update of one iteration.
pub(crate) trait StepEngine<T: Real> {
    fn step(&mut self, ctx: &StepContext<'_, T>, timings: &mut PhaseTimings) -> StepAttempt<T>;
}

fn ms_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

pub(crate) fn with_workers<R: Send>(workers: usize, f: impl FnOnce() -> R + Send) -> R {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool");
    pool.install(f)
}

/// Trust-region loop: accept a step iff it strictly lowers the robust cost,
/// dividing the damping by 3 on acceptance and multiplying by 3 otherwise.
pub(crate) fn run_control_loop<T: Real, E: StepEngine<T> + Send>(
    problem: &BundleProblem<T>,
    config: &LmConfig,
    engine: &mut E,
) -> SolveResult<T> {
    with_workers(config.workers, || {
        let start = Instant::now();
        let objective = config.objective::<T>();
        let tol = config.tolerance;
        let mut x = problem.params();
        let mut cost = total_cost(problem, &x, &objective);
        let initial_cost = cost.cost.as_f64();
        let mut damping = DampingState::new(config);
        let mut records = Vec::new();
        let mut termination = TerminationReason::MaxIterations;

        for iteration in 0..config.max_iterations {
            damping.iteration = iteration + 1;
            let lambda = damping.lambda();
            let mut timings = PhaseTimings::default();
            let cost_before = cost.cost.as_f64();

            let t = Instant::now();
            let blocks = weighted_blocks(problem, &x, &objective.kernel);
            timings.jacobian = ms_since(t);

            let t = Instant::now();
            let normal = assemble_normal_blocks(problem, &blocks, T::lit(lambda));
            timings.assembly = ms_since(t);

            let mut record = IterationRecord {
                iter: iteration + 1,
                cost_before,
                cost_after: f64::INFINITY,
                lambda,
                accepted: false,
                step_norm: 0.0,
                grad_norm: 0.0,
                timings,
                elapsed_ms: 0.0,
                clusters: None,
                degenerate: cost.degenerate,
            };

            let normal = match normal {
                Ok(nb) => nb,
                Err(_) => {
                    damping.reject();
                    record.timings = timings;
                    record.elapsed_ms = ms_since(start);
                    records.push(record);
                    continue;
                }
            };
            let grad_norm = normal.gradient_inf_norm().as_f64();
            record.grad_norm = grad_norm;
            if grad_norm < tol {
                record.cost_after = cost_before;
                record.elapsed_ms = ms_since(start);
                records.push(record);
                termination = TerminationReason::GradientTolerance;
                break;
            }

            let ctx = StepContext {
                problem,
                blocks: &blocks,
                normal: &normal,
                iteration,
            };
            let attempt = engine.step(&ctx, &mut timings);
            record.clusters = attempt.clusters;
            let (dc, dp) = match attempt.step {
                Ok(s) => s,
                Err(_) => {
                    damping.reject();
                    record.timings = timings;
                    record.elapsed_ms = ms_since(start);
                    records.push(record);
                    continue;
                }
            };
            let m6 = dc.len();
            let mut dx = DVector::zeros(x.len());
            dx.rows_mut(0, m6).copy_from(&dc);
            dx.rows_mut(m6, dp.len()).copy_from(&dp);
            let x_new = &x + &dx;
            let new_cost = total_cost(problem, &x_new, &objective);
            let step_norm = dx.norm().as_f64();
            let (f_old, f_new) = (cost.cost.as_f64(), new_cost.cost.as_f64());

            let cost_converged = f_old > 0.0 && f_new.is_finite() && (f_old - f_new).abs() / f_old < tol;
            let param_converged = step_norm / (x.norm().as_f64() + 1e-12) < tol;

            record.cost_after = f_new;
            record.step_norm = step_norm;
            record.timings = timings;
            if f_new < f_old {
                record.accepted = true;
                x = x_new;
                cost = new_cost;
                damping.accept();
            } else {
                damping.reject();
            }
            record.elapsed_ms = ms_since(start);
            records.push(record);
            if cost_converged {
                termination = TerminationReason::CostTolerance;
                break;
            }
            if param_converged {
                termination = TerminationReason::ParameterTolerance;
                break;
            }
        }
        SolveResult {
            params: x,
            trace: SolveTrace {
                initial_cost,
                records,
                termination,
            },
        }
    })
}

struct LmEngine {
    method: RcsMethod,
}

impl<T: Real> StepEngine<T> for LmEngine {
    fn step(&mut self, ctx: &StepContext<'_, T>, timings: &mut PhaseTimings) -> StepAttempt<T> {
        let t = Instant::now();
        let rcs = schur_reduce(ctx.problem, ctx.normal);
        timings.assembly += ms_since(t);
        let t = Instant::now();
        let dc = solve_rcs(&rcs, &self.method);
        timings.rcs_solve = ms_since(t);
        let step = dc.map(|dc| {
            let t = Instant::now();
            let dp = back_substitute(ctx.problem, ctx.normal, &dc);
            timings.back_substitution = ms_since(t);
            (dc, dp)
        });
        StepAttempt { step, clusters: None }
    }
}

/// Runs the baseline Levenberg-Marquardt solver.
pub fn lm_minimize<T: Real>(problem: &BundleProblem<T>, config: &LmConfig) -> Result<SolveResult<T>> {
    config.validate()?;
    let mut engine = LmEngine {
        method: config.rcs_method(problem.num_cameras()),
    };
    Ok(run_control_loop(problem, config, &mut engine))
}
