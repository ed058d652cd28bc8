#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use stba::bench::{generate_synthetic, perturb, Layout, PerturbSpec, SyntheticSpec};
use stba::jacobians::weighted_blocks;
use stba::robust::HuberKernel;
use stba::BundleProblem;

/// Small perturbed ring problem.
pub fn toy(cameras: usize, points: usize, seed: u64) -> BundleProblem {
    let s = generate_synthetic(&SyntheticSpec {
        cameras,
        points,
        layout: Layout::Ring,
        density: 0.8,
        pixel_noise: 1.0,
        seed,
    })
    .expect("toy spec");
    perturb(
        &s.problem,
        &PerturbSpec {
            sigma_points: 0.1,
            sigma_camera_centers: 0.3,
            seed,
        },
    )
    .expect("toy perturbation")
}

/// Weighted Jacobian and residual as dense arrays, `2q x (6m + 3n)`.
pub fn dense_system(problem: &BundleProblem, x: &DVector<f64>, kernel: &HuberKernel<f64>) -> (DMatrix<f64>, DVector<f64>) {
    let blocks = weighted_blocks(problem, x, kernel);
    let q = problem.num_observations();
    let mut j = DMatrix::zeros(2 * q, x.len());
    let mut f = DVector::zeros(2 * q);
    for (k, o) in problem.observations().iter().enumerate() {
        let b = &blocks.blocks[k];
        j.view_mut((2 * k, problem.camera_offset(o.camera)), (2, 6)).copy_from(&b.camera);
        j.view_mut((2 * k, problem.point_offset(o.point)), (2, 3)).copy_from(&b.point);
        f.rows_mut(2 * k, 2).copy_from(&b.residual);
    }
    (j, f)
}

/// Solves `(J^T J + lambda diag(J^T J)) dx = -J^T f` with a full LU.
pub fn dense_lm_step(problem: &BundleProblem, x: &DVector<f64>, kernel: &HuberKernel<f64>, lambda: f64) -> DVector<f64> {
    let (j, f) = dense_system(problem, x, kernel);
    let h = j.transpose() * &j;
    let mut a = h.clone();
    for d in 0..a.nrows() {
        a[(d, d)] += lambda * h[(d, d)];
    }
    a.lu().solve(&(-(j.transpose() * f))).expect("damped system is nonsingular")
}

pub fn concat(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    let mut v = DVector::zeros(a.len() + b.len());
    v.rows_mut(0, a.len()).copy_from(a);
    v.rows_mut(a.len(), b.len()).copy_from(b);
    v
}

pub fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b) / (a.norm() * b.norm())
}

pub fn relative_error(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm() / b.norm().max(f64::MIN_POSITIVE)
}
