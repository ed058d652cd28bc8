//! Analytic Jacobians of the reprojection residuals with IRLS reweighting.
//!
//! Every observation contributes a 2x6 camera block and a 2x3 point block.
//! Both blocks and the residual are scaled by `sqrt(rho'(|r|^2))`, so the
//! Gauss-Newton system built from them matches the Huber-robustified normal
//! equations to first order.

use nalgebra::{DVector, Matrix2, Matrix2x3, Matrix2x6, Matrix3, Vector2};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::problem::{distort, BundleProblem, Camera, Point3D, MIN_DEPTH};
use crate::robust::HuberKernel;
use crate::rotation::{rotate_jacobian, rotation_matrix};
use crate::Real;

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBlock<T: Real> {
    /// d residual / d (rotation, translation)
    pub camera: Matrix2x6<T>,
    /// d residual / d point
    pub point: Matrix2x3<T>,
    pub residual: Vector2<T>,
}

impl<T: Real> ObservationBlock<T> {
    fn zero() -> Self {
        Self {
            camera: Matrix2x6::zeros(),
            point: Matrix2x3::zeros(),
            residual: Vector2::zeros(),
        }
    }
}

/// Weighted blocks for every observation, in problem observation order.
#[derive(Debug, Clone)]
pub struct JacobianBlocks<T: Real> {
    pub blocks: Vec<ObservationBlock<T>>,
    /// Observations whose projection was degenerate; their blocks are zero.
    pub degenerate: usize,
}

/// Projection with its derivatives: `(pixel, d/d camera, d/d point)`.
pub fn projection_jacobian<T: Real>(
    camera: &Camera<T>,
    point: &Point3D<T>,
) -> Result<(Vector2<T>, Matrix2x6<T>, Matrix2x3<T>)> {
    let x = &point.position;
    let pc = camera.to_camera(x);
    if pc.z.abs() < T::lit(MIN_DEPTH) {
        return Err(Error::DegenerateProjection { depth: pc.z.as_f64() });
    }
    let iz = T::one() / pc.z;
    let p = Vector2::new(-pc.x * iz, -pc.y * iz);
    let d_p_d_pc = Matrix2x3::new(-iz, T::zero(), pc.x * iz * iz, T::zero(), -iz, pc.y * iz * iz);

    let (k1, k2) = (camera.distortion.x, camera.distortion.y);
    let n = p.norm_squared();
    let radial = T::one() + k1 * n + k2 * n * n;
    let d_dist = (Matrix2::identity() * radial + p * p.transpose() * (T::lit(2.0) * (k1 + T::lit(2.0) * k2 * n)))
        * camera.focal;

    let d_pc = d_dist * d_p_d_pc;
    let d_rot: Matrix2x3<T> = d_pc * rotate_jacobian(&camera.rotation, x);
    let r: Matrix3<T> = rotation_matrix(&camera.rotation);

    let mut jc = Matrix2x6::zeros();
    jc.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_rot);
    jc.fixed_view_mut::<2, 3>(0, 3).copy_from(&d_pc);
    Ok((distort(camera, &p), jc, d_pc * r))
}

/// Evaluates the IRLS-weighted residuals and Jacobian blocks at `x`.
pub fn weighted_blocks<T: Real>(
    problem: &BundleProblem<T>,
    x: &DVector<T>,
    kernel: &HuberKernel<T>,
) -> JacobianBlocks<T> {
    let results: Vec<Option<ObservationBlock<T>>> = problem
        .observations()
        .par_iter()
        .map(|o| {
            let cam = problem.camera_at(x, o.camera);
            let pt = problem.point_at(x, o.point);
            let (proj, jc, jp) = projection_jacobian(&cam, &pt).ok()?;
            let r = proj - o.pixel;
            let w = kernel.rho(r.norm_squared()).1.sqrt();
            Some(ObservationBlock {
                camera: jc * w,
                point: jp * w,
                residual: r * w,
            })
        })
        .collect();
    let degenerate = results.iter().filter(|r| r.is_none()).count();
    JacobianBlocks {
        blocks: results.into_iter().map(|r| r.unwrap_or_else(ObservationBlock::zero)).collect(),
        degenerate,
    }
}

impl<T: Real> JacobianBlocks<T> {
    /// Gradient `J^T r` of the weighted least-squares system, laid out like the
    /// parameter vector. Equals half the gradient of the robust total cost.
    pub fn gradient(&self, problem: &BundleProblem<T>) -> DVector<T> {
        let mut g = DVector::zeros(problem.num_parameters());
        for i in 0..problem.num_cameras() {
            let mut acc = nalgebra::Vector6::zeros();
            for &k in problem.camera_observations(i) {
                let b = &self.blocks[k];
                acc += b.camera.transpose() * b.residual;
            }
            g.fixed_rows_mut::<6>(problem.camera_offset(i)).copy_from(&acc);
        }
        for j in 0..problem.num_points() {
            let mut acc = nalgebra::Vector3::zeros();
            for k in problem.point_observations(j) {
                let b = &self.blocks[k];
                acc += b.point.transpose() * b.residual;
            }
            g.fixed_rows_mut::<3>(problem.point_offset(j)).copy_from(&acc);
        }
        g
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::synthetic::{generate_synthetic, Layout, SyntheticSpec};
    use crate::problem::{residual, total_cost, Objective};
    use nalgebra::Vector3;

    fn toy() -> BundleProblem<f64> {
        let spec = SyntheticSpec {
            cameras: 5,
            points: 20,
            layout: Layout::Ring,
            density: 1.0,
            pixel_noise: 2.0,
            seed: 11,
        };
        generate_synthetic(&spec).unwrap().problem
    }

    /// Central differences of `x -> residual(x)` scaled by a frozen weight.
    fn fd_check(camera: &Camera<f64>, point: &Point3D<f64>) -> f64 {
        let (_, jc, jp) = projection_jacobian(camera, point).unwrap();
        let pix = Vector2::zeros();
        let mut worst: f64 = 0.0;
        for k in 0..9 {
            let base = if k < 3 {
                camera.rotation[k]
            } else if k < 6 {
                camera.translation[k - 3]
            } else {
                point.position[k - 6]
            };
            let h = 1e-6 * base.abs().max(1.0);
            let eval = |delta: f64| {
                let mut c = camera.clone();
                let mut p = *point;
                if k < 3 {
                    c.rotation[k] += delta;
                } else if k < 6 {
                    c.translation[k - 3] += delta;
                } else {
                    p.position[k - 6] += delta;
                }
                residual(&c, &p, &pix).unwrap()
            };
            let fd = (eval(h) - eval(-h)) / (2.0 * h);
            for r in 0..2 {
                let a = if k < 6 { jc[(r, k)] } else { jp[(r, k - 6)] };
                let rel = (a - fd[r]).abs() / a.abs().max(fd[r].abs()).max(1.0);
                worst = worst.max(rel);
            }
        }
        worst
    }

    #[test]
    fn identity_rotation_matches_finite_differences() {
        let c = Camera::new(Vector3::zeros(), Vector3::new(0.1, 0.0, -4.0), 400.0, Vector2::new(0.01, -0.001));
        let p = Point3D::new(Vector3::new(0.3, -0.5, 0.2));
        assert!(fd_check(&c, &p) < 1e-6);
    }

    #[test]
    fn random_problem_matches_finite_differences() {
        let p = toy();
        let x = p.params();
        let mut worst: f64 = 0.0;
        for o in p.observations() {
            worst = worst.max(fd_check(&p.camera_at(&x, o.camera), &p.point_at(&x, o.point)));
        }
        assert!(worst < 1e-6, "worst relative error {worst:e}");
    }

    #[test]
    fn infinite_scale_gives_unweighted_blocks() {
        let p = toy();
        let x = p.params();
        let blocks = weighted_blocks(&p, &x, &HuberKernel::trivial());
        for (k, o) in p.observations().iter().enumerate() {
            let (proj, jc, jp) = projection_jacobian(&p.camera_at(&x, o.camera), &p.point_at(&x, o.point)).unwrap();
            assert_eq!(blocks.blocks[k].camera, jc);
            assert_eq!(blocks.blocks[k].point, jp);
            assert_eq!(blocks.blocks[k].residual, proj - o.pixel);
        }
    }

    #[test]
    fn tail_weighting_shrinks_every_block() {
        let p = toy();
        let x = p.params();
        let plain = weighted_blocks(&p, &x, &HuberKernel::trivial());
        let robust = weighted_blocks(&p, &x, &HuberKernel::new(0.01));
        for (a, b) in plain.blocks.iter().zip(&robust.blocks) {
            assert!(b.camera.norm() < a.camera.norm());
            assert!(b.point.norm() < a.point.norm());
        }
    }

    #[test]
    fn gradient_matches_cost_finite_differences() {
        let p = toy();
        let x = p.params();
        let obj = Objective::new(HuberKernel::new(0.5));
        let g = weighted_blocks(&p, &x, &obj.kernel).gradient(&p) * 2.0;
        let gmax = g.amax();
        for idx in 0..p.num_parameters() {
            let h = 1e-6 * x[idx].abs().max(1.0);
            let mut xp = x.clone();
            let mut xm = x.clone();
            xp[idx] += h;
            xm[idx] -= h;
            let fd = (total_cost(&p, &xp, &obj).cost - total_cost(&p, &xm, &obj).cost) / (2.0 * h);
            let rel = (fd - g[idx]).abs() / gmax.max(1.0);
            assert!(rel < 1e-5, "param {idx}: analytic {} fd {fd}", g[idx]);
        }
    }

    #[test]
    fn degenerate_observation_yields_zero_block() {
        let p = toy();
        let mut x = p.params();
        let o = p.observations()[0];
        // put the point on camera 0's principal plane
        let cam = p.camera_at(&x, o.camera);
        let center = cam.center();
        x.fixed_rows_mut::<3>(p.point_offset(o.point)).copy_from(&center);
        let blocks = weighted_blocks(&p, &x, &HuberKernel::new(0.5));
        assert!(blocks.degenerate >= 1);
        assert_eq!(blocks.blocks[0], ObservationBlock::zero());
    }
}
