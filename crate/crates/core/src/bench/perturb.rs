//! Gaussian perturbation of points and camera centers.

use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::problem::BundleProblem;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerturbSpec {
    pub sigma_points: f64,
    pub sigma_camera_centers: f64,
    pub seed: u64,
}

fn normal(sigma: f64) -> Result<Option<Normal<f64>>> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!("noise sigma must be finite and non-negative, got {sigma}")));
    }
    Ok((sigma > 0.0).then(|| Normal::new(0.0, sigma).expect("valid sigma")))
}

/// Adds `N(0, sigma_c^2 I)` to every camera center `-R^T t` (rotation kept,
/// translation recomputed) and `N(0, sigma_p^2 I)` to every point. Cameras are
/// drawn first, then points, from one seeded stream.
pub fn perturb(problem: &BundleProblem<f64>, spec: &PerturbSpec) -> Result<BundleProblem<f64>> {
    let centers = normal(spec.sigma_camera_centers)?;
    let points = normal(spec.sigma_points)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut x: DVector<f64> = problem.params();
    if let Some(d) = centers {
        for i in 0..problem.num_cameras() {
            let mut cam = problem.camera_at(&x, i);
            let shift = Vector3::from_fn(|_, _| d.sample(&mut rng));
            cam.set_center(&(cam.center() + shift));
            x.fixed_rows_mut::<3>(problem.camera_offset(i) + 3).copy_from(&cam.translation);
        }
    }
    if let Some(d) = points {
        for j in 0..problem.num_points() {
            let off = problem.point_offset(j);
            for k in 0..3 {
                x[off + k] += d.sample(&mut rng);
            }
        }
    }
    Ok(problem.with_params(&x))
}
