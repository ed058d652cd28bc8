//! Synthetic bundle adjustment problems with known ground truth.
//!
//! `Ring`: cameras on a horizontal circle (an arc for small camera counts)
//! looking at a cylinder of points, dense covisibility. `GridStreet`: a
//! forward-moving chain of cameras between two facades, sparse covisibility.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector2, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::problem::{project, BundleProblem, Camera, IngestOptions, Observation, Point3D};
use crate::rotation::from_matrix;

pub const FOCAL: f64 = 500.0;
/// Half width (and height) of the image in pixels.
pub const IMAGE_HALF_SIZE: f64 = 500.0;
const RING_RADIUS: f64 = 100.0;
const CYLINDER_RADIUS: f64 = 40.0;
const CYLINDER_HALF_HEIGHT: f64 = 20.0;
/// Largest angle between a cylinder normal and the viewing ray.
const MAX_INCIDENCE_DEG: f64 = 70.0;
const ARC_STEP_DEG: f64 = 10.0;
const STREET_SPACING: f64 = 1.0;
const STREET_HALF_WIDTH: f64 = 10.0;
const STREET_DEPTH: (f64, f64) = (1.0, 25.0);
const MAX_RESAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layout {
    Ring,
    GridStreet,
}

impl std::str::FromStr for Layout {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "ring" => Ok(Self::Ring),
            "grid-street" | "street" => Ok(Self::GridStreet),
            _ => Err(format!("unknown layout {s:?} (expected ring or grid-street)")),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SyntheticSpec {
    pub cameras: usize,
    pub points: usize,
    pub layout: Layout,
    /// Probability of keeping each geometrically visible (camera, point) pair.
    pub density: f64,
    /// Standard deviation of Gaussian pixel noise.
    pub pixel_noise: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
pub struct SyntheticProblem {
    /// Observations are noisy; parameters are the ground truth.
    pub problem: BundleProblem<f64>,
    pub ground_truth: Vec<f64>,
}

/// World-to-camera rotation for a camera at `center` looking along `dir`.
/// Cameras look down their local -z axis.
fn look_rotation(dir: &Vector3<f64>) -> Vector3<f64> {
    let z = -dir.normalize();
    let up = if z.z.abs() > 0.9 { Vector3::x() } else { Vector3::z() };
    let x = up.cross(&z).normalize();
    let y = z.cross(&x);
    let r = Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()]);
    from_matrix(&r)
}

fn make_camera(center: Vector3<f64>, dir: Vector3<f64>) -> Camera<f64> {
    let mut c = Camera::new(look_rotation(&dir), Vector3::zeros(), FOCAL, Vector2::new(0.01, 0.0));
    c.set_center(&center);
    c
}

fn in_image(camera: &Camera<f64>, x: &Vector3<f64>) -> Option<Vector2<f64>> {
    let pc = camera.to_camera(x);
    if pc.z > -STREET_DEPTH.0 * 0.5 {
        return None;
    }
    let uv = project(camera, &Point3D::new(*x)).ok()?;
    (uv.x.abs() < IMAGE_HALF_SIZE && uv.y.abs() < IMAGE_HALF_SIZE).then_some(uv)
}

struct Scene {
    cameras: Vec<Camera<f64>>,
    /// Candidate point generator and visibility test.
    sample_point: Box<dyn Fn(&mut ChaCha8Rng) -> (Vector3<f64>, Vector3<f64>)>,
    visible: Box<dyn Fn(&Camera<f64>, &Vector3<f64>, &Vector3<f64>) -> bool>,
}

fn ring_scene(m: usize) -> Scene {
    let span = (m as f64 * ARC_STEP_DEG).min(360.0).to_radians();
    let full = span >= 2.0 * PI - 1e-9;
    let step = if full { span / m as f64 } else { span / (m.max(2) - 1) as f64 };
    let start = if full { 0.0 } else { -span / 2.0 };
    let cameras: Vec<Camera<f64>> = (0..m)
        .map(|i| {
            let th = start + step * i as f64;
            let center = Vector3::new(RING_RADIUS * th.cos(), RING_RADIUS * th.sin(), 0.0);
            make_camera(center, -center)
        })
        .collect();
    let margin = if full { 0.0 } else { 0.3 };
    let (lo, hi) = if full { (0.0, 2.0 * PI) } else { (start - margin, start + span + margin) };
    let cos_max = MAX_INCIDENCE_DEG.to_radians().cos();
    Scene {
        cameras,
        sample_point: Box::new(move |rng| {
            let phi = rng.random_range(lo..hi);
            let h = rng.random_range(-CYLINDER_HALF_HEIGHT..CYLINDER_HALF_HEIGHT);
            let normal = Vector3::new(phi.cos(), phi.sin(), 0.0);
            (normal * CYLINDER_RADIUS + Vector3::z() * h, normal)
        }),
        visible: Box::new(move |cam, x, normal| {
            let ray = (cam.center() - x).normalize();
            ray.dot(normal) > cos_max
        }),
    }
}

fn street_scene(m: usize) -> Scene {
    let cameras: Vec<Camera<f64>> = (0..m)
        .map(|i| make_camera(Vector3::new(STREET_SPACING * i as f64, 0.0, 0.0), Vector3::x()))
        .collect();
    let length = STREET_SPACING * (m - 1) as f64 + STREET_DEPTH.1;
    Scene {
        cameras,
        sample_point: Box::new(move |rng| {
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let x = rng.random_range(STREET_DEPTH.0..length);
            let z = rng.random_range(-3.0..5.0);
            (Vector3::new(x, side * STREET_HALF_WIDTH, z), Vector3::new(0.0, -side, 0.0))
        }),
        visible: Box::new(|cam, x, _| {
            let depth = x.x - cam.center().x;
            (STREET_DEPTH.0..=STREET_DEPTH.1).contains(&depth)
        }),
    }
}

/// Generates a problem whose parameters are the ground truth and whose
/// observations carry Gaussian pixel noise.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticProblem> {
    if spec.cameras < 2 || spec.points < 4 {
        return Err(Error::InfeasibleSpec("need at least 2 cameras and 4 points".into()));
    }
    if !(spec.density > 0.0 && spec.density <= 1.0) {
        return Err(Error::InfeasibleSpec(format!("density {} outside (0, 1]", spec.density)));
    }
    if !(spec.pixel_noise >= 0.0 && spec.pixel_noise.is_finite()) {
        return Err(Error::InfeasibleSpec("pixel noise must be finite and non-negative".into()));
    }
    let scene = match spec.layout {
        Layout::Ring => ring_scene(spec.cameras),
        Layout::GridStreet => street_scene(spec.cameras),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.pixel_noise.max(f64::MIN_POSITIVE)).expect("valid sigma");
    let mut points = Vec::with_capacity(spec.points);
    let mut observations = Vec::new();
    let mut views: Vec<(usize, Vector2<f64>)> = Vec::new();
    for j in 0..spec.points {
        let mut tries = 0;
        let x = loop {
            let (x, normal) = (scene.sample_point)(&mut rng);
            views.clear();
            for (i, cam) in scene.cameras.iter().enumerate() {
                if (scene.visible)(cam, &x, &normal) {
                    if let Some(uv) = in_image(cam, &x) {
                        views.push((i, uv));
                    }
                }
            }
            if views.len() >= 2 {
                break x;
            }
            tries += 1;
            if tries >= MAX_RESAMPLES {
                return Err(Error::InfeasibleSpec(format!(
                    "point {j}: no position seen by two cameras after {MAX_RESAMPLES} draws"
                )));
            }
        };
        let mut kept: Vec<usize> = (0..views.len()).filter(|_| rng.random::<f64>() < spec.density).collect();
        if kept.len() < 2 {
            kept = sample(&mut rng, views.len(), 2).into_vec();
            kept.sort_unstable();
        }
        for &v in &kept {
            let (i, uv) = views[v];
            let pixel = if spec.pixel_noise > 0.0 {
                uv + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                uv
            };
            observations.push(Observation { camera: i, point: j, pixel });
        }
        points.push(Point3D::new(x));
    }
    let (problem, report) = BundleProblem::new(scene.cameras, points, observations, IngestOptions::default())
        .map_err(|e| Error::InfeasibleSpec(format!("generated problem rejected: {e}")))?;
    if report.dropped_points > 0 || report.dropped_cameras > 0 {
        return Err(Error::InfeasibleSpec("density leaves cameras or points unobserved".into()));
    }
    let ground_truth = problem.params().iter().copied().collect();
    Ok(SyntheticProblem { problem, ground_truth })
}
