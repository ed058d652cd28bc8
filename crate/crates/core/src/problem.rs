//! Bundle adjustment problem representation and the camera projection model.
//!
//! Cameras follow the "Bundle Adjustment in the Large" convention: a world
//! point `X` maps to `P = R(w) X + t`, is projected as `p = -(P_x, P_y) / P_z`
//! and then scaled by `f * (1 + k1 |p|^2 + k2 |p|^4)`. Intrinsics are carried
//! along but never optimized.
//!
//! The parameter vector is laid out cameras first: camera `i` occupies
//! `[6i, 6i + 6)` as (rotation, translation), point `j` occupies
//! `[6m + 3j, 6m + 3j + 3)`.

use std::ops::Range;

use nalgebra::{DVector, Vector2, Vector3};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::robust::HuberKernel;
use crate::rotation::{normalize_axis_angle, rotate};
use crate::scalar::pairwise_sum;
use crate::Real;

pub const CAMERA_DOF: usize = 6;
pub const POINT_DOF: usize = 3;

/// Depth magnitude below which a projection is considered degenerate.
pub const MIN_DEPTH: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Camera<T: Real> {
    /// Axis-angle rotation, radians.
    pub rotation: Vector3<T>,
    pub translation: Vector3<T>,
    /// Focal length in pixels.
    pub focal: T,
    /// Radial distortion `(k1, k2)`.
    pub distortion: Vector2<T>,
}

impl<T: Real> Camera<T> {
    pub fn new(rotation: Vector3<T>, translation: Vector3<T>, focal: T, distortion: Vector2<T>) -> Self {
        Self {
            rotation,
            translation,
            focal,
            distortion,
        }
    }

    /// Camera center in world coordinates, `-R^T t`.
    pub fn center(&self) -> Vector3<T> {
        -rotate(&(-self.rotation), &self.translation)
    }

    /// Replaces the translation so that the camera sits at `center`.
    pub fn set_center(&mut self, center: &Vector3<T>) {
        self.translation = -rotate(&self.rotation, center);
    }

    /// Transforms a world point into camera coordinates.
    pub fn to_camera(&self, x: &Vector3<T>) -> Vector3<T> {
        rotate(&self.rotation, x) + self.translation
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Point3D<T: Real> {
    pub position: Vector3<T>,
}

impl<T: Real> Point3D<T> {
    pub fn new(position: Vector3<T>) -> Self {
        Self { position }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation<T: Real> {
    pub camera: usize,
    pub point: usize,
    pub pixel: Vector2<T>,
}

/// Applies the distortion polynomial and focal scaling to normalized
/// coordinates `p`.
#[inline]
pub(crate) fn distort<T: Real>(camera: &Camera<T>, p: &Vector2<T>) -> Vector2<T> {
    let n = p.norm_squared();
    let r = T::one() + camera.distortion.x * n + camera.distortion.y * n * n;
    p * (camera.focal * r)
}

/// Projects a world point into pixel coordinates.
pub fn project<T: Real>(camera: &Camera<T>, point: &Point3D<T>) -> Result<Vector2<T>> {
    let pc = camera.to_camera(&point.position);
    if pc.z.abs() < T::lit(MIN_DEPTH) {
        return Err(Error::DegenerateProjection { depth: pc.z.as_f64() });
    }
    let p = Vector2::new(-pc.x / pc.z, -pc.y / pc.z);
    Ok(distort(camera, &p))
}

/// Reprojection error, projection minus measurement.
pub fn residual<T: Real>(camera: &Camera<T>, point: &Point3D<T>, pixel: &Vector2<T>) -> Result<Vector2<T>> {
    Ok(project(camera, point)? - pixel)
}

/// What happens to components of the visibility graph other than the first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ComponentPolicy {
    /// A disconnected problem is an error.
    #[default]
    Reject,
    /// Keep the component with the most observations.
    KeepLargest,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IngestOptions {
    pub components: ComponentPolicy,
}

/// What ingestion changed relative to the raw input.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub dropped_points: usize,
    pub dropped_observations: usize,
    pub dropped_cameras: usize,
    pub normalized_rotations: usize,
}

/// Cameras, points and observations; immutable once built.
///
/// Observations are sorted by `(point, camera)`, so each point's
/// observations form a contiguous run.
#[derive(Debug, Clone)]
pub struct BundleProblem<T: Real> {
    cameras: Vec<Camera<T>>,
    points: Vec<Point3D<T>>,
    observations: Vec<Observation<T>>,
    camera_obs: Vec<Vec<usize>>,
    point_obs: Vec<Range<usize>>,
}

impl<T: Real> BundleProblem<T> {
    /// Validates and normalizes raw data: points seen fewer than twice are
    /// dropped, rotations are brought into the `|w| <= pi` range, and the
    /// visibility graph must be connected (or is cut down to its largest
    /// component, per `options`).
    pub fn new(
        cameras: Vec<Camera<T>>,
        points: Vec<Point3D<T>>,
        observations: Vec<Observation<T>>,
        options: IngestOptions,
    ) -> Result<(Self, IngestReport)> {
        let m = cameras.len();
        let n = points.len();
        for (i, c) in cameras.iter().enumerate() {
            let finite = c.rotation.iter().chain(c.translation.iter()).chain(c.distortion.iter()).all(|v| v.is_finite());
            if !finite || !c.focal.is_finite() {
                return Err(Error::InvalidProblem(format!("camera {i} has non-finite parameters")));
            }
            if c.focal <= T::zero() {
                return Err(Error::InvalidProblem(format!("camera {i} has non-positive focal length")));
            }
        }
        for (j, p) in points.iter().enumerate() {
            if !p.position.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidProblem(format!("point {j} has non-finite coordinates")));
            }
        }
        let mut seen = std::collections::HashSet::with_capacity(observations.len());
        for (k, o) in observations.iter().enumerate() {
            if o.camera >= m || o.point >= n {
                return Err(Error::InvalidProblem(format!(
                    "observation {k} references camera {} / point {} out of range",
                    o.camera, o.point
                )));
            }
            if !o.pixel.iter().all(|v| v.is_finite()) {
                return Err(Error::InvalidProblem(format!("observation {k} has non-finite pixel")));
            }
            if !seen.insert((o.camera, o.point)) {
                return Err(Error::InvalidProblem(format!(
                    "duplicate observation of point {} by camera {}",
                    o.point, o.camera
                )));
            }
        }

        let mut report = IngestReport::default();

        // Points with fewer than two views.
        let mut views = vec![0usize; n];
        for o in &observations {
            views[o.point] += 1;
        }
        let mut keep_point: Vec<bool> = views.iter().map(|&v| v >= 2).collect();
        report.dropped_points = keep_point.iter().zip(&views).filter(|(k, &v)| !**k && v > 0).count();
        let isolated_points = views.iter().filter(|&&v| v == 0).count();
        report.dropped_points += isolated_points;

        // Components over cameras [0, m) and points [m, m + n).
        let mut uf = UnionFind::new(m + n);
        for o in observations.iter().filter(|o| keep_point[o.point]) {
            uf.union(o.camera, m + o.point);
        }
        let mut obs_per_root = vec![0usize; m + n];
        for o in observations.iter().filter(|o| keep_point[o.point]) {
            obs_per_root[uf.find(o.camera)] += 1;
        }
        let mut roots: Vec<usize> = (0..m).map(|i| uf.find(i)).collect();
        roots.sort_unstable();
        roots.dedup();
        if roots.len() > 1 {
            match options.components {
                ComponentPolicy::Reject => {
                    if let Some(i) = (0..m).find(|&i| obs_per_root[uf.find(i)] == 0) {
                        return Err(Error::InvalidProblem(format!("camera {i} has no usable observations")));
                    }
                    return Err(Error::InvalidProblem(format!(
                        "visibility graph has {} connected components",
                        roots.len()
                    )));
                }
                ComponentPolicy::KeepLargest => {}
            }
        }
        // Largest by observation count, ties to the lowest camera index.
        let mut best_root = uf.find(0);
        for i in 0..m {
            let r = uf.find(i);
            if obs_per_root[r] > obs_per_root[best_root] {
                best_root = r;
            }
        }
        if m == 0 || obs_per_root[best_root] == 0 {
            return Err(Error::InvalidProblem("problem has no usable observations".into()));
        }
        let keep_camera: Vec<bool> = (0..m).map(|i| uf.find(i) == best_root).collect();
        for j in 0..n {
            if keep_point[j] && uf.find(m + j) != best_root {
                keep_point[j] = false;
                report.dropped_points += 1;
            }
        }
        report.dropped_cameras = keep_camera.iter().filter(|k| !**k).count();

        let mut camera_map = vec![usize::MAX; m];
        let mut new_cameras = Vec::new();
        for (i, c) in cameras.into_iter().enumerate() {
            if keep_camera[i] {
                camera_map[i] = new_cameras.len();
                let mut c = c;
                let normalized = normalize_axis_angle(&c.rotation);
                if normalized != c.rotation {
                    report.normalized_rotations += 1;
                    c.rotation = normalized;
                }
                new_cameras.push(c);
            }
        }
        let mut point_map = vec![usize::MAX; n];
        let mut new_points = Vec::new();
        for (j, p) in points.into_iter().enumerate() {
            if keep_point[j] {
                point_map[j] = new_points.len();
                new_points.push(p);
            }
        }
        let total_obs = observations.len();
        let mut new_obs: Vec<Observation<T>> = observations
            .into_iter()
            .filter(|o| keep_point[o.point] && keep_camera[o.camera])
            .map(|o| Observation {
                camera: camera_map[o.camera],
                point: point_map[o.point],
                pixel: o.pixel,
            })
            .collect();
        report.dropped_observations = total_obs - new_obs.len();
        new_obs.sort_by_key(|o| (o.point, o.camera));

        Ok((Self::from_sorted(new_cameras, new_points, new_obs), report))
    }

    fn from_sorted(cameras: Vec<Camera<T>>, points: Vec<Point3D<T>>, observations: Vec<Observation<T>>) -> Self {
        let mut camera_obs = vec![Vec::new(); cameras.len()];
        let mut point_obs = vec![0..0; points.len()];
        let mut start = 0;
        for k in 0..observations.len() {
            let o = &observations[k];
            camera_obs[o.camera].push(k);
            if k + 1 == observations.len() || observations[k + 1].point != o.point {
                point_obs[o.point] = start..k + 1;
                start = k + 1;
            }
        }
        Self {
            cameras,
            points,
            observations,
            camera_obs,
            point_obs,
        }
    }

    pub fn cameras(&self) -> &[Camera<T>] {
        &self.cameras
    }

    pub fn points(&self) -> &[Point3D<T>] {
        &self.points
    }

    pub fn observations(&self) -> &[Observation<T>] {
        &self.observations
    }

    pub fn num_cameras(&self) -> usize {
        self.cameras.len()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    pub fn num_observations(&self) -> usize {
        self.observations.len()
    }

    /// Length of the parameter vector, `6m + 3n`.
    pub fn num_parameters(&self) -> usize {
        CAMERA_DOF * self.cameras.len() + POINT_DOF * self.points.len()
    }

    /// Indices of the observations made by camera `i`, in ascending order.
    pub fn camera_observations(&self, i: usize) -> &[usize] {
        &self.camera_obs[i]
    }

    /// Observation index range of point `j` (sorted by camera).
    pub fn point_observations(&self, j: usize) -> Range<usize> {
        self.point_obs[j].clone()
    }

    pub fn camera_offset(&self, i: usize) -> usize {
        CAMERA_DOF * i
    }

    pub fn point_offset(&self, j: usize) -> usize {
        CAMERA_DOF * self.cameras.len() + POINT_DOF * j
    }

    /// Current parameter vector `[c; p]`.
    pub fn params(&self) -> DVector<T> {
        let mut x = DVector::zeros(self.num_parameters());
        for (i, c) in self.cameras.iter().enumerate() {
            let o = self.camera_offset(i);
            x.fixed_rows_mut::<3>(o).copy_from(&c.rotation);
            x.fixed_rows_mut::<3>(o + 3).copy_from(&c.translation);
        }
        for (j, p) in self.points.iter().enumerate() {
            x.fixed_rows_mut::<3>(self.point_offset(j)).copy_from(&p.position);
        }
        x
    }

    /// Camera `i` with extrinsics read from `x`.
    pub fn camera_at(&self, x: &DVector<T>, i: usize) -> Camera<T> {
        let o = self.camera_offset(i);
        let base = &self.cameras[i];
        Camera {
            rotation: x.fixed_rows::<3>(o).into_owned(),
            translation: x.fixed_rows::<3>(o + 3).into_owned(),
            focal: base.focal,
            distortion: base.distortion,
        }
    }

    pub fn point_at(&self, x: &DVector<T>, j: usize) -> Point3D<T> {
        Point3D::new(x.fixed_rows::<3>(self.point_offset(j)).into_owned())
    }

    /// Copy of the problem with parameters taken from `x`; rotations are
    /// normalized back into the `|w| <= pi` range.
    pub fn with_params(&self, x: &DVector<T>) -> Self {
        assert_eq!(x.len(), self.num_parameters(), "parameter vector length");
        let mut out = self.clone();
        for i in 0..out.cameras.len() {
            let mut c = self.camera_at(x, i);
            c.rotation = normalize_axis_angle(&c.rotation);
            out.cameras[i] = c;
        }
        for j in 0..out.points.len() {
            out.points[j] = self.point_at(x, j);
        }
        out
    }

    /// Residual of observation `k` evaluated at `x`.
    pub fn observation_residual(&self, x: &DVector<T>, k: usize) -> Result<Vector2<T>> {
        let o = &self.observations[k];
        residual(&self.camera_at(x, o.camera), &self.point_at(x, o.point), &o.pixel)
    }
}

/// Robust objective: Huber kernel plus the cost charged to observations whose
/// projection is degenerate.
#[derive(Debug, Clone, Copy)]
pub struct Objective<T: Real> {
    pub kernel: HuberKernel<T>,
    pub degenerate_penalty: T,
}

impl<T: Real> Objective<T> {
    pub fn new(kernel: HuberKernel<T>) -> Self {
        Self {
            kernel,
            degenerate_penalty: T::lit(1e10),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostSummary<T> {
    pub cost: T,
    /// Observations that fell back to the degenerate penalty.
    pub degenerate: usize,
}

/// Robust total cost `sum_k rho(|r_k|^2)` at parameters `x`.
pub fn total_cost<T: Real>(problem: &BundleProblem<T>, x: &DVector<T>, objective: &Objective<T>) -> CostSummary<T> {
    assert_eq!(x.len(), problem.num_parameters(), "parameter vector length");
    let terms: Vec<(T, bool)> = (0..problem.num_observations())
        .into_par_iter()
        .map(|k| match problem.observation_residual(x, k) {
            Ok(r) => (objective.kernel.rho(r.norm_squared()).0, false),
            Err(_) => (objective.degenerate_penalty, true),
        })
        .collect();
    let values: Vec<T> = terms.iter().map(|t| t.0).collect();
    CostSummary {
        cost: pairwise_sum(&values),
        degenerate: terms.iter().filter(|t| t.1).count(),
    }
}

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        Self { parent: (0..n).collect() }
    }

    fn find(&mut self, mut a: usize) -> usize {
        while self.parent[a] != a {
            self.parent[a] = self.parent[self.parent[a]];
            a = self.parent[a];
        }
        a
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi] = lo;
        }
    }
}
