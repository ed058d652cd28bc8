//! Axis-angle rotations and their derivatives.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};

use crate::Real;

/// Below this angle the Rodrigues coefficients switch to their Taylor series.
pub const SMALL_ANGLE: f64 = 1e-8;

pub fn skew<T: Real>(v: &Vector3<T>) -> Matrix3<T> {
    Matrix3::new(
        T::zero(),
        -v.z,
        v.y,
        v.z,
        T::zero(),
        -v.x,
        -v.y,
        v.x,
        T::zero(),
    )
}

/// Coefficients `(sin t / t, (1 - cos t) / t^2, (t - sin t) / t^3)`.
fn rodrigues_coefficients<T: Real>(theta: T) -> (T, T, T) {
    if theta < T::lit(SMALL_ANGLE) {
        let t2 = theta * theta;
        (
            T::one() - t2 / T::lit(6.0),
            T::lit(0.5) - t2 / T::lit(24.0),
            T::lit(1.0 / 6.0) - t2 / T::lit(120.0),
        )
    } else {
        let half = theta * T::lit(0.5);
        let s = half.sin();
        (
            theta.sin() / theta,
            T::lit(2.0) * s * s / (theta * theta),
            (theta - theta.sin()) / (theta * theta * theta),
        )
    }
}

pub fn rotation_matrix<T: Real>(omega: &Vector3<T>) -> Matrix3<T> {
    let (a, b, _) = rodrigues_coefficients(omega.norm());
    let k = skew(omega);
    Matrix3::identity() + k * a + k * k * b
}

/// Rotates `x` by the axis-angle vector `omega`.
pub fn rotate<T: Real>(omega: &Vector3<T>, x: &Vector3<T>) -> Vector3<T> {
    let (a, b, _) = rodrigues_coefficients(omega.norm());
    let wx = omega.cross(x);
    x + wx * a + omega.cross(&wx) * b
}

/// Left Jacobian of SO(3): `R(w + d) ~ exp((J_l(w) d)^) R(w)`.
pub fn left_jacobian<T: Real>(omega: &Vector3<T>) -> Matrix3<T> {
    let (_, b, c) = rodrigues_coefficients(omega.norm());
    let k = skew(omega);
    Matrix3::identity() + k * b + k * k * c
}

/// Derivative of `R(omega) x` with respect to `omega`.
pub fn rotate_jacobian<T: Real>(omega: &Vector3<T>, x: &Vector3<T>) -> Matrix3<T> {
    let rx = rotate(omega, x);
    -skew(&rx) * left_jacobian(omega)
}

/// Maps an axis-angle vector to the equivalent one with norm at most pi.
/// Vectors already inside that range are returned unchanged.
pub fn normalize_axis_angle<T: Real>(omega: &Vector3<T>) -> Vector3<T> {
    let theta = omega.norm();
    let pi = T::pi();
    if theta <= pi {
        return *omega;
    }
    let two_pi = T::two_pi();
    let mut reduced = theta - two_pi * (theta / two_pi).floor();
    if reduced > pi {
        reduced -= two_pi;
    }
    omega * (reduced / theta)
}

/// Axis-angle vector of a rotation matrix.
pub fn from_matrix<T: Real>(r: &Matrix3<T>) -> Vector3<T> {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let (mut w, mut v) = (q.w, q.imag());
    if w < T::zero() {
        w = -w;
        v = -v;
    }
    let s = v.norm();
    if s < T::lit(SMALL_ANGLE) {
        return v * (T::lit(2.0) / w);
    }
    v * (T::lit(2.0) * s.atan2(w) / s)
}
