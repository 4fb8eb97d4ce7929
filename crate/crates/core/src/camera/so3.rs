//! Rotation-vector helpers.

use nalgebra::{Matrix3, UnitQuaternion, Vector3};

pub fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

pub fn exp(omega: &Vector3<f64>) -> UnitQuaternion<f64> {
    UnitQuaternion::from_scaled_axis(*omega)
}

/// Rotation vector with angle in `[0, pi]`.
pub fn log(q: &UnitQuaternion<f64>) -> Vector3<f64> {
    // Pick the hemisphere with w >= 0 so the angle stays below pi.
    let q = if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        *q
    };
    let v = q.imag();
    let s = v.norm();
    if s < 1e-300 {
        return Vector3::zeros();
    }
    let angle = 2.0 * s.atan2(q.w);
    v * (angle / s)
}

/// Inverse of the left Jacobian of SO(3): `d log(exp(d) exp(phi)) / d d` at `d = 0`.
pub fn left_jacobian_inv(phi: &Vector3<f64>) -> Matrix3<f64> {
    let theta = phi.norm();
    let k = skew(phi);
    let coeff = if theta < 1e-5 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        let half = 0.5 * theta;
        (1.0 - half * half.cos() / half.sin()) / (theta * theta)
    };
    Matrix3::identity() - k * 0.5 + k * k * coeff
}
