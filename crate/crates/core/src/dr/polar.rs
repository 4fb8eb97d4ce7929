use nalgebra::{Matrix3, Vector3};

use crate::camera::so3::skew;
use crate::error::{Error, Result};

/// Splits `t = r * s` with `r` a proper rotation and `s` symmetric.
///
/// When `det(t) < 0` the reflection is moved into `s` by flipping the
/// smallest singular direction, so `s` then has one negative eigenvalue.
pub fn polar_decompose(t: &Matrix3<f64>) -> Result<(Matrix3<f64>, Matrix3<f64>)> {
    if !t.iter().all(|v| v.is_finite()) {
        return Err(Error::Singular("matrix has non-finite entries".into()));
    }
    let svd = t.svd(true, true);
    let (mut u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut sigma = svd.singular_values;
    let (kmin, smin) = sigma.argmin();
    if !(smin > 1e-12 * sigma.max()) {
        return Err(Error::Singular(format!("singular values {:?}", sigma.as_slice())));
    }
    if (u * v_t).determinant() < 0.0 {
        u.column_mut(kmin).neg_mut();
        sigma[kmin] = -sigma[kmin];
    }
    let r = u * v_t;
    let v = v_t.transpose();
    let s = v * Matrix3::from_diagonal(&sigma) * v_t;
    // symmetrize away rounding
    let s = (s + s.transpose()) * 0.5;
    Ok((r, s))
}

/// Axis-angle of a rotation matrix with the angle in `[0, pi]`.
/// The identity maps to axis `(0, 0, 1)` and angle zero.
pub fn rotation_log(r: &Matrix3<f64>) -> (Vector3<f64>, f64) {
    let skew_part = Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let sin_theta = 0.5 * skew_part.norm();
    let cos_theta = 0.5 * (r.trace() - 1.0);
    let theta = sin_theta.atan2(cos_theta);
    if theta == 0.0 {
        return (Vector3::z(), 0.0);
    }
    if cos_theta > -0.5 {
        return (skew_part / (2.0 * sin_theta), theta);
    }
    // Near pi the skew part vanishes; read the axis from the symmetric part
    // (R + R^T)/2 - cos(theta) I = (1 - cos(theta)) w w^T.
    let sym = (r + r.transpose()) * 0.5 - Matrix3::identity() * cos_theta;
    let k = (0..3).max_by(|&a, &b| sym[(a, a)].total_cmp(&sym[(b, b)])).unwrap();
    let mut axis = sym.column(k).into_owned();
    axis /= axis.norm();
    if axis.dot(&skew_part) < 0.0 {
        axis = -axis;
    }
    (axis, theta)
}

/// Rodrigues' formula for the rotation vector `w` (angle `|w|`).
pub fn rotation_exp(w: &Vector3<f64>) -> Matrix3<f64> {
    let theta = w.norm();
    let k = skew(w);
    let (a, b) = if theta < 1e-8 {
        (1.0 - theta * theta / 6.0, 0.5 - theta * theta / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
    };
    Matrix3::identity() + k * a + k * k * b
}
