//! Pinhole camera with a scaled focal length and quaternion extrinsics.

mod epnp;
pub mod so3;

use nalgebra::{Matrix3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use epnp::{epnp_pose, refine_pose, reprojection_rmse, MIN_CORRESPONDENCES};

/// Where the principal point goes for a `width x height` image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrincipalPoint {
    /// `c_x = width / 2`, `c_y = height / 2`.
    #[default]
    ImageCenter,
    /// `c_x = height / 2`, `c_y = width / 2`.
    Transposed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    /// Base focal length in pixels.
    pub focal: f64,
    pub cx: f64,
    pub cy: f64,
    /// Multiplier on `focal`, optimized during fitting.
    pub focal_scale: f64,
}

impl Intrinsics {
    pub fn new(focal: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(focal > 0.0) {
            return Err(Error::InvalidArgument(format!("focal length {focal} must be positive")));
        }
        Ok(Intrinsics {
            focal,
            cx,
            cy,
            focal_scale: 1.0,
        })
    }

    pub fn effective_focal(&self) -> f64 {
        self.focal * self.focal_scale
    }

    pub fn with_focal_scale(mut self, focal_scale: f64) -> Self {
        self.focal_scale = focal_scale;
        self
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let f = self.effective_focal();
        Matrix3::new(f, 0.0, self.cx, 0.0, f, self.cy, 0.0, 0.0, 1.0)
    }

    /// Projects a camera-frame point.
    pub fn project_camera(&self, y: &Vector3<f64>) -> Result<Vector2<f64>> {
        if !(y.z > 0.0) {
            return Err(Error::BehindCamera(y.z));
        }
        let f = self.effective_focal();
        Ok(Vector2::new(f * y.x / y.z + self.cx, f * y.y / y.z + self.cy))
    }

    /// Normalized image coordinates of a pixel.
    pub fn normalize(&self, px: &Vector2<f64>) -> Vector2<f64> {
        let f = self.effective_focal();
        Vector2::new((px.x - self.cx) / f, (px.y - self.cy) / f)
    }
}

/// Intrinsics derived from the image size: `f = max(w, h)`, unit focal scale.
pub fn init_intrinsics(width: u32, height: u32) -> Result<Intrinsics> {
    init_intrinsics_with(width, height, PrincipalPoint::ImageCenter)
}

pub fn init_intrinsics_with(width: u32, height: u32, pp: PrincipalPoint) -> Result<Intrinsics> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidArgument(format!("image size {width}x{height}")));
    }
    let (w, h) = (width as f64, height as f64);
    let (cx, cy) = match pp {
        PrincipalPoint::ImageCenter => (w / 2.0, h / 2.0),
        PrincipalPoint::Transposed => (h / 2.0, w / 2.0),
    };
    Intrinsics::new(w.max(h), cx, cy)
}

/// World-to-camera rigid transform `y = R x + t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Extrinsics {
    pub rotation: UnitQuaternion<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Extrinsics {
    fn default() -> Self {
        Extrinsics::identity()
    }
}

impl Extrinsics {
    pub fn identity() -> Self {
        Extrinsics {
            rotation: UnitQuaternion::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn new(rotation: UnitQuaternion<f64>, translation: Vector3<f64>) -> Self {
        Extrinsics { rotation, translation }
    }

    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        self.rotation.to_rotation_matrix().into_inner()
    }

    pub fn transform(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// Left-composes `exp(omega)` onto the rotation and renormalizes.
    pub fn apply_rotation_increment(&mut self, omega: &Vector3<f64>) {
        let q = so3::exp(omega) * self.rotation;
        self.rotation = UnitQuaternion::new_normalize(q.into_inner());
    }

    pub fn inverse(&self) -> Extrinsics {
        let inv = self.rotation.inverse();
        Extrinsics {
            rotation: inv,
            translation: -(inv * self.translation),
        }
    }
}

/// Projects a world point through extrinsics then intrinsics.
pub fn project(point: &Vector3<f64>, extr: &Extrinsics, intr: &Intrinsics) -> Result<Vector2<f64>> {
    intr.project_camera(&extr.transform(point))
}

/// Serialized camera: quaternion as `(w, x, y, z)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseRecord {
    pub quaternion: [f64; 4],
    pub translation: [f64; 3],
    pub focal: f64,
    pub focal_scale: f64,
    pub principal_point: [f64; 2],
}

impl PoseRecord {
    pub fn new(extr: &Extrinsics, intr: &Intrinsics) -> Self {
        let q = extr.rotation.quaternion();
        PoseRecord {
            quaternion: [q.w, q.i, q.j, q.k],
            translation: extr.translation.into(),
            focal: intr.focal,
            focal_scale: intr.focal_scale,
            principal_point: [intr.cx, intr.cy],
        }
    }

    pub fn extrinsics(&self) -> Extrinsics {
        let [w, x, y, z] = self.quaternion;
        Extrinsics {
            rotation: UnitQuaternion::new_normalize(nalgebra::Quaternion::new(w, x, y, z)),
            translation: self.translation.into(),
        }
    }

    pub fn intrinsics(&self) -> Intrinsics {
        Intrinsics {
            focal: self.focal,
            cx: self.principal_point[0],
            cy: self.principal_point[1],
            focal_scale: self.focal_scale,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn intrinsics_from_image_size() {
        let k = init_intrinsics(1000, 800).unwrap();
        assert_eq!((k.focal, k.focal_scale, k.cx, k.cy), (1000.0, 1.0, 500.0, 400.0));
        let k = init_intrinsics(512, 512).unwrap();
        assert_eq!((k.focal, k.cx, k.cy), (512.0, 256.0, 256.0));
        let k = init_intrinsics(1, 1).unwrap();
        assert_eq!(k.focal, 1.0);
        let t = init_intrinsics_with(1000, 800, PrincipalPoint::Transposed).unwrap();
        assert_eq!((t.cx, t.cy), (400.0, 500.0));
        assert!(init_intrinsics(0, 5).is_err());
    }

    #[test]
    fn projection_cases() {
        let k = init_intrinsics(1000, 800).unwrap();
        let e = Extrinsics::identity();
        for z in [0.5, 10.0, 1e4] {
            let p = project(&Vector3::new(0.0, 0.0, z), &e, &k).unwrap();
            assert_eq!(p, Vector2::new(k.cx, k.cy));
        }
        let p = project(&Vector3::new(1.0, 0.0, 1000.0), &e, &k).unwrap();
        assert!((p - Vector2::new(k.cx + 1.0, k.cy)).norm() < 1e-12);
        assert!(matches!(
            project(&Vector3::new(0.0, 0.0, -5.0), &e, &k),
            Err(Error::BehindCamera(_))
        ));
    }

    #[test]
    fn moving_scene_and_camera_together_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let k = init_intrinsics(640, 480).unwrap();
        for _ in 0..50 {
            let e = Extrinsics::new(
                so3::exp(&Vector3::new(rng.random(), rng.random(), rng.random())),
                Vector3::new(rng.random(), rng.random(), 500.0),
            );
            let m = Extrinsics::new(
                so3::exp(&Vector3::new(rng.random(), rng.random(), rng.random())),
                Vector3::new(rng.random::<f64>() * 50.0, 3.0, -7.0),
            );
            let x = Vector3::new(rng.random::<f64>() * 80.0, rng.random::<f64>() * 80.0, 20.0);
            let moved = m.transform(&x);
            let minv = m.inverse();
            let cam = Extrinsics::new(
                e.rotation * minv.rotation,
                e.rotation * minv.translation + e.translation,
            );
            let a = project(&x, &e, &k).unwrap();
            let b = project(&moved, &cam, &k).unwrap();
            assert!((a - b).norm() < 1e-9);
        }
    }

    #[test]
    fn increments_keep_unit_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut e = Extrinsics::identity();
        for _ in 0..1_000_000 {
            let w = Vector3::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            );
            e.apply_rotation_increment(&w);
        }
        assert!((e.rotation.quaternion().norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pose_record_round_trip() {
        let e = Extrinsics::new(so3::exp(&Vector3::new(0.1, 0.2, 0.3)), Vector3::new(1.0, 2.0, 3.0));
        let k = init_intrinsics(300, 200).unwrap().with_focal_scale(1.2);
        let rec = PoseRecord::new(&e, &k);
        let json = serde_json::to_string(&rec).unwrap();
        let back: PoseRecord = serde_json::from_str(&json).unwrap();
        assert!((back.extrinsics().rotation.angle_to(&e.rotation)) < 1e-12);
        assert_eq!(back.intrinsics(), k);
    }
}
