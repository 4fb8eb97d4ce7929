//! Joint fit of expression weights, a per-vertex corrective field and the
//! camera to detected 2D landmarks.
//!
//! The reconstructed face is `P_F = P + sum_k beta_k B_k + dP`. The objective
//! is `E = E_l + w_c E_c + w_r E_r` with
//!
//! * `E_l = (100 / W_eye) sum_i |project(sample(P_F, m_i)) - L_i|^2`
//! * `E_c = |L(P_F) - L(P + sum_k beta_prev_k B_k)|^2 + lambda_d |dP|^2`
//! * `E_r = sum_k beta_k^2 / sigma_k^2 + lambda_f log^2(f_s) + lambda_q |q_dev|^2`
//!
//! where `L` is the cotangent Laplacian of the template and `q_dev` is the
//! rotation vector of the current rotation relative to the initial one.

mod contour;
mod energy;
mod fit;

use std::path::Path;
use std::sync::Arc;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};

use crate::camera::{so3, Extrinsics};
use crate::error::{Error, Result};
use crate::mesh::{BarycentricAnchor, Mesh, Vec2, Vec3};

pub use contour::slide_contour_anchors;
pub use energy::{
    corrective_energy, corrective_residuals, landmark_energy, landmark_residuals, prior_energy, prior_residuals,
    total_energy, EnergyBreakdown, FitProblem, ParamLayout, Residuals, BEHIND_CAMERA_RESIDUAL,
};
pub use fit::{fit, fit_from, initial_params, FitDiagnostics, FitOutput, IterationRecord};

/// Expression displacement fields with their prior scales.
#[derive(Debug, Clone, PartialEq)]
pub struct BlendshapeBasis {
    shapes: Vec<Vec<Vec3>>,
    sigma: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct BasisFile {
    sigma: Vec<f64>,
    shapes: Vec<Vec<[f64; 3]>>,
}

impl BlendshapeBasis {
    pub fn new(shapes: Vec<Vec<Vec3>>, sigma: Vec<f64>) -> Result<Self> {
        crate::error::check_len("blendshape sigma", shapes.len(), sigma.len())?;
        if let Some(s) = sigma.iter().find(|&&s| !(s > 0.0)) {
            return Err(Error::InvalidArgument(format!("blendshape sigma {s} must be positive")));
        }
        if let Some(first) = shapes.first() {
            for s in &shapes {
                crate::error::check_len("blendshape vertex count", first.len(), s.len())?;
            }
        }
        Ok(BlendshapeBasis { shapes, sigma })
    }

    pub fn empty(vertex_count: usize) -> Self {
        let _ = vertex_count;
        BlendshapeBasis {
            shapes: Vec::new(),
            sigma: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    pub fn shape(&self, k: usize) -> &[Vec3] {
        &self.shapes[k]
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn check_vertex_count(&self, n: usize) -> Result<()> {
        match self.shapes.first() {
            Some(s) => crate::error::check_len("blendshape vertex count", n, s.len()),
            None => Ok(()),
        }
    }

    /// `sum_k weights_k B_k[v]`.
    pub fn combine_at(&self, weights: &[f64], v: usize) -> Vec3 {
        self.shapes
            .iter()
            .zip(weights)
            .fold(Vec3::zeros(), |acc, (s, w)| acc + s[v] * *w)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file: BasisFile = read_json(path.as_ref())?;
        let shapes = file
            .shapes
            .into_iter()
            .map(|s| s.into_iter().map(Vec3::from).collect())
            .collect();
        BlendshapeBasis::new(shapes, file.sigma)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = BasisFile {
            sigma: self.sigma.clone(),
            shapes: self
                .shapes
                .iter()
                .map(|s| s.iter().map(|v| [v.x, v.y, v.z]).collect())
                .collect(),
        };
        write_json(path.as_ref(), &file)
    }
}

/// Where one landmark sits on the template.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LandmarkAnchor {
    pub anchor: BarycentricAnchor,
    /// Face-outline landmark whose anchor slides along `strip`.
    pub contour: bool,
    pub strip: Option<usize>,
}

/// Template anchors for every landmark of the mark-up, in mark-up order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorTable {
    pub anchors: Vec<LandmarkAnchor>,
    /// Candidate anchors for contour sliding, ordered along the surface.
    pub strips: Vec<Vec<BarycentricAnchor>>,
    /// Mark-up indices of the two outermost eye corners.
    pub eye_corners: (usize, usize),
}

impl AnchorTable {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let table: AnchorTable = read_json(path.as_ref())?;
        table.validate()?;
        Ok(table)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.anchors.len();
        for (a, b) in [self.eye_corners].iter().map(|&(a, b)| (a, b)) {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidArgument(format!(
                    "eye corners ({a}, {b}) invalid for {n} landmarks"
                )));
            }
        }
        for (i, a) in self.anchors.iter().enumerate() {
            BarycentricAnchor::new(a.anchor.face, a.anchor.bary)?;
            if let Some(s) = a.strip {
                if s >= self.strips.len() {
                    return Err(Error::OutOfRange {
                        what: "contour strip",
                        index: s,
                        len: self.strips.len(),
                    });
                }
                if !a.contour {
                    return Err(Error::InvalidArgument(format!(
                        "landmark {i} has a strip but is not a contour landmark"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn check_mesh(&self, mesh: &Mesh) -> Result<()> {
        let faces = mesh.face_count();
        let all = self
            .anchors
            .iter()
            .map(|a| a.anchor.face)
            .chain(self.strips.iter().flatten().map(|a| a.face));
        for f in all {
            if f >= faces {
                return Err(Error::OutOfRange {
                    what: "anchor face",
                    index: f,
                    len: faces,
                });
            }
        }
        Ok(())
    }
}

/// Detected landmarks paired with their (possibly slid) template anchors.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    pub points: Vec<Vec2>,
    pub anchors: Vec<LandmarkAnchor>,
    pub strips: Arc<Vec<Vec<BarycentricAnchor>>>,
    pub eye_corners: (usize, usize),
}

impl LandmarkSet {
    /// Pairs `points[i]` with `table.anchors[i]`; counts must agree.
    pub fn new(points: Vec<Vec2>, table: &AnchorTable) -> Result<Self> {
        crate::error::check_len("landmark count (anchor table)", table.anchors.len(), points.len())?;
        table.validate()?;
        let set = LandmarkSet {
            points,
            anchors: table.anchors.clone(),
            strips: Arc::new(table.strips.clone()),
            eye_corners: table.eye_corners,
        };
        if !(set.eye_distance() > 0.0) {
            return Err(Error::InvalidArgument("outer eye corners coincide".into()));
        }
        Ok(set)
    }

    /// Picks the anchor-table rows named by `indices` (mark-up indices).
    pub fn from_indexed(points: Vec<Vec2>, indices: &[usize], table: &AnchorTable) -> Result<Self> {
        crate::error::check_len("landmark indices", points.len(), indices.len())?;
        table.validate()?;
        let mut anchors = Vec::with_capacity(indices.len());
        for &i in indices {
            anchors.push(*table.anchors.get(i).ok_or(Error::OutOfRange {
                what: "landmark index",
                index: i,
                len: table.anchors.len(),
            })?);
        }
        let find = |m: usize| {
            indices
                .iter()
                .position(|&i| i == m)
                .ok_or_else(|| Error::Missing(format!("eye-corner landmark {m} not among detected landmarks")))
        };
        let set = LandmarkSet {
            points,
            anchors,
            strips: Arc::new(table.strips.clone()),
            eye_corners: (find(table.eye_corners.0)?, find(table.eye_corners.1)?),
        };
        if !(set.eye_distance() > 0.0) {
            return Err(Error::InvalidArgument("outer eye corners coincide".into()));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Pixel distance between the outermost eye corners.
    pub fn eye_distance(&self) -> f64 {
        (self.points[self.eye_corners.0] - self.points[self.eye_corners.1]).norm()
    }
}

/// Landmark input file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LandmarkFile {
    /// Name of the mark-up scheme, e.g. "68" or "104".
    pub markup: String,
    pub points: Vec<[f64; 2]>,
    /// Mark-up index of each point; when absent, points follow mark-up order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
}

impl LandmarkFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }

    pub fn into_set(self, table: &AnchorTable) -> Result<LandmarkSet> {
        let points = self.points.iter().map(|p| Vec2::new(p[0], p[1])).collect();
        match &self.indices {
            Some(idx) => LandmarkSet::from_indexed(points, idx, table),
            None => LandmarkSet::new(points, table),
        }
    }
}

/// The optimization state `[beta, dP, t, q, f_s]`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitParams {
    pub beta: Vec<f64>,
    pub delta: Vec<Vec3>,
    pub extrinsics: Extrinsics,
    pub focal_scale: f64,
    /// Rotation the rotation prior is centered on (the initial estimate).
    pub rotation_reference: UnitQuaternion<f64>,
}

impl FitParams {
    pub fn neutral(vertex_count: usize, blendshapes: usize, extrinsics: Extrinsics) -> Self {
        FitParams {
            beta: vec![0.0; blendshapes],
            delta: vec![Vec3::zeros(); vertex_count],
            extrinsics,
            focal_scale: 1.0,
            rotation_reference: extrinsics.rotation,
        }
    }

    /// `P + sum_k beta_k B_k + dP`.
    pub fn face_vertices(&self, mesh: &Mesh, basis: &BlendshapeBasis) -> Vec<Vec3> {
        mesh.vertices()
            .iter()
            .enumerate()
            .map(|(v, p)| p + basis.combine_at(&self.beta, v) + self.delta[v])
            .collect()
    }

    pub fn face_mesh(&self, mesh: &Mesh, basis: &BlendshapeBasis) -> Result<Mesh> {
        mesh.with_vertices(self.face_vertices(mesh, basis))
    }

    /// Rotation vector of the current rotation relative to the reference.
    pub fn rotation_deviation(&self) -> Vec3 {
        so3::log(&(self.extrinsics.rotation * self.rotation_reference.inverse()))
    }

    pub fn is_finite(&self) -> bool {
        self.beta.iter().all(|b| b.is_finite())
            && self.delta.iter().all(|d| d.iter().all(|c| c.is_finite()))
            && self.extrinsics.translation.iter().all(|c| c.is_finite())
            && self.focal_scale.is_finite()
    }
}

/// Serialized fit result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub beta: Vec<f64>,
    pub delta: Vec<[f64; 3]>,
    pub pose: crate::camera::PoseRecord,
    /// Rotation prior center as `(w, x, y, z)`.
    pub rotation_reference: [f64; 4],
}

impl FitRecord {
    pub fn new(params: &FitParams, intr: &crate::camera::Intrinsics) -> Self {
        let q = params.rotation_reference.quaternion();
        FitRecord {
            beta: params.beta.clone(),
            delta: params.delta.iter().map(|d| [d.x, d.y, d.z]).collect(),
            pose: crate::camera::PoseRecord::new(&params.extrinsics, &intr.with_focal_scale(params.focal_scale)),
            rotation_reference: [q.w, q.i, q.j, q.k],
        }
    }

    pub fn params(&self) -> FitParams {
        let [w, x, y, z] = self.rotation_reference;
        FitParams {
            beta: self.beta.clone(),
            delta: self.delta.iter().map(|&d| Vec3::from(d)).collect(),
            extrinsics: self.pose.extrinsics(),
            focal_scale: self.pose.focal_scale,
            rotation_reference: UnitQuaternion::new_normalize(nalgebra::Quaternion::new(w, x, y, z)),
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        read_json(path.as_ref())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_json(path.as_ref(), self)
    }
}

/// Weights, regularizers, iteration counts and damping schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    /// Outer iterations (contour sliding + Gauss-Newton).
    pub iterations: usize,
    pub omega_c: f64,
    pub omega_r: f64,
    pub lambda_delta: f64,
    pub lambda_f: f64,
    pub lambda_q: f64,
    /// Gauss-Newton steps inside each outer iteration.
    pub steps_per_iteration: usize,
    pub damping_init: f64,
    pub damping_factor: f64,
    pub max_damping_retries: usize,
    /// Stop stepping when the relative energy decrease falls below this.
    pub tolerance: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            iterations: 5,
            omega_c: 25.0,
            omega_r: 10.0,
            lambda_delta: 4.0,
            lambda_f: 5.0,
            lambda_q: 5.0,
            steps_per_iteration: 4,
            damping_init: 1e-3,
            damping_factor: 10.0,
            max_damping_retries: 10,
            tolerance: 1e-12,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.omega_c,
            self.omega_r,
            self.lambda_delta,
            self.lambda_f,
            self.lambda_q,
            self.damping_init,
        ];
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("solver weights must be finite and >= 0".into()));
        }
        if self.iterations == 0 {
            return Err(Error::InvalidArgument("at least one iteration is required".into()));
        }
        if !(self.damping_factor > 1.0) {
            return Err(Error::InvalidArgument("damping factor must exceed 1".into()));
        }
        Ok(())
    }

    /// `E_l + w_c E_c + w_r E_r`.
    pub fn combine(&self, landmark: f64, corrective: f64, prior: f64) -> f64 {
        landmark + self.omega_c * corrective + self.omega_r * prior
    }
}

pub(crate) fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_constants() {
        let c = SolverConfig::default();
        assert_eq!(
            (
                c.omega_c,
                c.omega_r,
                c.lambda_delta,
                c.lambda_f,
                c.lambda_q,
                c.iterations
            ),
            (25.0, 10.0, 4.0, 5.0, 5.0, 5)
        );
        assert_eq!(c.combine(1.0, 1.0, 1.0), 36.0);
        assert_eq!(c.combine(0.0, 0.0, 0.0), 0.0);
    }

    #[test]
    fn basis_validation() {
        assert!(BlendshapeBasis::new(vec![vec![Vec3::zeros(); 3]], vec![0.0]).is_err());
        assert!(BlendshapeBasis::new(vec![vec![Vec3::zeros(); 3], vec![Vec3::zeros(); 2]], vec![1.0, 1.0]).is_err());
    }

    #[test]
    fn landmark_count_must_match_table() {
        let assets = crate::synth::head_assets(crate::synth::HeadSpec::default());
        let pts = vec![Vec2::new(0.0, 0.0); 10];
        assert!(LandmarkSet::new(pts, &assets.anchors).is_err());
    }

    #[test]
    fn indexed_landmarks_remap_eye_corners() {
        let assets = crate::synth::head_assets(crate::synth::HeadSpec::default());
        let idx: Vec<usize> = (30..50).collect();
        let pts: Vec<Vec2> = idx.iter().map(|&i| Vec2::new(i as f64, 0.0)).collect();
        let set = LandmarkSet::from_indexed(pts, &idx, &assets.anchors).unwrap();
        assert_eq!(set.eye_corners, (6, 15));
        assert_eq!(set.eye_distance(), 9.0);
        let missing: Vec<usize> = (0..20).collect();
        let pts = vec![Vec2::zeros(); 20];
        assert!(matches!(
            LandmarkSet::from_indexed(pts, &missing, &assets.anchors),
            Err(Error::Missing(_))
        ));
    }
}
