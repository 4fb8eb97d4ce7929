//! Residual vectors and sparse Jacobian rows of the three energy terms.
//!
//! Columns follow [`ParamLayout`]: `[dP (3n) | beta (M) | t (3) | omega (3) | f_s]`,
//! where `omega` is a left rotation increment.

use nalgebra::{Matrix2x3, Matrix3};

use super::{BlendshapeBasis, FitParams, LandmarkSet, SolverConfig};
use crate::camera::{so3, Intrinsics};
use crate::error::Result;
use crate::mesh::{cotangent_weights, Mesh, SparseWeights, Vec3};

/// Residual used for both coordinates of a landmark behind the camera.
pub const BEHIND_CAMERA_RESIDUAL: f64 = 1e6;

/// Column offsets of the stacked parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamLayout {
    pub vertices: usize,
    pub blendshapes: usize,
}

impl ParamLayout {
    pub fn delta(&self, v: usize, k: usize) -> usize {
        3 * v + k
    }
    pub fn beta(&self, k: usize) -> usize {
        3 * self.vertices + k
    }
    pub fn translation(&self, k: usize) -> usize {
        3 * self.vertices + self.blendshapes + k
    }
    pub fn rotation(&self, k: usize) -> usize {
        3 * self.vertices + self.blendshapes + 3 + k
    }
    pub fn focal_scale(&self) -> usize {
        3 * self.vertices + self.blendshapes + 6
    }
    /// First column of the dense (non-corrective) block.
    pub fn global_offset(&self) -> usize {
        3 * self.vertices
    }
    pub fn global_len(&self) -> usize {
        self.blendshapes + 7
    }
    pub fn len(&self) -> usize {
        3 * self.vertices + self.global_len()
    }
    pub fn is_empty(&self) -> bool {
        false
    }

    /// Applies the increment `step` (indexed by this layout).
    pub fn apply(&self, params: &FitParams, step: &[f64]) -> FitParams {
        let mut out = params.clone();
        for (v, d) in out.delta.iter_mut().enumerate() {
            for k in 0..3 {
                d[k] += step[self.delta(v, k)];
            }
        }
        for (k, b) in out.beta.iter_mut().enumerate() {
            *b += step[self.beta(k)];
        }
        for k in 0..3 {
            out.extrinsics.translation[k] += step[self.translation(k)];
        }
        let omega = Vec3::new(step[self.rotation(0)], step[self.rotation(1)], step[self.rotation(2)]);
        out.extrinsics.apply_rotation_increment(&omega);
        out.focal_scale += step[self.focal_scale()];
        out
    }

    /// Moves a single coordinate by `h`.
    pub fn perturbed(&self, params: &FitParams, index: usize, h: f64) -> FitParams {
        let mut step = vec![0.0; self.len()];
        step[index] = h;
        self.apply(params, &step)
    }
}

/// Residuals with optional Jacobian rows (`(column, value)` lists).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Residuals {
    pub values: Vec<f64>,
    pub rows: Vec<Vec<(usize, f64)>>,
}

impl Residuals {
    pub fn energy(&self) -> f64 {
        self.values.iter().map(|r| r * r).sum()
    }

    fn push(&mut self, value: f64, row: Option<Vec<(usize, f64)>>) {
        self.values.push(value);
        if let Some(r) = row {
            self.rows.push(r);
        }
    }

    /// Multiplies residuals and Jacobian by `s`.
    pub fn scaled(mut self, s: f64) -> Self {
        self.values.iter_mut().for_each(|v| *v *= s);
        for row in &mut self.rows {
            row.iter_mut().for_each(|(_, v)| *v *= s);
        }
        self
    }
}

/// Template, basis, camera intrinsics and weights shared by all evaluations.
#[derive(Debug, Clone)]
pub struct FitProblem {
    pub mesh: Mesh,
    pub basis: BlendshapeBasis,
    pub weights: SparseWeights,
    pub intrinsics: Intrinsics,
    pub config: SolverConfig,
    /// `L B_k` for every blendshape.
    basis_laplacian: Vec<Vec<Vec3>>,
}

impl FitProblem {
    pub fn new(mesh: Mesh, basis: BlendshapeBasis, intrinsics: Intrinsics, config: SolverConfig) -> Result<Self> {
        config.validate()?;
        basis.check_vertex_count(mesh.vertex_count())?;
        let weights = cotangent_weights(&mesh)?;
        let basis_laplacian = (0..basis.len())
            .map(|k| weights.apply(basis.shape(k), crate::Exec::default()))
            .collect();
        Ok(FitProblem {
            mesh,
            basis,
            weights,
            intrinsics,
            config,
            basis_laplacian,
        })
    }

    pub fn layout(&self) -> ParamLayout {
        ParamLayout {
            vertices: self.mesh.vertex_count(),
            blendshapes: self.basis.len(),
        }
    }

    fn face_vertex(&self, params: &FitParams, v: usize) -> Vec3 {
        self.mesh.vertices()[v] + self.basis.combine_at(&params.beta, v) + params.delta[v]
    }
}

/// Landmark term residuals `sqrt(100 / W_eye) (proj - L)`, two per landmark.
/// Returns the residuals and the number of landmarks behind the camera.
pub fn landmark_residuals(
    problem: &FitProblem,
    landmarks: &LandmarkSet,
    params: &FitParams,
    jacobian: bool,
) -> Result<(Residuals, usize)> {
    let layout = problem.layout();
    let scale = (100.0 / landmarks.eye_distance().powi(2)).sqrt();
    let f = problem.intrinsics.focal * params.focal_scale;
    let rot = params.extrinsics.rotation_matrix();
    let mut out = Residuals::default();
    let mut behind = 0;
    for (anchor, target) in landmarks.anchors.iter().zip(&landmarks.points) {
        let w = anchor.anchor.weights(&problem.mesh)?;
        let x: Vec3 = w.iter().map(|&(v, b)| problem.face_vertex(params, v) * b).sum();
        let y = rot * x + params.extrinsics.translation;
        if !(y.z > 0.0) {
            behind += 1;
            let empty = jacobian.then(Vec::new);
            out.push(BEHIND_CAMERA_RESIDUAL, empty.clone());
            out.push(BEHIND_CAMERA_RESIDUAL, empty);
            continue;
        }
        let (px, py) = (y.x / y.z, y.y / y.z);
        out.values.push(scale * (f * px + problem.intrinsics.cx - target.x));
        out.values.push(scale * (f * py + problem.intrinsics.cy - target.y));
        if !jacobian {
            continue;
        }
        let dproj = Matrix2x3::new(f / y.z, 0.0, -f * px / y.z, 0.0, f / y.z, -f * py / y.z) * scale;
        let dx = dproj * rot;
        let mut rows = [Vec::new(), Vec::new()];
        for (r, row) in rows.iter_mut().enumerate() {
            for &(v, b) in &w {
                for k in 0..3 {
                    row.push((layout.delta(v, k), dx[(r, k)] * b));
                }
            }
            for m in 0..layout.blendshapes {
                let dir: Vec3 = w.iter().map(|&(v, b)| problem.basis.shape(m)[v] * b).sum();
                row.push((layout.beta(m), (dx.row(r) * dir)[0]));
            }
            let drot = dproj * -so3::skew(&(rot * x));
            for k in 0..3 {
                row.push((layout.translation(k), dproj[(r, k)]));
                row.push((layout.rotation(k), drot[(r, k)]));
            }
            let p = if r == 0 { px } else { py };
            row.push((layout.focal_scale(), scale * problem.intrinsics.focal * p));
        }
        let [r0, r1] = rows;
        out.rows.push(r0);
        out.rows.push(r1);
    }
    Ok((out, behind))
}

/// Corrective term residuals: `L D` (3 per vertex) followed by `sqrt(lambda_d) dP`,
/// with `D = sum_k (beta_k - beta_prev_k) B_k + dP`.
pub fn corrective_residuals(problem: &FitProblem, params: &FitParams, beta_prev: &[f64], jacobian: bool) -> Residuals {
    let layout = problem.layout();
    let n = layout.vertices;
    let dbeta: Vec<f64> = params.beta.iter().zip(beta_prev).map(|(b, p)| b - p).collect();
    let disp: Vec<Vec3> = (0..n)
        .map(|v| problem.basis.combine_at(&dbeta, v) + params.delta[v])
        .collect();
    let lap = problem.weights.apply(&disp, crate::Exec::default());
    let mut out = Residuals::default();
    for (i, l) in lap.iter().enumerate() {
        for k in 0..3 {
            let row = jacobian.then(|| {
                let mut row = vec![(layout.delta(i, k), problem.weights.degree(i))];
                row.extend(problem.weights.ring(i).map(|(j, c)| (layout.delta(j, k), -c)));
                for (m, lb) in problem.basis_laplacian.iter().enumerate() {
                    if lb[i][k] != 0.0 {
                        row.push((layout.beta(m), lb[i][k]));
                    }
                }
                row
            });
            out.push(l[k], row);
        }
    }
    let s = problem.config.lambda_delta.sqrt();
    for (v, d) in params.delta.iter().enumerate() {
        for k in 0..3 {
            out.push(s * d[k], jacobian.then(|| vec![(layout.delta(v, k), s)]));
        }
    }
    out
}

/// Prior residuals: `beta_k / sigma_k`, `sqrt(lambda_f) log f_s`, `sqrt(lambda_q) q_dev`.
pub fn prior_residuals(problem: &FitProblem, params: &FitParams, jacobian: bool) -> Residuals {
    let layout = problem.layout();
    let cfg = &problem.config;
    let mut out = Residuals::default();
    for (k, (b, s)) in params.beta.iter().zip(problem.basis.sigma()).enumerate() {
        out.push(b / s, jacobian.then(|| vec![(layout.beta(k), 1.0 / s)]));
    }
    let sf = cfg.lambda_f.sqrt();
    out.push(
        sf * params.focal_scale.ln(),
        jacobian.then(|| vec![(layout.focal_scale(), sf / params.focal_scale)]),
    );
    let sq = cfg.lambda_q.sqrt();
    let dev = params.rotation_deviation();
    let jl: Matrix3<f64> = so3::left_jacobian_inv(&dev) * sq;
    for r in 0..3 {
        out.push(
            sq * dev[r],
            jacobian.then(|| (0..3).map(|k| (layout.rotation(k), jl[(r, k)])).collect()),
        );
    }
    out
}

/// `E_l` and its residuals.
pub fn landmark_energy(problem: &FitProblem, landmarks: &LandmarkSet, params: &FitParams) -> Result<(f64, Vec<f64>)> {
    let (r, _) = landmark_residuals(problem, landmarks, params, false)?;
    Ok((r.energy(), r.values))
}

/// `E_c` and its residuals.
pub fn corrective_energy(problem: &FitProblem, params: &FitParams, beta_prev: &[f64]) -> (f64, Vec<f64>) {
    let r = corrective_residuals(problem, params, beta_prev, false);
    (r.energy(), r.values)
}

/// `E_r` and its residuals.
pub fn prior_energy(problem: &FitProblem, params: &FitParams) -> (f64, Vec<f64>) {
    let r = prior_residuals(problem, params, false);
    (r.energy(), r.values)
}

/// Per-term energies at one parameter point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnergyBreakdown {
    pub landmark: f64,
    pub corrective: f64,
    pub prior: f64,
    pub total: f64,
    pub behind_camera: usize,
}

pub fn total_energy(
    problem: &FitProblem,
    landmarks: &LandmarkSet,
    params: &FitParams,
    beta_prev: &[f64],
) -> Result<EnergyBreakdown> {
    let (l, behind) = landmark_residuals(problem, landmarks, params, false)?;
    let landmark = l.energy();
    let corrective = corrective_energy(problem, params, beta_prev).0;
    let prior = prior_energy(problem, params).0;
    Ok(EnergyBreakdown {
        landmark,
        corrective,
        prior,
        total: problem.config.combine(landmark, corrective, prior),
        behind_camera: behind,
    })
}

/// All residuals of the weighted objective with Jacobian rows.
pub(crate) fn stacked_residuals(
    problem: &FitProblem,
    landmarks: &LandmarkSet,
    params: &FitParams,
    beta_prev: &[f64],
) -> Result<Residuals> {
    let (mut all, _) = landmark_residuals(problem, landmarks, params, true)?;
    let cfg = &problem.config;
    for part in [
        corrective_residuals(problem, params, beta_prev, true).scaled(cfg.omega_c.sqrt()),
        prior_residuals(problem, params, true).scaled(cfg.omega_r.sqrt()),
    ] {
        all.values.extend(part.values);
        all.rows.extend(part.rows);
    }
    Ok(all)
}
