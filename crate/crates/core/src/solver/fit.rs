use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use super::energy::stacked_residuals;
use super::{slide_contour_anchors, total_energy, EnergyBreakdown, FitParams, FitProblem, LandmarkSet, ParamLayout};
use crate::camera::{epnp_pose, Extrinsics};
use crate::error::{Error, Result};
use crate::mesh::{sample_surface, Mesh, Vec3};
use crate::sparse::{SpdSolver, SymmetricBuilder};

/// Energies after one outer iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub landmark: f64,
    pub corrective: f64,
    pub prior: f64,
    pub total: f64,
    pub damping: f64,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    pub behind_camera: usize,
}

impl IterationRecord {
    fn new(iteration: usize, e: &EnergyBreakdown, damping: f64, accepted: usize, rejected: usize) -> Self {
        IterationRecord {
            iteration,
            landmark: e.landmark,
            corrective: e.corrective,
            prior: e.prior,
            total: e.total,
            damping,
            accepted_steps: accepted,
            rejected_steps: rejected,
            behind_camera: e.behind_camera,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    /// Record 0 holds the energies at the initial parameters.
    pub iterations: Vec<IterationRecord>,
    pub pose_fallback: bool,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct FitOutput {
    pub params: FitParams,
    /// Landmarks with the final slid contour anchors.
    pub landmarks: LandmarkSet,
    pub diagnostics: FitDiagnostics,
}

impl FitOutput {
    pub fn face_mesh(&self, problem: &FitProblem) -> Result<Mesh> {
        self.params.face_mesh(&problem.mesh, &problem.basis)
    }
}

/// Neutral shape with an EPnP pose from the non-contour landmarks. Falls
/// back to a frontal pose (flag set) when EPnP fails.
pub fn initial_params(problem: &FitProblem, landmarks: &LandmarkSet) -> Result<(FitParams, bool)> {
    let layout = problem.layout();
    let mut pts3 = Vec::new();
    let mut pts2 = Vec::new();
    for (a, p) in landmarks.anchors.iter().zip(&landmarks.points) {
        if !a.contour {
            pts3.push(sample_surface(&problem.mesh, &a.anchor)?);
            pts2.push(*p);
        }
    }
    if pts3.len() < crate::camera::MIN_CORRESPONDENCES {
        pts3.clear();
        pts2.clear();
        for (a, p) in landmarks.anchors.iter().zip(&landmarks.points) {
            pts3.push(sample_surface(&problem.mesh, &a.anchor)?);
            pts2.push(*p);
        }
    }
    let (extr, fallback) = match epnp_pose(&pts3, &pts2, &problem.intrinsics) {
        Ok(e) => (e, false),
        Err(_) => (
            frontal_pose(
                &pts3,
                &pts2,
                problem.intrinsics.focal,
                problem.intrinsics.cx,
                problem.intrinsics.cy,
            ),
            true,
        ),
    };
    Ok((FitParams::neutral(layout.vertices, layout.blendshapes, extr), fallback))
}

/// Face looking down the optical axis, placed so that the landmark spreads
/// and centroids agree.
fn frontal_pose(pts3: &[Vec3], pts2: &[nalgebra::Vector2<f64>], f: f64, cx: f64, cy: f64) -> Extrinsics {
    let rot = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(Matrix3::from_diagonal(
        &Vec3::new(1.0, -1.0, -1.0),
    )));
    let n = pts3.len().max(1) as f64;
    let y: Vec<Vec3> = pts3.iter().map(|p| rot * p).collect();
    let ym: Vec3 = y.iter().sum::<Vec3>() / n;
    let um: nalgebra::Vector2<f64> = pts2.iter().sum::<nalgebra::Vector2<f64>>() / n;
    let s3 = (y.iter().map(|p| (p - ym).xy().norm_squared()).sum::<f64>() / n).sqrt();
    let s2 = (pts2.iter().map(|p| (p - um).norm_squared()).sum::<f64>() / n).sqrt();
    let depth = if s2 > 0.0 && s3 > 0.0 { f * s3 / s2 } else { 10.0 * f };
    let t = Vec3::new(
        (um.x - cx) * depth / f - ym.x,
        (um.y - cy) * depth / f - ym.y,
        depth - ym.z,
    );
    Extrinsics::new(rot, t)
}

/// Fits from [`initial_params`].
pub fn fit(problem: &FitProblem, landmarks: &LandmarkSet) -> Result<FitOutput> {
    let (init, fallback) = initial_params(problem, landmarks)?;
    let mut out = fit_from(problem, landmarks, init)?;
    if fallback {
        out.diagnostics.pose_fallback = true;
        out.diagnostics
            .warnings
            .insert(0, "EPnP failed; started from a frontal pose".into());
    }
    Ok(out)
}

/// Alternates contour sliding with damped Gauss-Newton steps. Only steps
/// that lower the total energy are taken.
pub fn fit_from(problem: &FitProblem, landmarks: &LandmarkSet, init: FitParams) -> Result<FitOutput> {
    let cfg = &problem.config;
    let layout = problem.layout();
    crate::error::check_len("beta", layout.blendshapes, init.beta.len())?;
    crate::error::check_len("corrective field", layout.vertices, init.delta.len())?;
    let mut params = init;
    let mut lms = landmarks.clone();
    let start = total_energy(problem, &lms, &params, &params.beta)?;
    if !start.total.is_finite() {
        return Err(Error::Solve("initial energy is not finite".into()));
    }
    let mut diag = FitDiagnostics {
        iterations: vec![IterationRecord::new(0, &start, cfg.damping_init, 0, 0)],
        pose_fallback: false,
        warnings: Vec::new(),
    };
    if start.behind_camera > 0 {
        diag.warnings
            .push(format!("{} landmarks behind the camera at start", start.behind_camera));
    }
    let mut mu = cfg.damping_init;
    for it in 1..=cfg.iterations {
        lms = slide_contour_anchors(&problem.mesh, &problem.basis, &lms, &params, &problem.intrinsics)?;
        let beta_prev = params.beta.clone();
        let mut energy = total_energy(problem, &lms, &params, &beta_prev)?;
        let (mut accepted, mut rejected) = (0, 0);
        for _ in 0..cfg.steps_per_iteration {
            let system = NormalEquations::assemble(problem, &lms, &params, &beta_prev, layout)?;
            let mut taken = None;
            for _ in 0..=cfg.max_damping_retries {
                let cand = system.solve(mu).map(|step| layout.apply(&params, &step));
                let e = match cand {
                    Ok(ref c) if c.focal_scale > 0.0 && c.is_finite() => {
                        Some(total_energy(problem, &lms, c, &beta_prev)?)
                    }
                    _ => None,
                };
                match (cand, e) {
                    (Ok(c), Some(e)) if e.total < energy.total => {
                        mu = (mu / cfg.damping_factor).max(1e-15);
                        taken = Some((c, e));
                        break;
                    }
                    _ => {
                        rejected += 1;
                        mu *= cfg.damping_factor;
                    }
                }
            }
            let Some((c, e)) = taken else {
                mu = mu.min(1e10);
                break;
            };
            accepted += 1;
            let gain = energy.total - e.total;
            params = c;
            energy = e;
            if gain <= cfg.tolerance * energy.total.max(f64::MIN_POSITIVE) {
                break;
            }
        }
        if energy.behind_camera > 0 {
            diag.warnings.push(format!(
                "iteration {it}: {} landmarks behind the camera",
                energy.behind_camera
            ));
        }
        log::debug!(
            "fit iteration {it}: E = {:.6e} (E_l {:.3e})",
            energy.total,
            energy.landmark
        );
        diag.iterations
            .push(IterationRecord::new(it, &energy, mu, accepted, rejected));
    }
    Ok(FitOutput {
        params,
        landmarks: lms,
        diagnostics: diag,
    })
}

/// `J^T J` split into the sparse corrective block `A`, the coupling block
/// `B` and the dense global block `C`, plus the gradient `J^T r`.
struct NormalEquations {
    a: SymmetricBuilder,
    a_diag: Vec<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    g: Vec<f64>,
    split: usize,
}

impl NormalEquations {
    fn assemble(
        problem: &FitProblem,
        lms: &LandmarkSet,
        params: &FitParams,
        beta_prev: &[f64],
        layout: ParamLayout,
    ) -> Result<Self> {
        let res = stacked_residuals(problem, lms, params, beta_prev)?;
        let split = layout.global_offset();
        let ng = layout.global_len();
        let mut a = SymmetricBuilder::new(split);
        let mut a_diag = vec![0.0; split];
        let mut b = DMatrix::zeros(split, ng);
        let mut c = DMatrix::zeros(ng, ng);
        let mut g = vec![0.0; layout.len()];
        for (row, r) in res.rows.iter().zip(&res.values) {
            for &(i, vi) in row {
                g[i] += vi * r;
                for &(j, vj) in row {
                    let v = vi * vj;
                    match (i < split, j < split) {
                        (true, true) if i <= j => {
                            a.add_sym(i, j, v);
                            if i == j {
                                a_diag[i] += v;
                            }
                        }
                        (true, false) => b[(i, j - split)] += v,
                        (false, false) => c[(i - split, j - split)] += v,
                        _ => {}
                    }
                }
            }
        }
        Ok(NormalEquations {
            a,
            a_diag,
            b,
            c,
            g,
            split,
        })
    }

    /// Solves `(H + mu diag(H)) dx = -g` through the Schur complement of `A`.
    fn solve(&self, mu: f64) -> Result<Vec<f64>> {
        let floor = 1e-12;
        let mut a = self.a.clone();
        for (i, &d) in self.a_diag.iter().enumerate() {
            a.add_sym(i, i, mu * d.max(floor));
        }
        let mut c = self.c.clone();
        for i in 0..c.nrows() {
            c[(i, i)] += mu * c[(i, i)].max(floor);
        }
        let solver = SpdSolver::new(&a.to_csc())?;
        let gd = DVector::from_column_slice(&self.g[..self.split]);
        let gg = DVector::from_column_slice(&self.g[self.split..]);
        let x = solver.solve(&self.b);
        let y = DVector::from_column_slice(&solver.solve_vec(gd.as_slice()));
        let schur = c - self.b.transpose() * &x;
        let rhs = -gg + self.b.transpose() * &y;
        let dg = schur
            .cholesky()
            .ok_or_else(|| Error::Solve("Schur complement is not positive definite".into()))?
            .solve(&rhs);
        let dd = -(y + x * &dg);
        Ok(dd.iter().chain(dg.iter()).copied().collect())
    }
}
