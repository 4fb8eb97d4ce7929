//! Efficient perspective-n-point: the camera-frame points are written as
//! barycentric combinations of four (three for planar scenes) control points,
//! whose camera coordinates live in the null space of a 2n x 12 system.

use nalgebra::{DMatrix, DVector, Matrix3, Matrix6, SymmetricEigen, Vector2, Vector3, Vector6};

use super::{so3, Extrinsics, Intrinsics};
use crate::error::{Error, Result};
use crate::geometry::fit_similarity;

/// Minimum number of correspondences accepted by [`epnp_pose`].
pub const MIN_CORRESPONDENCES: usize = 6;

/// Root-mean-square pixel reprojection error; infinite if any point is behind the camera.
pub fn reprojection_rmse(
    points3d: &[Vector3<f64>],
    points2d: &[Vector2<f64>],
    extr: &Extrinsics,
    intr: &Intrinsics,
) -> f64 {
    let mut sum = 0.0;
    for (x, u) in points3d.iter().zip(points2d) {
        match super::project(x, extr, intr) {
            Ok(p) => sum += (p - u).norm_squared(),
            Err(_) => return f64::INFINITY,
        }
    }
    (sum / points3d.len().max(1) as f64).sqrt()
}

struct ControlFrame {
    world: Vec<Vector3<f64>>,
    alphas: Vec<Vec<f64>>,
}

fn control_frame(points: &[Vector3<f64>]) -> Result<ControlFrame> {
    let n = points.len() as f64;
    let centroid: Vector3<f64> = points.iter().sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    cov /= n;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let lead = eig.eigenvalues[order[0]];
    if !(lead > 0.0) || eig.eigenvalues[order[1]] <= 1e-12 * lead {
        return Err(Error::Degenerate("3D points are coincident or collinear".into()));
    }
    let planar = eig.eigenvalues[order[2]] <= 1e-10 * lead;
    let axes = if planar { 2 } else { 3 };
    let mut world = vec![centroid];
    let mut dirs = Vec::new();
    for &k in order.iter().take(axes) {
        let axis = eig.eigenvectors.column(k).into_owned();
        let d = axis * eig.eigenvalues[k].sqrt();
        world.push(centroid + d);
        dirs.push(d);
    }
    let alphas = points
        .iter()
        .map(|p| {
            let rel = p - centroid;
            // control directions are orthogonal, so coordinates are projections
            let coeff: Vec<f64> = dirs.iter().map(|d| rel.dot(d) / d.norm_squared()).collect();
            let mut a = vec![1.0 - coeff.iter().sum::<f64>()];
            a.extend(coeff);
            a
        })
        .collect();
    Ok(ControlFrame { world, alphas })
}

fn block(v: &DVector<f64>, j: usize) -> Vector3<f64> {
    Vector3::new(v[3 * j], v[3 * j + 1], v[3 * j + 2])
}

fn pair_index(nc: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::new();
    for i in 0..nc {
        for j in i + 1..nc {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Solves the control-point distance constraints for `kernel.len()` betas.
fn solve_betas(kernel: &[DVector<f64>], frame: &ControlFrame) -> Option<Vec<f64>> {
    let nc = frame.world.len();
    let dim = kernel.len();
    let pairs = pair_index(nc);
    let mut products = Vec::new();
    for a in 0..dim {
        for b in a..dim {
            products.push((a, b));
        }
    }
    if products.len() > pairs.len() {
        return None;
    }
    let diffs: Vec<Vec<Vector3<f64>>> = pairs
        .iter()
        .map(|&(i, j)| kernel.iter().map(|v| block(v, i) - block(v, j)).collect())
        .collect();
    let rho: Vec<f64> = pairs
        .iter()
        .map(|&(i, j)| (frame.world[i] - frame.world[j]).norm_squared())
        .collect();
    let mut l = DMatrix::zeros(pairs.len(), products.len());
    for (p, dv) in diffs.iter().enumerate() {
        for (c, &(a, b)) in products.iter().enumerate() {
            l[(p, c)] = if a == b {
                dv[a].dot(&dv[a])
            } else {
                2.0 * dv[a].dot(&dv[b])
            };
        }
    }
    let rhs = DVector::from_vec(rho.clone());
    let sol = l.svd(true, true).solve(&rhs, 1e-14).ok()?;
    let b11 = sol[0].abs();
    if !(b11 > 0.0) {
        return None;
    }
    let b1 = b11.sqrt();
    let mut betas = vec![b1];
    for a in 1..dim {
        let idx = products.iter().position(|&pr| pr == (0, a)).unwrap();
        betas.push(sol[idx] / b1);
    }
    // Gauss-Newton on the distance residuals.
    for _ in 0..10 {
        let mut jac = DMatrix::zeros(pairs.len(), dim);
        let mut res = DVector::zeros(pairs.len());
        for (p, dv) in diffs.iter().enumerate() {
            let comb: Vector3<f64> = dv.iter().zip(&betas).map(|(d, b)| d * *b).sum();
            res[p] = comb.norm_squared() - rho[p];
            for a in 0..dim {
                jac[(p, a)] = 2.0 * comb.dot(&dv[a]);
            }
        }
        let step = jac.svd(true, true).solve(&(-res), 1e-14).ok()?;
        for a in 0..dim {
            betas[a] += step[a];
        }
        if step.norm() < 1e-14 * betas.iter().map(|b| b * b).sum::<f64>().sqrt() {
            break;
        }
    }
    Some(betas)
}

fn pose_from_betas(
    kernel: &[DVector<f64>],
    betas: &[f64],
    frame: &ControlFrame,
    points3d: &[Vector3<f64>],
) -> Option<Extrinsics> {
    let nc = frame.world.len();
    let cam_ctrl: Vec<Vector3<f64>> = (0..nc)
        .map(|j| kernel.iter().zip(betas).map(|(v, b)| block(v, j) * *b).sum())
        .collect();
    let mut cam_pts: Vec<Vector3<f64>> = frame
        .alphas
        .iter()
        .map(|a| a.iter().zip(&cam_ctrl).map(|(w, c)| c * *w).sum())
        .collect();
    if cam_pts.iter().map(|p| p.z).sum::<f64>() < 0.0 {
        for p in &mut cam_pts {
            *p = -*p;
        }
    }
    let sim = fit_similarity(points3d, &cam_pts, false).ok()?;
    let rot = nalgebra::Rotation3::from_matrix_unchecked(sim.rotation);
    Some(Extrinsics::new(
        nalgebra::UnitQuaternion::from_rotation_matrix(&rot),
        sim.translation,
    ))
}

/// Camera pose from at least six 3D-2D correspondences, refined by a few
/// Gauss-Newton steps on the reprojection error.
pub fn epnp_pose(points3d: &[Vector3<f64>], points2d: &[Vector2<f64>], intr: &Intrinsics) -> Result<Extrinsics> {
    crate::error::check_len("2D points", points3d.len(), points2d.len())?;
    let n = points3d.len();
    if n < MIN_CORRESPONDENCES {
        return Err(Error::Degenerate(format!(
            "{n} correspondences, need at least {MIN_CORRESPONDENCES}"
        )));
    }
    let frame = control_frame(points3d)?;
    let nc = frame.world.len();
    let mut m = DMatrix::zeros(2 * n, 3 * nc);
    for (i, (alpha, px)) in frame.alphas.iter().zip(points2d).enumerate() {
        let uv = intr.normalize(px);
        for (j, &a) in alpha.iter().enumerate() {
            m[(2 * i, 3 * j)] = a;
            m[(2 * i, 3 * j + 2)] = -a * uv.x;
            m[(2 * i + 1, 3 * j + 1)] = a;
            m[(2 * i + 1, 3 * j + 2)] = -a * uv.y;
        }
    }
    let mtm = m.transpose() * &m;
    let eig = SymmetricEigen::new(mtm);
    let mut order: Vec<usize> = (0..3 * nc).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let max_dim = if nc == 4 { 3 } else { 2 };
    let mut best: Option<(f64, Extrinsics)> = None;
    for dim in 1..=max_dim {
        let kernel: Vec<DVector<f64>> = order[..dim]
            .iter()
            .map(|&k| eig.eigenvectors.column(k).into_owned())
            .collect();
        let Some(betas) = solve_betas(&kernel, &frame) else {
            continue;
        };
        let Some(pose) = pose_from_betas(&kernel, &betas, &frame, points3d) else {
            continue;
        };
        let err = reprojection_rmse(points3d, points2d, &pose, intr);
        if err.is_finite() && best.as_ref().is_none_or(|(e, _)| err < *e) {
            best = Some((err, pose));
        }
    }
    let (_, pose) = best.ok_or_else(|| Error::Degenerate("no valid EPnP solution".into()))?;
    Ok(refine_pose(points3d, points2d, intr, pose, 10))
}

/// Levenberg-Marquardt refinement of the pose on pixel reprojection error.
/// Never returns a pose worse than `init`.
pub fn refine_pose(
    points3d: &[Vector3<f64>],
    points2d: &[Vector2<f64>],
    intr: &Intrinsics,
    init: Extrinsics,
    iterations: usize,
) -> Extrinsics {
    let f = intr.effective_focal();
    let cost = |e: &Extrinsics| reprojection_rmse(points3d, points2d, e, intr);
    let mut pose = init;
    let mut current = cost(&pose);
    let mut lambda = 1e-3;
    for _ in 0..iterations {
        let mut h = Matrix6::<f64>::zeros();
        let mut g = Vector6::<f64>::zeros();
        for (x, u) in points3d.iter().zip(points2d) {
            let y = pose.transform(x);
            if y.z <= 0.0 {
                return pose;
            }
            let r = Vector2::new(f * y.x / y.z + intr.cx - u.x, f * y.y / y.z + intr.cy - u.y);
            let dproj = nalgebra::Matrix2x3::new(
                f / y.z,
                0.0,
                -f * y.x / (y.z * y.z),
                0.0,
                f / y.z,
                -f * y.y / (y.z * y.z),
            );
            let rx = pose.rotation * x;
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&(dproj * -so3::skew(&rx)));
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dproj);
            h += j.transpose() * j;
            g += j.transpose() * r;
        }
        let mut improved = false;
        for _ in 0..8 {
            let mut damped = h;
            for k in 0..6 {
                damped[(k, k)] *= 1.0 + lambda;
            }
            let Some(step) = damped.cholesky().map(|c| c.solve(&(-g))) else {
                lambda *= 10.0;
                continue;
            };
            let mut cand = pose;
            cand.apply_rotation_increment(&step.fixed_rows::<3>(0).into_owned());
            cand.translation += step.fixed_rows::<3>(3);
            let c = cost(&cand);
            if c < current {
                pose = cand;
                lambda = (lambda / 10.0).max(1e-12);
                improved = current - c > 1e-15 * current.max(1e-300);
                current = c;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    pose
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::init_intrinsics;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn scene(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
        (0..n)
            .map(|_| {
                Vector3::new(
                    rng.random_range(-80.0..80.0),
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-60.0..60.0),
                )
            })
            .collect()
    }

    fn random_pose(rng: &mut ChaCha8Rng) -> Extrinsics {
        let axis = Vector3::new(rng.random(), rng.random(), rng.random::<f64>()) - Vector3::repeat(0.5);
        Extrinsics::new(
            so3::exp(&(axis.normalize() * rng.random_range(0.0..3.0))),
            Vector3::new(
                rng.random_range(-30.0..30.0),
                rng.random_range(-30.0..30.0),
                rng.random_range(500.0..900.0),
            ),
        )
    }

    #[test]
    fn recovers_exact_pose() {
        let k = init_intrinsics(1024, 768).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let pts = scene(&mut rng, 20);
            let gt = random_pose(&mut rng);
            let px: Vec<_> = pts
                .iter()
                .map(|p| crate::camera::project(p, &gt, &k).unwrap())
                .collect();
            let est = epnp_pose(&pts, &px, &k).unwrap();
            let angle = est.rotation.angle_to(&gt.rotation).to_degrees();
            assert!(angle < 0.1, "rotation error {angle} deg");
            assert!((est.translation - gt.translation).norm() < 1e-3 * gt.translation.z);
            assert!(reprojection_rmse(&pts, &px, &est, &k) <= 1e-6);
        }
    }

    #[test]
    fn identity_pose_planar_scene() {
        let k = init_intrinsics(640, 480).unwrap();
        let pts: Vec<_> = (0..12)
            .map(|i| Vector3::new((i % 4) as f64 * 20.0 - 30.0, (i / 4) as f64 * 25.0 - 25.0, 400.0))
            .collect();
        let gt = Extrinsics::identity();
        let px: Vec<_> = pts
            .iter()
            .map(|p| crate::camera::project(p, &gt, &k).unwrap())
            .collect();
        let est = epnp_pose(&pts, &px, &k).unwrap();
        assert!(est.rotation.angle() < 1e-6);
        assert!(est.translation.norm() < 1e-6);
    }

    #[test]
    fn noisy_projections_have_small_residual() {
        let k = init_intrinsics(1024, 768).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let noise = Normal::new(0.0, 1.0).unwrap();
        for _ in 0..100 {
            let pts = scene(&mut rng, 20);
            let gt = random_pose(&mut rng);
            let px: Vec<_> = pts
                .iter()
                .map(|p| {
                    crate::camera::project(p, &gt, &k).unwrap()
                        + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng))
                })
                .collect();
            let est = epnp_pose(&pts, &px, &k).unwrap();
            assert!(reprojection_rmse(&pts, &px, &est, &k) <= 2.0);
        }
    }

    #[test]
    fn degenerate_inputs() {
        let k = init_intrinsics(100, 100).unwrap();
        let pts: Vec<_> = (0..8).map(|i| Vector3::new(i as f64, 0.0, 10.0)).collect();
        let px = vec![Vector2::new(50.0, 50.0); 8];
        assert!(matches!(epnp_pose(&pts, &px, &k), Err(Error::Degenerate(_))));
        assert!(epnp_pose(&pts[..4], &px[..4], &k).is_err());
    }
}
