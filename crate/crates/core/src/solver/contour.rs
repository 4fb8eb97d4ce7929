use super::{BlendshapeBasis, FitParams, LandmarkSet};
use crate::camera::{project, Intrinsics};
use crate::error::Result;
use crate::mesh::{sample_surface, BarycentricAnchor, Mesh};

/// Moves every contour landmark to the strip anchor whose projection is
/// closest to its detection. The current anchor always competes and wins
/// ties, so no landmark's reprojection distance grows.
pub fn slide_contour_anchors(
    mesh: &Mesh,
    basis: &BlendshapeBasis,
    landmarks: &LandmarkSet,
    params: &FitParams,
    intr: &Intrinsics,
) -> Result<LandmarkSet> {
    let face = params.face_mesh(mesh, basis)?;
    let intr = intr.with_focal_scale(params.focal_scale);
    let dist = |a: &BarycentricAnchor, target: &nalgebra::Vector2<f64>| -> Result<f64> {
        let x = sample_surface(&face, a)?;
        Ok(match project(&x, &params.extrinsics, &intr) {
            Ok(p) => (p - target).norm(),
            Err(_) => f64::INFINITY,
        })
    };
    let mut out = landmarks.clone();
    for (lm, target) in out.anchors.iter_mut().zip(&landmarks.points) {
        let Some(strip) = lm.strip.filter(|_| lm.contour) else {
            continue;
        };
        let mut best = dist(&lm.anchor, target)?;
        for cand in &landmarks.strips[strip] {
            let d = dist(cand, target)?;
            if d < best {
                best = d;
                lm.anchor = *cand;
            }
        }
    }
    Ok(out)
}
