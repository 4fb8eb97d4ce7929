//! Small dense geometry helpers shared across modules.

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// `dst ~ scale * rotation * src + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Similarity {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * p * self.scale + self.translation
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &Similarity) -> Similarity {
        Similarity {
            rotation: self.rotation * inner.rotation,
            translation: self.rotation * inner.translation * self.scale + self.translation,
            scale: self.scale * inner.scale,
        }
    }
}

/// Least-squares rigid or similarity transform mapping `src` onto `dst`
/// (Kabsch/Umeyama with a reflection guard).
pub fn fit_similarity(src: &[Vector3<f64>], dst: &[Vector3<f64>], allow_scale: bool) -> Result<Similarity> {
    crate::error::check_len("correspondences", src.len(), dst.len())?;
    let n = src.len();
    if n < 3 {
        return Err(Error::Degenerate(format!("{n} correspondences, need at least 3")));
    }
    let nf = n as f64;
    let cs: Vector3<f64> = src.iter().sum::<Vector3<f64>>() / nf;
    let cd: Vector3<f64> = dst.iter().sum::<Vector3<f64>>() / nf;
    let mut cov = Matrix3::zeros();
    let mut var_src = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = s - cs;
        cov += (d - cd) * a.transpose();
        var_src += a.norm_squared();
    }
    cov /= nf;
    var_src /= nf;
    if var_src <= 0.0 {
        return Err(Error::Degenerate("source points coincide".into()));
    }
    let svd = cov.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let sv = svd.singular_values;
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| sv[b].total_cmp(&sv[a]));
    // Collinear sources leave two singular values at zero.
    if sv[order[1]] <= 1e-12 * sv[order[0]].max(f64::MIN_POSITIVE) {
        return Err(Error::Degenerate("correspondences are collinear".into()));
    }
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        let k = order[2];
        d[(k, k)] = -1.0;
    }
    let rotation = u * d * vt;
    let scale = if allow_scale {
        let trace: f64 = (0..3).map(|k| sv[k] * d[(k, k)]).sum();
        trace / var_src
    } else {
        1.0
    };
    let translation = cd - rotation * cs * scale;
    Ok(Similarity {
        rotation,
        translation,
        scale,
    })
}
