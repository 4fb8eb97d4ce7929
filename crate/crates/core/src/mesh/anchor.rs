use serde::{Deserialize, Serialize};

use super::{Mesh, Vec3};
use crate::error::{Error, Result};

/// A point on a mesh surface given by a face and barycentric weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarycentricAnchor {
    pub face: usize,
    pub bary: [f64; 3],
}

impl BarycentricAnchor {
    pub fn new(face: usize, bary: [f64; 3]) -> Result<Self> {
        let sum: f64 = bary.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidArgument(format!(
                "barycentric weights {bary:?} sum to {sum}"
            )));
        }
        if bary.iter().any(|&b| !(-1e-12..=1.0 + 1e-12).contains(&b)) {
            return Err(Error::InvalidArgument(format!(
                "barycentric weights {bary:?} outside [0, 1]"
            )));
        }
        Ok(BarycentricAnchor { face, bary })
    }

    /// Anchor sitting exactly on corner `k` of `face`.
    pub fn corner(face: usize, k: usize) -> Self {
        let mut bary = [0.0; 3];
        bary[k] = 1.0;
        BarycentricAnchor { face, bary }
    }

    /// `(vertex, weight)` pairs of the anchored triangle.
    pub fn weights(&self, mesh: &Mesh) -> Result<[(usize, f64); 3]> {
        let f = mesh.faces().get(self.face).ok_or(Error::OutOfRange {
            what: "face",
            index: self.face,
            len: mesh.face_count(),
        })?;
        Ok([(f[0], self.bary[0]), (f[1], self.bary[1]), (f[2], self.bary[2])])
    }

    /// Evaluates the anchor on an arbitrary per-vertex field.
    pub fn interpolate(&self, mesh: &Mesh, field: &[Vec3]) -> Result<Vec3> {
        let w = self.weights(mesh)?;
        Ok(w.iter().map(|&(v, b)| field[v] * b).sum())
    }
}

/// Barycentric combination of the anchored triangle's vertex positions.
pub fn sample_surface(mesh: &Mesh, anchor: &BarycentricAnchor) -> Result<Vec3> {
    anchor.interpolate(mesh, mesh.vertices())
}
