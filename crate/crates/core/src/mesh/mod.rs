//! Triangle meshes with a fixed topology, plus the geometric operators the
//! rest of the crate is built on.

mod anchor;
mod obj;
mod weights;

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};

pub use anchor::{sample_surface, BarycentricAnchor};
pub use obj::{format_float, load_mesh, parse_obj, save_labels, save_mesh, write_obj};
pub use weights::{cotangent_weights, laplacian_coords, SparseWeights, COT_CLAMP};

pub type Vec3 = Vector3<f64>;
pub type Vec2 = Vector2<f64>;

/// Label naming the nose-tip vertex.
pub const NOSE_TIP: &str = "nose_tip";
/// Label naming the vertices of the facial area around the nose tip.
pub const FACIAL_AREA: &str = "facial_area";
/// Radius (mm) of the facial area around the nose tip.
pub const FACIAL_AREA_RADIUS: f64 = 95.0;

/// A triangle mesh. Vertex positions may be replaced, the triangulation may not.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    faces: Arc<Vec<[usize; 3]>>,
    uv: Option<Arc<Vec<Vec2>>>,
    labels: BTreeMap<String, Vec<usize>>,
}

impl Mesh {
    pub fn new(vertices: Vec<Vec3>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(Error::InvalidMesh(format!(
                        "face {fi} references vertex {v}, mesh has {n}"
                    )));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::InvalidMesh(format!("face {fi} is degenerate: {f:?}")));
            }
        }
        if let Some((i, _)) = vertices
            .iter()
            .enumerate()
            .find(|(_, p)| !p.iter().all(|c| c.is_finite()))
        {
            return Err(Error::InvalidMesh(format!("vertex {i} is not finite")));
        }
        Ok(Mesh {
            vertices,
            faces: Arc::new(faces),
            uv: None,
            labels: BTreeMap::new(),
        })
    }

    pub fn with_uv(mut self, uv: Vec<Vec2>) -> Result<Self> {
        crate::error::check_len("uv coordinates", self.vertices.len(), uv.len())?;
        self.uv = Some(Arc::new(uv));
        Ok(self)
    }

    pub fn with_label(mut self, name: impl Into<String>, indices: Vec<usize>) -> Result<Self> {
        self.set_label(name, indices)?;
        Ok(self)
    }

    pub fn set_label(&mut self, name: impl Into<String>, indices: Vec<usize>) -> Result<()> {
        let n = self.vertices.len();
        if let Some(&bad) = indices.iter().find(|&&i| i >= n) {
            return Err(Error::OutOfRange {
                what: "label vertex",
                index: bad,
                len: n,
            });
        }
        self.labels.insert(name.into(), indices);
        Ok(())
    }

    /// Same topology, UVs and labels with new vertex positions.
    pub fn with_vertices(&self, vertices: Vec<Vec3>) -> Result<Self> {
        crate::error::check_len("vertex count", self.vertices.len(), vertices.len())?;
        Ok(Mesh {
            vertices,
            faces: Arc::clone(&self.faces),
            uv: self.uv.clone(),
            labels: self.labels.clone(),
        })
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn faces(&self) -> &[[usize; 3]] {
        &self.faces
    }

    pub fn uv(&self) -> Option<&[Vec2]> {
        self.uv.as_deref().map(|v| v.as_slice())
    }

    pub fn labels(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.labels
    }

    pub fn label(&self, name: &str) -> Option<&[usize]> {
        self.labels.get(name).map(|v| v.as_slice())
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// True if both meshes share the same triangulation.
    pub fn same_topology(&self, other: &Mesh) -> bool {
        self.vertices.len() == other.vertices.len()
            && (Arc::ptr_eq(&self.faces, &other.faces) || self.faces == other.faces)
    }

    pub(crate) fn require_same_topology(&self, other: &Mesh) -> Result<()> {
        if !self.same_topology(other) {
            return Err(Error::InvalidMesh(format!(
                "topology mismatch ({} vs {} vertices, {} vs {} faces)",
                self.vertex_count(),
                other.vertex_count(),
                self.face_count(),
                other.face_count()
            )));
        }
        Ok(())
    }

    pub fn triangle(&self, face: usize) -> [Vec3; 3] {
        let [a, b, c] = self.faces[face];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn bounding_box(&self) -> (Vec3, Vec3) {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        if self.vertices.is_empty() {
            return 0.0;
        }
        let (lo, hi) = self.bounding_box();
        (hi - lo).norm()
    }

    pub fn centroid(&self) -> Vec3 {
        let sum: Vec3 = self.vertices.iter().sum();
        sum / self.vertices.len().max(1) as f64
    }

    pub fn translated(&self, t: &Vec3) -> Mesh {
        self.map_vertices(|p| p + t)
    }

    /// Applies `x -> rotation * x + translation` to every vertex.
    pub fn transformed(&self, rotation: &Matrix3<f64>, translation: &Vec3) -> Mesh {
        self.map_vertices(|p| rotation * p + translation)
    }

    pub fn map_vertices(&self, f: impl FnMut(&Vec3) -> Vec3) -> Mesh {
        Mesh {
            vertices: self.vertices.iter().map(f).collect(),
            faces: Arc::clone(&self.faces),
            uv: self.uv.clone(),
            labels: self.labels.clone(),
        }
    }

    /// Sorted 1-ring neighbor lists.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let mut ring = vec![Vec::new(); self.vertices.len()];
        for f in self.faces.iter() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                ring[a].push(b);
                ring[b].push(a);
            }
        }
        for r in &mut ring {
            r.sort_unstable();
            r.dedup();
        }
        ring
    }

    /// Map from undirected edge `(min, max)` to the faces containing it.
    pub fn edge_faces(&self) -> BTreeMap<(usize, usize), Vec<usize>> {
        let mut map: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
        for (fi, f) in self.faces.iter().enumerate() {
            for k in 0..3 {
                let (a, b) = (f[k], f[(k + 1) % 3]);
                map.entry((a.min(b), a.max(b))).or_default().push(fi);
            }
        }
        map
    }

    /// Unit area-weighted vertex normals (counter-clockwise faces point outward).
    pub fn vertex_normals(&self) -> Vec<Vec3> {
        let mut normals = vec![Vec3::zeros(); self.vertices.len()];
        for f in self.faces.iter() {
            let [a, b, c] = *f;
            let n = (self.vertices[b] - self.vertices[a]).cross(&(self.vertices[c] - self.vertices[a]));
            for v in [a, b, c] {
                normals[v] += n;
            }
        }
        for n in &mut normals {
            let len = n.norm();
            if len > 0.0 {
                *n /= len;
            }
        }
        normals
    }

    /// Adds the facial-area label (vertices within `radius` of the nose tip)
    /// unless it is already present. No-op without a nose-tip label.
    pub fn ensure_facial_area(&mut self, radius: f64) {
        if self.labels.contains_key(FACIAL_AREA) {
            return;
        }
        let Some(&tip) = self.label(NOSE_TIP).and_then(|l| l.first()) else {
            return;
        };
        let center = self.vertices[tip];
        let area: Vec<usize> = (0..self.vertices.len())
            .filter(|&i| (self.vertices[i] - center).norm() <= radius)
            .collect();
        self.labels.insert(FACIAL_AREA.to_string(), area);
    }
}
