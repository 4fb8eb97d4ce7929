//! Deformation representation: per-vertex rotation (matrix log) and
//! symmetric stretch of the local deformation gradient relative to a
//! reference mesh, and reconstruction of vertex positions from it.

mod io;
mod polar;

use std::collections::VecDeque;

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{check_len, Error, Result};
use crate::mesh::{cotangent_weights, Mesh, SparseWeights, Vec3};
use crate::par::Exec;
use crate::sparse::{SpdSolver, SymmetricBuilder};

pub use io::{load_feature, save_feature, FeatureMeta, DR_MAGIC};
pub use polar::{polar_decompose, rotation_exp, rotation_log};

/// Values stored per vertex: rotation vector (3) then the upper triangle of `S - I` (6).
pub const DR_STRIDE: usize = 9;

/// Tikhonov weight applied to rank-deficient 1-ring normal matrices.
pub const RANK_REGULARIZATION: f64 = 1e-8;

/// Eigenvalue ratio below which a 1-ring is treated as rank deficient.
const RANK_TOLERANCE: f64 = 1e-9;

/// Per-vertex deformation encoding relative to a named reference mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DrFeature {
    data: Vec<f64>,
    reference: String,
}

impl DrFeature {
    pub fn from_vec(data: Vec<f64>, reference: impl Into<String>) -> Result<Self> {
        if !data.len().is_multiple_of(DR_STRIDE) {
            return Err(Error::Format(format!(
                "feature length {} is not a multiple of {DR_STRIDE}",
                data.len()
            )));
        }
        Ok(DrFeature {
            data,
            reference: reference.into(),
        })
    }

    pub fn zeros(vertex_count: usize, reference: impl Into<String>) -> Self {
        DrFeature {
            data: vec![0.0; vertex_count * DR_STRIDE],
            reference: reference.into(),
        }
    }

    pub fn vertex_count(&self) -> usize {
        self.data.len() / DR_STRIDE
    }

    pub fn reference(&self) -> &str {
        &self.reference
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn vertex(&self, i: usize) -> &[f64] {
        &self.data[i * DR_STRIDE..(i + 1) * DR_STRIDE]
    }

    /// `theta * omega` for vertex `i`.
    pub fn rotation_vector(&self, i: usize) -> Vector3<f64> {
        let d = self.vertex(i);
        Vector3::new(d[0], d[1], d[2])
    }

    /// `S - I` for vertex `i`.
    pub fn stretch_offset(&self, i: usize) -> Matrix3<f64> {
        let d = &self.vertex(i)[3..];
        Matrix3::new(d[0], d[1], d[2], d[1], d[3], d[4], d[2], d[4], d[5])
    }

    /// The affine map `exp(theta [omega]x) * S` encoded at vertex `i`.
    pub fn transform(&self, i: usize) -> Matrix3<f64> {
        rotation_exp(&self.rotation_vector(i)) * (self.stretch_offset(i) + Matrix3::identity())
    }

    fn pack(rotation: &Vector3<f64>, stretch: &Matrix3<f64>) -> [f64; DR_STRIDE] {
        let s = stretch - Matrix3::identity();
        [
            rotation.x,
            rotation.y,
            rotation.z,
            s[(0, 0)],
            s[(0, 1)],
            s[(0, 2)],
            s[(1, 1)],
            s[(1, 2)],
            s[(2, 2)],
        ]
    }

    pub fn l1_distance(&self, other: &DrFeature) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum()
    }

    pub fn l2_distance(&self, other: &DrFeature) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

/// One 3x3 deformation gradient per reference vertex.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineField {
    pub transforms: Vec<Matrix3<f64>>,
    /// Vertices whose 1-ring normal matrix needed regularization.
    pub regularized: Vec<bool>,
}

impl AffineField {
    pub fn regularized_count(&self) -> usize {
        self.regularized.iter().filter(|&&r| r).count()
    }
}

/// Weighted least-squares map from reference 1-ring edges to deformed ones.
pub fn local_deformation_gradients(
    deformed: &Mesh,
    reference: &Mesh,
    weights: &SparseWeights,
    exec: Exec,
) -> Result<AffineField> {
    deformed.require_same_topology(reference)?;
    check_len("weights vertex count", reference.vertex_count(), weights.vertex_count())?;
    let p = deformed.vertices();
    let pr = reference.vertices();
    let out = exec.map_range(reference.vertex_count(), |i| {
        let mut q = Matrix3::zeros();
        let mut a = Matrix3::zeros();
        for (j, c) in weights.ring(i) {
            let er = pr[i] - pr[j];
            let e = p[i] - p[j];
            q += er * er.transpose() * c;
            a += e * er.transpose() * c;
        }
        let eig = q.symmetric_eigenvalues();
        let (lo, hi) = (eig.min(), eig.max());
        let deficient = !(lo > RANK_TOLERANCE * hi) || hi <= 0.0;
        if deficient {
            // Pull the unconstrained directions toward the identity.
            let reg = Matrix3::identity() * RANK_REGULARIZATION;
            q += reg;
            a += reg;
        }
        let t = match q.cholesky() {
            Some(ch) => ch.solve(&a.transpose()).transpose(),
            None => Matrix3::identity(),
        };
        (t, deficient)
    });
    let (transforms, regularized) = out.into_iter().unzip();
    Ok(AffineField {
        transforms,
        regularized,
    })
}

fn encode_field(field: &AffineField, reference: &str, exec: Exec) -> Result<DrFeature> {
    let packed = exec.map_slice(&field.transforms, |t| {
        let (r, s) = polar_decompose(t)?;
        let (axis, angle) = rotation_log(&r);
        Ok(DrFeature::pack(&(axis * angle), &s))
    });
    let mut data = Vec::with_capacity(packed.len() * DR_STRIDE);
    for p in packed {
        let p: [f64; DR_STRIDE] = p?;
        data.extend_from_slice(&p);
    }
    DrFeature::from_vec(data, reference)
}

/// Reference-mesh data reused across encodes and decodes: cotangent weights
/// and the factorized reconstruction system for one pinned vertex.
pub struct DrCodec {
    reference: Mesh,
    name: String,
    weights: SparseWeights,
    anchor_vertex: usize,
    /// Row/column of each free vertex in the reduced system.
    index: Vec<Option<usize>>,
    solver: SpdSolver,
}

impl DrCodec {
    pub fn new(reference: &Mesh, name: impl Into<String>, anchor_vertex: usize) -> Result<Self> {
        let n = reference.vertex_count();
        if anchor_vertex >= n {
            return Err(Error::OutOfRange {
                what: "anchor vertex",
                index: anchor_vertex,
                len: n,
            });
        }
        let weights = cotangent_weights(reference)?;
        check_connected(&weights, anchor_vertex)?;
        let mut index = vec![None; n];
        let mut next = 0;
        for (i, slot) in index.iter_mut().enumerate() {
            if i != anchor_vertex {
                *slot = Some(next);
                next += 1;
            }
        }
        let mut builder = SymmetricBuilder::new(n - 1);
        for i in 0..n {
            let Some(ri) = index[i] else { continue };
            builder.add_sym(ri, ri, 2.0 * weights.degree(i));
            for (j, c) in weights.ring(i) {
                if let Some(rj) = index[j] {
                    if rj > ri {
                        builder.add_sym(ri, rj, -2.0 * c);
                    }
                }
            }
        }
        let solver = SpdSolver::new(&builder.to_csc())?;
        Ok(DrCodec {
            reference: reference.clone(),
            name: name.into(),
            weights,
            anchor_vertex,
            index,
            solver,
        })
    }

    pub fn reference(&self) -> &Mesh {
        &self.reference
    }

    pub fn weights(&self) -> &SparseWeights {
        &self.weights
    }

    pub fn anchor_vertex(&self) -> usize {
        self.anchor_vertex
    }

    pub fn encode(&self, deformed: &Mesh, exec: Exec) -> Result<DrFeature> {
        let field = local_deformation_gradients(deformed, &self.reference, &self.weights, exec)?;
        encode_field(&field, &self.name, exec)
    }

    /// Reconstructs the mesh minimizing the DR energy with the anchor vertex
    /// pinned at `anchor_position`.
    pub fn decode(&self, feature: &DrFeature, anchor_position: &Vec3, exec: Exec) -> Result<Mesh> {
        let n = self.reference.vertex_count();
        check_len("feature vertex count", n, feature.vertex_count())?;
        let transforms = exec.map_range(n, |i| feature.transform(i));
        let field = AffineField {
            transforms,
            regularized: vec![false; n],
        };
        self.decode_field(&field, anchor_position, exec)
    }

    /// Solves the stationarity system of
    /// `E(P) = sum_i sum_j c_ij |(p_i - p_j) - T_i (r_i - r_j)|^2`, i.e.
    /// `2 sum_j c_ij (p_i - p_j) = sum_j c_ij (T_i + T_j)(r_i - r_j)`.
    pub fn decode_field(&self, field: &AffineField, anchor_position: &Vec3, exec: Exec) -> Result<Mesh> {
        let n = self.reference.vertex_count();
        check_len("affine field", n, field.transforms.len())?;
        let pr = self.reference.vertices();
        let rhs_rows = exec.map_range(n, |i| {
            let mut b = Vec3::zeros();
            for (j, c) in self.weights.ring(i) {
                b += (field.transforms[i] + field.transforms[j]) * (pr[i] - pr[j]) * c;
                if j == self.anchor_vertex {
                    b += anchor_position * (2.0 * c);
                }
            }
            b
        });
        let mut rhs = DMatrix::zeros(n - 1, 3);
        for (i, b) in rhs_rows.iter().enumerate() {
            if let Some(ri) = self.index[i] {
                for k in 0..3 {
                    rhs[(ri, k)] = b[k];
                }
            }
        }
        let x = self.solver.solve(&rhs);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::Solve("reconstruction produced non-finite values".into()));
        }
        let vertices = (0..n)
            .map(|i| match self.index[i] {
                Some(ri) => Vec3::new(x[(ri, 0)], x[(ri, 1)], x[(ri, 2)]),
                None => *anchor_position,
            })
            .collect();
        self.reference.with_vertices(vertices)
    }
}

fn check_connected(weights: &SparseWeights, start: usize) -> Result<()> {
    let n = weights.vertex_count();
    let mut seen = vec![false; n];
    seen[start] = true;
    let mut queue = VecDeque::from([start]);
    let mut count = 1;
    while let Some(v) = queue.pop_front() {
        for &u in weights.neighbors(v) {
            if !seen[u] {
                seen[u] = true;
                count += 1;
                queue.push_back(u);
            }
        }
    }
    if count != n {
        return Err(Error::Solve(format!(
            "mesh has {} vertices unreachable from anchor vertex {start}; each component needs an anchor",
            n - count
        )));
    }
    Ok(())
}

/// Encodes `deformed` against `reference`.
pub fn encode_dr(deformed: &Mesh, reference: &Mesh, exec: Exec) -> Result<DrFeature> {
    let weights = cotangent_weights(reference)?;
    let field = local_deformation_gradients(deformed, reference, &weights, exec)?;
    encode_field(&field, "reference", exec)
}

/// Decodes a feature with vertex `anchor.0` pinned at `anchor.1`.
pub fn decode_dr(feature: &DrFeature, reference: &Mesh, anchor: (usize, Vec3), exec: Exec) -> Result<Mesh> {
    DrCodec::new(reference, feature.reference(), anchor.0)?.decode(feature, &anchor.1, exec)
}

/// The DR energy of a candidate vertex set for a given affine field.
pub fn dr_energy(positions: &[Vec3], reference: &Mesh, weights: &SparseWeights, field: &AffineField) -> f64 {
    let pr = reference.vertices();
    let mut e = 0.0;
    for i in 0..positions.len() {
        for (j, c) in weights.ring(i) {
            let r = (positions[i] - positions[j]) - field.transforms[i] * (pr[i] - pr[j]);
            e += c * r.norm_squared();
        }
    }
    e
}
