use super::{Mesh, Vec3};
use crate::error::{Error, Result};
use crate::par::Exec;

/// Bounds applied to every per-angle cotangent.
pub const COT_CLAMP: (f64, f64) = (1e-6, 1e6);

/// Symmetric per-edge weights with aligned neighbor lists.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseWeights {
    neighbors: Vec<Vec<usize>>,
    weights: Vec<Vec<f64>>,
}

impl SparseWeights {
    /// Builds from undirected `(i, j, c)` triples; each pair must appear once.
    pub fn from_edges(n: usize, edges: impl IntoIterator<Item = (usize, usize, f64)>) -> Self {
        let mut pairs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (i, j, c) in edges {
            pairs[i].push((j, c));
            pairs[j].push((i, c));
        }
        let mut neighbors = Vec::with_capacity(n);
        let mut weights = Vec::with_capacity(n);
        for mut p in pairs {
            p.sort_by_key(|e| e.0);
            neighbors.push(p.iter().map(|e| e.0).collect());
            weights.push(p.iter().map(|e| e.1).collect());
        }
        SparseWeights { neighbors, weights }
    }

    pub fn vertex_count(&self) -> usize {
        self.neighbors.len()
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    pub fn weights(&self, i: usize) -> &[f64] {
        &self.weights[i]
    }

    /// `(j, c_ij)` pairs of vertex `i`.
    pub fn ring(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.neighbors[i].iter().copied().zip(self.weights[i].iter().copied())
    }

    pub fn weight(&self, i: usize, j: usize) -> Option<f64> {
        self.neighbors[i].binary_search(&j).ok().map(|k| self.weights[i][k])
    }

    /// Weighted degree `sum_j c_ij`.
    pub fn degree(&self, i: usize) -> f64 {
        self.weights[i].iter().sum()
    }

    /// Applies the weighted graph Laplacian to a per-vertex field.
    pub fn apply(&self, field: &[Vec3], exec: Exec) -> Vec<Vec3> {
        exec.map_range(self.neighbors.len(), |i| {
            self.ring(i)
                .fold(Vec3::zeros(), |acc, (j, c)| acc + (field[i] - field[j]) * c)
        })
    }
}

fn clamped_cot(apex: &Vec3, a: &Vec3, b: &Vec3) -> f64 {
    let u = a - apex;
    let v = b - apex;
    let cross = u.cross(&v).norm();
    let cot = if cross > 0.0 { u.dot(&v) / cross } else { COT_CLAMP.1 };
    cot.clamp(COT_CLAMP.0, COT_CLAMP.1)
}

/// Half the sum of the cotangents of the angles opposite each edge.
pub fn cotangent_weights(mesh: &Mesh) -> Result<SparseWeights> {
    let v = mesh.vertices();
    let edge_faces = mesh.edge_faces();
    let mut edges = Vec::with_capacity(edge_faces.len());
    for (&(i, j), faces) in &edge_faces {
        if faces.len() > 2 {
            return Err(Error::NonManifold(i, j, faces.len()));
        }
        let mut c = 0.0;
        for &fi in faces {
            let f = mesh.faces()[fi];
            let apex = f.iter().copied().find(|&k| k != i && k != j).unwrap();
            c += 0.5 * clamped_cot(&v[apex], &v[i], &v[j]);
        }
        edges.push((i, j, c));
    }
    Ok(SparseWeights::from_edges(mesh.vertex_count(), edges))
}

/// Per-vertex `sum_j c_ij (p_i - p_j)`.
pub fn laplacian_coords(mesh: &Mesh, weights: &SparseWeights, exec: Exec) -> Result<Vec<Vec3>> {
    crate::error::check_len("weights vertex count", mesh.vertex_count(), weights.vertex_count())?;
    Ok(weights.apply(mesh.vertices(), exec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn equilateral_pair() -> Mesh {
        let h = 3f64.sqrt() / 2.0;
        Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.5, h, 0.0),
                Vec3::new(0.5, -h, 0.0),
            ],
            vec![[0, 1, 2], [1, 0, 3]],
        )
        .unwrap()
    }

    #[test]
    fn single_equilateral_triangle() {
        let m = Mesh::new(equilateral_pair().vertices()[..3].to_vec(), vec![[0, 1, 2]]).unwrap();
        let w = cotangent_weights(&m).unwrap();
        let expected = 0.5 / 3f64.sqrt();
        for (i, j) in [(0, 1), (1, 2), (0, 2)] {
            assert!((w.weight(i, j).unwrap() - expected).abs() < 1e-12);
        }
        assert!((expected - 0.28868).abs() < 1e-5);
    }

    #[test]
    fn interior_edge_sums_two_halves() {
        let w = cotangent_weights(&equilateral_pair()).unwrap();
        assert!((w.weight(0, 1).unwrap() - 1.0 / 3f64.sqrt()).abs() < 1e-12);
        assert!((w.weight(0, 2).unwrap() - 0.5 / 3f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn right_angle_gives_floor() {
        let m = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let w = cotangent_weights(&m).unwrap();
        // cot(90) = 0, clamped to the floor
        assert!(w.weight(1, 2).unwrap() <= COT_CLAMP.0);
        assert!((w.weight(0, 1).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn non_manifold_edge_rejected() {
        let m = Mesh::new(
            vec![
                Vec3::new(0.0, 0.0, 0.0),
                Vec3::new(1.0, 0.0, 0.0),
                Vec3::new(0.0, 1.0, 0.0),
                Vec3::new(0.0, -1.0, 0.0),
                Vec3::new(0.0, 0.0, 1.0),
            ],
            vec![[0, 1, 2], [1, 0, 3], [0, 1, 4]],
        )
        .unwrap();
        assert!(matches!(cotangent_weights(&m), Err(Error::NonManifold(0, 1, 3))));
    }

    #[test]
    fn hexagon_center_has_zero_laplacian() {
        let mut v = vec![Vec3::zeros()];
        for k in 0..6 {
            let a = k as f64 * std::f64::consts::PI / 3.0;
            v.push(Vec3::new(a.cos(), a.sin(), 0.0));
        }
        let faces = (0..6).map(|k| [0, 1 + k, 1 + (k + 1) % 6]).collect();
        let m = Mesh::new(v, faces).unwrap();
        let w = cotangent_weights(&m).unwrap();
        let l = laplacian_coords(&m, &w, Exec::Sequential).unwrap();
        assert!(l[0].norm() < 1e-12);
    }

    #[test]
    fn matches_dense_operator_and_is_symmetric() {
        let m = crate::synth::sphere(3, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = m.map_vertices(|p| p * (1.0 + 0.1 * rng.random::<f64>()));
        assert!(m.vertex_count() >= 50);
        let w = cotangent_weights(&m).unwrap();
        let n = m.vertex_count();
        let mut dense = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for (j, c) in w.ring(i) {
                assert_eq!(w.weight(j, i), Some(c));
                dense[(i, i)] += c;
                dense[(i, j)] -= c;
            }
        }
        let mut pos = DMatrix::<f64>::zeros(n, 3);
        for (i, p) in m.vertices().iter().enumerate() {
            for k in 0..3 {
                pos[(i, k)] = p[k];
            }
        }
        let expected = &dense * &pos;
        let got = laplacian_coords(&m, &w, Exec::Parallel).unwrap();
        for i in 0..n {
            for k in 0..3 {
                assert!((expected[(i, k)] - got[i][k]).abs() < 1e-12);
            }
        }
        let shifted = m.translated(&Vec3::new(10.0, -3.0, 7.0));
        let got2 = laplacian_coords(&shifted, &w, Exec::Parallel).unwrap();
        for (a, b) in got.iter().zip(&got2) {
            assert!((a - b).norm() < 1e-12);
        }
    }
}
