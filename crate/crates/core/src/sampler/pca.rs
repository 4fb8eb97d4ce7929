use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use super::GroupTag;
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Vec3};

/// Relative singular-value floor below which a direction counts as zero variance.
const RANK_TOLERANCE: f64 = 1e-12;

/// Gaussian over PCA coefficients for one group.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupStats {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
}

/// Linear shape model over flattened vertex coordinates.
#[derive(Debug, Clone)]
pub struct PcaModel {
    template: Mesh,
    pub mean: DVector<f64>,
    /// Orthonormal components as columns.
    pub components: DMatrix<f64>,
    pub stddev: Vec<f64>,
    /// Fraction of the total variance carried by each component.
    pub explained: Vec<f64>,
    pub groups: BTreeMap<GroupTag, GroupStats>,
}

fn flatten(mesh: &Mesh) -> DVector<f64> {
    DVector::from_iterator(
        3 * mesh.vertex_count(),
        mesh.vertices().iter().flat_map(|v| [v.x, v.y, v.z]),
    )
}

/// PCA of the meshes' vertex coordinates keeping at most `k` components.
/// `k` beyond the numerical rank is truncated with a warning.
pub fn pca_fit(meshes: &[Mesh], k: usize) -> Result<PcaModel> {
    if meshes.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "PCA needs at least 2 meshes, got {}",
            meshes.len()
        )));
    }
    for m in &meshes[1..] {
        meshes[0].require_same_topology(m)?;
    }
    let n = meshes.len();
    let dim = 3 * meshes[0].vertex_count();
    let mut data = DMatrix::zeros(n, dim);
    for (i, m) in meshes.iter().enumerate() {
        data.row_mut(i).copy_from(&flatten(m).transpose());
    }
    let mean: DVector<f64> = data.row_mean().transpose();
    for mut row in data.row_iter_mut() {
        row -= mean.transpose();
    }
    let svd = data.svd(false, true);
    let vt = svd.v_t.expect("requested V^T");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let s_max = order.first().map_or(0.0, |&i| svd.singular_values[i]);
    let total: f64 = svd.singular_values.iter().map(|s| s * s).sum();
    let rank = order
        .iter()
        .take_while(|&&i| s_max > 0.0 && svd.singular_values[i] > RANK_TOLERANCE * s_max)
        .count();
    if k > rank {
        log::warn!("requested {k} PCA components but the data has rank {rank}; truncating");
    }
    let keep = k.min(rank);
    let mut components = DMatrix::zeros(dim, keep);
    let mut stddev = Vec::with_capacity(keep);
    let mut explained = Vec::with_capacity(keep);
    for (c, &i) in order.iter().take(keep).enumerate() {
        let mut v = vt.row(i).transpose();
        // deterministic sign: largest-magnitude entry positive
        if v[v.iamax()] < 0.0 {
            v = -v;
        }
        components.set_column(c, &v);
        let s = svd.singular_values[i];
        stddev.push(s / ((n - 1) as f64).sqrt());
        explained.push(s * s / total);
    }
    Ok(PcaModel {
        template: meshes[0].clone(),
        mean,
        components,
        stddev,
        explained,
        groups: BTreeMap::new(),
    })
}

impl PcaModel {
    pub fn component_count(&self) -> usize {
        self.components.ncols()
    }

    pub fn explained_total(&self) -> f64 {
        self.explained.iter().sum()
    }

    pub fn coefficients(&self, mesh: &Mesh) -> Result<DVector<f64>> {
        self.template.require_same_topology(mesh)?;
        Ok(self.components.transpose() * (flatten(mesh) - &self.mean))
    }

    pub fn reconstruct(&self, coefficients: &DVector<f64>) -> Result<Mesh> {
        crate::error::check_len("PCA coefficients", self.component_count(), coefficients.len())?;
        let x = &self.mean + &self.components * coefficients;
        let verts = x
            .as_slice()
            .chunks_exact(3)
            .map(|c| Vec3::new(c[0], c[1], c[2]))
            .collect();
        self.template.with_vertices(verts)
    }

    /// Estimates per-group coefficient means and covariances.
    pub fn fit_groups(&mut self, meshes: &[Mesh], tags: &[GroupTag]) -> Result<()> {
        crate::error::check_len("group tags", meshes.len(), tags.len())?;
        let mut by_group: BTreeMap<GroupTag, Vec<DVector<f64>>> = BTreeMap::new();
        for (m, t) in meshes.iter().zip(tags) {
            by_group.entry(*t).or_default().push(self.coefficients(m)?);
        }
        let k = self.component_count();
        for (tag, coeffs) in by_group {
            let n = coeffs.len() as f64;
            let mean = coeffs.iter().fold(DVector::zeros(k), |a, c| a + c) / n;
            let mut cov = DMatrix::zeros(k, k);
            for c in &coeffs {
                let d = c - &mean;
                cov += &d * d.transpose();
            }
            if coeffs.len() > 1 {
                cov /= n - 1.0;
            }
            self.groups.insert(tag, GroupStats { mean, covariance: cov });
        }
        Ok(())
    }
}

/// Draws coefficients from the group's Gaussian and reconstructs a mesh.
pub fn pca_sample_group<R: Rng + ?Sized>(model: &PcaModel, group: GroupTag, rng: &mut R) -> Result<Mesh> {
    let coeffs = sample_coefficients(model, group, rng)?;
    model.reconstruct(&coeffs)
}

pub(crate) fn sample_coefficients<R: Rng + ?Sized>(
    model: &PcaModel,
    group: GroupTag,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let stats = model
        .groups
        .get(&group)
        .ok_or_else(|| Error::Missing(format!("no PCA statistics for group {group}")))?;
    let k = stats.mean.len();
    let eig = SymmetricEigen::new(stats.covariance.clone());
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    let z = DVector::from_fn(k, |_, _| rng.sample::<f64, _>(StandardNormal));
    Ok(&stats.mean + &eig.eigenvectors * root * z)
}
