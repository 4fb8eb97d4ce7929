//! Shape augmentation by interpolating DR features of same-group faces with
//! hyperspherically distributed weights, plus PCA shape models.

mod pca;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dr::{load_feature, DrCodec, DrFeature};
use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::Exec;

pub use pca::{pca_fit, pca_sample_group, GroupStats, PcaModel};

/// Radius range of the interpolation weights.
pub const RADIUS_RANGE: (f64, f64) = (0.6, 1.3);

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Ethnicity {
    Asian,
    Caucasian,
    Black,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];
}

impl Ethnicity {
    pub const ALL: [Ethnicity; 3] = [Ethnicity::Asian, Ethnicity::Caucasian, Ethnicity::Black];
}

/// A (gender, ethnicity) group, written `asian_male` etc.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct GroupTag {
    pub gender: Gender,
    pub ethnicity: Ethnicity,
}

impl GroupTag {
    pub fn new(gender: Gender, ethnicity: Ethnicity) -> Self {
        GroupTag { gender, ethnicity }
    }

    pub fn all() -> impl Iterator<Item = GroupTag> {
        Ethnicity::ALL
            .into_iter()
            .flat_map(|e| Gender::ALL.into_iter().map(move |g| GroupTag::new(g, e)))
    }
}

impl fmt::Display for GroupTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = match self.ethnicity {
            Ethnicity::Asian => "asian",
            Ethnicity::Caucasian => "caucasian",
            Ethnicity::Black => "black",
        };
        let g = match self.gender {
            Gender::Male => "male",
            Gender::Female => "female",
        };
        write!(f, "{e}_{g}")
    }
}

impl FromStr for GroupTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("unknown group tag {s:?} (expected e.g. asian_male)"));
        let (e, g) = s.split_once('_').ok_or_else(bad)?;
        let ethnicity = match e.to_ascii_lowercase().as_str() {
            "asian" => Ethnicity::Asian,
            "caucasian" | "white" => Ethnicity::Caucasian,
            "black" => Ethnicity::Black,
            _ => return Err(bad()),
        };
        let gender = match g.to_ascii_lowercase().as_str() {
            "male" => Gender::Male,
            "female" => Gender::Female,
            _ => return Err(bad()),
        };
        Ok(GroupTag { gender, ethnicity })
    }
}

impl TryFrom<String> for GroupTag {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<GroupTag> for String {
    fn from(g: GroupTag) -> String {
        g.to_string()
    }
}

/// Draws `m` non-negative weights with `|a| ~ U[0.6, 1.3]` and hyperspherical
/// angles uniform on `[0, pi/2]`.
pub fn sample_hypersphere_weights<R: Rng + ?Sized>(m: usize, rng: &mut R) -> Result<Vec<f64>> {
    if m == 0 {
        return Err(Error::InvalidArgument("weight count must be at least 1".into()));
    }
    let r = rng.random_range(RADIUS_RANGE.0..=RADIUS_RANGE.1);
    let angles: Vec<f64> = (0..m - 1)
        .map(|_| rng.random_range(0.0..=std::f64::consts::FRAC_PI_2))
        .collect();
    Ok(hyperspherical_to_cartesian(r, &angles))
}

/// `a_1 = r cos t_1`, `a_k = r cos t_k prod_{j<k} sin t_j`, `a_m = r prod sin t_j`.
pub fn hyperspherical_to_cartesian(r: f64, angles: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(angles.len() + 1);
    let mut prod = r;
    for t in angles {
        out.push(prod * t.cos());
        prod *= t.sin();
    }
    out.push(prod);
    out
}

/// `sum_i a_i D_i`.
pub fn interpolate_dr(features: &[&DrFeature], a: &[f64]) -> Result<DrFeature> {
    crate::error::check_len("interpolation weights", features.len(), a.len())?;
    let first = features
        .first()
        .ok_or_else(|| Error::Empty("no features to interpolate".into()))?;
    let len = first.as_slice().len();
    let mut out = vec![0.0; len];
    for (f, &w) in features.iter().zip(a) {
        crate::error::check_len("DR feature length", len, f.as_slice().len())?;
        for (o, x) in out.iter_mut().zip(f.as_slice()) {
            *o += w * x;
        }
    }
    DrFeature::from_vec(out, first.reference())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShapeEntry {
    pub name: String,
    pub feature: DrFeature,
    pub group: GroupTag,
    pub texture: Option<String>,
}

/// DR features of one reference mesh, tagged by group.
#[derive(Debug, Clone)]
pub struct ShapeDataset {
    reference: Mesh,
    entries: Vec<ShapeEntry>,
}

impl ShapeDataset {
    pub fn new(reference: Mesh, entries: Vec<ShapeEntry>) -> Result<Self> {
        for e in &entries {
            crate::error::check_len(
                "DR feature vertex count",
                reference.vertex_count(),
                e.feature.vertex_count(),
            )?;
        }
        Ok(ShapeDataset { reference, entries })
    }

    pub fn reference(&self) -> &Mesh {
        &self.reference
    }

    pub fn entries(&self) -> &[ShapeEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Indices of the members of `group`, in dataset order.
    pub fn members(&self, group: GroupTag) -> Vec<usize> {
        (0..self.entries.len())
            .filter(|&i| self.entries[i].group == group)
            .collect()
    }

    /// Loads a manifest; relative paths resolve against its directory.
    pub fn load(manifest_path: impl AsRef<Path>) -> Result<Self> {
        let path = manifest_path.as_ref();
        let manifest: Manifest = crate::solver::read_json(path)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        let reference = crate::mesh::load_mesh(dir.join(&manifest.reference))?;
        let entries = manifest
            .shapes
            .iter()
            .map(|s| {
                Ok(ShapeEntry {
                    name: s.name.clone(),
                    feature: load_feature(dir.join(&s.feature))?,
                    group: s.group,
                    texture: s.texture.clone(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        ShapeDataset::new(reference, entries)
    }
}

/// Dataset manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub reference: PathBuf,
    pub shapes: Vec<ManifestEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub feature: PathBuf,
    pub group: GroupTag,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub texture: Option<String>,
}

impl Manifest {
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::solver::write_json(path.as_ref(), self)
    }
}

/// One augmented face.
#[derive(Debug, Clone)]
pub struct SampledFace {
    pub mesh: Mesh,
    pub feature: DrFeature,
    pub group: GroupTag,
    pub members: Vec<usize>,
    pub weights: Vec<f64>,
    /// Texture of the group member closest in DR space.
    pub texture: Option<String>,
    pub nearest: usize,
}

/// Interpolates `m` random members of `group` and decodes the result.
pub fn sample_face<R: Rng + ?Sized>(
    dataset: &ShapeDataset,
    codec: &DrCodec,
    group: GroupTag,
    m: usize,
    rng: &mut R,
) -> Result<SampledFace> {
    let members = dataset.members(group);
    if members.len() < m || members.is_empty() {
        return Err(Error::Empty(format!(
            "group {group} has {} members, need {m}",
            members.len()
        )));
    }
    let chosen: Vec<usize> = sample_indices(rng, members.len(), m)
        .into_iter()
        .map(|k| members[k])
        .collect();
    let weights = sample_hypersphere_weights(m, rng)?;
    let feats: Vec<&DrFeature> = chosen.iter().map(|&i| &dataset.entries[i].feature).collect();
    let feature = interpolate_dr(&feats, &weights)?;
    let anchor = codec.reference().vertices()[codec.anchor_vertex()];
    let mesh = codec.decode(&feature, &anchor, Exec::Sequential)?;
    let nearest = members
        .iter()
        .copied()
        .min_by(|&a, &b| {
            let da = dataset.entries[a].feature.l2_distance(&feature);
            let db = dataset.entries[b].feature.l2_distance(&feature);
            da.total_cmp(&db)
        })
        .expect("group is non-empty");
    Ok(SampledFace {
        mesh,
        texture: dataset.entries[nearest].texture.clone(),
        feature,
        group,
        members: chosen,
        weights,
        nearest,
    })
}

/// Ethnicity and gender proportions of a generated batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroupRatios {
    /// Asian, Caucasian, Black.
    pub ethnicity: [f64; 3],
    /// Male, female.
    pub gender: [f64; 2],
}

impl Default for GroupRatios {
    fn default() -> Self {
        GroupRatios {
            ethnicity: [0.65, 0.30, 0.05],
            gender: [0.5, 0.5],
        }
    }
}

impl GroupRatios {
    pub fn validate(&self) -> Result<()> {
        for r in [&self.ethnicity[..], &self.gender[..]] {
            if r.iter().any(|x| !(*x >= 0.0)) || !(r.iter().sum::<f64>() > 0.0) {
                return Err(Error::InvalidArgument(
                    "group ratios must be non-negative with a positive sum".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn choose<R: Rng + ?Sized>(&self, rng: &mut R) -> GroupTag {
        let e = pick(&self.ethnicity, rng);
        let g = pick(&self.gender, rng);
        GroupTag::new(Gender::ALL[g], Ethnicity::ALL[e])
    }
}

fn pick<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Independent generator for task `index` of a run seeded with `seed`.
pub fn task_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// What a batch draws from.
#[derive(Debug, Clone, PartialEq)]
pub enum GroupPlan {
    Fixed(GroupTag),
    Ratios(GroupRatios),
}

/// Generates `count` faces; face `i` uses its own stream of `seed`, so the
/// result does not depend on `exec`.
pub fn sample_batch(
    dataset: &ShapeDataset,
    codec: &DrCodec,
    plan: &GroupPlan,
    m: usize,
    count: usize,
    seed: u64,
    exec: Exec,
) -> Result<Vec<SampledFace>> {
    if let GroupPlan::Ratios(r) = plan {
        r.validate()?;
    }
    exec.map_range(count, |i| {
        let mut rng = task_rng(seed, i as u64);
        let group = match plan {
            GroupPlan::Fixed(g) => *g,
            GroupPlan::Ratios(r) => r.choose(&mut rng),
        };
        sample_face(dataset, codec, group, m, &mut rng)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth;
    use proptest::prelude::*;
    use rand::Rng;

    fn feature(n: usize, seed: u64) -> DrFeature {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DrFeature::from_vec((0..9 * n).map(|_| rng.random_range(-1.0..1.0)).collect(), "ref").unwrap()
    }

    #[test]
    fn degenerate_angles_give_first_axis() {
        assert_eq!(
            hyperspherical_to_cartesian(0.9, &[0.0; 4]),
            vec![0.9, 0.0, 0.0, 0.0, 0.0]
        );
        assert!(sample_hypersphere_weights(0, &mut task_rng(1, 0)).is_err());
    }

    proptest! {
        #[test]
        fn weights_have_radius_norm(seed in any::<u64>(), m in 1usize..9) {
            let mut rng = task_rng(seed, 0);
            let a = sample_hypersphere_weights(m, &mut rng).unwrap();
            prop_assert_eq!(a.len(), m);
            let r = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            prop_assert!(a.iter().all(|&x| x >= 0.0));
            prop_assert!((RADIUS_RANGE.0 - 1e-12..=RADIUS_RANGE.1 + 1e-12).contains(&r));
        }

        #[test]
        fn interpolation_is_linear(seed in any::<u64>(), alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let fs: Vec<DrFeature> = (0..4).map(|k| feature(5, seed.wrapping_add(k))).collect();
            let refs: Vec<&DrFeature> = fs.iter().collect();
            let mut rng = task_rng(seed, 1);
            let a: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let ab: Vec<f64> = a.iter().zip(&b).map(|(x, y)| alpha * x + beta * y).collect();
            let lhs = interpolate_dr(&refs, &ab).unwrap();
            let fa = interpolate_dr(&refs, &a).unwrap();
            let fb = interpolate_dr(&refs, &b).unwrap();
            for ((l, x), y) in lhs.as_slice().iter().zip(fa.as_slice()).zip(fb.as_slice()) {
                prop_assert!((l - (alpha * x + beta * y)).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn interpolation_matches_elementwise_sum() {
        let fs: Vec<DrFeature> = (0..5).map(|k| feature(7, k)).collect();
        let refs: Vec<&DrFeature> = fs.iter().collect();
        let a = [0.3, 0.1, 0.5, 0.2, 0.7];
        let out = interpolate_dr(&refs, &a).unwrap();
        for j in 0..out.as_slice().len() {
            let expect: f64 = (0..5).map(|k| a[k] * fs[k].as_slice()[j]).sum();
            assert!((out.as_slice()[j] - expect).abs() <= 1e-12);
        }
        let basis = interpolate_dr(&refs, &[1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(basis.as_slice(), fs[0].as_slice());
        assert!(interpolate_dr(&refs, &[1.0]).is_err());
    }

    #[test]
    fn group_tags_round_trip() {
        for g in GroupTag::all() {
            assert_eq!(g.to_string().parse::<GroupTag>().unwrap(), g);
        }
        assert_eq!(
            "white_female".parse::<GroupTag>().unwrap().ethnicity,
            Ethnicity::Caucasian
        );
        assert!("martian_male".parse::<GroupTag>().is_err());
    }

    #[test]
    fn ethnicity_ratios_are_respected() {
        let ratios = GroupRatios::default();
        let mut counts = [0usize; 3];
        for i in 0..1000 {
            let g = ratios.choose(&mut task_rng(7, i));
            counts[Ethnicity::ALL.iter().position(|e| *e == g.ethnicity).unwrap()] += 1;
        }
        for (c, r) in counts.iter().zip(ratios.ethnicity) {
            assert!((*c as f64 / 1000.0 - r).abs() <= 0.04, "{counts:?}");
        }
    }

    fn dataset_of(features: Vec<DrFeature>, mesh: &Mesh, group: GroupTag) -> ShapeDataset {
        let entries = features
            .into_iter()
            .enumerate()
            .map(|(i, f)| ShapeEntry {
                name: format!("s{i}"),
                feature: f,
                group,
                texture: Some(format!("tex{i}")),
            })
            .collect();
        ShapeDataset::new(mesh.clone(), entries).unwrap()
    }

    #[test]
    fn identical_members_give_scaled_feature() {
        let mesh = synth::sphere(2, 50.0);
        let codec = DrCodec::new(&mesh, "sphere", 0).unwrap();
        let deformed = synth::smooth_deformation(&mesh, 4, 0.1);
        let f = codec.encode(&deformed, Exec::Sequential).unwrap();
        let group = GroupTag::new(Gender::Female, Ethnicity::Black);
        let ds = dataset_of(vec![f.clone(); 5], &mesh, group);
        let mut rng = task_rng(11, 0);
        let s = sample_face(&ds, &codec, group, 5, &mut rng).unwrap();
        let r: f64 = s.weights.iter().sum();
        let expect = codec
            .decode(
                &interpolate_dr(&[&f], &[r]).unwrap(),
                &mesh.vertices()[0],
                Exec::Sequential,
            )
            .unwrap();
        for (a, b) in s.mesh.vertices().iter().zip(expect.vertices()) {
            assert!((a - b).norm() < 1e-9);
        }
        let other = GroupTag::new(Gender::Male, Ethnicity::Asian);
        assert!(matches!(
            sample_face(&ds, &codec, other, 5, &mut rng),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn texture_goes_to_nearest_member() {
        let mesh = synth::sphere(1, 50.0);
        let codec = DrCodec::new(&mesh, "sphere", 0).unwrap();
        let n = mesh.vertex_count();
        let feats: Vec<DrFeature> = (0..6).map(|k| feature(n, 100 + k)).collect();
        let group = GroupTag::new(Gender::Male, Ethnicity::Asian);
        let ds = dataset_of(feats, &mesh, group);
        let s = sample_face(&ds, &codec, group, 3, &mut task_rng(5, 2)).unwrap();
        let best = (0..6)
            .min_by(|&a, &b| {
                ds.entries()[a]
                    .feature
                    .l2_distance(&s.feature)
                    .total_cmp(&ds.entries()[b].feature.l2_distance(&s.feature))
            })
            .unwrap();
        assert_eq!(s.nearest, best);
        assert_eq!(s.texture.as_deref(), Some(format!("tex{best}").as_str()));
    }

    #[test]
    fn batches_do_not_depend_on_execution_mode() {
        let mesh = synth::sphere(1, 50.0);
        let codec = DrCodec::new(&mesh, "sphere", 0).unwrap();
        let n = mesh.vertex_count();
        let mut entries = Vec::new();
        for (k, g) in GroupTag::all().enumerate() {
            for j in 0..3 {
                entries.push(ShapeEntry {
                    name: format!("{g}{j}"),
                    feature: feature(n, (10 * k + j) as u64).scaled_for_test(0.05),
                    group: g,
                    texture: None,
                });
            }
        }
        let ds = ShapeDataset::new(mesh, entries).unwrap();
        let plan = GroupPlan::Ratios(GroupRatios::default());
        let a = sample_batch(&ds, &codec, &plan, 3, 12, 99, Exec::Sequential).unwrap();
        let b = sample_batch(&ds, &codec, &plan, 3, 12, 99, Exec::Parallel).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.mesh.vertices(), y.mesh.vertices());
            assert_eq!(x.weights, y.weights);
        }
    }

    impl DrFeature {
        fn scaled_for_test(mut self, s: f64) -> Self {
            self.as_mut_slice().iter_mut().for_each(|x| *x *= s);
            self
        }
    }
}
