//! Reconstruction error protocol: seven-point alignment, ICP refinement,
//! cropping around a face center, symmetric point-to-mesh RMSE and error
//! heatmaps.

mod bvh;

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{fit_similarity, Similarity};
use crate::mesh::{Mesh, Vec3, NOSE_TIP};
use crate::Exec;

pub use bvh::{brute_force_distance, closest_point_on_triangle, Bvh, ClosestPoint};

/// Label holding the seven alignment vertices of a mesh.
pub const ALIGNMENT_LABEL: &str = "alignment";
/// Heatmap tolerance in mm.
pub const DEFAULT_TOLERANCE: f64 = 5.0;
/// Crop radii in mm.
pub const DEFAULT_RADII: [f64; 4] = [80.0, 90.0, 100.0, 110.0];

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentResult {
    pub transform: Similarity,
    pub rmse_before: f64,
    pub rmse_after: f64,
    /// RMSE after each ICP iteration (empty for a plain Procrustes fit).
    pub history: Vec<f64>,
}

fn rmse_between(src: &[Vec3], dst: &[Vec3], t: &Similarity) -> f64 {
    let sum: f64 = src.iter().zip(dst).map(|(s, d)| (t.apply(s) - d).norm_squared()).sum();
    (sum / src.len().max(1) as f64).sqrt()
}

/// Least-squares rigid (or similarity) transform taking `src` onto `dst`.
pub fn procrustes_align(src: &[Vec3], dst: &[Vec3], allow_scale: bool) -> Result<AlignmentResult> {
    let transform = fit_similarity(src, dst, allow_scale)?;
    Ok(AlignmentResult {
        rmse_before: rmse_between(src, dst, &Similarity::identity()),
        rmse_after: rmse_between(src, dst, &transform),
        transform,
        history: Vec::new(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IcpConfig {
    pub max_iterations: usize,
    /// Stop once the RMSE improves by less than this (mm).
    pub tolerance: f64,
    pub allow_scale: bool,
    /// Fraction of worst matches dropped once trimming starts.
    pub trim_fraction: f64,
    /// First iteration that uses trimming.
    pub trim_after: usize,
}

impl Default for IcpConfig {
    fn default() -> Self {
        IcpConfig {
            max_iterations: 30,
            tolerance: 1e-10,
            allow_scale: false,
            trim_fraction: 0.05,
            trim_after: 4,
        }
    }
}

/// Point pairs `(source index, target point, distance)` from both matching
/// directions: every transformed source vertex to its nearest target vertex,
/// and every target vertex to its nearest transformed source vertex.
fn symmetric_pairs(src: &[Vec3], dst: &[Vec3], dst_tree: &Bvh, t: &Similarity, exec: Exec) -> Vec<(usize, Vec3, f64)> {
    let moved: Vec<Vec3> = src.iter().map(|p| t.apply(p)).collect();
    let src_tree = Bvh::from_points(&moved);
    let forward = exec.map_slice(&moved, |p| {
        let c = dst_tree.closest(p).expect("target has vertices");
        (c.point, c.distance)
    });
    let backward = exec.map_slice(dst, |q| {
        let c = src_tree.closest(q).expect("source has vertices");
        (c.face, c.distance)
    });
    let mut pairs: Vec<(usize, Vec3, f64)> = forward.into_iter().enumerate().map(|(i, (q, d))| (i, q, d)).collect();
    pairs.extend(backward.into_iter().zip(dst).map(|((i, d), q)| (i, *q, d)));
    pairs
}

/// Pairs kept under trimming, ascending by distance.
fn trimmed(mut pairs: Vec<(usize, Vec3, f64)>, trim: f64) -> Vec<(usize, Vec3, f64)> {
    pairs.sort_by(|a, b| a.2.total_cmp(&b.2).then(a.0.cmp(&b.0)));
    let keep = ((pairs.len() as f64) * (1.0 - trim)).ceil().max(3.0) as usize;
    pairs.truncate(keep.min(pairs.len()));
    pairs
}

fn pair_rmse(pairs: &[(usize, Vec3, f64)]) -> f64 {
    (pairs.iter().map(|p| p.2 * p.2).sum::<f64>() / pairs.len().max(1) as f64).sqrt()
}

/// Symmetric point-to-point ICP of the `src` vertices against the `dst`
/// vertices, starting from `init`. The worst `trim_fraction` of the pairs is
/// dropped from iteration `trim_after` on. The recorded RMSE (over the kept
/// pairs) never increases; the best transform seen is returned.
pub fn icp_refine(
    src: &Mesh,
    dst: &Mesh,
    init: &AlignmentResult,
    cfg: &IcpConfig,
    exec: Exec,
) -> Result<AlignmentResult> {
    if dst.vertex_count() < 3 || src.vertex_count() < 3 {
        return Err(Error::Empty("ICP needs at least 3 source and 3 target vertices".into()));
    }
    let (pts, targets) = (src.vertices(), dst.vertices());
    let tree = Bvh::from_points(targets);
    let mut t = init.transform;
    let mut pairs = symmetric_pairs(pts, targets, &tree, &t, exec);
    let start = pair_rmse(&pairs);
    let mut history = vec![start];
    for it in 1..=cfg.max_iterations {
        let trim = if it >= cfg.trim_after { cfg.trim_fraction } else { 0.0 };
        let kept = trimmed(pairs.clone(), trim);
        let s: Vec<Vec3> = kept.iter().map(|p| pts[p.0]).collect();
        let d: Vec<Vec3> = kept.iter().map(|p| p.1).collect();
        let Ok(next) = fit_similarity(&s, &d, cfg.allow_scale) else {
            break;
        };
        let next_pairs = symmetric_pairs(pts, targets, &tree, &next, exec);
        let rmse = pair_rmse(&trimmed(next_pairs.clone(), trim));
        let prev = *history.last().expect("history starts non-empty");
        if !(rmse <= prev) {
            break;
        }
        t = next;
        pairs = next_pairs;
        history.push(rmse);
        if prev - rmse < cfg.tolerance {
            break;
        }
    }
    Ok(AlignmentResult {
        transform: t,
        rmse_before: start,
        rmse_after: pair_rmse(&pairs),
        history,
    })
}

/// Keeps the vertices within `radius` of `center` and the faces among them.
/// Returns the cropped mesh and the original index of every kept vertex.
pub fn crop_by_radius(mesh: &Mesh, center: &Vec3, radius: f64) -> Result<(Mesh, Vec<usize>)> {
    if !(radius > 0.0) {
        return Err(Error::InvalidArgument(format!("crop radius {radius} must be positive")));
    }
    let kept: Vec<usize> = (0..mesh.vertex_count())
        .filter(|&i| (mesh.vertices()[i] - center).norm() <= radius)
        .collect();
    let mut remap = vec![usize::MAX; mesh.vertex_count()];
    for (new, &old) in kept.iter().enumerate() {
        remap[old] = new;
    }
    let faces: Vec<[usize; 3]> = mesh
        .faces()
        .iter()
        .filter(|f| f.iter().all(|&v| remap[v] != usize::MAX))
        .map(|f| f.map(|v| remap[v]))
        .collect();
    if kept.is_empty() || faces.is_empty() {
        return Err(Error::Empty(format!("no faces within {radius} mm of the crop center")));
    }
    let mut out = Mesh::new(kept.iter().map(|&i| mesh.vertices()[i]).collect(), faces)?;
    if let Some(uv) = mesh.uv() {
        out = out.with_uv(kept.iter().map(|&i| uv[i]).collect())?;
    }
    for (name, idx) in mesh.labels() {
        let mapped: Vec<usize> = idx
            .iter()
            .filter(|&&i| remap[i] != usize::MAX)
            .map(|&i| remap[i])
            .collect();
        out.set_label(name.clone(), mapped)?;
    }
    Ok((out, kept))
}

/// Distances from each query point to the mesh surface.
pub fn point_to_mesh_distances(points: &[Vec3], bvh: &Bvh, exec: Exec) -> Vec<f64> {
    exec.map_slice(points, |p| bvh.closest(p).map_or(f64::INFINITY, |c| c.distance))
}

pub fn point_to_mesh_distance(point: &Vec3, bvh: &Bvh) -> f64 {
    bvh.closest(point).map_or(f64::INFINITY, |c| c.distance)
}

fn rms(d: &[f64]) -> f64 {
    (d.iter().map(|x| x * x).sum::<f64>() / d.len() as f64).sqrt()
}

/// Both directed vertex-to-surface RMSEs and their average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Armse {
    pub gt_to_pred: f64,
    pub pred_to_gt: f64,
    pub armse: f64,
}

pub fn armse_detail(gt: &Mesh, pred: &Mesh, exec: Exec) -> Result<Armse> {
    if gt.face_count() == 0 || pred.face_count() == 0 {
        return Err(Error::Empty("ARMSE needs two meshes with faces".into()));
    }
    let a = rms(&point_to_mesh_distances(gt.vertices(), &Bvh::new(pred), exec));
    let b = rms(&point_to_mesh_distances(pred.vertices(), &Bvh::new(gt), exec));
    Ok(Armse {
        gt_to_pred: a,
        pred_to_gt: b,
        armse: 0.5 * (a + b),
    })
}

pub fn armse(gt: &Mesh, pred: &Mesh, exec: Exec) -> Result<f64> {
    Ok(armse_detail(gt, pred, exec)?.armse)
}

/// Blue at zero error ramping to red at `tolerance`; red beyond.
pub fn heatmap_color(distance: f64, tolerance: f64) -> [u8; 3] {
    if !(distance < tolerance) {
        return [255, 0, 0];
    }
    let t = (distance / tolerance).clamp(0.0, 1.0);
    [(255.0 * t).round() as u8, 0, (255.0 * (1.0 - t)).round() as u8]
}

/// Per-ground-truth-vertex distance to `pred` and its color.
pub fn heatmap(gt: &Mesh, pred: &Mesh, tolerance: f64, exec: Exec) -> Result<(Vec<f64>, Vec<[u8; 3]>)> {
    if pred.face_count() == 0 {
        return Err(Error::Empty("prediction has no faces".into()));
    }
    let d = point_to_mesh_distances(gt.vertices(), &Bvh::new(pred), exec);
    let colors = d.iter().map(|&x| heatmap_color(x, tolerance)).collect();
    Ok((d, colors))
}

/// ASCII PLY with per-vertex RGB.
pub fn write_colored_ply(mesh: &Mesh, colors: &[[u8; 3]], out: &mut impl Write) -> std::io::Result<()> {
    writeln!(out, "ply\nformat ascii 1.0")?;
    writeln!(out, "element vertex {}", mesh.vertex_count())?;
    writeln!(out, "property double x\nproperty double y\nproperty double z")?;
    writeln!(out, "property uchar red\nproperty uchar green\nproperty uchar blue")?;
    writeln!(out, "element face {}", mesh.face_count())?;
    writeln!(out, "property list uchar int vertex_indices\nend_header")?;
    use crate::mesh::format_float as ff;
    for (v, c) in mesh.vertices().iter().zip(colors) {
        writeln!(out, "{} {} {} {} {} {}", ff(v.x), ff(v.y), ff(v.z), c[0], c[1], c[2])?;
    }
    for f in mesh.faces() {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}

pub fn heatmap_export(gt: &Mesh, pred: &Mesh, tolerance: f64, path: impl AsRef<Path>, exec: Exec) -> Result<Vec<f64>> {
    let (d, colors) = heatmap(gt, pred, tolerance, exec)?;
    let path = path.as_ref();
    let mut buf = Vec::new();
    write_colored_ply(gt, &colors, &mut buf).map_err(|e| Error::io(path, e))?;
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))?;
    Ok(d)
}

/// Where crops are centered.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CropCenter {
    #[default]
    NoseTip,
    /// Mean of the seven alignment vertices.
    AlignmentMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub radii: Vec<f64>,
    pub center: CropCenter,
    pub icp: IcpConfig,
    /// Labels whose vertices are removed before comparison.
    pub exclude_labels: Vec<String>,
    pub keep_distances: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            radii: DEFAULT_RADII.to_vec(),
            center: CropCenter::NoseTip,
            icp: IcpConfig::default(),
            exclude_labels: Vec::new(),
            keep_distances: false,
        }
    }
}

/// Result for one model at one crop radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub model: String,
    pub radius: f64,
    pub armse: f64,
    pub gt_to_pred: f64,
    pub pred_to_gt: f64,
    pub kept_vertices: usize,
    pub discarded_vertices: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances: Option<Vec<f64>>,
}

fn alignment_points(mesh: &Mesh, what: &str) -> Result<Vec<Vec3>> {
    let idx = mesh
        .label(ALIGNMENT_LABEL)
        .ok_or_else(|| Error::Missing(format!("{what} mesh has no '{ALIGNMENT_LABEL}' label")))?;
    if idx.len() != 7 {
        return Err(Error::InvalidArgument(format!(
            "{what} mesh has {} alignment vertices, expected 7",
            idx.len()
        )));
    }
    Ok(idx.iter().map(|&i| mesh.vertices()[i]).collect())
}

fn remove_labels(mesh: &Mesh, labels: &[String]) -> Result<Mesh> {
    let mut drop = vec![false; mesh.vertex_count()];
    for l in labels {
        for &i in mesh.label(l).unwrap_or(&[]) {
            drop[i] = true;
        }
    }
    if !drop.iter().any(|&d| d) {
        return Ok(mesh.clone());
    }
    let keep: Vec<usize> = (0..mesh.vertex_count()).filter(|&i| !drop[i]).collect();
    let mut remap = vec![usize::MAX; mesh.vertex_count()];
    for (n, &o) in keep.iter().enumerate() {
        remap[o] = n;
    }
    let faces = mesh
        .faces()
        .iter()
        .filter(|f| f.iter().all(|&v| !drop[v]))
        .map(|f| f.map(|v| remap[v]))
        .collect();
    let mut out = Mesh::new(keep.iter().map(|&i| mesh.vertices()[i]).collect(), faces)?;
    for (name, idx) in mesh.labels() {
        out.set_label(
            name.clone(),
            idx.iter().filter(|&&i| !drop[i]).map(|&i| remap[i]).collect(),
        )?;
    }
    Ok(out)
}

/// Aligns `pred` to `gt` (seven points, then ICP) and reports ARMSE for
/// every crop radius. Both meshes are cropped around the ground-truth center.
pub fn evaluate_pair(
    model: &str,
    gt: &Mesh,
    pred: &Mesh,
    cfg: &EvalConfig,
    exec: Exec,
) -> Result<(AlignmentResult, Vec<ErrorReport>)> {
    let gt_pts = alignment_points(gt, "ground-truth")?;
    let pred_pts = alignment_points(pred, "predicted")?;
    let gt = remove_labels(gt, &cfg.exclude_labels)?;
    let pred = remove_labels(pred, &cfg.exclude_labels)?;
    let rough = procrustes_align(&pred_pts, &gt_pts, cfg.icp.allow_scale)?;
    let fine = icp_refine(&pred, &gt, &rough, &cfg.icp, exec)?;
    let aligned = pred.map_vertices(|p| fine.transform.apply(p));
    let center = match cfg.center {
        CropCenter::NoseTip => {
            let tip = gt
                .label(NOSE_TIP)
                .and_then(|l| l.first())
                .ok_or_else(|| Error::Missing("ground-truth mesh has no nose_tip label".into()))?;
            gt.vertices()[*tip]
        }
        CropCenter::AlignmentMean => gt_pts.iter().sum::<Vec3>() / 7.0,
    };
    let mut reports = Vec::new();
    for &r in &cfg.radii {
        let (g, kept) = crop_by_radius(&gt, &center, r)?;
        let (p, _) = crop_by_radius(&aligned, &center, r)?;
        let bvh = Bvh::new(&p);
        let d = point_to_mesh_distances(g.vertices(), &bvh, exec);
        let a = armse_detail(&g, &p, exec)?;
        reports.push(ErrorReport {
            model: model.to_string(),
            radius: r,
            armse: a.armse,
            gt_to_pred: a.gt_to_pred,
            pred_to_gt: a.pred_to_gt,
            kept_vertices: kept.len(),
            discarded_vertices: gt.vertex_count() - kept.len(),
            distances: cfg.keep_distances.then_some(d),
        });
    }
    Ok((fine, reports))
}

/// Mean with a 95% normal interval (`mean +- 1.96 SE`) per radius.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub radius: f64,
    pub count: usize,
    pub mean: f64,
    pub standard_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

pub fn aggregate(reports: &[ErrorReport]) -> Vec<Aggregate> {
    let mut radii: Vec<f64> = reports.iter().map(|r| r.radius).collect();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    radii
        .into_iter()
        .map(|radius| {
            let v: Vec<f64> = reports.iter().filter(|r| r.radius == radius).map(|r| r.armse).collect();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            let se = if v.len() > 1 {
                (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt()
            } else {
                0.0
            };
            Aggregate {
                radius,
                count: v.len(),
                mean,
                standard_error: se,
                ci_low: mean - 1.96 * se,
                ci_high: mean + 1.96 * se,
            }
        })
        .collect()
}
