use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use headfit_core::eval::{
    aggregate, evaluate_pair, heatmap_export, icp_refine, procrustes_align, AlignmentResult, ErrorReport, EvalConfig,
    ALIGNMENT_LABEL,
};
use headfit_core::mesh::{Mesh, Vec3};
use headfit_core::Exec;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{ensure_parent, print_json, read_json, read_mesh, write_json, Ctx};
use crate::args::{EvalArgs, HeatmapArgs};
use crate::exit::UsageError;

/// One line of a `--pairs` list. Paths are relative to the list file.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PairEntry {
    #[serde(default = "default_model")]
    model: String,
    gt: PathBuf,
    pred: PathBuf,
    #[serde(default)]
    gt_landmarks: Option<Vec<usize>>,
    #[serde(default)]
    pred_landmarks: Option<Vec<usize>>,
}

fn default_model() -> String {
    "model".into()
}

#[derive(Debug, Serialize)]
struct AlignmentSummary {
    rmse_before: f64,
    rmse_after: f64,
    iterations: usize,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    scale: f64,
}

impl From<&AlignmentResult> for AlignmentSummary {
    fn from(a: &AlignmentResult) -> Self {
        let r = a.transform.rotation;
        AlignmentSummary {
            rmse_before: a.rmse_before,
            rmse_after: a.rmse_after,
            iterations: a.history.len(),
            rotation: [0, 1, 2].map(|i| [r[(i, 0)], r[(i, 1)], r[(i, 2)]]),
            translation: a.transform.translation.into(),
            scale: a.transform.scale,
        }
    }
}

#[derive(Debug, Serialize)]
struct PairResult {
    model: String,
    gt: PathBuf,
    pred: PathBuf,
    alignment: AlignmentSummary,
    reports: Vec<ErrorReport>,
}

fn with_alignment(mut mesh: Mesh, idx: Option<&[usize]>, path: &Path) -> Result<Mesh> {
    if let Some(idx) = idx {
        if idx.len() != 7 {
            return Err(UsageError(format!(
                "{}: expected 7 alignment indices, got {}",
                path.display(),
                idx.len()
            ))
            .into());
        }
        mesh.set_label(ALIGNMENT_LABEL, idx.to_vec())
            .with_context(|| format!("labeling {}", path.display()))?;
    }
    Ok(mesh)
}

fn eval_one(pair: &PairEntry, cfg: &EvalConfig, exec: Exec) -> Result<(PairResult, Mesh, Mesh, AlignmentResult)> {
    let gt = with_alignment(read_mesh(&pair.gt)?, pair.gt_landmarks.as_deref(), &pair.gt)?;
    let pred = with_alignment(read_mesh(&pair.pred)?, pair.pred_landmarks.as_deref(), &pair.pred)?;
    let (align, reports) = evaluate_pair(&pair.model, &gt, &pred, cfg, exec)
        .with_context(|| format!("evaluating {} against {}", pair.pred.display(), pair.gt.display()))?;
    let result = PairResult {
        model: pair.model.clone(),
        gt: pair.gt.clone(),
        pred: pair.pred.clone(),
        alignment: AlignmentSummary::from(&align),
        reports,
    };
    Ok((result, gt, pred, align))
}

pub fn run(ctx: &mut Ctx, args: EvalArgs) -> Result<()> {
    let mut cfg = ctx.cfg.eval.clone();
    if let Some(r) = &args.radii {
        if r.is_empty() || r.iter().any(|&x| !(x > 0.0)) {
            return Err(UsageError("crop radii must be positive".into()).into());
        }
        cfg.radii = r.clone();
    }
    let tolerance = args.tolerance.unwrap_or(ctx.cfg.heatmap.tolerance);

    let results: Vec<PairResult> = match &args.pairs {
        None => {
            let pair = PairEntry {
                model: args.model.clone(),
                gt: args.gt.clone().expect("required by the parser"),
                pred: args.pred.clone().expect("required by the parser"),
                gt_landmarks: args.gt_landmarks.map(Vec::from),
                pred_landmarks: args.pred_landmarks.map(Vec::from),
            };
            let (result, gt, pred, align) = eval_one(&pair, &cfg, ctx.exec)?;
            if let Some(path) = &args.heatmap {
                ensure_parent(path)?;
                let aligned = pred.map_vertices(|p| align.transform.apply(p));
                heatmap_export(&gt, &aligned, tolerance, path, ctx.exec)?;
            }
            vec![result]
        }
        Some(list) => {
            let base = list.parent().unwrap_or(Path::new("."));
            let mut pairs: Vec<PairEntry> = read_json(list)?;
            for s in &mut pairs {
                s.gt = base.join(&s.gt);
                s.pred = base.join(&s.pred);
            }
            // pairs run concurrently, each one sequentially inside
            ctx.exec
                .map_slice(&pairs, |s| eval_one(s, &cfg, Exec::Sequential).map(|r| r.0))
                .into_iter()
                .collect::<Result<_>>()?
        }
    };

    let mut by_model: BTreeMap<&str, Vec<ErrorReport>> = BTreeMap::new();
    for r in &results {
        by_model.entry(&r.model).or_default().extend(r.reports.iter().cloned());
    }
    let aggregates: BTreeMap<&str, _> = by_model.iter().map(|(m, reps)| (*m, aggregate(reps))).collect();
    let output = json!({"pairs": results, "aggregate": aggregates});
    if let Some(out) = &args.out {
        write_json(out, &output)?;
    }
    ctx.event("eval", json!({"pairs": results.len(), "aggregate": &aggregates}))?;
    print_json(&output)
}

pub fn heatmap(ctx: &mut Ctx, args: HeatmapArgs) -> Result<()> {
    let gt = read_mesh(&args.gt)?;
    let pred = read_mesh(&args.pred)?;
    let tolerance = args.tolerance.unwrap_or(ctx.cfg.heatmap.tolerance);
    if !(tolerance > 0.0) {
        return Err(UsageError("tolerance must be positive".into()).into());
    }
    let (aligned, alignment) = if args.align {
        let points = |m: &Mesh, p: &Path| -> Result<Vec<Vec3>> {
            let idx = m
                .label(ALIGNMENT_LABEL)
                .ok_or_else(|| UsageError(format!("{} has no '{ALIGNMENT_LABEL}' label", p.display())))?;
            Ok(idx.iter().map(|&i| m.vertices()[i]).collect())
        };
        let rough = procrustes_align(
            &points(&pred, &args.pred)?,
            &points(&gt, &args.gt)?,
            ctx.cfg.eval.icp.allow_scale,
        )?;
        let fine = icp_refine(&pred, &gt, &rough, &ctx.cfg.eval.icp, ctx.exec)?;
        (
            pred.map_vertices(|p| fine.transform.apply(p)),
            Some(AlignmentSummary::from(&fine)),
        )
    } else {
        (pred, None)
    };
    ensure_parent(&args.out)?;
    let d = heatmap_export(&gt, &aligned, tolerance, &args.out, ctx.exec)?;
    let n = d.len().max(1) as f64;
    let summary = json!({
        "vertices": d.len(),
        "tolerance": tolerance,
        "mean_distance": d.iter().sum::<f64>() / n,
        "max_distance": d.iter().copied().fold(0.0, f64::max),
        "within_tolerance": d.iter().filter(|&&x| x < tolerance).count() as f64 / n,
        "alignment": alignment,
        "ply": args.out,
    });
    ctx.event("heatmap", &summary)?;
    print_json(&summary)
}
