use anyhow::{Context, Result};
use headfit_core::camera::init_intrinsics_with;
use headfit_core::mesh::{sample_surface, save_mesh};
use headfit_core::solver::{fit, AnchorTable, BlendshapeBasis, FitProblem, FitRecord, LandmarkFile};
use headfit_core::texture::UvTexture;
use serde_json::json;

use super::{print_json, read_mesh, required, Ctx};
use crate::args::FitArgs;
use crate::exit::NumericalFailure;
use crate::logging::JsonlLog;

pub fn run(ctx: &mut Ctx, args: FitArgs) -> Result<()> {
    let template_path = required(args.template, &ctx.cfg.paths.template, "template mesh")?;
    let anchors_path = required(args.anchors, &ctx.cfg.paths.anchors, "anchor table")?;
    let template = read_mesh(&template_path)?;
    let table = AnchorTable::load(&anchors_path).with_context(|| format!("loading {}", anchors_path.display()))?;
    table.check_mesh(&template)?;
    let basis = match args.basis.or_else(|| ctx.cfg.paths.basis.clone()) {
        Some(p) => BlendshapeBasis::load(&p).with_context(|| format!("loading {}", p.display()))?,
        None => BlendshapeBasis::empty(template.vertex_count()),
    };
    let (w, h) = match (args.image_size, &args.image) {
        (Some(s), _) => s,
        (None, Some(p)) => {
            let img = UvTexture::load_ppm(p)?;
            (img.width() as u32, img.height() as u32)
        }
        (None, None) => unreachable!("the parser requires --image-size or --image"),
    };
    let landmarks = LandmarkFile::load(&args.landmarks)
        .with_context(|| format!("loading {}", args.landmarks.display()))?
        .into_set(&table)
        .with_context(|| format!("matching {} to the anchor table", args.landmarks.display()))?;
    let intr = init_intrinsics_with(w, h, ctx.cfg.camera.principal_point)?;
    let problem = FitProblem::new(template, basis, intr, ctx.cfg.solver.clone())?;

    let dir = ctx.out_dir(args.out_dir)?;
    let mut diag_log = JsonlLog::open(dir.join("diagnostics.jsonl"))?;
    diag_log.record(
        "fit",
        json!({"landmarks": landmarks.len(), "image_size": [w, h], "solver": &ctx.cfg.solver}),
    )?;
    let out = fit(&problem, &landmarks)?;
    for rec in &out.diagnostics.iterations {
        diag_log.record("iteration", rec)?;
    }
    for w in &out.diagnostics.warnings {
        log::warn!("{w}");
        diag_log.record("warning", json!({"message": w}))?;
    }
    let record = FitRecord::new(&out.params, &problem.intrinsics);
    record.save(dir.join("fit.json"))?;
    if !out.params.is_finite() {
        diag_log.record("failure", json!({"message": "fitted parameters are not finite"}))?;
        return Err(NumericalFailure("fitted parameters are not finite".into()).into());
    }
    let face = out.face_mesh(&problem)?;
    save_mesh(&face, dir.join("face.obj"))?;
    let extr = out.params.extrinsics;
    save_mesh(&face.map_vertices(|p| extr.transform(p)), dir.join("posed.obj"))?;

    let intr_fit = problem.intrinsics.with_focal_scale(out.params.focal_scale);
    let mut sq = 0.0;
    for (a, p) in out.landmarks.anchors.iter().zip(&out.landmarks.points) {
        let x = sample_surface(&face, &a.anchor)?;
        sq += match headfit_core::camera::project(&x, &extr, &intr_fit) {
            Ok(q) => (q - p).norm_squared(),
            Err(_) => f64::INFINITY,
        };
    }
    let rmse = (sq / out.landmarks.len() as f64).sqrt();
    let first = out.diagnostics.iterations.first().map(|r| r.total);
    let last = out.diagnostics.iterations.last().map(|r| r.total);
    let summary = json!({
        "initial_energy": first,
        "final_energy": last,
        "final_landmark_energy": out.diagnostics.iterations.last().map(|r| r.landmark),
        "landmark_rmse_px": rmse,
        "pose_fallback": out.diagnostics.pose_fallback,
        "warnings": out.diagnostics.warnings,
        "out_dir": dir,
    });
    diag_log.record("summary", &summary)?;
    ctx.event("fit", &summary)?;
    print_json(&summary)
}
