use anyhow::{Context, Result};
use headfit_core::mesh::Vec2;
use headfit_core::solver::{BlendshapeBasis, FitRecord};
use headfit_core::texture::{
    fill_boundary_ring, poisson_blend, project_texture, ProjectionContext, TexelState, UvTexture,
};
use serde_json::json;

use super::{ensure_parent, print_json, read_json, read_mesh, required, Ctx};
use crate::args::TextureArgs;
use crate::exit::{NumericalFailure, UsageError};

pub fn run(ctx: &mut Ctx, args: TextureArgs) -> Result<()> {
    let template_path = required(args.template, &ctx.cfg.paths.template, "template mesh")?;
    let template = read_mesh(&template_path)?;
    if template.uv().is_none() {
        return Err(UsageError(format!("{} has no texture coordinates", template_path.display())).into());
    }
    let record = FitRecord::load(&args.fit).with_context(|| format!("loading {}", args.fit.display()))?;
    let params = record.params();
    let basis = match args.basis.or_else(|| ctx.cfg.paths.basis.clone()) {
        Some(p) => BlendshapeBasis::load(&p).with_context(|| format!("loading {}", p.display()))?,
        None => BlendshapeBasis::empty(template.vertex_count()),
    };
    if params.beta.len() != basis.len() || params.delta.len() != template.vertex_count() {
        return Err(UsageError(format!(
            "{} does not match the template and basis ({} weights, {} offsets)",
            args.fit.display(),
            params.beta.len(),
            params.delta.len()
        ))
        .into());
    }
    let face = params.face_mesh(&template, &basis)?;
    let intr = record.pose.intrinsics();
    let image = UvTexture::load_ppm(&args.image)?;
    let background = UvTexture::load_ppm(&args.background)?;
    let (w, h) = match args.size {
        Some((w, h)) => (w as usize, h as usize),
        None => (background.width(), background.height()),
    };
    if (w, h) != (background.width(), background.height()) {
        return Err(UsageError(format!(
            "background is {}x{} but the texture size is {w}x{h}",
            background.width(),
            background.height()
        ))
        .into());
    }

    let mut pctx = ProjectionContext::new(face, params.extrinsics, intr, image, ctx.exec);
    if let Some(p) = &args.exclude {
        let polys: Vec<Vec<[f64; 2]>> = read_json(p)?;
        pctx.exclude = polys
            .into_iter()
            .map(|poly| poly.into_iter().map(|[u, v]| Vec2::new(u, v)).collect())
            .collect();
    }
    let mut projected = project_texture(&pctx, w, h, ctx.exec)?;
    let coverage = projected.mask.iter().filter(|&&m| m == TexelState::Projected).count();
    if let Some(p) = &args.projected {
        ensure_parent(p)?;
        projected.save_ppm(p)?;
    }
    fill_boundary_ring(&mut projected);
    let mut blended = poisson_blend(&projected, &background, ctx.exec)?;
    blended.bit_depth = background.bit_depth;
    ensure_parent(&args.out)?;
    blended.save_ppm(&args.out)?;
    let stem = args
        .out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "texture".into());
    let mask_path = args.out.with_file_name(format!("{stem}_mask.pgm"));
    blended.save_mask(&mask_path)?;
    if !blended.pixels.iter().flatten().all(|c| c.is_finite()) {
        return Err(NumericalFailure("blended texture contains non-finite values".into()).into());
    }
    let summary = json!({
        "size": [w, h],
        "projected_texels": coverage,
        "coverage": coverage as f64 / (w * h) as f64,
        "texture": args.out,
        "mask": mask_path,
    });
    ctx.event("texture", &summary)?;
    print_json(&summary)
}
