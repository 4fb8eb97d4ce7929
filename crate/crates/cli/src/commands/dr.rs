use anyhow::{Context, Result};
use headfit_core::dr::{load_feature, save_feature, DrCodec};
use headfit_core::mesh::{save_mesh, Vec3};
use serde_json::json;

use super::{ensure_parent, max_vertex_error, print_json, read_mesh, required, Ctx};
use crate::args::{DecodeArgs, EncodeArgs};
use crate::exit::{NumericalFailure, UsageError};

pub fn encode(ctx: &mut Ctx, args: EncodeArgs) -> Result<()> {
    let ref_path = required(args.reference, &ctx.cfg.paths.template, "reference mesh")?;
    let reference = read_mesh(&ref_path)?;
    let deformed = read_mesh(&args.mesh)?;
    let name = args.name.unwrap_or_else(|| {
        ref_path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "reference".into())
    });
    let codec = DrCodec::new(&reference, name, args.anchor).context("preparing the reference mesh")?;
    let feature = codec.encode(&deformed, ctx.exec)?;
    ensure_parent(&args.out)?;
    save_feature(&feature, &args.out)?;
    if !feature.as_slice().iter().all(|v| v.is_finite()) {
        return Err(NumericalFailure("feature contains non-finite values".into()).into());
    }
    let mut summary = json!({"vertices": feature.vertex_count(), "feature": args.out});
    if args.verify {
        let anchor = deformed.vertices()[args.anchor];
        let back = codec.decode(&feature, &anchor, ctx.exec)?;
        let err = max_vertex_error(&back, &deformed);
        summary["round_trip_max_error"] = json!(err);
        summary["round_trip_relative_error"] = json!(err / deformed.bbox_diagonal());
    }
    ctx.event("encode-dr", &summary)?;
    print_json(&summary)
}

pub fn decode(ctx: &mut Ctx, args: DecodeArgs) -> Result<()> {
    let ref_path = required(args.reference, &ctx.cfg.paths.template, "reference mesh")?;
    let reference = read_mesh(&ref_path)?;
    let feature = load_feature(&args.feature)?;
    let codec = DrCodec::new(&reference, feature.reference(), args.anchor).context("preparing the reference mesh")?;
    let anchor = match args.anchor_position {
        Some(p) => Vec3::from(p),
        None => reference.vertices()[args.anchor],
    };
    let mesh = codec.decode(&feature, &anchor, ctx.exec)?;
    ensure_parent(&args.out)?;
    save_mesh(&mesh, &args.out)?;
    let mut summary = json!({"vertices": mesh.vertex_count(), "mesh": args.out});
    if let Some(cmp) = &args.compare {
        let other = read_mesh(cmp)?;
        if !other.same_topology(&mesh) {
            return Err(UsageError(format!("{} does not share the reference topology", cmp.display())).into());
        }
        let err = max_vertex_error(&mesh, &other);
        summary["max_error"] = json!(err);
        summary["relative_error"] = json!(err / other.bbox_diagonal());
    }
    ctx.event("decode-dr", &summary)?;
    print_json(&summary)
}
