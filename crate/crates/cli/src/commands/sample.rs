use std::collections::BTreeMap;

use anyhow::Result;
use headfit_core::dr::{save_feature, DrCodec};
use headfit_core::mesh::save_mesh;
use headfit_core::sampler::{sample_batch, GroupPlan, GroupRatios, GroupTag, ShapeDataset};
use serde_json::json;

use super::{print_json, required, Ctx};
use crate::args::SampleArgs;
use crate::exit::UsageError;
use crate::logging::JsonlLog;

pub fn run(ctx: &mut Ctx, args: SampleArgs) -> Result<()> {
    let manifest = required(args.manifest, &ctx.cfg.paths.manifest, "dataset manifest")?;
    let m = args.m.unwrap_or(ctx.cfg.sampler.m);
    if m == 0 {
        return Err(UsageError("m must be at least 1".into()).into());
    }
    let plan = match &args.group {
        Some(g) => GroupPlan::Fixed(g.parse::<GroupTag>()?),
        None => {
            let mut r: GroupRatios = ctx.cfg.sampler.ratios.clone();
            if let Some(e) = args.ratios {
                r.ethnicity = e;
            }
            if let Some(g) = args.gender_ratios {
                r.gender = g;
            }
            r.validate()?;
            GroupPlan::Ratios(r)
        }
    };
    if args.count == 0 {
        let summary = json!({"count": 0, "written": 0});
        ctx.event("sample", &summary)?;
        return print_json(&summary);
    }
    let dataset = ShapeDataset::load(&manifest)?;
    let name = dataset
        .entries()
        .first()
        .map(|e| e.feature.reference().to_string())
        .unwrap_or_default();
    let codec = DrCodec::new(dataset.reference(), name, 0)?;
    let faces = sample_batch(&dataset, &codec, &plan, m, args.count, ctx.seed, ctx.exec)?;

    let dir = ctx.out_dir(args.out_dir)?;
    let mut log = JsonlLog::open(dir.join("sampling.jsonl"))?;
    let plan_json = match &plan {
        GroupPlan::Fixed(g) => json!({"group": g}),
        GroupPlan::Ratios(r) => json!({"ratios": r}),
    };
    log.record(
        "batch",
        json!({"seed": ctx.seed, "count": args.count, "m": m, "manifest": manifest, "plan": plan_json}),
    )?;
    let mut counts: BTreeMap<String, usize> = GroupTag::all().map(|g| (g.to_string(), 0)).collect();
    let width = args.count.to_string().len().max(4);
    for (i, face) in faces.iter().enumerate() {
        let stem = format!("sample_{i:0width$}");
        let mesh_path = dir.join(format!("{stem}.obj"));
        save_mesh(&face.mesh, &mesh_path)?;
        if args.features {
            save_feature(&face.feature, dir.join(format!("{stem}.dr")))?;
        }
        *counts.entry(face.group.to_string()).or_default() += 1;
        let members: Vec<&str> = face
            .members
            .iter()
            .map(|&k| dataset.entries()[k].name.as_str())
            .collect();
        log.record(
            "sample",
            json!({
                "index": i,
                "mesh": mesh_path.file_name().map(|f| f.to_string_lossy().into_owned()),
                "group": face.group,
                "members": members,
                "weights": face.weights,
                "weight_norm": face.weights.iter().map(|w| w * w).sum::<f64>().sqrt(),
                "nearest": dataset.entries()[face.nearest].name,
                "texture": face.texture,
            }),
        )?;
    }
    log.record("group_counts", &counts)?;
    let summary = json!({"count": faces.len(), "out_dir": dir, "group_counts": counts});
    ctx.event("sample", &summary)?;
    print_json(&summary)
}
