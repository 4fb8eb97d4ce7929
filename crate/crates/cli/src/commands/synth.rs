//! Self-contained demo inputs for every other command.

use std::f64::consts::PI;

use anyhow::Result;
use headfit_core::camera::{init_intrinsics_with, project, Extrinsics};
use headfit_core::dr::{save_feature, DrCodec};
use headfit_core::eval::ALIGNMENT_LABEL;
use headfit_core::mesh::{sample_surface, save_mesh, Mesh, Vec3};
use headfit_core::sampler::{GroupTag, Manifest, ManifestEntry};
use headfit_core::solver::{FitParams, FitRecord, LandmarkFile};
use headfit_core::synth::{head_assets, HeadSpec};
use headfit_core::texture::UvTexture;
use nalgebra::{Rotation3, Unit, UnitQuaternion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use super::{print_json, write_json, Ctx};
use crate::args::SynthArgs;
use crate::exit::UsageError;

/// Ground-truth head yaw in the synthetic photograph.
const YAW_DEG: f64 = 15.0;
const DEPTH: f64 = 650.0;

/// Group-specific proportions plus a random low-frequency bump field.
fn variant(mesh: &Mesh, group_index: usize, rng: &mut ChaCha8Rng) -> Mesh {
    let base = Vec3::new(
        1.0 + 0.04 * (group_index % 3) as f64 - 0.04,
        1.0 + 0.03 * (group_index / 3) as f64,
        1.0 - 0.02 * (group_index % 2) as f64,
    );
    let jitter = Vec3::new(
        rng.random_range(-0.03..0.03),
        rng.random_range(-0.03..0.03),
        rng.random_range(-0.03..0.03),
    );
    let scale = base + jitter;
    let waves: Vec<(Vec3, f64, f64)> = (0..3)
        .map(|_| {
            let k = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            ) * (PI / 150.0);
            (k, rng.random_range(1.0..3.0), rng.random_range(0.0..2.0 * PI))
        })
        .collect();
    mesh.map_vertices(|p| {
        let bump: f64 = waves.iter().map(|(k, a, ph)| a * (k.dot(p) + ph).sin()).sum();
        let n = p.try_normalize(1e-12).unwrap_or_else(Vec3::zeros);
        p.component_mul(&scale) + n * bump
    })
}

fn photo(w: usize, h: usize) -> UvTexture {
    UvTexture::from_fn(w, h, |x, y| {
        let (x, y) = (x as f64, y as f64);
        [
            0.55 + 0.25 * (x / 23.0).sin(),
            0.45 + 0.25 * (y / 17.0).cos(),
            0.5 + 0.2 * ((x + y) / 31.0).sin(),
        ]
    })
}

fn background(w: usize, h: usize) -> UvTexture {
    UvTexture::from_fn(w, h, |x, y| {
        let t = y as f64 / h.max(1) as f64;
        let s = x as f64 / w.max(1) as f64;
        [0.78 - 0.1 * t, 0.6 - 0.08 * t + 0.02 * s, 0.5 - 0.06 * t]
    })
}

pub fn run(ctx: &mut Ctx, args: SynthArgs) -> Result<()> {
    if args.rings < 8 || args.segments < 10 {
        return Err(UsageError("the head needs at least 8 rings and 10 segments".into()).into());
    }
    if args.per_group < 2 {
        return Err(UsageError("--per-group must be at least 2".into()).into());
    }
    if !(args.noise >= 0.0) {
        return Err(UsageError("--noise must be non-negative".into()).into());
    }
    let dir = args.out_dir;
    std::fs::create_dir_all(dir.join("dataset"))?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.seed);
    let spec = HeadSpec {
        rings: args.rings,
        segments: args.segments,
        ..HeadSpec::default()
    };
    let assets = head_assets(spec);
    let head = assets
        .mesh
        .clone()
        .with_label(ALIGNMENT_LABEL, assets.alignment.to_vec())?;
    save_mesh(&head, dir.join("head.obj"))?;
    assets.anchors.save(dir.join("anchors.json"))?;
    assets.basis.save(dir.join("basis.json"))?;

    // ground truth: mild expression, yawed head facing the camera
    let (iw, ih) = args.image_size;
    let intr = init_intrinsics_with(iw, ih, ctx.cfg.camera.principal_point)?;
    let extr = Extrinsics::new(
        UnitQuaternion::from_euler_angles(PI, YAW_DEG.to_radians(), 0.0),
        Vec3::new(0.0, 0.0, DEPTH),
    );
    let mut truth = FitParams::neutral(head.vertex_count(), assets.basis.len(), extr);
    for (k, b) in truth.beta.iter_mut().enumerate() {
        *b = 0.4 * (-1.0f64).powi(k as i32);
    }
    FitRecord::new(&truth, &intr).save(dir.join("truth.json"))?;
    let face = truth.face_mesh(&head, &assets.basis)?;
    let mut points = Vec::with_capacity(assets.anchors.anchors.len());
    for a in &assets.anchors.anchors {
        let p = project(&sample_surface(&face, &a.anchor)?, &extr, &intr)?;
        let gx: f64 = rng.sample(StandardNormal);
        let gy: f64 = rng.sample(StandardNormal);
        points.push([p.x + args.noise * gx, p.y + args.noise * gy]);
    }
    LandmarkFile {
        markup: points.len().to_string(),
        points,
        indices: None,
    }
    .save(dir.join("landmarks.json"))?;
    photo(iw as usize, ih as usize).save_ppm(dir.join("photo.ppm"))?;
    let (tw, th) = args.texture_size;
    background(tw as usize, th as usize).save_ppm(dir.join("background.ppm"))?;

    // shape dataset: DR features of per-group variants of the head
    let codec = DrCodec::new(&head, "head", 0)?;
    let mut shapes = Vec::new();
    for (g, group) in GroupTag::all().enumerate() {
        for k in 0..args.per_group {
            let name = format!("{group}_{k:02}");
            let feature = codec.encode(&variant(&head, g, &mut rng), ctx.exec)?;
            let file = format!("{name}.dr");
            save_feature(&feature, dir.join("dataset").join(&file))?;
            shapes.push(ManifestEntry {
                name: name.clone(),
                feature: file.into(),
                group,
                texture: Some(format!("tex_{name}")),
            });
        }
    }
    Manifest {
        reference: "../head.obj".into(),
        shapes,
    }
    .save(dir.join("dataset").join("manifest.json"))?;

    // evaluation pair: a perturbed, slightly misplaced copy of the head
    save_mesh(&head, dir.join("eval_gt.obj"))?;
    let axis = Unit::new_normalize(Vec3::new(0.3, 1.0, 0.2));
    let rot = Rotation3::from_axis_angle(&axis, 3f64.to_radians());
    let shift = Vec3::new(2.0, -1.0, 1.5);
    let pred = variant(&head, 0, &mut rng).map_vertices(|p| rot * p + shift);
    save_mesh(&pred, dir.join("eval_pred.obj"))?;

    let config = "[run]\nseed = 0\n\n[paths]\ntemplate = \"head.obj\"\nanchors = \"anchors.json\"\nbasis = \"basis.json\"\nmanifest = \"dataset/manifest.json\"\n";
    std::fs::write(dir.join("config.toml"), config)?;
    write_json(
        &dir.join("exclude.json"),
        &json!([[[0.30, 0.55], [0.42, 0.55], [0.42, 0.60], [0.30, 0.60]]]),
    )?;

    let summary = json!({
        "out_dir": dir,
        "vertices": head.vertex_count(),
        "landmarks": assets.anchors.anchors.len(),
        "shapes": GroupTag::all().count() * args.per_group,
    });
    ctx.event("synth", &summary)?;
    print_json(&summary)
}
