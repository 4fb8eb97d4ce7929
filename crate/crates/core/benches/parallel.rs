use std::f64::consts::PI;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use headfit_core::camera::{init_intrinsics, Extrinsics};
use headfit_core::dr::DrCodec;
use headfit_core::eval::armse;
use headfit_core::mesh::Vec3;
use headfit_core::sampler::{sample_batch, GroupPlan, GroupTag, ShapeDataset, ShapeEntry};
use headfit_core::synth::{self, head_mesh, HeadSpec};
use headfit_core::texture::{project_texture, ProjectionContext, UvTexture};
use headfit_core::Exec;
use nalgebra::UnitQuaternion;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn head() -> headfit_core::mesh::Mesh {
    head_mesh(&HeadSpec {
        rings: 40,
        segments: 48,
        ..HeadSpec::default()
    })
}

fn encode(c: &mut Criterion) {
    let mesh = head();
    let deformed = synth::smooth_deformation(&mesh, 1, 0.03);
    let codec = DrCodec::new(&mesh, "head", 0).unwrap();
    let mut g = c.benchmark_group("dr_encode");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| codec.encode(black_box(&deformed), exec).unwrap())
        });
    }
    g.finish();
}

fn metric(c: &mut Criterion) {
    let gt = head();
    let pred = synth::smooth_deformation(&gt, 2, 0.01);
    let pred = pred.translated(&(gt.centroid() - pred.centroid()));
    let mut g = c.benchmark_group("armse");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| armse(black_box(&gt), &pred, exec).unwrap())
        });
    }
    g.finish();
}

fn texture(c: &mut Criterion) {
    let mesh = head();
    let intr = init_intrinsics(640, 480).unwrap();
    let extr = Extrinsics::new(
        UnitQuaternion::from_euler_angles(PI, 0.3, 0.0),
        Vec3::new(0.0, 0.0, 600.0),
    );
    let photo = UvTexture::from_fn(640, 480, |x, y| [x as f64 / 640.0, y as f64 / 480.0, 0.5]);
    let ctx = ProjectionContext::new(mesh, extr, intr, photo, Exec::default());
    let mut g = c.benchmark_group("project_texture");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| project_texture(black_box(&ctx), 256, 256, exec).unwrap())
        });
    }
    g.finish();
}

fn sampling(c: &mut Criterion) {
    let mesh = head_mesh(&HeadSpec::default());
    let codec = DrCodec::new(&mesh, "head", 0).unwrap();
    let group: GroupTag = "asian_female".parse().unwrap();
    let entries = (0..6)
        .map(|k| ShapeEntry {
            name: format!("s{k}"),
            feature: codec
                .encode(&synth::smooth_deformation(&mesh, k, 0.02), Exec::default())
                .unwrap(),
            group,
            texture: None,
        })
        .collect();
    let dataset = ShapeDataset::new(mesh, entries).unwrap();
    let plan = GroupPlan::Fixed(group);
    let mut g = c.benchmark_group("sample_batch");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_batch(black_box(&dataset), &codec, &plan, 5, 16, 7, exec).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, encode, metric, texture, sampling);
criterion_main!(benches);
