use std::hint::black_box;

use apex_core::config::ApexConfig;
use apex_core::maps::visible_voxels;
use apex_core::policy::{map_inputs, PolicyParams};
use apex_core::raycast::{traverse, Ray};
use apex_core::world::{generate_scene, render_depth, SceneParams};
use apex_core::{GridSpec, MapFrame, Vec3};
use criterion::{criterion_group, criterion_main, Criterion};

fn bench_traverse(c: &mut Criterion) {
    let grid = GridSpec::new(Vec3::zeros(), 1.0, [128, 128, 32]).unwrap();
    let ray = Ray::new(Vec3::new(0.3, 0.7, 0.2), Vec3::new(127.1, 101.9, 31.4));
    c.bench_function("traverse 128-cell diagonal", |b| {
        b.iter(|| traverse(black_box(&ray), &grid))
    });
}

fn bench_perception(c: &mut Criterion) {
    let cfg = ApexConfig::default();
    let scene = generate_scene(1, &SceneParams::trivial()).unwrap();
    let k = cfg.sensor.intrinsics().unwrap();
    let pose = scene.start;
    let grid = GridSpec::covering(&scene.bounds, cfg.maps.resolution).unwrap();
    c.bench_function("render depth", |b| {
        b.iter(|| render_depth(black_box(&scene), &pose, &k, cfg.sensor.max_range))
    });
    let depth = render_depth(&scene, &pose, &k, cfg.sensor.max_range);
    c.bench_function("visible voxels", |b| {
        b.iter(|| visible_voxels(black_box(&depth), &k, &pose, &grid, cfg.sensor.stride).unwrap())
    });
    let frame = MapFrame::new(grid, cfg.maps.decay_rate, cfg.rewards.saturation);
    let params = PolicyParams::init(cfg.features.layout((k.width, k.height)), 1);
    c.bench_function("map features + policy forward", |b| {
        b.iter(|| params.forward(&map_inputs(black_box(&frame), &pose, &cfg.features)))
    });
}

criterion_group!(benches, bench_traverse, bench_perception);
criterion_main!(benches);
