use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use splatover::grasp::{filter_unsafe, sample_antipodal_grasps};
use splatover::policy::{batch_gradient, forward, Architecture, LossWeights, PolicyInput, PolicyParams};
use splatover::render::{render, render_frame};
use splatover_bench::Fixture;
use rand::SeedableRng;
use std::hint::black_box;

fn rendering(c: &mut Criterion) {
    let f = Fixture::new();
    c.bench_function("render 128px default scene", |b| {
        b.iter(|| render(black_box(&f.scene), &f.cam, &f.view, &f.render).unwrap())
    });
    c.bench_function("render_frame 128px", |b| {
        b.iter(|| render_frame(black_box(&f.scene), &f.cam, &f.view, &f.render).unwrap())
    });
}

fn policy(c: &mut Criterion) {
    let f = Fixture::new();
    let samples = f.samples();
    let arch = Architecture::default();
    let params = PolicyParams::init(arch, &mut rand_chacha::ChaCha8Rng::seed_from_u64(1));
    let frame = render_frame(&f.scene, &f.cam, &f.view, &f.render).unwrap();
    let input = PolicyInput::from_frame(&frame);
    c.bench_function("policy forward", |b| b.iter(|| forward(&params, black_box(&input)).unwrap()));

    let batch: Vec<_> = samples.iter().cycle().take(16).collect();
    let w = LossWeights::default();
    let mut g = c.benchmark_group("policy gradient");
    g.sample_size(10);
    g.bench_function("f32 batch 16", |b| {
        b.iter(|| batch_gradient(&arch, &params.values, black_box(&batch), &w).unwrap())
    });
    g.finish();
}

fn grasps(c: &mut Criterion) {
    let f = Fixture::new();
    let mut g = c.benchmark_group("grasps");
    g.sample_size(20);
    let mut seed = 0;
    g.bench_function("sample 500 antipodal", |b| {
        b.iter_batched(
            || {
                seed += 1;
                seed
            },
            |s| sample_antipodal_grasps(&f.object, &f.gripper, 500, 0.4, s).unwrap(),
            BatchSize::SmallInput,
        )
    });
    g.bench_function("filter unsafe", |b| {
        b.iter(|| filter_unsafe(black_box(&f.grasps), &f.hand, &f.gripper).unwrap())
    });
    g.finish();
}

criterion_group!(benches, rendering, policy, grasps);
criterion_main!(benches);
