use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use proedit_bench::{scene_at, standard_bench};
use proedit_core::adaptive::{MaintenanceConfig, Maintainer};
use proedit_core::difficulty::image_distance;
use proedit_core::scheduler::{plan_preset, DecomposeLimits, Preset};
use proedit_core::splat::{backward, render, train_step, Adam, LearningRates, LossConfig};

fn splatting(c: &mut Criterion) {
    let mut g = c.benchmark_group("splat");
    for n in [200, 1000, 5000] {
        let (cloud, cam, target) = scene_at(n, 64);
        g.bench_with_input(BenchmarkId::new("render", n), &n, |b, _| b.iter(|| render(&cloud, &cam)));
        let weights = target.clone();
        g.bench_with_input(BenchmarkId::new("backward", n), &n, |b, _| {
            b.iter(|| backward(&cloud, &cam, &weights).unwrap())
        });
        g.bench_with_input(BenchmarkId::new("train_step", n), &n, |b, _| {
            let mut cloud = cloud.clone();
            let mut opt = Adam::new(LearningRates::default(), cloud.len());
            b.iter(|| train_step(&mut cloud, &target, &cam, &mut opt, &LossConfig::default()).unwrap())
        });
    }
    g.finish();
}

fn maintenance(c: &mut Criterion) {
    let (cloud, cam, target) = scene_at(2000, 64);
    c.bench_function("maintain/2000", |b| {
        b.iter_batched(
            || {
                let mut cloud = cloud.clone();
                let mut opt = Adam::new(LearningRates::default(), cloud.len());
                train_step(&mut cloud, &target, &cam, &mut opt, &LossConfig::default()).unwrap();
                let cfg = MaintenanceConfig {
                    warmup_iters: 0,
                    ..MaintenanceConfig::default()
                };
                (cloud, opt, Maintainer::new(cfg, 1))
            },
            |(mut cloud, mut opt, mut m)| m.maintain(&mut cloud, &mut opt).unwrap(),
            criterion::BatchSize::SmallInput,
        )
    });
}

fn difficulty(c: &mut Criterion) {
    let bench = standard_bench();
    let a = &bench.views[0].original;
    let b = &bench.views[1].original;
    c.bench_function("image_distance/64x64", |bch| bch.iter(|| image_distance(a, b).unwrap()));

    let mut g = c.benchmark_group("decompose");
    g.sample_size(10);
    g.bench_function("geometry_preset_uncached", |bch| {
        bch.iter(|| {
            let est = bench.estimator(0).unwrap();
            let mut oracle = |x, y| est.difficulty(x, y);
            plan_preset(&mut oracle, Preset::Geometry, &DecomposeLimits::default()).unwrap()
        })
    });
    g.finish();
}

criterion_group!(benches, splatting, maintenance, difficulty);
criterion_main!(benches);
