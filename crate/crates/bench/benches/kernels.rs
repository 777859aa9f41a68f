use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use monoinstance_core::cluster::chamfer_distance;
use monoinstance_core::render::grid::SdfGrid;
use monoinstance_core::render::volume::{ray_box, render_ray, RaySamples};
use monoinstance_core::spatial::UniformGrid;
use monoinstance_core::Vec3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cloud(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vec3::new(rng.random(), rng.random(), rng.random()))
        .collect()
}

fn ball_query(c: &mut Criterion) {
    let mut group = c.benchmark_group("ball_query");
    let queries = cloud(1000, 2);
    for n in [10_000, 30_000] {
        let points = cloud(n, 1);
        let radius = 0.05;
        let index = UniformGrid::new(&points, radius);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| queries.iter().map(|q| index.count_within(black_box(q), radius)).sum::<usize>())
        });
    }
    group.finish();
}

fn chamfer(c: &mut Criterion) {
    let mut group = c.benchmark_group("chamfer");
    for n in [1024, 2048] {
        let a = cloud(n, 3);
        let b = cloud(n, 4);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| chamfer_distance(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn render(c: &mut Criterion) {
    let grid = SdfGrid::sphere(Vec3::repeat(-1.0), 2.0, 48, 0.5, false).unwrap();
    let origin = Vec3::new(0.1, -0.05, -3.0);
    let dir = Vec3::new(0.0, 0.0, 1.0);
    let (t0, t1) = ray_box(&origin, &dir, &grid.min, &grid.max()).unwrap();
    let mut group = c.benchmark_group("render_ray");
    for m in [64, 128] {
        let samples = RaySamples::stratified::<ChaCha8Rng>(t0, t1, m, None);
        group.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| render_ray(&grid, black_box(&origin), black_box(&dir), &samples, true))
        });
    }
    group.finish();
}

criterion_group!(benches, ball_query, chamfer, render);
criterion_main!(benches);
