use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sas_bench::torus_analysis;
use sas_core::serialize::{serialize_cds_bfs, serialize_cds_spectral, serialize_gcs, serialize_hilbert, DEFAULT_CURVE_BITS};

fn orders(c: &mut Criterion) {
    let mut group = c.benchmark_group("serialize");
    for g in [32, 64, 128] {
        let a = torus_analysis(g);
        let centers = &a.tokens.centers;
        group.bench_with_input(BenchmarkId::new("cds_bfs", g), &g, |b, _| {
            b.iter(|| serialize_cds_bfs(black_box(&a.cds_graph), centers, 6).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("cds_spectral", g), &g, |b, _| {
            b.iter(|| serialize_cds_spectral(black_box(&a.cds_graph), centers).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("gcs", g), &g, |b, _| b.iter(|| serialize_gcs(black_box(&a.heat)).unwrap()));
        group.bench_with_input(BenchmarkId::new("hilbert", g), &g, |b, _| {
            b.iter(|| serialize_hilbert(black_box(centers), DEFAULT_CURVE_BITS).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, orders);
criterion_main!(benches);
