use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use dmimo_mpc::bounce::{classify_link, solve_single_bounce, ClassifierConfig};
use dmimo_mpc::pipeline::{run_pipeline, RunConfig};
use dmimo_mpc::pointcloud::{first_intersection, MarchParams, Ray};
use dmimo_mpc::tracker::{associate, track_snapshot, TrackerConfig};
use dmimo_mpc_bench::{link_fixture, point_sets, scenario, vs_measurements};
use std::hint::black_box;

fn bench_geometry(c: &mut Criterion) {
    let f = link_fixture(2);
    let record = f.records.iter().find(|r| r.key.path_id == 1).expect("a reflected path");
    let panel = f.panels.iter().find(|p| p.id == record.key.panel_id).unwrap();
    let ue = f.ues.iter().find(|u| u.snapshot_id == record.key.snapshot_id).unwrap();
    c.bench_function("solve_single_bounce", |b| {
        b.iter(|| solve_single_bounce(black_box(record), panel, &ue.position))
    });
    let ray = Ray::new(panel.position, record.aoa.direction(), 30.0).unwrap();
    let params = MarchParams::default();
    c.bench_function("first_intersection", |b| b.iter(|| first_intersection(&f.index, black_box(&ray), &params)));
    let link: Vec<_> = f
        .records
        .iter()
        .filter(|r| r.key.panel_id == panel.id && r.key.snapshot_id == ue.snapshot_id)
        .cloned()
        .collect();
    let cfg = ClassifierConfig::default();
    c.bench_function("classify_link", |b| b.iter(|| classify_link(black_box(&link), panel, &ue.position, &f.index, &cfg)));
}

fn bench_tracking(c: &mut Criterion) {
    let (a, m) = point_sets(8);
    c.bench_function("associate_8x8", |b| b.iter(|| associate(black_box(&a), black_box(&m), 1.0)));
    let meas = vs_measurements(20);
    let cfg = TrackerConfig::default();
    c.bench_function("track_snapshot_20_sources", |b| b.iter(|| track_snapshot(black_box(&meas), &cfg)));
}

fn bench_pipeline(c: &mut Criterion) {
    let mut group = c.benchmark_group("pipeline");
    group.sample_size(10);
    let cfg = RunConfig::synthetic(scenario(5), 1);
    group.bench_function("synthetic_5_snapshots", |b| {
        b.iter_batched(|| cfg.clone(), |cfg| run_pipeline(&cfg), BatchSize::SmallInput)
    });
    group.finish();
}

criterion_group!(benches, bench_geometry, bench_tracking, bench_pipeline);
criterion_main!(benches);
