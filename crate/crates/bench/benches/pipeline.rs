use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;
use streamgcn_bench::{wave_sequence, NetworkFixture};
use streamgcn_core::model::NetworkConfig;
use streamgcn_core::{build_stream_set, GraphFilter, SkeletonTopology};

fn graph(c: &mut Criterion) {
    let t = SkeletonTopology::ntu25();
    c.bench_function("graph_filter/ntu25", |b| {
        b.iter(|| GraphFilter::from_topology(black_box(&t)).unwrap())
    });
}

fn streams(c: &mut Criterion) {
    let t = SkeletonTopology::ntu25();
    let seq = wave_sequence(&t, 64);
    c.bench_function("stream_set/ntu25_64_frames", |b| {
        b.iter(|| build_stream_set(black_box(&seq), &t).unwrap())
    });
}

fn network(c: &mut Criterion) {
    let chain = SkeletonTopology::chain(5).unwrap();
    let desk = NetworkFixture::new(NetworkConfig::desk(5, 3), &chain, 64);
    let ntu = SkeletonTopology::ntu25();
    let ntu_desk = NetworkFixture::new(NetworkConfig::desk(25, 60), &ntu, 64);
    let mut g = c.benchmark_group("network");
    g.sample_size(20);
    g.bench_function("desk_5_joints/forward", |b| b.iter(|| desk.step(false)));
    g.bench_function("desk_5_joints/forward_backward", |b| {
        b.iter(|| desk.step(true))
    });
    g.bench_function("desk_25_joints/forward", |b| {
        b.iter(|| ntu_desk.step(false))
    });
    g.bench_function("desk_25_joints/forward_backward", |b| {
        b.iter(|| ntu_desk.step(true))
    });
    g.finish();
}

criterion_group!(benches, graph, streams, network);
criterion_main!(benches);
