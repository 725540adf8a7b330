use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use degfair_core::graph::{generalized_degree, split_nodes};
use degfair_core::operators::GraphOperators;
use degfair_core::params::BaseKind;
use degfair_core::synth::{synth_generate, SynthParams};
use degfair_core::trainer::{train, train_base, Preset, TrainConfig};
use degfair_core::{Graph, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn graph(edges: usize) -> Graph {
    let attach = 4;
    synth_generate(&SynthParams {
        n: edges / attach,
        attach,
        label_bias: 0.9,
        feat_dim: 32,
        seed: 0,
    })
    .unwrap()
}

fn random(rows: usize, cols: usize) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    Tensor::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for rows in [1_000, 10_000] {
        let a = random(rows, 64);
        let b = random(64, 64);
        group.bench_with_input(BenchmarkId::new("seq", rows), &rows, |bench, _| {
            bench.iter(|| black_box(a.matmul_seq(&b).unwrap()))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("par", rows), &rows, |bench, _| {
            bench.iter(|| black_box(a.matmul_par(&b).unwrap()))
        });
    }
    group.finish();
}

fn spmm(c: &mut Criterion) {
    let mut group = c.benchmark_group("spmm_gcn");
    for edges in [8_000, 64_000] {
        let g = graph(edges);
        let ops = GraphOperators::new(&g, 1, 8.0).unwrap();
        let x = random(g.num_nodes(), 32);
        let m = &ops.gcn.forward;
        group.bench_with_input(BenchmarkId::new("seq", edges), &edges, |bench, _| {
            bench.iter(|| black_box(m.spmm_seq(&x).unwrap()))
        });
        #[cfg(feature = "parallel")]
        group.bench_with_input(BenchmarkId::new("par", edges), &edges, |bench, _| {
            bench.iter(|| black_box(m.spmm_par(&x).unwrap()))
        });
    }
    group.finish();
}

fn walks(c: &mut Criterion) {
    let mut group = c.benchmark_group("adjacency_matvec");
    let g = graph(64_000);
    let ones = vec![1.0; g.num_nodes()];
    group.bench_function("seq", |bench| bench.iter(|| black_box(g.adjacency_matvec_seq(&ones))));
    #[cfg(feature = "parallel")]
    group.bench_function("par", |bench| bench.iter(|| black_box(g.adjacency_matvec_par(&ones))));
    group.bench_function("generalized_degree_r2", |bench| {
        bench.iter(|| black_box(generalized_degree(&g, 2).unwrap()))
    });
    group.finish();
}

fn epochs(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_10_epochs");
    group.sample_size(10);
    for edges in [1_000, 8_000] {
        let g = graph(edges);
        let split = split_nodes(g.num_nodes(), (0.6, 0.2, 0.2), 0).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            patience: 10,
            ..TrainConfig::preset(Preset::Synth, BaseKind::Gcn)
        };
        group.bench_with_input(BenchmarkId::new("degfair_gcn", edges), &edges, |bench, _| {
            bench.iter(|| black_box(train(&g, &split, &cfg).unwrap()))
        });
        group.bench_with_input(BenchmarkId::new("gcn", edges), &edges, |bench, _| {
            bench.iter(|| black_box(train_base(&g, &split, &cfg).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, matmul, spmm, walks, epochs);
criterion_main!(benches);
