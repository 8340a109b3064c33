use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ncd_bench::{default_model, random_cost, random_matrix};
use ncd_core::autodiff::matmul;
use ncd_core::losses::taped;
use ncd_core::metrics::hungarian;
use ncd_core::model::forward_tape;
use ncd_core::pseudo_label::sinkhorn_knopp;
use ncd_core::{SinkhornConfig, Tape};
use std::hint::black_box;

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [32, 128, 256] {
        let a = random_matrix(n, 64, 1);
        let b = random_matrix(64, 64, 2);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn bench_forward_backward(c: &mut Criterion) {
    let params = default_model(32, 4, 4);
    let tau = params.dims.tau;
    let x = random_matrix(128, 32, 3);
    let x_view = random_matrix(128, 32, 4);
    c.bench_function("forward_backward/batch128", |bench| {
        bench.iter(|| {
            let tape = Tape::new();
            let bound = params.bind(&tape);
            let a = forward_tape(&bound, &tape, tape.constant(x.clone()), tau).unwrap();
            let b = forward_tape(&bound, &tape, tape.constant(x_view.clone()), tau).unwrap();
            let inter = taped::inter_class(&tape, a.p_h, a.p_g).unwrap();
            let intra = taped::intra_class(&tape, Some((a.p_h, b.p_h)), Some((a.p_g, b.p_g))).unwrap();
            let loss = tape.add(inter, intra).unwrap();
            black_box(tape.backward(loss).unwrap().collect(bound.vars()))
        })
    });
}

fn bench_sinkhorn(c: &mut Criterion) {
    let mut group = c.benchmark_group("sinkhorn");
    let cfg = SinkhornConfig::default();
    for rows in [128, 1024] {
        let logits = random_matrix(rows, 5, 5);
        group.bench_with_input(BenchmarkId::from_parameter(rows), &rows, |bench, _| {
            bench.iter(|| sinkhorn_knopp(black_box(&logits), &cfg).unwrap())
        });
    }
    group.finish();
}

fn bench_hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    for n in [5, 20, 50] {
        let cost = random_cost(n, 6);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| hungarian(black_box(&cost)).unwrap())
        });
    }
    group.finish();
}

criterion_group!(kernels, bench_matmul, bench_forward_backward, bench_sinkhorn, bench_hungarian);
criterion_main!(kernels);
