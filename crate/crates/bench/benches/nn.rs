use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use sisa_bench::{batch, model};
use sisa_core::nn::adam_step;
use sisa_core::Architecture;

fn archs() -> Vec<(&'static str, Architecture, Vec<usize>)> {
    vec![
        ("mlp32", Architecture::Mlp { input: 32, hidden: 64 }, vec![32]),
        ("cnn_ref", Architecture::reference_for(&[3, 32, 32]), vec![3, 32, 32]),
    ]
}

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward");
    for (name, arch, dims) in archs() {
        let (p, _) = model(&arch, 5);
        let (x, _) = batch(64, &dims, 5);
        g.bench_with_input(BenchmarkId::from_parameter(name), &x, |b, x| b.iter(|| p.forward(x).unwrap()));
    }
    g.finish();
}

fn loss_and_grad(c: &mut Criterion) {
    let mut g = c.benchmark_group("loss_and_grad");
    g.sample_size(10);
    for (name, arch, dims) in archs() {
        let (p, _) = model(&arch, 5);
        let (x, y) = batch(64, &dims, 5);
        g.bench_function(name, |b| b.iter(|| p.loss_and_grad(&x, &y).unwrap()));
    }
    g.finish();
}

fn adam(c: &mut Criterion) {
    let mut g = c.benchmark_group("adam_step");
    for (name, arch, dims) in archs() {
        let (mut p, mut opt) = model(&arch, 5);
        let (x, y) = batch(8, &dims, 5);
        let (_, grads) = p.loss_and_grad(&x, &y).unwrap();
        g.bench_function(name, |b| b.iter(|| adam_step(&mut p, &grads, &mut opt).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, forward, loss_and_grad, adam);
criterion_main!(benches);
