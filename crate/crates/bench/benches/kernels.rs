use std::hint::black_box;

use cellfree_core::apga::{grad_b, grad_u, BitProblem, FixedState, PositionProblem};
use cellfree_core::metrics::{evaluate, mmse_combiners, PowerModel};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

mod common;

fn channels(c: &mut Criterion) {
    let mut g = c.benchmark_group("channel_synthesis");
    for m in [10, 20, 40] {
        let model = common::model(m, 5);
        let centers = model.centers();
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| b.iter(|| model.channels(black_box(&centers))));
    }
    g.finish();
}

fn combiners(c: &mut Criterion) {
    let mut g = c.benchmark_group("mmse_combiners");
    for m in [10, 20, 40] {
        let f = common::fixture(m, 5);
        g.bench_with_input(BenchmarkId::from_parameter(m), &m, |b, _| {
            b.iter(|| mmse_combiners(black_box(&f.channels), &f.zeta, &f.eta, common::link()))
        });
    }
    g.finish();
}

fn metrics(c: &mut Criterion) {
    let f = common::fixture(20, 5);
    let power = PowerModel::default();
    c.bench_function("evaluate_m20_k5", |b| {
        b.iter(|| evaluate(black_box(&f.channels), &f.zeta, &f.bits, &f.eta, &f.combiners, common::link(), &power))
    });
}

fn gradients(c: &mut Criterion) {
    let f = common::fixture(20, 5);
    let power = PowerModel::default();
    let state = FixedState { eta: &f.eta, combiners: &f.combiners, params: common::link(), s_min: 0.0, xi: 0.0 };
    let u = f.model.centers().to_flat();
    let pos = PositionProblem { model: &f.model, zeta: &f.zeta, state };
    c.bench_function("grad_u_m20_k5", |b| b.iter(|| grad_u(&pos, black_box(&u))));
    let bit = BitProblem { channels: &f.channels, power: &power, state, theta: 1e8 };
    c.bench_function("grad_b_m20_k5", |b| b.iter(|| grad_b(&bit, black_box(&f.bits))));
}

criterion_group!(benches, channels, combiners, metrics, gradients);
criterion_main!(benches);
