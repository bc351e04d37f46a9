use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use f3ast_bench::{half_available, independent_region, objective_and_rate};
use f3ast_core::availability::ClientId;
use f3ast_core::fedtrain::aggregate_debias;
use f3ast_core::rate_region::{linear_max_oracle, optimal_rate};
use f3ast_core::selection::f3ast_select;
use f3ast_core::{ClientUpdate, CorrelationMode, HObjective};

fn selection(c: &mut Criterion) {
    let mut group = c.benchmark_group("f3ast_select");
    for n in [100, 1_000, 10_000] {
        let (obj, rate) = objective_and_rate(n);
        let config = half_available(n, 10);
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| f3ast_select(black_box(&obj), black_box(&rate), black_box(&config)).unwrap())
        });
    }
    group.finish();
}

fn select_and_smooth(c: &mut Criterion) {
    let (obj, mut rate) = objective_and_rate(1_000);
    let config = half_available(1_000, 10);
    c.bench_function("select_and_smooth/1000", |b| {
        b.iter(|| {
            let s = f3ast_select(&obj, &rate, &config).unwrap().selected;
            rate.smooth_update(&s);
        })
    });
}

fn aggregation(c: &mut Criterion) {
    let n = 1_000;
    let (obj, rate) = objective_and_rate(n);
    let updates: Vec<ClientUpdate> = (0..10).map(|k| ClientUpdate::new(ClientId(k * 7), vec![0.01; 610])).collect();
    c.bench_function("aggregate_debias/10x610", |b| {
        b.iter(|| aggregate_debias(black_box(&updates), obj.weights(), &rate, 610).unwrap())
    });
}

fn oracle(c: &mut Criterion) {
    let mut group = c.benchmark_group("linear_max_oracle");
    for n in [6, 10, 14] {
        let model = independent_region(n, 0.4, 3);
        let g: Vec<f64> = (0..n).map(|k| 1.0 + k as f64).collect();
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| linear_max_oracle(black_box(&model), black_box(&g)))
        });
    }
    group.finish();

    let model = independent_region(6, 0.4, 2);
    let p: Vec<f64> = (1..=6).map(|k| k as f64 / 21.0).collect();
    let obj = HObjective::new(p, CorrelationMode::Uncorrelated).unwrap();
    c.bench_function("optimal_rate/6", |b| b.iter(|| optimal_rate(&model, &obj, 1e-8).unwrap()));
}

criterion_group!(benches, selection, select_and_smooth, aggregation, oracle);
criterion_main!(benches);
