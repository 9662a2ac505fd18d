use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use predmpc_bench::model_fixture;
use predmpc_core::neural::{backward, forward};

fn model(c: &mut Criterion) {
    let (w, history, truth) = model_fixture(3, 2);
    c.bench_function("model_forward", |b| b.iter(|| black_box(forward(&history, &w).unwrap())));
    c.bench_function("model_backward", |b| b.iter(|| black_box(backward(&history, &truth, &w, 0.01).unwrap())));
}

criterion_group!(benches, model);
criterion_main!(benches);
