use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use facesearch_bench::random_dataset;
use facesearch_core::search::{init_session, iterate, SearchConfig, SyntheticProblem};
use facesearch_core::skewnormal::{sample_sn, SnParams};
use facesearch_core::{fit_eigenmodel, Geometry};
use nalgebra::{DMatrix, DVector};

fn fit(c: &mut Criterion) {
    let ds = random_dataset(300, Geometry::new(32, 32), 1);
    c.bench_function("fit_eigenmodel 300x1024 k=100", |b| {
        b.iter(|| fit_eigenmodel(black_box(&ds), 100).unwrap())
    });
}

fn sampler(c: &mut Criterion) {
    let k = 100;
    let delta = DVector::from_fn(k, |i, _| 0.9 * ((i as f64) * 0.37).sin());
    let params = SnParams::new(delta, DMatrix::identity(k, k)).unwrap();
    c.bench_function("sample_sn k=100 n=10000", |b| {
        b.iter(|| sample_sn(black_box(&params), 10_000, 7))
    });
}

fn search(c: &mut Criterion) {
    let problem = SyntheticProblem::standard_normal(10, 1000, 3).unwrap();
    let oracle = problem.oracle();
    let config = SearchConfig {
        epsilon: 1.2,
        epsilon_star: 0.0,
        max_iters: usize::MAX,
        ..SearchConfig::default()
    };
    let start = init_session(
        &problem.pool,
        &problem.eigen,
        &problem.mvn,
        &oracle,
        config,
        5,
    )
    .unwrap();
    c.bench_function("search iterate k=10 n=9", |b| {
        b.iter_batched(
            || start.clone(),
            |mut state| iterate(&mut state, &problem.eigen, &problem.mvn, &oracle).unwrap(),
            criterion::BatchSize::SmallInput,
        )
    });
}

criterion_group!(benches, fit, sampler, search);
criterion_main!(benches);
