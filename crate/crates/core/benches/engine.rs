//! Single-worker versus default rayon pool on the three parallel hot paths.
//! Build with `--no-default-features` to time the sequential fallback.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use knowshap::testbed::{build_value_function, DatasetSource, ExperimentSpec};
use knowshap::{exact_shapley, mc_shapley, Coalition, McConfig};
use rayon::ThreadPool;

/// A value function with some arithmetic per call, standing in for a model
/// evaluation.
fn busy_value(c: Coalition) -> knowshap::Result<f64> {
    let mut acc = c.mask() as f64;
    for i in 0..2_000 {
        acc = (acc * 1.000_001 + i as f64).sqrt();
    }
    Ok(acc + c.len() as f64)
}

fn pools() -> Vec<(String, ThreadPool)> {
    let default = rayon::ThreadPoolBuilder::new().build().unwrap();
    let label = format!("pool-default-{}", default.current_num_threads());
    vec![
        (
            "pool-1".to_string(),
            rayon::ThreadPoolBuilder::new()
                .num_threads(1)
                .build()
                .unwrap(),
        ),
        (label, default),
    ]
}

fn exact(c: &mut Criterion) {
    let mut g = c.benchmark_group("exact_shapley_n12");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| pool.install(|| exact_shapley(&busy_value, black_box(12)).unwrap()))
        });
    }
    g.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut g = c.benchmark_group("mc_shapley_n16_2000");
    g.sample_size(10);
    let cfg = McConfig::new(2_000, 1);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| pool.install(|| mc_shapley(&busy_value, black_box(16), &cfg).unwrap()))
        });
    }
    g.finish();
}

fn experiment(c: &mut Criterion) {
    let mut spec = ExperimentSpec::default_synthetic(1);
    if let DatasetSource::Synthetic(s) = &mut spec.dataset {
        s.n_unlabeled = 200;
        s.n_test = 200;
    }
    spec.train.epochs = 2;
    spec.repetition_seeds.truncate(2);
    let mut g = c.benchmark_group("experiment_exact_small");
    g.sample_size(10);
    for (name, pool) in pools() {
        g.bench_function(BenchmarkId::from_parameter(&name), |b| {
            b.iter(|| {
                pool.install(|| {
                    let vf = build_value_function(&spec).unwrap();
                    exact_shapley(&vf, 3).unwrap()
                })
            })
        });
    }
    g.finish();
}

criterion_group!(benches, exact, monte_carlo, experiment);
criterion_main!(benches);
