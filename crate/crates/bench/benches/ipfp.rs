use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use bipfit_bench::{dense_problem, example_5x6};
use bipfit_core::structure::{best_cause, limit_points};
use bipfit_core::{classify, run, StoppingRule};

fn iterate(c: &mut Criterion) {
    let mut group = c.benchmark_group("run");
    for n in [4, 16, 50] {
        let problem = dense_problem(n);
        let rule = StoppingRule::default().with_max_iters(200);
        group.bench_with_input(BenchmarkId::from_parameter(n), &problem, |bench, p| {
            bench.iter(|| run(black_box(p), rule))
        });
    }
    group.finish();
}

fn analysis(c: &mut Criterion) {
    let problem = example_5x6();
    c.bench_function("classify_5x6", |bench| {
        bench.iter(|| classify(black_box(&problem)))
    });
    c.bench_function("best_cause_5x6", |bench| {
        bench.iter(|| best_cause(problem.a(), problem.b(), &problem.support()))
    });
    c.bench_function("limit_points_5x6", |bench| {
        bench.iter(|| limit_points(black_box(&problem)))
    });
}

criterion_group!(benches, iterate, analysis);
criterion_main!(benches);
