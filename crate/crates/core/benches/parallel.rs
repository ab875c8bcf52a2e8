//! One-thread pool against the full pool on a cross-validated fit and a
//! batch risk evaluation. Build with `--no-default-features` for the purely
//! sequential code path.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use pdi_core::eval::{
    cross_validate, default_lambda_grid, empirical_risk, fit_policy, CvCriterion, FitSettings,
    Method,
};
use pdi_core::par::with_jobs;
use pdi_core::simulation::{generate, true_weights, Scenario, ScenarioSpec};
use pdi_core::types::{Side, ThresholdSpec};

fn pools() -> Vec<(&'static str, usize)> {
    vec![("1-thread", 1), ("full-pool", 0)]
}

fn bench_cv(c: &mut Criterion) {
    let spec = ScenarioSpec::new(Scenario::S2, 200, 10, 2.25, true, 5);
    let data = generate(&spec).unwrap();
    let w = true_weights(&spec, &data).unwrap();
    let data = data.with_weights(w).unwrap();
    let threshold = ThresholdSpec::fit_polynomial(&data.x, &data.y).unwrap();
    let settings = FitSettings::new(Method::LoGaussian, Side::LowerOneSided, 0.5)
        .resolved(&data)
        .unwrap();
    let eps = settings.epsilon_for(&data);
    let grid = default_lambda_grid(data.n());

    let mut group = c.benchmark_group("cv-gaussian-n200");
    group.sample_size(10);
    for (name, jobs) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| {
                with_jobs(jobs, || {
                    cross_validate(&data, &grid, &threshold, 0.5, eps, 5, 9, CvCriterion::ZeroOne, |d, p| {
                        fit_policy(d, &threshold, &settings, p)
                    })
                    .unwrap()
                })
            })
        });
    }
    group.finish();
}

fn bench_risk(c: &mut Criterion) {
    let spec = ScenarioSpec::new(Scenario::S2, 200, 10, 2.25, true, 6);
    let train = generate(&spec).unwrap();
    let w = true_weights(&spec, &train).unwrap();
    let train = train.with_weights(w).unwrap();
    let threshold = ThresholdSpec::fit_polynomial(&train.x, &train.y).unwrap();
    let settings = FitSettings::new(Method::LoGaussian, Side::LowerOneSided, 0.5)
        .resolved(&train)
        .unwrap();
    let policy = fit_policy(&train, &threshold, &settings, 1e-3).unwrap();
    let test = generate(&ScenarioSpec { n: 20_000, seed: 7, ..spec.clone() }).unwrap();
    let tw = true_weights(&spec, &test).unwrap();
    let test = test.with_weights(tw).unwrap();
    let s = threshold.values(&test.x).unwrap();

    let mut group = c.benchmark_group("risk-20k-rows");
    for (name, jobs) in pools() {
        group.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| with_jobs(jobs, || empirical_risk(&policy, &test, &s, 0.5, 0.3).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, bench_cv, bench_risk);
criterion_main!(benches);
