use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fosr_core::inference::{null_model, theta_surface};
use fosr_core::sim::{generate_dataset, SimulationScenario};
use fosr_core::{
    covariance_surface, orthonormal_polynomials, pointwise_wls, run_test, tilde_transform, CovMethod, Regime,
    TestOptions,
};

fn scenario(regime: Regime, n_grid: usize) -> SimulationScenario {
    SimulationScenario {
        regime,
        n_grid,
        d: 1.0,
        seed: 42,
        ..SimulationScenario::default()
    }
}

fn wls(c: &mut Criterion) {
    let mut group = c.benchmark_group("pointwise_wls");
    for regime in [Regime::Full, Regime::Partial] {
        let (ds, dp, _) = generate_dataset(&scenario(regime, 100)).unwrap();
        group.bench_function(regime.name(), |b| b.iter(|| pointwise_wls(black_box(&ds), &dp).unwrap()));
    }
    group.finish();
}

fn null_distribution(c: &mut Criterion) {
    let mut group = c.benchmark_group("null");
    for n_grid in [50, 100, 200] {
        let (ds, dp, _) = generate_dataset(&scenario(Regime::Partial, n_grid)).unwrap();
        let fit = pointwise_wls(&ds, &dp).unwrap();
        let cov = covariance_surface(&fit, &ds, CovMethod::Empirical).unwrap();
        let basis = orthonormal_polynomials(4, ds.grid()).unwrap();
        let theta = theta_surface(&ds, &cov).unwrap();
        group.bench_with_input(BenchmarkId::new("tilde_and_eigen", n_grid), &n_grid, |b, _| {
            b.iter(|| {
                let st = tilde_transform(black_box(&theta.xi_star), &basis).unwrap();
                null_model(&st, ds.grid(), 3, 1000, 7).unwrap()
            })
        });
    }
    group.finish();
}

fn end_to_end(c: &mut Criterion) {
    let mut group = c.benchmark_group("run_test");
    group.sample_size(10);
    let opts = TestOptions {
        null_draws: 1000,
        seed: 1,
        ..TestOptions::default()
    };
    for regime in [
        Regime::Full,
        Regime::Partial,
        Regime::IrregularNoisy,
        Regime::PartialIrregularNoisy,
    ] {
        let (ds, dp, _) = generate_dataset(&scenario(regime, 100)).unwrap();
        let basis = orthonormal_polynomials(4, ds.grid()).unwrap();
        group.bench_function(regime.name(), |b| {
            b.iter(|| run_test(black_box(&ds), &dp, &basis, &opts).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, wls, null_distribution, end_to_end);
criterion_main!(benches);
