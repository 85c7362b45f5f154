use fosr_core::inference::{masked_null_covariance, mixture_weights, NullModel};
use fosr_core::sim::{generate_dataset, SimulationScenario};
use fosr_core::smoothing::loocv_bandwidth;
use fosr_core::{
    constraint_residual, covariance_surface, nw_smooth, orthogonalize, orthonormal_polynomials, p_value,
    piecewise_linear_basis, pointwise_wls, project, run_test, tilde_transform, tn_statistic, BasisSet, CovMethod,
    FunctionalDataset, Grid, IrregularCurve, KernelFamily, KernelSpec, Regime, TestOptions,
};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rmat(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random_range(-1.0..1.0))
}

fn basis_of(kind: u8, grid: &Grid, rng: &mut ChaCha8Rng) -> BasisSet {
    match kind % 4 {
        0 => orthonormal_polynomials(1 + rng.random_range(0..4), grid).unwrap(),
        1 => piecewise_linear_basis(&[0.0, 0.4, 1.0], grid).unwrap(),
        2 => BasisSet::custom(grid, &rmat(rng, 2, grid.len())).unwrap(),
        _ => BasisSet::empty(grid),
    }
}

fn norms2(grid: &Grid, a: &DMatrix<f64>) -> Vec<f64> {
    a.row_iter()
        .map(|r| {
            let v: Vec<f64> = r.iter().copied().collect();
            grid.inner(&v, &v)
        })
        .collect()
}

fn rotation(rng: &mut ChaCha8Rng, r: usize) -> DMatrix<f64> {
    rmat(rng, r, r).qr().q()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn projection_laws(seed in any::<u64>(), kind in 0u8..4, nn in 12usize..60) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::uniform(nn).unwrap();
        let basis = basis_of(kind, &grid, &mut rng);
        let beta = rmat(&mut rng, 3, nn) * 4.0;
        let lb = project(&beta, &basis).unwrap();
        let cb = constraint_residual(&beta, &basis).unwrap();
        prop_assert!((project(&lb, &basis).unwrap() - &lb).amax() < 1e-10);
        prop_assert!(constraint_residual(&lb, &basis).unwrap().amax() < 1e-10);
        for ((b, l), c) in norms2(&grid, &beta).iter().zip(norms2(&grid, &lb)).zip(norms2(&grid, &cb)) {
            prop_assert!((b - l - c).abs() < 1e-8);
        }
        for v in basis.functions().row_iter() {
            let v: Vec<f64> = v.iter().copied().collect();
            for r in cb.row_iter() {
                let r: Vec<f64> = r.iter().copied().collect();
                prop_assert!(grid.inner(&v, &r).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn projection_rotation_invariant(seed in any::<u64>(), r in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::uniform(40).unwrap();
        let basis = orthonormal_polynomials(r, &grid).unwrap();
        let rotated = basis.rotated(&rotation(&mut rng, r)).unwrap();
        let beta = rmat(&mut rng, 2, 40);
        let d = project(&beta, &basis).unwrap() - project(&beta, &rotated).unwrap();
        prop_assert!(d.amax() < 1e-8);
    }

    #[test]
    fn statistic_rotation_invariant(seed in any::<u64>(), r in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 15;
        let nn = 20;
        let grid = Grid::uniform(nn).unwrap();
        let dp = orthogonalize(&rmat(&mut rng, n, 2), &DMatrix::from_element(n, 1, 1.0)).unwrap();
        let ds = FunctionalDataset::full(grid.clone(), rmat(&mut rng, n, nn)).unwrap();
        let fit = pointwise_wls(&ds, &dp).unwrap();
        let basis = orthonormal_polynomials(r, &grid).unwrap();
        let rotated = basis.rotated(&rotation(&mut rng, r)).unwrap();
        let a = tn_statistic(&fit, &dp, &basis).unwrap();
        let b = tn_statistic(&fit, &dp, &rotated).unwrap();
        prop_assert!((a - b).abs() < 1e-8 * (1.0 + a));
    }

    #[test]
    fn tilde_transform_preserves_psd(seed in any::<u64>(), kind in 0u8..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::uniform(10).unwrap();
        let basis = basis_of(kind, &grid, &mut rng);
        let a = rmat(&mut rng, 10, 10);
        let s = &a * a.transpose();
        let t = tilde_transform(&s, &basis).unwrap();
        let eig = t.symmetric_eigenvalues();
        let top = eig.max().max(0.0);
        prop_assert!(eig.min() >= -1e-8 * top.max(1e-300));
        prop_assert_eq!(&t, &t.transpose());
    }

    #[test]
    fn p_value_is_monotone(seed in any::<u64>(), a in 0.0f64..20.0, b in 0.0f64..20.0) {
        let nm = NullModel::from_eigenvalues(vec![1.5, 0.7, 0.2], 2, 1000, seed).unwrap();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(p_value(lo, &nm) >= p_value(hi, &nm));
        let p = p_value(a, &nm);
        prop_assert!(p > 0.0 && p <= 1.0);
    }

    #[test]
    fn full_data_nuisance_invariance(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, nn) = (12, 7);
        let mut z = rmat(&mut rng, n, 2);
        z.column_mut(0).fill(1.0);
        let dp = orthogonalize(&rmat(&mut rng, n, 2), &z).unwrap();
        let grid = Grid::uniform(nn).unwrap();
        let y = rmat(&mut rng, n, nn);
        let shift = &z * rmat(&mut rng, 2, nn) * 10.0;
        let a = pointwise_wls(&FunctionalDataset::full(grid.clone(), y.clone()).unwrap(), &dp).unwrap();
        let b = pointwise_wls(&FunctionalDataset::full(grid, y + shift).unwrap(), &dp).unwrap();
        prop_assert!((a.beta_hat - b.beta_hat).amax() < 1e-8);
    }

    #[test]
    fn residual_orthogonality(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, nn) = (14, 6);
        let mut z = rmat(&mut rng, n, 2);
        z.column_mut(0).fill(1.0);
        let dp = orthogonalize(&rmat(&mut rng, n, 2), &z).unwrap();
        let grid = Grid::uniform(nn).unwrap();
        let y = rmat(&mut rng, n, nn);
        let full = pointwise_wls(&FunctionalDataset::full(grid.clone(), y.clone()).unwrap(), &dp).unwrap();
        prop_assert!((dp.xtilde().transpose() * &full.residuals).amax() < 1e-8);
        prop_assert!((dp.z().transpose() * &full.residuals).amax() < 1e-8);
        let mask = DMatrix::from_fn(n, nn, |_, _| rng.random_bool(0.85));
        let ds = FunctionalDataset::partial(grid, y, mask.clone()).unwrap();
        if let Ok(fit) = pointwise_wls(&ds, &dp) {
            for m in 0..nn {
                if fit.interpolated_columns.contains(&m) {
                    continue;
                }
                // residuals are already zero off the mask, so Zᵀr = ZᵀW r
                let zr = dp.z().transpose() * fit.residuals.column(m);
                prop_assert!(zr.amax() < 1e-8);
            }
        }
    }

    #[test]
    fn nw_reproduces_constants_and_is_local(seed in any::<u64>(), h in 0.03f64..0.3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = Grid::uniform(50).unwrap();
        let t: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let c = rng.random_range(-3.0..3.0);
        let k = KernelSpec::new(KernelFamily::Epanechnikov, h).unwrap();
        let s = nw_smooth(&t, &vec![c; 30], k, &grid).unwrap();
        for (v, cov) in s.values.iter().zip(&s.covered) {
            if *cov {
                prop_assert!((v - c).abs() < 1e-12);
            }
        }
        let y: Vec<f64> = (0..30).map(|_| rng.random::<f64>()).collect();
        let base = nw_smooth(&t, &y, k, &grid).unwrap();
        let mut y2 = y.clone();
        y2[0] += 100.0;
        let moved = nw_smooth(&t, &y2, k, &grid).unwrap();
        for (m, g) in grid.points().iter().enumerate() {
            if (g - t[0]).abs() >= h {
                prop_assert_eq!(base.values[m], moved.values[m]);
            }
        }
    }

    #[test]
    fn loocv_selects_the_minimum(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let curves: Vec<IrregularCurve> = (0..6)
            .map(|_| {
                let mut t: Vec<f64> = (0..40).map(|_| rng.random::<f64>()).collect();
                t.sort_by(f64::total_cmp);
                let y = t.iter().map(|x| (6.0 * x).sin() + 0.3 * rng.random_range(-1.0..1.0)).collect();
                IrregularCurve::new(t, y).unwrap()
            })
            .collect();
        let cands = [0.02, 0.05, 0.1, 0.2, 0.4];
        let sel = loocv_bandwidth(&curves, KernelFamily::Epanechnikov, &cands).unwrap();
        let best = sel.scores.iter().copied().fold(f64::INFINITY, f64::min);
        let i = cands.iter().position(|c| *c == sel.bandwidth).unwrap();
        prop_assert_eq!(sel.scores[i], best);
    }

    #[test]
    fn covariance_surface_is_symmetric(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (n, nn) = (20, 8);
        let dp = orthogonalize(&rmat(&mut rng, n, 1), &DMatrix::from_element(n, 1, 1.0)).unwrap();
        let mask = DMatrix::from_fn(n, nn, |_, _| rng.random_bool(0.8));
        let ds = FunctionalDataset::partial(Grid::uniform(nn).unwrap(), rmat(&mut rng, n, nn), mask).unwrap();
        if let Ok(fit) = pointwise_wls(&ds, &dp) {
            if let Ok(cov) = covariance_surface(&fit, &ds, CovMethod::Empirical) {
                prop_assert_eq!(&cov.gamma, &cov.gamma.transpose());
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn mixture_moments(seed in any::<u64>(), lambdas in prop::collection::vec(0.05f64..3.0, 1..5), p in 1usize..4) {
        let b = 100_000;
        let nm = NullModel::from_eigenvalues(lambdas.clone(), p, b, seed).unwrap();
        let s = nm.summary();
        let pf = p as f64;
        let mean = pf * lambdas.iter().sum::<f64>();
        let var = 2.0 * pf * lambdas.iter().map(|l| l * l).sum::<f64>();
        let fourth: f64 = lambdas.iter().map(|l| l.powi(4)).sum();
        // SE of the sample variance from the fourth cumulant 48 p Σλ⁴
        let var_se = ((48.0 * pf * fourth + 2.0 * var * var) / b as f64).sqrt();
        prop_assert!((s.mean - mean).abs() <= 4.0 * (var / b as f64).sqrt());
        prop_assert!((s.variance - var).abs() <= 4.0 * var_se);
    }
}

#[test]
fn null_draws_do_not_depend_on_thread_count() {
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| NullModel::from_eigenvalues(vec![1.0, 0.3], 2, 5000, 77).unwrap().draws)
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn null_coefficients_lie_in_the_hypothesis() {
    for regime in [Regime::Full, Regime::Partial] {
        let sc = SimulationScenario {
            regime,
            n: 20,
            seed: 4,
            ..SimulationScenario::default()
        };
        let (ds, _, truth) = generate_dataset(&sc).unwrap();
        let basis = orthonormal_polynomials(4, ds.grid()).unwrap();
        assert!(truth.null_holds);
        assert!(constraint_residual(&truth.beta, &basis).unwrap().amax() < 1e-8);
    }
}

#[test]
fn same_seed_same_dataset() {
    for regime in [Regime::Full, Regime::Partial, Regime::IrregularNoisy, Regime::PartialIrregularNoisy] {
        let sc = SimulationScenario {
            regime,
            n: 15,
            d: 2.0,
            seed: 99,
            ..SimulationScenario::default()
        };
        let (a, _, _) = generate_dataset(&sc).unwrap();
        let (b, _, _) = generate_dataset(&sc).unwrap();
        assert_eq!(a, b);
        let (c, _, _) = generate_dataset(&SimulationScenario { seed: 100, ..sc }).unwrap();
        assert_ne!(a, c);
    }
}

#[test]
fn forced_empty_intervals_reproduce_full_data_exactly() {
    let full = SimulationScenario {
        n: 40,
        d: 3.0,
        seed: 21,
        ..SimulationScenario::default()
    };
    let partial = SimulationScenario {
        regime: Regime::Partial,
        force_empty_missing: true,
        ..full.clone()
    };
    let (a, dpa, _) = generate_dataset(&full).unwrap();
    let (b, dpb, truth) = generate_dataset(&partial).unwrap();
    assert_eq!(a.values(), b.values());
    assert_eq!(dpa.x(), dpb.x());
    assert!(truth.mask.iter().all(|m| *m));
    assert_eq!(truth.intervals.len(), 40);
    let basis = orthonormal_polynomials(4, a.grid()).unwrap();
    let opts = TestOptions {
        seed: 3,
        null_draws: 1000,
        ..TestOptions::default()
    };
    let ra = run_test(&a, &dpa, &basis, &opts).unwrap();
    let rb = run_test(&b, &dpb, &basis, &opts).unwrap();
    assert_eq!(ra.statistic, rb.statistic);
    assert_eq!(ra.p_value, rb.p_value);
    assert_eq!(ra.eigenvalues, rb.eigenvalues);
}

#[test]
fn finite_sample_null_is_psd() {
    let sc = SimulationScenario {
        regime: Regime::Partial,
        n: 30,
        n_grid: 25,
        seed: 8,
        ..SimulationScenario::default()
    };
    let (ds, dp, _) = generate_dataset(&sc).unwrap();
    let fit = pointwise_wls(&ds, &dp).unwrap();
    // a positive semidefinite surface; the pairwise-complete estimate need not be one
    let a = DMatrix::from_fn(25, 25, |i, j| (-((i as f64 - j as f64) / 6.0).powi(2)).exp());
    let gamma = &a * a.transpose();
    let basis = orthonormal_polynomials(4, ds.grid()).unwrap();
    let k = masked_null_covariance(&ds, &dp, &fit, &gamma, &basis, None).unwrap();
    let eig = k.symmetric_eigenvalues();
    assert!(eig.min() >= -1e-8 * eig.max(), "min {} max {}", eig.min(), eig.max());
    let (kept, _) = mixture_weights(&k).unwrap();
    assert!(kept.windows(2).all(|w| w[0] >= w[1]));
}
