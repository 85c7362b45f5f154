use fosr_core::inference::MaskedNull;
use fosr_core::io::{read_design_csv, read_long_csv, write_curves_csv, write_report_json, RoleMap};
use fosr_core::sim::{generate_dataset, verify_missingness_model, SimulationScenario};
use fosr_core::{
    orthogonalize, orthonormal_polynomials, run_test, BasisSpec, FosrError, FunctionalDataset, Grid, Regime,
    StatisticKind, TestOptions, TestReport,
};
use nalgebra::DMatrix;

fn opts(seed: u64) -> TestOptions {
    TestOptions {
        seed,
        null_draws: 1000,
        ..TestOptions::default()
    }
}

fn scenario(regime: Regime, d: f64, seed: u64) -> SimulationScenario {
    SimulationScenario {
        regime,
        n: 60,
        n_grid: 40,
        d,
        seed,
        ..SimulationScenario::default()
    }
}

#[test]
fn reports_round_trip_through_json() {
    let (ds, dp, _) = generate_dataset(&scenario(Regime::Partial, 1.0, 5)).unwrap();
    let basis = orthonormal_polynomials(4, ds.grid()).unwrap();
    let report = run_test(&ds, &dp, &basis, &opts(9)).unwrap();
    let mut buf = Vec::new();
    write_report_json(&mut buf, &report).unwrap();
    let back: TestReport = serde_json::from_slice(&buf).unwrap();
    assert_eq!(back, report);
    let again = run_test(&ds, &dp, &basis, &opts(9)).unwrap();
    let mut buf2 = Vec::new();
    write_report_json(&mut buf2, &again).unwrap();
    assert_eq!(buf, buf2);
}

#[test]
fn exact_fit_inside_the_hypothesis_is_not_rejected() {
    let n = 30;
    let grid = Grid::uniform(25).unwrap();
    let x = DMatrix::from_fn(n, 1, |i, _| (i as f64 * 0.37).sin());
    let z = DMatrix::from_element(n, 1, 1.0);
    let dp = orthogonalize(&x, &z).unwrap();
    let beta: Vec<f64> = grid.points().iter().map(|t| 1.0 + 2.0 * t).collect();
    let noise = DMatrix::from_fn(n, 25, |i, m| 0.3 * ((i * 7 + m * 3) as f64).cos());
    let y = DMatrix::from_fn(n, 25, |i, m| x[(i, 0)] * beta[m] + 0.5) + noise;
    let ds = FunctionalDataset::full(grid.clone(), y).unwrap();
    let basis = orthonormal_polynomials(2, &grid).unwrap();
    let noiseless = FunctionalDataset::full(
        grid.clone(),
        DMatrix::from_fn(n, 25, |i, m| x[(i, 0)] * beta[m] + 0.5),
    )
    .unwrap();
    let fit = fosr_core::pointwise_wls(&noiseless, &dp).unwrap();
    assert!(fosr_core::tn_statistic(&fit, &dp, &basis).unwrap() < 1e-20);
    let report = run_test(&ds, &dp, &basis, &opts(1)).unwrap();
    assert_eq!(report.statistic_kind, StatisticKind::Full);
    assert!(report.statistic.is_finite() && report.statistic >= 0.0);
}

#[test]
fn strong_signal_is_rejected_in_every_regime() {
    for (regime, kind) in [
        (Regime::Full, StatisticKind::Full),
        (Regime::Partial, StatisticKind::PartialStandardized),
        (Regime::IrregularNoisy, StatisticKind::Smoothed),
        (Regime::PartialIrregularNoisy, StatisticKind::SmoothedComposition),
    ] {
        let sc = SimulationScenario {
            scenario: fosr_core::Scenario::B,
            n: 100,
            d: 3.0,
            regime,
            seed: 17,
            ..SimulationScenario::default()
        };
        let (ds, dp, _) = generate_dataset(&sc).unwrap();
        let basis = orthonormal_polynomials(4, ds.grid()).unwrap();
        let report = run_test(&ds, &dp, &basis, &opts(2)).unwrap();
        assert_eq!(report.statistic_kind, kind, "{regime:?}");
        assert!(report.reject, "{regime:?}: p = {}", report.p_value);
        if regime.is_irregular() {
            assert!(report.diagnostics.bandwidth.unwrap() > 0.0);
        }
    }
}

#[test]
fn mask_moment_null_is_available() {
    let (ds, dp, _) = generate_dataset(&scenario(Regime::Partial, 0.0, 3)).unwrap();
    let basis = orthonormal_polynomials(4, ds.grid()).unwrap();
    let a = run_test(&ds, &dp, &basis, &opts(4)).unwrap();
    let b = run_test(
        &ds,
        &dp,
        &basis,
        &TestOptions {
            masked_null: MaskedNull::MaskMoments,
            ..opts(4)
        },
    )
    .unwrap();
    assert_eq!(a.statistic, b.statistic);
    assert_ne!(a.eigenvalues, b.eigenvalues);
}

#[test]
fn unstandardized_partial_statistic() {
    let (ds, dp, _) = generate_dataset(&scenario(Regime::Partial, 0.0, 6)).unwrap();
    let basis = orthonormal_polynomials(4, ds.grid()).unwrap();
    let r = run_test(
        &ds,
        &dp,
        &basis,
        &TestOptions {
            standardized: false,
            ..opts(4)
        },
    )
    .unwrap();
    assert_eq!(r.statistic_kind, StatisticKind::Partial);
    assert!(r.p_value > 0.0 && r.p_value <= 1.0);
}

#[test]
fn grid_mismatch_is_reported() {
    let (ds, dp, _) = generate_dataset(&scenario(Regime::Full, 0.0, 1)).unwrap();
    let other = Grid::uniform(ds.grid().len() + 1).unwrap();
    let basis = orthonormal_polynomials(2, &other).unwrap();
    let err = run_test(&ds, &dp, &basis, &opts(1)).unwrap_err();
    assert!(matches!(err.root(), FosrError::GridMismatch(_)), "{err}");
    assert!(err.is_user_error());
}

#[test]
fn missingness_matches_its_beta_law() {
    let rep = verify_missingness_model(3, 3, 200_000, 11).unwrap();
    let (a, b) = (4.0, 8.0);
    let mean = a / (a + b);
    let var = a * b / ((a + b) * (a + b) * (a + b + 1.0));
    assert!((rep.beta_mean - mean).abs() < 1e-12);
    assert!((rep.beta_variance - var).abs() < 1e-12);
    assert!((rep.mean_length - mean).abs() < 0.01);
    assert!((rep.variance_length / var - 1.0).abs() < 0.1);
    assert!(rep.monotone);
    assert!(verify_missingness_model(3, 2, 10, 1).is_err());
}

#[test]
fn csv_inputs_feed_the_pipeline() {
    let (ds, _, truth) = generate_dataset(&scenario(Regime::Partial, 2.0, 12)).unwrap();
    let subjects: Vec<String> = (0..ds.n_subjects()).map(|i| format!("s{i:03}")).collect();
    let mut curves = Vec::new();
    write_curves_csv(&mut curves, &subjects, &ds).unwrap();
    let loaded = read_long_csv(curves.as_slice(), Regime::Partial, Some(ds.grid().clone())).unwrap();
    assert_eq!(loaded.subjects, subjects);
    assert_eq!(loaded.dataset.mask(), &truth.mask);

    let (_, dp, _) = generate_dataset(&scenario(Regime::Partial, 2.0, 12)).unwrap();
    let mut design = String::from("subject_id,x1,x2,x3\n");
    for (i, s) in subjects.iter().enumerate().rev() {
        let row: Vec<String> = dp.x().row(i).iter().map(|v| format!("{v:?}")).collect();
        design.push_str(&format!("{s},{}\n", row.join(",")));
    }
    let roles = RoleMap::from_json(r#"{"x": ["x1", "x2", "x3"]}"#.as_bytes()).unwrap();
    let read = read_design_csv(design.as_bytes(), &loaded.subjects, Some(&roles)).unwrap();
    assert_eq!(read.x(), dp.x());
    let basis = "poly:4".parse::<BasisSpec>().unwrap().build(loaded.dataset.grid()).unwrap();
    let report = run_test(&loaded.dataset, &read, &basis, &opts(3)).unwrap();
    assert!(report.statistic > 0.0);
}
