//! Testing linear shape constraints on coefficient functions in
//! function-on-scalar regression, for fully observed, partially observed,
//! irregularly sampled noisy, and fragment-restricted noisy curves.
//!
//! The model is `Y(t) = Xᵀβ(t) + Zᵀα(t) + ε(t)` and the hypothesis is
//! `β_j ∈ span{v_1, …, v_r}` for every tested coefficient.
//!
//! ```no_run
//! use fosr_core::{run_test, BasisSpec, TestOptions};
//! use fosr_core::sim::{generate_dataset, SimulationScenario};
//!
//! let (ds, dp, _) = generate_dataset(&SimulationScenario::default()).unwrap();
//! let basis = "poly:4".parse::<BasisSpec>().unwrap().build(ds.grid()).unwrap();
//! let report = run_test(&ds, &dp, &basis, &TestOptions::default()).unwrap();
//! println!("T = {:.3}, p = {:.4}", report.statistic, report.p_value);
//! ```

pub mod basis;
pub mod data;
pub mod error;
pub mod grid;
pub mod inference;
pub mod io;
pub mod regression;
pub mod report;
pub mod rng;
pub mod sim;
pub mod smoothing;

pub use basis::{
    constraint_residual, orthonormal_polynomials, piecewise_linear_basis, project, BasisKind, BasisSet, BasisSpec,
};
pub use data::{validate_dataset, DesignPair, Finding, FunctionalDataset, IrregularCurve, Regime};
pub use error::{FosrError, Result};
pub use grid::Grid;
pub use inference::{
    critical_value, null_model, p_value, run_test, smooth_onto_grid, theta_surface, tilde_transform, tn_statistic,
    tn_statistic_standardized, NullModel, TestOptions, ThetaSurface,
};
pub use regression::{orthogonalize, pointwise_wls, RegressionFit};
pub use report::{Diagnostics, NullSummary, StatisticKind, TestReport};
pub use sim::{ExperimentResult, Scenario, SimulationScenario};
pub use smoothing::{
    covariance_surface, loocv_bandwidth, nw_smooth, CovMethod, CovSurface, KernelFamily, KernelSpec, SmoothedCurve,
};
