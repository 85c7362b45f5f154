//! Test statistics, the estimated null covariance and its chi-square
//! mixture null law, and the end-to-end test pipeline.
//!
//! Under the null the statistic behaves like `T₀ = Σ_k λ_k A_k` with
//! `A_k ~ χ²_p` independent and `λ_k` the eigenvalues of the constrained
//! covariance operator. The operator is estimated on the grid, double
//! centred against the null basis, and its eigenvalues drive a Monte Carlo
//! sample of `T₀`.

use nalgebra::{DMatrix, DVector};
use rand_distr::{ChiSquared, Distribution};
use rayon::prelude::*;

use crate::basis::{constraint_residual, BasisSet};
use crate::data::{DesignPair, FunctionalDataset, Regime};
use crate::error::{FosrError, Result, StageExt};
use crate::grid::Grid;
use crate::regression::{pointwise_wls, RegressionFit};
use crate::report::{Diagnostics, NullSummary, StatisticKind, TestReport};
use crate::rng::{self, Domain};
use crate::smoothing::{
    covariance_surface, default_bandwidth_candidates, loocv_bandwidth, nw_smooth, CovMethod,
    CovSurface, KernelFamily, KernelSpec,
};

/// Eigenvalues below this fraction of the largest are dropped.
pub const EIGEN_RELATIVE_CUTOFF: f64 = 1e-12;

pub const DEFAULT_NULL_DRAWS: usize = 5000;
pub const MIN_NULL_DRAWS: usize = 1000;

const DRAW_BLOCK: usize = 512;

/// Mask moments and the discretized covariance of `β̂ʷ` they induce.
#[derive(Clone, Debug, PartialEq)]
pub struct ThetaSurface {
    /// `Ξ = Γ̂ ∘ Π`
    pub xi: DMatrix<f64>,
    /// `Ξ* = Γ̂ ∘ Π*`
    pub xi_star: DMatrix<f64>,
    /// `Π_{mm'} = υ̂(t_m, t_m') / (b̂(t_m) b̂(t_m'))`
    pub pi: DMatrix<f64>,
    /// `Π` rescaled to unit diagonal.
    pub pi_star: DMatrix<f64>,
    /// Observed fraction per grid point.
    pub bhat: DVector<f64>,
    /// Joint observed fraction per pair of grid points.
    pub vhat: DMatrix<f64>,
}

/// Compute `b̂`, `υ̂`, `Π`, `Π*`, `Ξ` and `Ξ*` from the dataset mask.
pub fn theta_surface(ds: &FunctionalDataset, cov: &CovSurface) -> Result<ThetaSurface> {
    cov.grid.ensure_same(ds.grid(), "theta surface")?;
    theta_from_mask(&ds.mask_f64(), &cov.gamma)
}

fn theta_from_mask(mask: &DMatrix<f64>, gamma: &DMatrix<f64>) -> Result<ThetaSurface> {
    let n = mask.nrows() as f64;
    let nn = mask.ncols();
    if gamma.shape() != (nn, nn) {
        return Err(FosrError::Dimension("covariance and mask grids differ".into()));
    }
    let bhat = DVector::from_iterator(nn, mask.column_iter().map(|c| c.sum() / n));
    if let Some(m) = bhat.iter().position(|b| *b <= 0.0) {
        return Err(FosrError::TooSparse(format!(
            "no subject observed at grid point {m}; the observed fraction must be positive"
        )));
    }
    let vhat = mask.transpose() * mask / n;
    let pi = DMatrix::from_fn(nn, nn, |a, b| vhat[(a, b)] / (bhat[a] * bhat[b]));
    let pi_star = DMatrix::from_fn(nn, nn, |a, b| {
        pi[(a, b)] / (pi[(a, a)] * pi[(b, b)]).sqrt()
    });
    Ok(ThetaSurface {
        xi: gamma.component_mul(&pi),
        xi_star: gamma.component_mul(&pi_star),
        pi,
        pi_star,
        bhat,
        vhat,
    })
}

/// Copy the nearest observed column into every unobserved one.
fn fill_empty_mask_columns(mask: &DMatrix<f64>, grid: &Grid) -> (DMatrix<f64>, Vec<usize>) {
    let observed: Vec<usize> = (0..mask.ncols()).filter(|&m| mask.column(m).sum() > 0.0).collect();
    let empty: Vec<usize> = (0..mask.ncols()).filter(|&m| mask.column(m).sum() == 0.0).collect();
    if empty.is_empty() || observed.is_empty() {
        return (mask.clone(), Vec::new());
    }
    let t = grid.points();
    let mut out = mask.clone();
    for &m in &empty {
        let src = *observed
            .iter()
            .min_by(|&&a, &&b| (t[a] - t[m]).abs().total_cmp(&(t[b] - t[m]).abs()))
            .expect("observed columns exist");
        out.set_column(m, &mask.column(src));
    }
    (out, empty)
}

fn check_inputs(fit: &RegressionFit, dp: &DesignPair, basis: &BasisSet) -> Result<()> {
    fit.grid.ensure_same(basis.grid(), "test statistic")?;
    if fit.beta_hat.nrows() != dp.p() {
        return Err(FosrError::Dimension(format!(
            "fit has {} coefficient functions, design has {} tested covariates",
            fit.beta_hat.nrows(),
            dp.p()
        )));
    }
    Ok(())
}

fn quadratic_form_integral(d: &DMatrix<f64>, gram: &DMatrix<f64>, grid: &Grid) -> f64 {
    let gd = gram * d;
    let w = grid.weights();
    (0..d.ncols())
        .map(|m| w[m] * d.column(m).dot(&gd.column(m)))
        .sum::<f64>()
        .max(0.0)
}

/// `Tₙ = Σ_m w_m D_mᵀ (X̃ᵀX̃) D_m` with `D = β̂ʷ − ℒβ̂ʷ`.
pub fn tn_statistic(fit: &RegressionFit, dp: &DesignPair, basis: &BasisSet) -> Result<f64> {
    check_inputs(fit, dp, basis)?;
    let d = constraint_residual(&fit.beta_hat, basis)?;
    Ok(quadratic_form_integral(&d, &dp.gram(), &fit.grid))
}

/// `T̆ₙ`: as [`tn_statistic`] with `D_m` rescaled by `b̂(t_m) / √υ̂(t_m, t_m)`.
pub fn tn_statistic_standardized(
    fit: &RegressionFit,
    dp: &DesignPair,
    basis: &BasisSet,
    theta: &ThetaSurface,
) -> Result<f64> {
    check_inputs(fit, dp, basis)?;
    let nn = fit.grid.len();
    if theta.bhat.len() != nn {
        return Err(FosrError::GridMismatch("theta surface grid differs".into()));
    }
    let mut d = constraint_residual(&fit.beta_hat, basis)?;
    for m in 0..nn {
        let v = theta.vhat[(m, m)];
        if !(v > 0.0) {
            if fit.interpolated_columns.contains(&m) {
                d.column_mut(m).fill(0.0);
                continue;
            }
            return Err(FosrError::TooSparse(format!(
                "observed fraction is zero at grid point {m}"
            )));
        }
        let scale = theta.bhat[m] / v.sqrt();
        d.column_mut(m).scale_mut(scale);
    }
    Ok(quadratic_form_integral(&d, &dp.gram(), &fit.grid))
}

/// Remove the null-span component from both arguments of a surface:
/// `S − S₍c₎ − S₍r₎ + S₍c,r₎`, where `S₍c₎` holds the fitted values of
/// regressing every column of `S` on the basis, `S₍r₎` the same for rows and
/// `S₍c,r₎` both in turn. Equals `(I − P)S(I − P)ᵀ` for the quadrature
/// projector `P`.
pub fn tilde_transform(s: &DMatrix<f64>, basis: &BasisSet) -> Result<DMatrix<f64>> {
    let nn = basis.grid().len();
    if s.shape() != (nn, nn) {
        return Err(FosrError::GridMismatch(format!(
            "surface is {:?}, basis grid has {nn} points",
            s.shape()
        )));
    }
    if basis.is_empty() {
        return Ok(s.clone());
    }
    let fit_columns = |a: &DMatrix<f64>| -> DMatrix<f64> {
        let f = basis.functions();
        let mut aw = a.clone();
        for (m, mut row) in aw.row_iter_mut().enumerate() {
            row *= basis.grid().weights()[m];
        }
        // coefficients of each column on v_1..v_r, then fitted values
        let coef = f * aw;
        f.transpose() * coef
    };
    let s_c = fit_columns(s);
    let s_r = fit_columns(&s.transpose()).transpose();
    let s_cr = fit_columns(&s_r);
    let out = s - s_c - s_r + s_cr;
    Ok((&out + out.transpose()) * 0.5)
}

/// Monte Carlo sample of the chi-square mixture null law.
#[derive(Clone, Debug, PartialEq)]
pub struct NullModel {
    /// Kept eigenvalues, descending and positive.
    pub eigenvalues: Vec<f64>,
    pub truncated: usize,
    pub p: usize,
    pub draws: Vec<f64>,
    pub seed: u64,
}

/// Eigen-decompose the constrained covariance surface on the quadrature
/// scale and sample `B` draws of `Σ_k λ_k χ²_p`.
pub fn null_model(stilde: &DMatrix<f64>, grid: &Grid, p: usize, draws: usize, seed: u64) -> Result<NullModel> {
    let nn = grid.len();
    if stilde.shape() != (nn, nn) {
        return Err(FosrError::GridMismatch("surface does not match the grid".into()));
    }
    let sw: Vec<f64> = grid.weights().iter().map(|w| w.sqrt()).collect();
    let scaled = DMatrix::from_fn(nn, nn, |a, b| sw[a] * stilde[(a, b)] * sw[b]);
    let (kept, truncated) = mixture_weights(&scaled)?;
    let mut nm = NullModel::from_eigenvalues(kept, p, draws, seed)?;
    nm.truncated = truncated;
    Ok(nm)
}

/// Positive eigenvalues of a symmetric matrix, descending, dropping those
/// below [`EIGEN_RELATIVE_CUTOFF`] times the largest. Also returns the number
/// dropped.
pub fn mixture_weights(cov: &DMatrix<f64>) -> Result<(Vec<f64>, usize)> {
    let sym = (cov + cov.transpose()) * 0.5;
    if sym.iter().any(|v| !v.is_finite()) {
        return Err(FosrError::Numerical("null covariance has non-finite entries".into()));
    }
    let mut vals: Vec<f64> = sym.symmetric_eigenvalues().iter().copied().collect();
    vals.sort_by(|a, b| b.total_cmp(a));
    let top = vals.first().copied().unwrap_or(0.0);
    if !(top > 0.0) {
        return Err(FosrError::DegenerateNull(
            "the constrained covariance has no positive eigenvalue".into(),
        ));
    }
    let kept: Vec<f64> = vals
        .iter()
        .copied()
        .filter(|v| *v > EIGEN_RELATIVE_CUTOFF * top)
        .collect();
    let truncated = vals.len() - kept.len();
    Ok((kept, truncated))
}

impl NullModel {
    /// Sample the mixture for given eigenvalues. Draws are generated in
    /// fixed-size blocks, each from its own stream, so the result does not
    /// depend on the thread count.
    pub fn from_eigenvalues(eigenvalues: Vec<f64>, p: usize, draws: usize, seed: u64) -> Result<Self> {
        if p == 0 {
            return Err(FosrError::InvalidInput("p must be positive".into()));
        }
        if draws < MIN_NULL_DRAWS {
            return Err(FosrError::Config(format!(
                "at least {MIN_NULL_DRAWS} null draws are required, got {draws}"
            )));
        }
        if eigenvalues.is_empty() || eigenvalues.iter().any(|l| !(*l > 0.0) || !l.is_finite()) {
            return Err(FosrError::DegenerateNull(
                "eigenvalues must be positive and finite".into(),
            ));
        }
        let chi = ChiSquared::new(p as f64)
            .map_err(|e| FosrError::Numerical(format!("chi-square law: {e}")))?;
        let blocks = draws.div_ceil(DRAW_BLOCK);
        let sample: Vec<f64> = (0..blocks)
            .into_par_iter()
            .flat_map_iter(|b| {
                let mut r = rng::stream(seed, Domain::NullDraws, b as u64);
                let len = DRAW_BLOCK.min(draws - b * DRAW_BLOCK);
                let lambdas = &eigenvalues;
                (0..len)
                    .map(|_| lambdas.iter().map(|l| l * chi.sample(&mut r)).sum::<f64>())
                    .collect::<Vec<_>>()
            })
            .collect();
        Ok(NullModel {
            eigenvalues,
            truncated: 0,
            p,
            draws: sample,
            seed,
        })
    }

    pub fn summary(&self) -> NullSummary {
        let n = self.draws.len() as f64;
        let mean = self.draws.iter().sum::<f64>() / n;
        let variance = self.draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        NullSummary {
            mean,
            variance,
            min: self.draws.iter().copied().fold(f64::INFINITY, f64::min),
            max: self.draws.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// `(1 + #{draws ≥ stat}) / (B + 1)`.
pub fn p_value(stat: f64, nm: &NullModel) -> f64 {
    let exceed = nm.draws.iter().filter(|d| **d >= stat).count();
    (1 + exceed) as f64 / (nm.draws.len() + 1) as f64
}

/// Empirical `(1 − α)` quantile of the null draws (inverse empirical CDF).
pub fn critical_value(nm: &NullModel, alpha: f64) -> f64 {
    let mut d = nm.draws.clone();
    d.sort_by(f64::total_cmp);
    let k = ((1.0 - alpha) * d.len() as f64).ceil() as usize;
    d[k.clamp(1, d.len()) - 1]
}

/// Settings for [`run_test`].
#[derive(Clone, Debug, PartialEq)]
pub struct TestOptions {
    pub alpha: f64,
    pub null_draws: usize,
    pub seed: u64,
    pub cov_method: CovMethod,
    /// Use `T̆ₙ` with `Ξ*` for partial data (otherwise `Tₙ` with `Ξ`).
    pub standardized: bool,
    pub kernel: KernelFamily,
    /// Fixed smoothing bandwidth; chosen by LOOCV when `None`.
    pub bandwidth: Option<f64>,
    pub bandwidth_candidates: Option<Vec<f64>>,
    /// Null covariance used when the mask is incomplete.
    pub masked_null: MaskedNull,
}

/// Null covariance for incompletely observed curves.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum MaskedNull {
    /// `Ξ = Γ̂ ∘ Π` (or `Ξ*`) with `χ²_p` mixture weights.
    MaskMoments,
    /// Conditional covariance of the pointwise estimator given the design
    /// and the realized mask, including the nuisance component that the
    /// weighted fit leaves in `β̂ʷ`. Mixture weights are `χ²_1`.
    #[default]
    FiniteSample,
}

impl std::str::FromStr for MaskedNull {
    type Err = FosrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask-moments" | "mask_moments" => Ok(MaskedNull::MaskMoments),
            "finite-sample" | "finite_sample" => Ok(MaskedNull::FiniteSample),
            other => Err(FosrError::Config(format!("unknown masked null `{other}`"))),
        }
    }
}

impl Default for TestOptions {
    fn default() -> Self {
        TestOptions {
            alpha: 0.05,
            null_draws: DEFAULT_NULL_DRAWS,
            seed: 0,
            cov_method: CovMethod::Empirical,
            standardized: true,
            kernel: KernelFamily::Epanechnikov,
            bandwidth: None,
            bandwidth_candidates: None,
            masked_null: MaskedNull::FiniteSample,
        }
    }
}

/// Run the full test for the regime of `ds`.
///
/// Full data use `Tₙ` directly. Partial data use `T̆ₙ` (or `Tₙ`) with the
/// mask-adjusted covariance. Irregular data are smoothed subject by subject
/// onto the dataset grid with a common LOOCV bandwidth and then enter the
/// full path, or the partial path when smoothing leaves gaps (always, for
/// fragment-restricted sampling).
pub fn run_test(ds: &FunctionalDataset, dp: &DesignPair, basis: &BasisSet, opts: &TestOptions) -> Result<TestReport> {
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(FosrError::Config(format!("alpha must lie in (0, 1), got {}", opts.alpha)));
    }
    ds.grid().ensure_same(basis.grid(), "dataset vs hypothesis basis")?;
    if dp.n() != ds.n_subjects() {
        return Err(FosrError::Dimension(format!(
            "dataset has {} subjects but the design has {} rows",
            ds.n_subjects(),
            dp.n()
        )));
    }
    match ds.regime() {
        Regime::Full => grid_pipeline(ds, dp, basis, opts, StatisticKind::Full, Diagnostics::default()),
        Regime::Partial => {
            let kind = if opts.standardized {
                StatisticKind::PartialStandardized
            } else {
                StatisticKind::Partial
            };
            grid_pipeline(ds, dp, basis, opts, kind, Diagnostics::default())
        }
        Regime::IrregularNoisy | Regime::PartialIrregularNoisy => {
            let (smoothed, diag) = smooth_onto_grid(ds, opts).stage("smoothing")?;
            let kind = if ds.regime() == Regime::IrregularNoisy {
                StatisticKind::Smoothed
            } else {
                StatisticKind::SmoothedComposition
            };
            grid_pipeline(&smoothed, dp, basis, opts, kind, diag)
        }
    }
}

/// Smooth every subject onto the dataset grid. The result is a full dataset
/// when every grid point is covered for every subject and a partial one
/// otherwise; fragment-restricted sampling always yields a partial dataset.
pub fn smooth_onto_grid(ds: &FunctionalDataset, opts: &TestOptions) -> Result<(FunctionalDataset, Diagnostics)> {
    let curves = ds
        .curves()
        .ok_or_else(|| FosrError::InvalidInput("dataset has no irregular observations".into()))?;
    let h = match opts.bandwidth {
        Some(h) => h,
        None => {
            let cands = match &opts.bandwidth_candidates {
                Some(c) => c.clone(),
                None => default_bandwidth_candidates(curves, 20),
            };
            loocv_bandwidth(curves, opts.kernel, &cands)?.bandwidth
        }
    };
    let kernel = KernelSpec::new(opts.kernel, h)?;
    let grid = ds.grid();
    let smoothed = curves
        .par_iter()
        .map(|c| nw_smooth(&c.t, &c.y, kernel, grid))
        .collect::<Result<Vec<_>>>()?;
    let n = curves.len();
    let nn = grid.len();
    let values = DMatrix::from_fn(n, nn, |i, m| smoothed[i].values[m]);
    let mask = DMatrix::from_fn(n, nn, |i, m| smoothed[i].covered[m]);
    let uncovered = mask.iter().filter(|c| !**c).count();
    let diag = Diagnostics {
        bandwidth: Some(h),
        uncovered_points: uncovered,
        ..Diagnostics::default()
    };
    let out = if uncovered == 0 && ds.regime() == Regime::IrregularNoisy {
        FunctionalDataset::full(grid.clone(), values)?
    } else {
        FunctionalDataset::partial(grid.clone(), values, mask)?
    };
    Ok((out, diag))
}

fn grid_pipeline(
    ds: &FunctionalDataset,
    dp: &DesignPair,
    basis: &BasisSet,
    opts: &TestOptions,
    kind: StatisticKind,
    mut diag: Diagnostics,
) -> Result<TestReport> {
    let kind = match kind {
        StatisticKind::Partial | StatisticKind::PartialStandardized if ds.mask_is_complete() => StatisticKind::Full,
        k => k,
    };
    let fit = pointwise_wls(ds, dp).stage("pointwise regression")?;
    let cov = covariance_surface(&fit, ds, opts.cov_method).stage("covariance surface")?;

    let (statistic, nm) = if ds.mask_is_complete() {
        let t = tn_statistic(&fit, dp, basis).stage("test statistic")?;
        let stilde = tilde_transform(&cov.gamma, basis).stage("constrained covariance")?;
        let nm = null_model(&stilde, ds.grid(), dp.p(), opts.null_draws, opts.seed).stage("null distribution")?;
        (t, nm)
    } else {
        let (mask, filled) = fill_empty_mask_columns(&ds.mask_f64(), ds.grid());
        diag.mask_columns_filled = filled;
        let theta = theta_from_mask(&mask, &cov.gamma).stage("mask moments")?;
        let t = if opts.standardized {
            tn_statistic_standardized(&fit, dp, basis, &theta)
        } else {
            tn_statistic(&fit, dp, basis)
        }
        .stage("test statistic")?;
        let nm = match opts.masked_null {
            MaskedNull::MaskMoments => {
                let surface = if opts.standardized { &theta.xi_star } else { &theta.xi };
                let stilde = tilde_transform(surface, basis).stage("constrained covariance")?;
                null_model(&stilde, ds.grid(), dp.p(), opts.null_draws, opts.seed)
            }
            MaskedNull::FiniteSample => {
                let scale = opts.standardized.then(|| standardizing_scale(&theta, &fit));
                let cov_y = masked_null_covariance(ds, dp, &fit, &cov.gamma, basis, scale.as_deref())
                    .stage("constrained covariance")?;
                mixture_weights(&cov_y).and_then(|(kept, truncated)| {
                    let mut nm = NullModel::from_eigenvalues(kept, 1, opts.null_draws, opts.seed)?;
                    nm.truncated = truncated;
                    Ok(nm)
                })
            }
        }
        .stage("null distribution")?;
        (t, nm)
    };
    let p = p_value(statistic, &nm);

    let mut eff = fit.effective_n.clone();
    eff.sort_unstable();
    diag.effective_n_min = eff.first().copied().unwrap_or(0);
    diag.effective_n_median = median_sorted(&eff);
    diag.interpolated_columns = fit.interpolated_columns.clone();
    diag.covariance_cells_filled = cov.filled_cells;

    Ok(TestReport {
        statistic,
        statistic_kind: kind,
        regime: ds.regime(),
        hypothesis: basis.kind().clone(),
        eigenvalues: nm.eigenvalues.clone(),
        eigenvalues_truncated: nm.truncated,
        null_draws: nm.draws.len(),
        null_summary: nm.summary(),
        p_value: p,
        critical_value: critical_value(&nm, opts.alpha),
        alpha: opts.alpha,
        reject: p <= opts.alpha,
        seed: opts.seed,
        diagnostics: diag,
    })
}

/// `b̂(t_m) / √υ̂(t_m, t_m)`, zero where the column was interpolated from an
/// empty mask column.
fn standardizing_scale(theta: &ThetaSurface, fit: &RegressionFit) -> Vec<f64> {
    (0..theta.bhat.len())
        .map(|m| {
            let v = theta.vhat[(m, m)];
            if v > 0.0 {
                theta.bhat[m] / v.sqrt()
            } else {
                debug_assert!(fit.interpolated_columns.contains(&m));
                0.0
            }
        })
        .collect()
}

/// Covariance of the whitened constrained estimator for an incomplete mask.
///
/// With `A(t) = X̃ᵀW(t)X̃` and `Σ_i x̃_i z_iᵀ = 0`,
/// `β̂ʷ(t) − β(t) = A(t)⁻¹ Σ_i {δ_i(t) x̃_i ε_i(t) + (δ_i(t) − b̂(t)) x̃_i z_iᵀη(t)}`.
/// The first sum has covariance `Γ(s,t) Σ_i δ_i(s)δ_i(t) x̃_i x̃_iᵀ` given the
/// mask; the second is estimated by the sum of its outer products with `η̂`
/// plugged in. Unsolvable columns enter through their interpolation weights.
/// The result is the `pN × pN` covariance of `y_m = √w_m Lᵀ s_m D_m`, where
/// `X̃ᵀX̃ = LLᵀ`, `s` is the optional standardizing scale and `D = 𝒞β̂ʷ`, so
/// that the statistic is `‖y‖²`.
pub fn masked_null_covariance(
    ds: &FunctionalDataset,
    dp: &DesignPair,
    fit: &RegressionFit,
    gamma: &DMatrix<f64>,
    basis: &BasisSet,
    scale: Option<&[f64]>,
) -> Result<DMatrix<f64>> {
    let (n, nn, p) = (ds.n_subjects(), ds.grid().len(), dp.p());
    if gamma.shape() != (nn, nn) {
        return Err(FosrError::GridMismatch("covariance does not match the grid".into()));
    }
    let mask = ds.mask_f64();
    let xt = dp.xtilde();
    let bhat: Vec<f64> = mask.column_iter().map(|c| c.sum() / n as f64).collect();
    let zeta = dp.z() * &fit.eta_hat;

    // per covariate pair (j, k): Σ_i δ_i(s)δ_i(t) x̃_ij x̃_ik and the nuisance outer products
    let weighted = |j: usize, with_nuisance: bool| -> DMatrix<f64> {
        DMatrix::from_fn(n, nn, |i, m| {
            if with_nuisance {
                (mask[(i, m)] - bhat[m]) * zeta[(i, m)] * xt[(i, j)]
            } else {
                mask[(i, m)] * xt[(i, j)]
            }
        })
    };
    let dx: Vec<DMatrix<f64>> = (0..p).map(|j| weighted(j, false)).collect();
    let qx: Vec<DMatrix<f64>> = (0..p).map(|j| weighted(j, true)).collect();
    let mut middle = DMatrix::zeros(p * nn, p * nn);
    for j in 0..p {
        for k in 0..p {
            let bjk = dx[j].transpose() * &dx[k];
            let leak = qx[j].transpose() * &qx[k];
            for a in 0..nn {
                for c in 0..nn {
                    middle[(a * p + j, c * p + k)] = gamma[(a, c)] * bjk[(a, c)] + leak[(a, c)];
                }
            }
        }
    }

    // blockdiag(A(t_m)⁻¹), zero for unsolvable columns
    let mut ainv = DMatrix::zeros(p * nn, p * nn);
    let interpolated = &fit.interpolated_columns;
    for m in 0..nn {
        if interpolated.contains(&m) {
            continue;
        }
        let a = middle_gram(&dx, m, p);
        let inv = a
            .cholesky()
            .ok_or_else(|| FosrError::RankDeficient(format!("X̃ᵀW X̃ is singular at grid point {m}")))?
            .inverse();
        ainv.view_mut((m * p, m * p), (p, p)).copy_from(&inv);
    }

    // grid map: interpolation, then 𝒞, then scale and quadrature weights
    let mut interp = DMatrix::<f64>::identity(nn, nn);
    let solvable: Vec<bool> = (0..nn).map(|m| !interpolated.contains(&m)).collect();
    crate::regression::interpolate_columns(&mut interp, &solvable, ds.grid().points());
    let constraint = DMatrix::<f64>::identity(nn, nn) - basis.projector();
    let mut grid_map = constraint * interp.transpose();
    for (m, mut row) in grid_map.row_iter_mut().enumerate() {
        let s = scale.map_or(1.0, |s| s[m]);
        row *= s * ds.grid().weights()[m].sqrt();
    }
    let g = dp.gram();
    let l = g
        .cholesky()
        .ok_or_else(|| FosrError::RankDeficient("X̃ᵀX̃ is singular".into()))?
        .l();
    let op = grid_map.kronecker(&l.transpose());
    let left = &op * &ainv;
    Ok(&left * middle * left.transpose())
}

fn middle_gram(dx: &[DMatrix<f64>], m: usize, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |j, k| dx[j].column(m).dot(&dx[k].column(m)))
}

fn median_sorted(v: &[usize]) -> f64 {
    match v.len() {
        0 => 0.0,
        n if n % 2 == 1 => v[n / 2] as f64,
        n => 0.5 * (v[n / 2 - 1] + v[n / 2]) as f64,
    }
}
