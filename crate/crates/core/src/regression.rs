//! Design orthogonalization and pointwise weighted least squares.
//!
//! At each grid point the observed subjects (mask = 1) form an ordinary
//! least-squares problem. Columns where the observed design is numerically
//! singular are filled by linear interpolation in `t` from the nearest
//! solvable columns and reported in [`RegressionFit::interpolated_columns`].

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::data::{DesignPair, FunctionalDataset};
use crate::error::{FosrError, Result};
use crate::grid::Grid;

/// Reciprocal condition number of `AᵀWA` below which a column is unsolvable.
pub const RCOND_THRESHOLD: f64 = 1e-10;

/// Largest fraction of grid columns that may be interpolated.
pub const MAX_INTERPOLATED_FRACTION: f64 = 0.2;

const COLUMN_RANK_TOL: f64 = 1e-10;

/// Pointwise regression fit on a common grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RegressionFit {
    pub grid: Grid,
    /// `p × N`
    pub beta_hat: DMatrix<f64>,
    /// `q × N`
    pub eta_hat: DMatrix<f64>,
    /// `n × N`, zero where unobserved.
    pub residuals: DMatrix<f64>,
    /// Observed subjects per grid point.
    pub effective_n: Vec<usize>,
    pub interpolated_columns: Vec<usize>,
}

/// `X̃ = (I − Z(ZᵀZ)⁻¹Zᵀ) X`. `z` may have zero columns, in which case
/// `X̃ = X`.
pub fn orthogonalize(x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DesignPair> {
    let n = x.nrows();
    if z.nrows() != n {
        return Err(FosrError::Dimension(format!(
            "X has {n} rows but Z has {}",
            z.nrows()
        )));
    }
    if x.ncols() == 0 {
        return Err(FosrError::InvalidInput("X needs at least one column".into()));
    }
    if x.iter().chain(z.iter()).any(|v| !v.is_finite()) {
        return Err(FosrError::InvalidInput("design contains non-finite entries".into()));
    }
    let q_basis = orthonormal_columns(z).map_err(|bad| {
        FosrError::RankDeficient(format!(
            "nuisance design Z is rank deficient; dependent column(s) {:?}",
            bad
        ))
    })?;
    let mut xtilde = x.clone();
    if let Some(q) = &q_basis {
        for _ in 0..2 {
            let coef = q.transpose() * &xtilde;
            xtilde -= q * coef;
        }
    }
    let scale = x.column_iter().map(|c| c.norm()).fold(0.0, f64::max);
    let sv = xtilde.clone().svd(false, false).singular_values;
    if xtilde.nrows() < xtilde.ncols() || !(sv.min() > COLUMN_RANK_TOL * scale) {
        return Err(FosrError::RankDeficient(
            "X has no full-rank part orthogonal to Z".into(),
        ));
    }
    Ok(DesignPair {
        x: x.clone(),
        z: z.clone(),
        xtilde,
    })
}

/// Orthonormal basis for the columns of `z` via modified Gram–Schmidt with
/// reorthogonalization. Returns the indices of dependent columns on failure.
fn orthonormal_columns(z: &DMatrix<f64>) -> std::result::Result<Option<DMatrix<f64>>, Vec<usize>> {
    let (n, q) = z.shape();
    if q == 0 {
        return Ok(None);
    }
    let mut cols: Vec<DVector<f64>> = Vec::with_capacity(q);
    let mut bad = Vec::new();
    for j in 0..q {
        let orig = z.column(j).into_owned();
        let norm0 = orig.norm();
        let mut v = orig;
        for _ in 0..2 {
            for u in &cols {
                let c = u.dot(&v);
                v.axpy(-c, u, 1.0);
            }
        }
        let norm = v.norm();
        if norm0 == 0.0 || norm <= COLUMN_RANK_TOL * norm0 || cols.len() >= n {
            bad.push(j);
            continue;
        }
        cols.push(v / norm);
    }
    if !bad.is_empty() {
        return Err(bad);
    }
    Ok(Some(DMatrix::from_columns(&cols)))
}

/// Least-squares solve through the SVD, refusing problems whose normal
/// matrix has reciprocal condition number below [`RCOND_THRESHOLD`].
fn solve_rank_checked(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let k = a.ncols();
    if k == 0 {
        return Some(DVector::zeros(0));
    }
    if a.nrows() < k {
        return None;
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smax > 0.0) || (smin / smax).powi(2) < RCOND_THRESHOLD {
        return None;
    }
    svd.solve(b, 0.0).ok()
}

fn observed_rows(mask: &DMatrix<bool>, m: usize) -> Vec<usize> {
    (0..mask.nrows()).filter(|&i| mask[(i, m)]).collect()
}

fn select_rows(a: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), a.ncols(), |r, c| a[(rows[r], c)])
}

/// True when the observed rows at column `m` identify both `β(t_m)` and the
/// nuisance coefficients.
pub fn column_identifiable(ds: &FunctionalDataset, dp: &DesignPair, m: usize) -> bool {
    let rows = observed_rows(ds.mask(), m);
    let y = DVector::zeros(rows.len());
    solve_rank_checked(&select_rows(&dp.xtilde, &rows), &y).is_some()
        && solve_rank_checked(&select_rows(&dp.z, &rows), &y).is_some()
}

struct ColumnSolution {
    beta: DVector<f64>,
    eta: DVector<f64>,
}

fn solve_column(
    ds: &FunctionalDataset,
    dp: &DesignPair,
    nuisance_map: &DMatrix<f64>,
    m: usize,
) -> Option<ColumnSolution> {
    let rows = observed_rows(ds.mask(), m);
    let y = DVector::from_iterator(rows.len(), rows.iter().map(|&i| ds.values()[(i, m)]));
    let xt = select_rows(&dp.xtilde, &rows);
    let beta = solve_rank_checked(&xt, &y)?;
    let eta = if dp.q() == 0 {
        DVector::zeros(0)
    } else {
        // α̂ = (ZᵀWZ)⁻¹ZᵀW(Y − Xβ̂), η̂ = α̂ + (ZᵀZ)⁻¹ZᵀXβ̂
        let xo = select_rows(&dp.x, &rows);
        let zo = select_rows(&dp.z, &rows);
        let partial = &y - &xo * &beta;
        let alpha = solve_rank_checked(&zo, &partial)?;
        alpha + nuisance_map * &beta
    };
    Some(ColumnSolution { beta, eta })
}

/// Pointwise WLS estimate `β̂ʷ(t) = (X̃ᵀW(t)X̃)⁻¹X̃ᵀW(t)Y^δ(t)` with the
/// matching nuisance fit and masked residual curves.
pub fn pointwise_wls(ds: &FunctionalDataset, dp: &DesignPair) -> Result<RegressionFit> {
    if ds.regime().is_irregular() {
        return Err(FosrError::InvalidInput(
            "irregular observations must be smoothed onto the grid before fitting".into(),
        ));
    }
    let n = ds.n_subjects();
    if dp.n() != n {
        return Err(FosrError::Dimension(format!(
            "dataset has {n} subjects but the design has {} rows",
            dp.n()
        )));
    }
    let nn = ds.grid().len();
    let (p, q) = (dp.p(), dp.q());

    // (ZᵀZ)⁻¹ZᵀX, so that Xβ + Zα = X̃β + Z(α + this·β)
    let nuisance_map = if q == 0 {
        DMatrix::zeros(0, p)
    } else {
        let ztz = dp.z.transpose() * &dp.z;
        let rhs = dp.z.transpose() * &dp.x;
        ztz.cholesky()
            .ok_or_else(|| FosrError::RankDeficient("ZᵀZ is not positive definite".into()))?
            .solve(&rhs)
    };

    let solutions: Vec<Option<ColumnSolution>> = (0..nn)
        .into_par_iter()
        .map(|m| solve_column(ds, dp, &nuisance_map, m))
        .collect();

    let solvable: Vec<bool> = solutions.iter().map(Option::is_some).collect();
    let interpolated_columns: Vec<usize> = (0..nn).filter(|&m| !solvable[m]).collect();
    if interpolated_columns.len() == nn {
        return Err(FosrError::TooSparse(
            "no grid point has an identifiable pointwise regression".into(),
        ));
    }
    if interpolated_columns.len() as f64 > MAX_INTERPOLATED_FRACTION * nn as f64 {
        return Err(FosrError::TooSparse(format!(
            "{} of {nn} grid points need interpolation (limit {:.0}%)",
            interpolated_columns.len(),
            MAX_INTERPOLATED_FRACTION * 100.0
        )));
    }

    let mut beta_hat = DMatrix::zeros(p, nn);
    let mut eta_hat = DMatrix::zeros(q, nn);
    for (m, s) in solutions.iter().enumerate() {
        if let Some(s) = s {
            beta_hat.set_column(m, &s.beta);
            eta_hat.set_column(m, &s.eta);
        }
    }
    if !interpolated_columns.is_empty() {
        interpolate_columns(&mut beta_hat, &solvable, ds.grid().points());
        interpolate_columns(&mut eta_hat, &solvable, ds.grid().points());
    }

    let fitted = &dp.xtilde * &beta_hat + &dp.z * &eta_hat;
    let mut residuals = ds.values() - fitted;
    residuals.zip_apply(ds.mask(), |r, obs| {
        if !obs {
            *r = 0.0
        }
    });

    Ok(RegressionFit {
        grid: ds.grid().clone(),
        beta_hat,
        eta_hat,
        residuals,
        effective_n: ds.effective_n(),
        interpolated_columns,
    })
}

/// Fill unsolvable columns linearly between the nearest solvable neighbours,
/// constant beyond the first/last solvable column.
pub(crate) fn interpolate_columns(a: &mut DMatrix<f64>, solvable: &[bool], t: &[f64]) {
    let known: Vec<usize> = (0..solvable.len()).filter(|&m| solvable[m]).collect();
    if known.is_empty() {
        return;
    }
    for m in 0..solvable.len() {
        if solvable[m] {
            continue;
        }
        let right = known.partition_point(|&k| k < m);
        let col = if right == 0 {
            a.column(known[0]).into_owned()
        } else if right == known.len() {
            a.column(known[known.len() - 1]).into_owned()
        } else {
            let (l, r) = (known[right - 1], known[right]);
            let w = (t[m] - t[l]) / (t[r] - t[l]);
            a.column(l) * (1.0 - w) + a.column(r) * w
        };
        a.set_column(m, &col);
    }
}
