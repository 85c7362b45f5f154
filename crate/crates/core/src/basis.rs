//! Orthonormal bases spanning the null space of the constraint, and the
//! projection `ℒ` and constraint `𝒞 = ℐ − ℒ` operators they define.
//!
//! Orthonormality is with respect to the grid quadrature inner product, so
//! a basis and the data it is applied to must share one [`Grid`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{FosrError, Result};
use crate::grid::Grid;

const ORTHO_TOL: f64 = 1e-6;
// relative norm below which a Gram–Schmidt candidate is treated as dependent
const DEPENDENCE_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BasisKind {
    Polynomial { r: usize },
    PiecewiseLinear { knots: Vec<f64> },
    Custom,
    /// `r = 0`: the null hypothesis is `β ≡ 0`.
    Empty,
}

/// `r` functions on a grid, orthonormal under the grid quadrature.
#[derive(Clone, Debug, PartialEq)]
pub struct BasisSet {
    grid: Grid,
    /// `r × N`, one basis function per row.
    functions: DMatrix<f64>,
    kind: BasisKind,
}

impl BasisSet {
    pub fn empty(grid: &Grid) -> Self {
        BasisSet {
            grid: grid.clone(),
            functions: DMatrix::zeros(0, grid.len()),
            kind: BasisKind::Empty,
        }
    }

    /// Orthonormalize arbitrary raw functions (rows of `raw`) in row order.
    pub fn custom(grid: &Grid, raw: &DMatrix<f64>) -> Result<Self> {
        let functions = gram_schmidt(grid, raw)?;
        Ok(BasisSet {
            grid: grid.clone(),
            functions,
            kind: BasisKind::Custom,
        })
    }

    /// Wrap functions that are already orthonormal (within `1e-8`).
    pub fn from_orthonormal(grid: &Grid, functions: DMatrix<f64>) -> Result<Self> {
        if functions.ncols() != grid.len() {
            return Err(FosrError::GridMismatch(format!(
                "basis has {} columns, grid has {} points",
                functions.ncols(),
                grid.len()
            )));
        }
        let b = BasisSet {
            grid: grid.clone(),
            functions,
            kind: BasisKind::Custom,
        };
        let err = b.orthonormality_error();
        if err > 1e-8 {
            return Err(FosrError::Numerical(format!(
                "functions are not orthonormal (max Gram error {err:.2e})"
            )));
        }
        Ok(b)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn functions(&self) -> &DMatrix<f64> {
        &self.functions
    }

    pub fn kind(&self) -> &BasisKind {
        &self.kind
    }

    /// Number of basis functions `r`.
    pub fn dim(&self) -> usize {
        self.functions.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.dim() == 0
    }

    /// Quadrature Gram matrix `[<v_k, v_l>]`.
    pub fn gram(&self) -> DMatrix<f64> {
        let fw = self.weighted_functions();
        &fw * self.functions.transpose()
    }

    /// Max absolute deviation of the Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let g = self.gram();
        let r = g.nrows();
        (g - DMatrix::identity(r, r)).amax()
    }

    /// `F · diag(w)`: rows are `v_l(t_m) w_m`.
    fn weighted_functions(&self) -> DMatrix<f64> {
        let w = self.grid.weights();
        let mut fw = self.functions.clone();
        for (m, mut col) in fw.column_iter_mut().enumerate() {
            col *= w[m];
        }
        fw
    }

    /// `N × N` matrix `P` with `P f = ℒ f` for a column of grid values.
    pub fn projector(&self) -> DMatrix<f64> {
        self.functions.transpose() * self.weighted_functions()
    }

    /// The same span with basis functions mixed by the orthogonal `r × r`
    /// matrix `rotation`.
    pub fn rotated(&self, rotation: &DMatrix<f64>) -> Result<Self> {
        if rotation.shape() != (self.dim(), self.dim()) {
            return Err(FosrError::Dimension("rotation must be r × r".into()));
        }
        Self::from_orthonormal(&self.grid, rotation * &self.functions)
    }
}

/// Orthonormal basis of polynomials of degree `< r`, Gram–Schmidt applied to
/// `1, t, …, t^{r−1}` in degree order.
pub fn orthonormal_polynomials(r: usize, grid: &Grid) -> Result<BasisSet> {
    if r == 0 {
        return Err(FosrError::InvalidInput("polynomial basis needs r ≥ 1".into()));
    }
    if r > grid.len() {
        return Err(FosrError::RankDeficient(format!(
            "{r} polynomials cannot be independent on {} grid points",
            grid.len()
        )));
    }
    let raw = DMatrix::from_fn(r, grid.len(), |l, m| grid.points()[m].powi(l as i32));
    let functions = gram_schmidt(grid, &raw)?;
    Ok(BasisSet {
        grid: grid.clone(),
        functions,
        kind: BasisKind::Polynomial { r },
    })
}

/// Hat functions at `knots`, orthonormalized in knot order. Spans the
/// continuous piecewise-linear functions with those knots.
pub fn piecewise_linear_basis(knots: &[f64], grid: &Grid) -> Result<BasisSet> {
    if knots.len() < 2 {
        return Err(FosrError::InvalidInput(
            "piecewise-linear basis needs at least two knots".into(),
        ));
    }
    if knots.windows(2).any(|w| w[1] <= w[0]) {
        return Err(FosrError::InvalidInput("knots must be strictly increasing".into()));
    }
    if knots[0] != 0.0 || knots[knots.len() - 1] != 1.0 {
        return Err(FosrError::InvalidInput("knots must include 0 and 1".into()));
    }
    let k = knots.len();
    let raw = DMatrix::from_fn(k, grid.len(), |j, m| hat(knots, j, grid.points()[m]));
    let functions = gram_schmidt(grid, &raw)?;
    Ok(BasisSet {
        grid: grid.clone(),
        functions,
        kind: BasisKind::PiecewiseLinear {
            knots: knots.to_vec(),
        },
    })
}

fn hat(knots: &[f64], j: usize, t: f64) -> f64 {
    let c = knots[j];
    if j > 0 {
        let a = knots[j - 1];
        if t >= a && t <= c {
            return (t - a) / (c - a);
        }
    }
    if j + 1 < knots.len() {
        let b = knots[j + 1];
        if t >= c && t <= b {
            return (b - t) / (b - c);
        }
    }
    if t == c {
        1.0
    } else {
        0.0
    }
}

/// Modified Gram–Schmidt with one reorthogonalization pass under the grid
/// inner product. Output row `l` has a positive inner product with input row
/// `l`.
fn gram_schmidt(grid: &Grid, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if raw.ncols() != grid.len() {
        return Err(FosrError::GridMismatch(format!(
            "raw functions have {} columns, grid has {} points",
            raw.ncols(),
            grid.len()
        )));
    }
    let r = raw.nrows();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(r);
    for l in 0..r {
        let orig: DVector<f64> = raw.row(l).transpose();
        let orig_norm = grid.inner(orig.as_slice(), orig.as_slice()).sqrt();
        if !(orig_norm > 0.0) || !orig_norm.is_finite() {
            return Err(FosrError::RankDeficient(format!(
                "basis function {} is zero on the grid",
                l + 1
            )));
        }
        let mut v = orig.clone();
        for _pass in 0..2 {
            for u in &out {
                let c = grid.inner(v.as_slice(), u.as_slice());
                v.axpy(-c, u, 1.0);
            }
        }
        let norm = grid.inner(v.as_slice(), v.as_slice()).sqrt();
        if norm <= DEPENDENCE_TOL * orig_norm {
            return Err(FosrError::RankDeficient(format!(
                "basis function {} is linearly dependent on the previous ones over this grid",
                l + 1
            )));
        }
        v /= norm;
        if grid.inner(v.as_slice(), orig.as_slice()) < 0.0 {
            v.neg_mut();
        }
        out.push(v);
    }
    let mut f = DMatrix::zeros(r, grid.len());
    for (l, v) in out.iter().enumerate() {
        f.set_row(l, &v.transpose());
    }
    let g = {
        let b = BasisSet {
            grid: grid.clone(),
            functions: f.clone(),
            kind: BasisKind::Custom,
        };
        b.orthonormality_error()
    };
    if g > ORTHO_TOL {
        return Err(FosrError::Numerical(format!(
            "Gram–Schmidt lost orthogonality (max Gram error {g:.2e})"
        )));
    }
    Ok(f)
}

fn check_rows(beta: &DMatrix<f64>, basis: &BasisSet) -> Result<()> {
    if beta.ncols() != basis.grid.len() {
        return Err(FosrError::GridMismatch(format!(
            "coefficient rows have {} points, basis grid has {}",
            beta.ncols(),
            basis.grid.len()
        )));
    }
    Ok(())
}

/// `ℒβ` applied row-wise: `Σ_l <β_j, v_l> v_l`.
pub fn project(beta: &DMatrix<f64>, basis: &BasisSet) -> Result<DMatrix<f64>> {
    check_rows(beta, basis)?;
    if basis.is_empty() {
        return Ok(DMatrix::zeros(beta.nrows(), beta.ncols()));
    }
    let coef = beta * basis.weighted_functions().transpose();
    Ok(coef * &basis.functions)
}

/// `𝒞β = β − ℒβ` applied row-wise.
pub fn constraint_residual(beta: &DMatrix<f64>, basis: &BasisSet) -> Result<DMatrix<f64>> {
    check_rows(beta, basis)?;
    if basis.is_empty() {
        return Ok(beta.clone());
    }
    Ok(beta - project(beta, basis)?)
}

/// Parsed null-hypothesis specification: `poly:<r>`, `pwlinear:<k1,…>` or
/// `zero`.
#[derive(Clone, Debug, PartialEq)]
pub enum BasisSpec {
    Polynomial(usize),
    PiecewiseLinear(Vec<f64>),
    Zero,
}

impl std::str::FromStr for BasisSpec {
    type Err = FosrError;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("zero") {
            return Ok(BasisSpec::Zero);
        }
        let (head, tail) = s.split_once(':').ok_or_else(|| {
            FosrError::InvalidInput(format!(
                "hypothesis `{s}`: expected poly:<r>, pwlinear:<knots> or zero"
            ))
        })?;
        match head.to_ascii_lowercase().as_str() {
            "poly" => {
                let r: usize = tail.trim().parse().map_err(|_| {
                    FosrError::InvalidInput(format!("hypothesis `{s}`: bad polynomial order"))
                })?;
                if r == 0 {
                    return Err(FosrError::InvalidInput(
                        "poly:0 is not a basis; use `zero`".into(),
                    ));
                }
                Ok(BasisSpec::Polynomial(r))
            }
            "pwlinear" => {
                let knots = tail
                    .split(',')
                    .map(|k| k.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| {
                        FosrError::InvalidInput(format!("hypothesis `{s}`: bad knot list"))
                    })?;
                Ok(BasisSpec::PiecewiseLinear(knots))
            }
            other => Err(FosrError::InvalidInput(format!(
                "hypothesis `{s}`: unknown basis family `{other}`"
            ))),
        }
    }
}

impl BasisSpec {
    pub fn build(&self, grid: &Grid) -> Result<BasisSet> {
        match self {
            BasisSpec::Polynomial(r) => orthonormal_polynomials(*r, grid),
            BasisSpec::PiecewiseLinear(k) => piecewise_linear_basis(k, grid),
            BasisSpec::Zero => Ok(BasisSet::empty(grid)),
        }
    }
}
