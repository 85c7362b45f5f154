//! Functional samples, designs and dataset validation.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{FosrError, Result};
use crate::grid::Grid;

/// How the functional responses were sampled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Every curve observed on the whole grid.
    Full,
    /// Curves observed on subject-specific random subsets of the grid.
    Partial,
    /// Discrete noisy observations at irregular points over the whole domain.
    IrregularNoisy,
    /// Discrete noisy observations restricted to each subject's random fragment.
    PartialIrregularNoisy,
}

impl Regime {
    pub fn is_irregular(self) -> bool {
        matches!(self, Regime::IrregularNoisy | Regime::PartialIrregularNoisy)
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::Full => "full",
            Regime::Partial => "partial",
            Regime::IrregularNoisy => "irregular",
            Regime::PartialIrregularNoisy => "composition",
        }
    }
}

impl std::str::FromStr for Regime {
    type Err = FosrError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Regime::Full),
            "partial" => Ok(Regime::Partial),
            "irregular" | "irregular_noisy" => Ok(Regime::IrregularNoisy),
            "composition" | "partial_irregular" | "partial_irregular_noisy" => {
                Ok(Regime::PartialIrregularNoisy)
            }
            other => Err(FosrError::InvalidInput(format!("unknown regime `{other}`"))),
        }
    }
}

/// Raw `(t, y)` observations of one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IrregularCurve {
    pub t: Vec<f64>,
    pub y: Vec<f64>,
}

impl IrregularCurve {
    pub fn new(t: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if t.len() != y.len() {
            return Err(FosrError::Dimension(format!(
                "{} time points but {} values",
                t.len(),
                y.len()
            )));
        }
        Ok(IrregularCurve { t, y })
    }

    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }
}

/// `n` response curves on a common grid.
///
/// Unobserved cells hold `0.0` with mask `false`. Irregular regimes carry
/// the raw observations in `irregular`; their grid matrices are all zero
/// until the curves are smoothed onto the grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DatasetRepr", into = "DatasetRepr")]
pub struct FunctionalDataset {
    grid: Grid,
    values: DMatrix<f64>,
    mask: DMatrix<bool>,
    regime: Regime,
    irregular: Option<Vec<IrregularCurve>>,
}

impl FunctionalDataset {
    /// Complete curves, one row per subject.
    pub fn full(grid: Grid, values: DMatrix<f64>) -> Result<Self> {
        let mask = DMatrix::from_element(values.nrows(), values.ncols(), true);
        Self::from_parts(grid, values, mask, Regime::Full, None)
    }

    /// Partially observed curves. Values under a `false` mask are zeroed.
    pub fn partial(grid: Grid, mut values: DMatrix<f64>, mask: DMatrix<bool>) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(FosrError::Dimension(format!(
                "values {:?} vs mask {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        values.zip_apply(&mask, |v, m| {
            if !m {
                *v = 0.0
            }
        });
        Self::from_parts(grid, values, mask, Regime::Partial, None)
    }

    /// Irregularly sampled noisy curves, to be smoothed onto `grid`.
    pub fn irregular(grid: Grid, curves: Vec<IrregularCurve>, regime: Regime) -> Result<Self> {
        if !regime.is_irregular() {
            return Err(FosrError::InvalidInput(
                "irregular datasets need an irregular regime".into(),
            ));
        }
        let n = curves.len();
        let nn = grid.len();
        Self::from_parts(
            grid,
            DMatrix::zeros(n, nn),
            DMatrix::from_element(n, nn, false),
            regime,
            Some(curves),
        )
    }

    /// Assemble a dataset checking only shapes. Use [`validate_dataset`]
    /// to audit the content.
    pub fn from_parts(
        grid: Grid,
        values: DMatrix<f64>,
        mask: DMatrix<bool>,
        regime: Regime,
        irregular: Option<Vec<IrregularCurve>>,
    ) -> Result<Self> {
        if values.shape() != mask.shape() {
            return Err(FosrError::Dimension(format!(
                "values {:?} vs mask {:?}",
                values.shape(),
                mask.shape()
            )));
        }
        if values.ncols() != grid.len() {
            return Err(FosrError::GridMismatch(format!(
                "values have {} columns but the grid has {} points",
                values.ncols(),
                grid.len()
            )));
        }
        if let Some(curves) = &irregular {
            if curves.len() != values.nrows() {
                return Err(FosrError::Dimension(format!(
                    "{} irregular curves for {} subjects",
                    curves.len(),
                    values.nrows()
                )));
            }
        }
        if regime.is_irregular() != irregular.is_some() {
            return Err(FosrError::InvalidInput(
                "irregular observations must be present exactly for irregular regimes".into(),
            ));
        }
        if regime == Regime::Full && mask.iter().any(|m| !m) {
            return Err(FosrError::InvalidInput(
                "full regime requires an all-ones mask".into(),
            ));
        }
        Ok(FunctionalDataset {
            grid,
            values,
            mask,
            regime,
            irregular,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn curves(&self) -> Option<&[IrregularCurve]> {
        self.irregular.as_deref()
    }

    pub fn n_subjects(&self) -> usize {
        self.values.nrows()
    }

    /// Mask as a 0/1 real matrix.
    pub fn mask_f64(&self) -> DMatrix<f64> {
        self.mask.map(|m| if m { 1.0 } else { 0.0 })
    }

    pub fn mask_is_complete(&self) -> bool {
        self.mask.iter().all(|m| *m)
    }

    /// Observed subject count per grid point.
    pub fn effective_n(&self) -> Vec<usize> {
        self.mask
            .column_iter()
            .map(|c| c.iter().filter(|m| **m).count())
            .collect()
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetRepr {
    grid: Grid,
    regime: Regime,
    values: Vec<Vec<f64>>,
    mask: Vec<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    irregular: Option<Vec<IrregularCurve>>,
}

impl From<FunctionalDataset> for DatasetRepr {
    fn from(ds: FunctionalDataset) -> Self {
        let values = ds
            .values
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect();
        let mask = ds
            .mask
            .row_iter()
            .map(|r| r.iter().map(|m| u8::from(*m)).collect())
            .collect();
        DatasetRepr {
            grid: ds.grid,
            regime: ds.regime,
            values,
            mask,
            irregular: ds.irregular,
        }
    }
}

impl TryFrom<DatasetRepr> for FunctionalDataset {
    type Error = FosrError;
    fn try_from(r: DatasetRepr) -> Result<Self> {
        let n = r.values.len();
        let nn = r.grid.len();
        if r.mask.len() != n
            || r.values.iter().any(|row| row.len() != nn)
            || r.mask.iter().any(|row| row.len() != nn)
        {
            return Err(FosrError::Dimension("ragged dataset rows".into()));
        }
        let values = DMatrix::from_fn(n, nn, |i, m| r.values[i][m]);
        let mut bad = false;
        let mask = DMatrix::from_fn(n, nn, |i, m| match r.mask[i][m] {
            0 => false,
            1 => true,
            _ => {
                bad = true;
                false
            }
        });
        if bad {
            return Err(FosrError::InvalidInput("mask entries must be 0 or 1".into()));
        }
        FunctionalDataset::from_parts(r.grid, values, mask, r.regime, r.irregular)
    }
}

/// Tested covariates `X`, nuisance covariates `Z`, and `X̃ = (I − P_Z) X`.
#[derive(Clone, Debug, PartialEq)]
pub struct DesignPair {
    pub(crate) x: DMatrix<f64>,
    pub(crate) z: DMatrix<f64>,
    pub(crate) xtilde: DMatrix<f64>,
}

impl DesignPair {
    /// Orthogonalize `x` against `z`. See [`crate::regression::orthogonalize`].
    pub fn new(x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        crate::regression::orthogonalize(&x, &z)
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn xtilde(&self) -> &DMatrix<f64> {
        &self.xtilde
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    pub fn q(&self) -> usize {
        self.z.ncols()
    }

    /// `X̃ᵀX̃`.
    pub fn gram(&self) -> DMatrix<f64> {
        self.xtilde.transpose() * &self.xtilde
    }
}

/// Outcome of a dataset audit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Finding {
    Ok,
    /// No subject observed at grid column `column`.
    ColumnUnidentifiable { column: usize },
    /// Observed subjects at `column` do not identify the coefficients.
    RankDeficientAt { column: usize },
    /// A masked-out cell carries a nonzero value.
    ValueNonzeroUnderZeroMask { subject: usize, column: usize },
    NonFiniteValue { subject: usize, column: usize },
    /// Irregular subject with no observations.
    EmptySubject { subject: usize },
    /// Irregular observation outside `[0, 1]` or non-finite.
    InvalidObservation { subject: usize, index: usize },
}

/// Audit a dataset. Returns `[Finding::Ok]` when nothing is wrong.
///
/// With a design, columns whose observed rows leave `X̃ᵀW(t)X̃` singular are
/// reported as [`Finding::RankDeficientAt`].
pub fn validate_dataset(ds: &FunctionalDataset, design: Option<&DesignPair>) -> Vec<Finding> {
    let mut out = Vec::new();
    if let Some(curves) = ds.curves() {
        for (i, c) in curves.iter().enumerate() {
            if c.is_empty() {
                out.push(Finding::EmptySubject { subject: i });
            }
            for (k, (t, y)) in c.t.iter().zip(&c.y).enumerate() {
                if !t.is_finite() || !y.is_finite() || *t < 0.0 || *t > 1.0 {
                    out.push(Finding::InvalidObservation { subject: i, index: k });
                }
            }
        }
    } else {
        let (n, nn) = ds.values().shape();
        for i in 0..n {
            for m in 0..nn {
                let v = ds.values()[(i, m)];
                if !v.is_finite() {
                    out.push(Finding::NonFiniteValue { subject: i, column: m });
                } else if !ds.mask()[(i, m)] && v != 0.0 {
                    out.push(Finding::ValueNonzeroUnderZeroMask { subject: i, column: m });
                }
            }
        }
        for (m, cnt) in ds.effective_n().into_iter().enumerate() {
            if cnt == 0 {
                out.push(Finding::ColumnUnidentifiable { column: m });
            } else if let Some(dp) = design {
                if !crate::regression::column_identifiable(ds, dp, m) {
                    out.push(Finding::RankDeficientAt { column: m });
                }
            }
        }
    }
    if out.is_empty() {
        out.push(Finding::Ok);
    }
    out
}
