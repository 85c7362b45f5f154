use serde::{Deserialize, Serialize};

use crate::basis::BasisKind;
use crate::data::Regime;

/// Which version of the integrated squared-distance statistic was computed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticKind {
    /// `Tₙ` on fully observed curves.
    Full,
    /// `Tₙ` on partially observed curves, without standardization.
    Partial,
    /// `T̆ₙ`, partially observed curves with pointwise standardization.
    PartialStandardized,
    /// `Tₙ*`, pre-smoothed irregular noisy curves.
    Smoothed,
    /// `Tₙ**`, within-fragment smoothing of partial irregular noisy curves.
    SmoothedComposition,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NullSummary {
    pub mean: f64,
    pub variance: f64,
    pub min: f64,
    pub max: f64,
}

/// Pipeline bookkeeping that does not change the decision but explains it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Smoothing bandwidth, for irregular regimes.
    pub bandwidth: Option<f64>,
    /// Grid columns where `β̂ʷ` was interpolated.
    pub interpolated_columns: Vec<usize>,
    pub effective_n_min: usize,
    pub effective_n_median: f64,
    /// Covariance cells with no observed pair.
    pub covariance_cells_filled: usize,
    /// Grid points left uncovered by smoothing, summed over subjects.
    pub uncovered_points: usize,
    /// Grid columns with no observed subject whose mask moments were taken
    /// from the nearest observed column.
    pub mask_columns_filled: Vec<usize>,
}

/// Outcome of one hypothesis test. Field names are a stable JSON schema.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub statistic: f64,
    pub statistic_kind: StatisticKind,
    pub regime: Regime,
    pub hypothesis: BasisKind,
    /// Kept eigenvalues of the null covariance operator, descending.
    pub eigenvalues: Vec<f64>,
    pub eigenvalues_truncated: usize,
    pub null_draws: usize,
    pub null_summary: NullSummary,
    pub p_value: f64,
    pub critical_value: f64,
    pub alpha: f64,
    pub reject: bool,
    pub seed: u64,
    pub diagnostics: Diagnostics,
}
