//! Evaluation grids on `[0, 1]` and the quadrature used for every integral.

use serde::{Deserialize, Serialize};

use crate::error::{FosrError, Result};

/// Ordered evaluation points in `[0, 1]` with positive quadrature weights.
///
/// All integrals over the domain are weighted Riemann sums with these
/// weights. The default constructors use `1/N` at every point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridRepr", into = "GridRepr")]
pub struct Grid {
    points: Vec<f64>,
    weights: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct GridRepr {
    points: Vec<f64>,
    weights: Vec<f64>,
}

impl TryFrom<GridRepr> for Grid {
    type Error = FosrError;
    fn try_from(r: GridRepr) -> Result<Self> {
        Grid::with_weights(r.points, r.weights)
    }
}

impl From<Grid> for GridRepr {
    fn from(g: Grid) -> Self {
        GridRepr {
            points: g.points,
            weights: g.weights,
        }
    }
}

impl Grid {
    /// `n` equispaced points from 0 to 1 inclusive, weights `1/n`.
    pub fn uniform(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(FosrError::InvalidGrid("grid needs at least one point".into()));
        }
        let points = if n == 1 {
            vec![0.0]
        } else {
            let step = 1.0 / (n - 1) as f64;
            (0..n).map(|i| if i == n - 1 { 1.0 } else { i as f64 * step }).collect()
        };
        Self::new(points)
    }

    /// Arbitrary points with uniform weights `1/N`.
    pub fn new(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        let weights = vec![1.0 / n.max(1) as f64; n];
        Self::with_weights(points, weights)
    }

    /// Trapezoid weights normalized to sum to one. Intended for non-uniform
    /// grids; on a uniform grid this differs from `new` at the end points.
    pub fn with_trapezoid(points: Vec<f64>) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Self::new(points);
        }
        let mut w = vec![0.0; n];
        for i in 0..n {
            let left = if i == 0 { 0.0 } else { points[i] - points[i - 1] };
            let right = if i == n - 1 { 0.0 } else { points[i + 1] - points[i] };
            w[i] = 0.5 * (left + right);
        }
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(FosrError::InvalidGrid("degenerate trapezoid weights".into()));
        }
        w.iter_mut().for_each(|x| *x /= total);
        Self::with_weights(points, w)
    }

    pub fn with_weights(points: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        if points.is_empty() {
            return Err(FosrError::InvalidGrid("grid needs at least one point".into()));
        }
        if points.len() != weights.len() {
            return Err(FosrError::InvalidGrid(format!(
                "{} points but {} weights",
                points.len(),
                weights.len()
            )));
        }
        if points.iter().any(|t| !t.is_finite() || *t < 0.0 || *t > 1.0) {
            return Err(FosrError::InvalidGrid("points must lie in [0, 1]".into()));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(FosrError::InvalidGrid("points must be strictly increasing".into()));
        }
        if weights.iter().any(|w| !w.is_finite() || *w <= 0.0) {
            return Err(FosrError::InvalidGrid("weights must be strictly positive".into()));
        }
        Ok(Grid { points, weights })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// True when every weight equals `1/N` exactly.
    pub fn has_uniform_weights(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|x| *x == w)
    }

    /// Quadrature of `f` over the grid.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        f.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    /// Quadrature inner product `<f, g>`.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        debug_assert_eq!(f.len(), self.len());
        debug_assert_eq!(g.len(), self.len());
        f.iter()
            .zip(g)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    pub fn ensure_same(&self, other: &Grid, what: &str) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(FosrError::GridMismatch(format!(
                "{what}: grids differ ({} vs {} points)",
                self.len(),
                other.len()
            )))
        }
    }

    /// Index of the grid point closest to `t`.
    pub fn nearest_index(&self, t: f64) -> usize {
        match self.points.binary_search_by(|p| p.total_cmp(&t)) {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) if i == self.len() => self.len() - 1,
            Err(i) => {
                if t - self.points[i - 1] <= self.points[i] - t {
                    i - 1
                } else {
                    i
                }
            }
        }
    }
}
