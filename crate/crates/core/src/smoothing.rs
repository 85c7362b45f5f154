//! Nadaraya–Watson curve reconstruction, leave-one-out bandwidth selection
//! and covariance surfaces of (possibly fragmented) residual curves.

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{FunctionalDataset, IrregularCurve};
use crate::error::{FosrError, Result};
use crate::grid::Grid;
use crate::regression::RegressionFit;

/// Largest fraction of empty covariance cells tolerated.
pub const MAX_EMPTY_CELL_FRACTION: f64 = 0.2;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// `K(u) = 0.75 (1 − u²)` on `[−1, 1]`
    #[default]
    Epanechnikov,
    /// Standard normal density
    Gaussian,
}

impl std::str::FromStr for KernelFamily {
    type Err = FosrError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "epanechnikov" | "epa" => Ok(KernelFamily::Epanechnikov),
            "gaussian" | "normal" => Ok(KernelFamily::Gaussian),
            other => Err(FosrError::InvalidInput(format!("unknown kernel `{other}`"))),
        }
    }
}

impl KernelFamily {
    #[inline]
    pub fn eval(self, u: f64) -> f64 {
        match self {
            KernelFamily::Epanechnikov => {
                if u.abs() < 1.0 {
                    0.75 * (1.0 - u * u)
                } else {
                    0.0
                }
            }
            KernelFamily::Gaussian => {
                (-0.5 * u * u).exp() / (2.0 * std::f64::consts::PI).sqrt()
            }
        }
    }

    /// Half-width of the support in units of `h`, if compact.
    fn support(self) -> Option<f64> {
        match self {
            KernelFamily::Epanechnikov => Some(1.0),
            KernelFamily::Gaussian => None,
        }
    }
}

/// Kernel family with bandwidth `h > 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: f64,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0) || !bandwidth.is_finite() {
            return Err(FosrError::InvalidInput(format!(
                "bandwidth must be positive, got {bandwidth}"
            )));
        }
        Ok(KernelSpec { family, bandwidth })
    }

    /// `K_h(u) = K(u/h)/h`
    #[inline]
    pub fn weight(&self, u: f64) -> f64 {
        self.family.eval(u / self.bandwidth) / self.bandwidth
    }
}

/// A curve reconstructed on a grid. `values` is zero where `covered` is false.
#[derive(Clone, Debug, PartialEq)]
pub struct SmoothedCurve {
    pub values: Vec<f64>,
    pub covered: Vec<bool>,
}

/// Nadaraya–Watson estimate of `E[Y | T = t]` at every grid point.
///
/// Grid points whose kernel window holds no observation are left uncovered;
/// the smoother never extrapolates across an empty window.
pub fn nw_smooth(points: &[f64], values: &[f64], kernel: KernelSpec, out_grid: &Grid) -> Result<SmoothedCurve> {
    if points.is_empty() {
        return Err(FosrError::InvalidInput("no observations to smooth".into()));
    }
    if points.len() != values.len() {
        return Err(FosrError::Dimension(format!(
            "{} points but {} values",
            points.len(),
            values.len()
        )));
    }
    KernelSpec::new(kernel.family, kernel.bandwidth)?;
    let mut out = vec![0.0; out_grid.len()];
    let mut covered = vec![false; out_grid.len()];
    for (m, &t) in out_grid.points().iter().enumerate() {
        let mut num = 0.0;
        let mut den = 0.0;
        for (&tk, &yk) in points.iter().zip(values) {
            let w = kernel.weight(tk - t);
            num += w * yk;
            den += w;
        }
        if den > 0.0 {
            out[m] = num / den;
            covered[m] = true;
        }
    }
    if !covered.iter().any(|c| *c) {
        return Err(FosrError::TooSparse(format!(
            "bandwidth {} leaves every grid point without observations",
            kernel.bandwidth
        )));
    }
    Ok(SmoothedCurve { values: out, covered })
}

/// Result of a leave-one-out bandwidth search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub bandwidth: f64,
    pub candidates: Vec<f64>,
    /// Pooled LOOCV score per candidate, `+∞` when infeasible.
    pub scores: Vec<f64>,
}

/// `count` log-spaced candidates in `[1.5 · median gap, 0.5 · range]` of the
/// pooled observation times.
pub fn default_bandwidth_candidates(curves: &[IrregularCurve], count: usize) -> Vec<f64> {
    let mut gaps = Vec::new();
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for c in curves {
        let mut t = c.t.clone();
        t.sort_by(f64::total_cmp);
        for w in t.windows(2) {
            if w[1] > w[0] {
                gaps.push(w[1] - w[0]);
            }
        }
        if let (Some(a), Some(b)) = (t.first(), t.last()) {
            lo = lo.min(*a);
            hi = hi.max(*b);
        }
    }
    let range = if hi > lo { hi - lo } else { 1.0 };
    let median_gap = if gaps.is_empty() {
        range / 10.0
    } else {
        gaps.sort_by(f64::total_cmp);
        gaps[gaps.len() / 2]
    };
    log_spaced(1.5 * median_gap, 0.5 * range, count)
}

pub(crate) fn log_spaced(a: f64, b: f64, count: usize) -> Vec<f64> {
    if count <= 1 || b <= a {
        return vec![a.min(b).max(f64::MIN_POSITIVE)];
    }
    let (la, lb) = (a.ln(), b.ln());
    (0..count)
        .map(|i| (la + (lb - la) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

struct SortedCurve {
    t: Vec<f64>,
    y: Vec<f64>,
}

fn sorted(c: &IrregularCurve) -> SortedCurve {
    let mut idx: Vec<usize> = (0..c.len()).collect();
    idx.sort_by(|&a, &b| c.t[a].total_cmp(&c.t[b]));
    SortedCurve {
        t: idx.iter().map(|&i| c.t[i]).collect(),
        y: idx.iter().map(|&i| c.y[i]).collect(),
    }
}

/// Sum of squared leave-one-out prediction errors for one subject, or
/// `None` if some observation has an empty leave-one-out window.
fn loo_score(c: &SortedCurve, kernel: KernelSpec) -> Option<f64> {
    let n = c.t.len();
    let reach = kernel.family.support().map(|s| s * kernel.bandwidth);
    let mut total = 0.0;
    for m in 0..n {
        let tm = c.t[m];
        let mut num = 0.0;
        let mut den = 0.0;
        let mut acc = |k: usize| {
            let w = kernel.weight(c.t[k] - tm);
            num += w * c.y[k];
            den += w;
        };
        match reach {
            Some(r) => {
                let mut k = m;
                while k > 0 && tm - c.t[k - 1] < r {
                    k -= 1;
                    acc(k);
                }
                let mut k = m + 1;
                while k < n && c.t[k] - tm < r {
                    acc(k);
                    k += 1;
                }
            }
            None => (0..n).filter(|&k| k != m).for_each(&mut acc),
        }
        if !(den > 0.0) {
            return None;
        }
        total += (c.y[m] - num / den).powi(2);
    }
    Some(total)
}

/// Common bandwidth minimizing the pooled leave-one-out squared error across
/// all subjects. Ties go to the smaller bandwidth.
pub fn loocv_bandwidth(
    curves: &[IrregularCurve],
    family: KernelFamily,
    candidates: &[f64],
) -> Result<BandwidthSelection> {
    if candidates.is_empty() {
        return Err(FosrError::InvalidInput("no bandwidth candidates".into()));
    }
    if curves.is_empty() {
        return Err(FosrError::InvalidInput("no subjects".into()));
    }
    if let Some(i) = curves.iter().position(|c| c.len() < 2) {
        return Err(FosrError::InvalidInput(format!(
            "subject {i} has fewer than two observations; leave-one-out is undefined"
        )));
    }
    let kernels = candidates
        .iter()
        .map(|&h| KernelSpec::new(family, h))
        .collect::<Result<Vec<_>>>()?;
    let sorted_curves: Vec<SortedCurve> = curves.iter().map(sorted).collect();
    let scores: Vec<f64> = kernels
        .par_iter()
        .map(|k| {
            let mut s = 0.0;
            for c in &sorted_curves {
                match loo_score(c, *k) {
                    Some(v) => s += v,
                    None => return f64::INFINITY,
                }
            }
            s
        })
        .collect();
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if !s.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let better = *s < scores[b] || (*s == scores[b] && candidates[i] < candidates[b]);
                Some(if better { i } else { b })
            }
        };
    }
    let b = best.ok_or_else(|| {
        FosrError::TooSparse(format!(
            "every bandwidth candidate (max {:.4}) leaves some observation without neighbours; try larger bandwidths",
            candidates.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        ))
    })?;
    Ok(BandwidthSelection {
        bandwidth: candidates[b],
        candidates: candidates.to_vec(),
        scores,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum CovMethod {
    /// Pairwise-complete moment estimator.
    #[default]
    Empirical,
    /// Two-dimensional Nadaraya–Watson smoothing of the raw residual
    /// products; the bandwidth is chosen by leave-one-cell-out CV when not
    /// given.
    Smoothed {
        family: KernelFamily,
        bandwidth: Option<f64>,
    },
}

/// Estimated covariance surface `Γ̂` on the grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CovSurface {
    pub grid: Grid,
    /// `N × N`, exactly symmetric.
    pub gamma: DMatrix<f64>,
    pub method: CovMethod,
    /// Cells without any observed pair, filled from the nearest estimated cell.
    pub filled_cells: usize,
    pub bandwidth: Option<f64>,
}

/// Covariance surface of the masked residual curves of `fit`.
pub fn covariance_surface(fit: &RegressionFit, ds: &FunctionalDataset, method: CovMethod) -> Result<CovSurface> {
    fit.grid.ensure_same(ds.grid(), "covariance surface")?;
    if fit.residuals.shape() != ds.values().shape() {
        return Err(FosrError::Dimension("residuals and dataset differ in shape".into()));
    }
    let mask = ds.mask_f64();
    let r = fit.residuals.component_mul(&mask);
    let sums = r.transpose() * &r;
    let counts = mask.transpose() * &mask;
    let nn = ds.grid().len();

    let (mut gamma, have, bandwidth) = match method {
        CovMethod::Empirical => {
            let mut g = DMatrix::zeros(nn, nn);
            let mut have = DMatrix::from_element(nn, nn, false);
            for a in 0..nn {
                for b in 0..nn {
                    if counts[(a, b)] > 0.0 {
                        g[(a, b)] = sums[(a, b)] / counts[(a, b)];
                        have[(a, b)] = true;
                    }
                }
            }
            (g, have, None)
        }
        CovMethod::Smoothed { family, bandwidth } => {
            let h = match bandwidth {
                Some(h) => h,
                None => surface_bandwidth(ds.grid(), family, &sums, &counts)?,
            };
            let k = kernel_matrix(ds.grid(), KernelSpec::new(family, h)?);
            let num = &k * &sums * k.transpose();
            let den = &k * &counts * k.transpose();
            let mut g = DMatrix::zeros(nn, nn);
            let mut have = DMatrix::from_element(nn, nn, false);
            for a in 0..nn {
                for b in 0..nn {
                    if den[(a, b)] > 0.0 {
                        g[(a, b)] = num[(a, b)] / den[(a, b)];
                        have[(a, b)] = true;
                    }
                }
            }
            (g, have, Some(h))
        }
    };

    let empty: Vec<(usize, usize)> = (0..nn)
        .flat_map(|a| (0..nn).map(move |b| (a, b)))
        .filter(|&(a, b)| !have[(a, b)])
        .collect();
    if empty.len() as f64 > MAX_EMPTY_CELL_FRACTION * (nn * nn) as f64 {
        return Err(FosrError::TooSparse(format!(
            "{} of {} covariance cells have no observed pairs",
            empty.len(),
            nn * nn
        )));
    }
    if !empty.is_empty() {
        let known: Vec<(usize, usize)> = (0..nn)
            .flat_map(|a| (0..nn).map(move |b| (a, b)))
            .filter(|&(a, b)| have[(a, b)])
            .collect();
        for &(a, b) in &empty {
            let src = known
                .iter()
                .min_by_key(|&&(c, d)| {
                    let da = a.abs_diff(c);
                    let db = b.abs_diff(d);
                    da * da + db * db
                })
                .copied()
                .expect("known cells exist");
            gamma[(a, b)] = gamma[src];
        }
    }

    let mut gamma = (&gamma + gamma.transpose()) * 0.5;
    if matches!(method, CovMethod::Smoothed { .. }) {
        gamma = clip_negative_eigenvalues(gamma);
    }
    Ok(CovSurface {
        grid: ds.grid().clone(),
        gamma,
        method,
        filled_cells: empty.len(),
        bandwidth,
    })
}

fn kernel_matrix(grid: &Grid, kernel: KernelSpec) -> DMatrix<f64> {
    let t = grid.points();
    DMatrix::from_fn(t.len(), t.len(), |a, m| kernel.weight(t[m] - t[a]))
}

/// Leave-one-cell-out CV over the grid of raw product averages.
fn surface_bandwidth(grid: &Grid, family: KernelFamily, sums: &DMatrix<f64>, counts: &DMatrix<f64>) -> Result<f64> {
    let t = grid.points();
    let nn = t.len();
    let gaps: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
    let mut sorted_gaps = gaps.clone();
    sorted_gaps.sort_by(f64::total_cmp);
    let med = sorted_gaps.get(sorted_gaps.len() / 2).copied().unwrap_or(0.1);
    let range = t[nn - 1] - t[0];
    let candidates = log_spaced(1.5 * med, 0.5 * range.max(med), 20);
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|&h| {
            let ks = KernelSpec { family, bandwidth: h };
            let k = kernel_matrix(grid, ks);
            let num = &k * sums * k.transpose();
            let den = &k * counts * k.transpose();
            let mut score = 0.0;
            for a in 0..nn {
                for b in 0..nn {
                    let c = counts[(a, b)];
                    if c == 0.0 {
                        continue;
                    }
                    let self_w = k[(a, a)] * k[(b, b)];
                    let d = den[(a, b)] - self_w * c;
                    if !(d > 1e-12 * den[(a, b)]) {
                        return f64::INFINITY;
                    }
                    let pred = (num[(a, b)] - self_w * sums[(a, b)]) / d;
                    score += c * (sums[(a, b)] / c - pred).powi(2);
                }
            }
            score
        })
        .collect();
    scores
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_finite())
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| candidates[i])
        .ok_or_else(|| FosrError::TooSparse("no feasible covariance smoothing bandwidth".into()))
}

fn clip_negative_eigenvalues(g: DMatrix<f64>) -> DMatrix<f64> {
    let eig = g.symmetric_eigen();
    let vals = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&vals) * v.transpose();
    (&out + out.transpose()) * 0.5
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regression::RegressionFit;

    fn fit_with_residuals(grid: &Grid, r: DMatrix<f64>) -> RegressionFit {
        RegressionFit {
            grid: grid.clone(),
            beta_hat: DMatrix::zeros(1, grid.len()),
            eta_hat: DMatrix::zeros(0, grid.len()),
            effective_n: vec![],
            interpolated_columns: vec![],
            residuals: r,
        }
    }

    #[test]
    fn constants_are_reproduced() {
        let g = Grid::uniform(50).unwrap();
        let t: Vec<f64> = (0..30).map(|i| (i as f64 + 0.3) / 30.0).collect();
        let y = vec![2.5; 30];
        for fam in [KernelFamily::Epanechnikov, KernelFamily::Gaussian] {
            let s = nw_smooth(&t, &y, KernelSpec::new(fam, 0.07).unwrap(), &g).unwrap();
            for (v, c) in s.values.iter().zip(&s.covered) {
                if *c {
                    assert!((v - 2.5).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn single_observation_window() {
        let g = Grid::uniform(101).unwrap();
        let k = KernelSpec::new(KernelFamily::Epanechnikov, 0.1).unwrap();
        let s = nw_smooth(&[0.5], &[3.0], k, &g).unwrap();
        for (m, &t) in g.points().iter().enumerate() {
            if (t - 0.5).abs() < 0.1 - 1e-12 {
                assert!(s.covered[m]);
                assert!((s.values[m] - 3.0).abs() < 1e-14);
            } else if (t - 0.5).abs() > 0.1 + 1e-12 {
                assert!(!s.covered[m]);
                assert_eq!(s.values[m], 0.0);
            }
        }
    }

    #[test]
    fn all_uncovered_is_an_error() {
        let g = Grid::new(vec![0.0, 0.1]).unwrap();
        let k = KernelSpec::new(KernelFamily::Epanechnikov, 0.05).unwrap();
        assert!(nw_smooth(&[0.9], &[1.0], k, &g).is_err());
        assert!(KernelSpec::new(KernelFamily::Gaussian, 0.0).is_err());
    }

    #[test]
    fn compact_kernel_is_local() {
        let g = Grid::uniform(21).unwrap();
        let k = KernelSpec::new(KernelFamily::Epanechnikov, 0.1).unwrap();
        let t = vec![0.1, 0.2, 0.3, 0.8];
        let a = nw_smooth(&t, &[1.0, 2.0, 3.0, 4.0], k, &g).unwrap();
        let b = nw_smooth(&t, &[1.0, 2.0, 3.0, 40.0], k, &g).unwrap();
        for m in 0..g.len() {
            if (g.points()[m] - 0.8).abs() >= 0.1 {
                assert_eq!(a.values[m], b.values[m]);
            }
        }
    }

    fn constant_curves() -> Vec<IrregularCurve> {
        (0..5)
            .map(|i| {
                let t: Vec<f64> = (0..20).map(|k| (k as f64 + 0.1 * i as f64) / 20.0).collect();
                IrregularCurve::new(t, vec![i as f64; 20]).unwrap()
            })
            .collect()
    }

    #[test]
    fn loocv_prefers_smallest_feasible_on_ties() {
        let curves = constant_curves();
        // 0.02 is below the 0.05 spacing, hence infeasible
        let sel = loocv_bandwidth(&curves, KernelFamily::Epanechnikov, &[0.02, 0.3, 0.08, 0.15]).unwrap();
        assert!(sel.scores[0].is_infinite());
        assert_eq!(sel.bandwidth, 0.08);
        let one = loocv_bandwidth(&curves, KernelFamily::Epanechnikov, &[0.1]).unwrap();
        assert_eq!(one.bandwidth, 0.1);
    }

    #[test]
    fn loocv_errors() {
        let curves = constant_curves();
        assert!(loocv_bandwidth(&curves, KernelFamily::Epanechnikov, &[0.01]).is_err());
        assert!(loocv_bandwidth(&curves, KernelFamily::Epanechnikov, &[]).is_err());
        let short = vec![IrregularCurve::new(vec![0.5], vec![1.0]).unwrap()];
        assert!(loocv_bandwidth(&short, KernelFamily::Gaussian, &[0.1]).is_err());
    }

    #[test]
    fn default_candidates_span() {
        let c = default_bandwidth_candidates(&constant_curves(), 20);
        assert_eq!(c.len(), 20);
        assert!((c[0] - 1.5 * 0.05).abs() < 1e-9, "{}", c[0]);
        assert!((c[19] - 0.5 * 0.97).abs() < 1e-9, "{}", c[19]);
        assert!(c.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn full_mask_covariance_is_sample_covariance() {
        let g = Grid::uniform(3).unwrap();
        let r = DMatrix::from_row_slice(4, 3, &[1.0, 2.0, 0.0, -1.0, 0.5, 1.0, 0.0, -2.0, 3.0, 0.0, -0.5, -4.0]);
        let ds = FunctionalDataset::full(g.clone(), DMatrix::zeros(4, 3)).unwrap();
        let cs = covariance_surface(&fit_with_residuals(&g, r.clone()), &ds, CovMethod::Empirical).unwrap();
        let expect = r.transpose() * &r / 4.0;
        assert!((cs.gamma - expect).amax() < 1e-14);
        assert_eq!(cs.filled_cells, 0);
    }

    #[test]
    fn pairwise_complete_by_hand() {
        // n = 3, N = 2; subject 0 misses t₁, subject 2 misses t₀
        let g = Grid::uniform(2).unwrap();
        let mut mask = DMatrix::from_element(3, 2, true);
        mask[(0, 1)] = false;
        mask[(2, 0)] = false;
        let ds = FunctionalDataset::partial(g.clone(), DMatrix::zeros(3, 2), mask).unwrap();
        let r = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, 2.0, -1.0, 0.0, 3.0]);
        let cs = covariance_surface(&fit_with_residuals(&g, r), &ds, CovMethod::Empirical).unwrap();
        // Γ(0,0): subjects 0,1 → (1 + 4)/2; Γ(1,1): subjects 1,2 → (1 + 9)/2;
        // Γ(0,1): subject 1 only → −2
        assert!((cs.gamma[(0, 0)] - 2.5).abs() < 1e-15);
        assert!((cs.gamma[(1, 1)] - 5.0).abs() < 1e-15);
        assert!((cs.gamma[(0, 1)] + 2.0).abs() < 1e-15);
        assert_eq!(cs.gamma[(0, 1)], cs.gamma[(1, 0)]);
    }

    #[test]
    fn zero_residuals_zero_surface() {
        let g = Grid::uniform(5).unwrap();
        let ds = FunctionalDataset::full(g.clone(), DMatrix::zeros(3, 5)).unwrap();
        for method in [
            CovMethod::Empirical,
            CovMethod::Smoothed { family: KernelFamily::Epanechnikov, bandwidth: Some(0.3) },
        ] {
            let cs = covariance_surface(&fit_with_residuals(&g, DMatrix::zeros(3, 5)), &ds, method).unwrap();
            assert_eq!(cs.gamma.amax(), 0.0);
        }
    }

    #[test]
    fn too_many_empty_cells() {
        let g = Grid::uniform(4).unwrap();
        let mut mask = DMatrix::from_element(2, 4, false);
        mask[(0, 0)] = true;
        mask[(0, 1)] = true;
        mask[(1, 2)] = true;
        mask[(1, 3)] = true;
        let ds = FunctionalDataset::partial(g.clone(), DMatrix::zeros(2, 4), mask).unwrap();
        let r = covariance_surface(&fit_with_residuals(&g, DMatrix::zeros(2, 4)), &ds, CovMethod::Empirical);
        assert!(matches!(r, Err(FosrError::TooSparse(_))));
    }

    #[test]
    fn smoothed_surface_symmetric_psd() {
        let g = Grid::uniform(15).unwrap();
        let r = DMatrix::from_fn(12, 15, |i, m| ((i * 7 + m * 3) % 11) as f64 / 5.0 - 1.0);
        let ds = FunctionalDataset::full(g.clone(), DMatrix::zeros(12, 15)).unwrap();
        let cs = covariance_surface(
            &fit_with_residuals(&g, r),
            &ds,
            CovMethod::Smoothed { family: KernelFamily::Epanechnikov, bandwidth: None },
        )
        .unwrap();
        assert_eq!(cs.gamma, cs.gamma.transpose());
        assert!(cs.bandwidth.is_some());
        assert!(cs.gamma.diagonal().iter().all(|d| *d >= -1e-12));
    }
}
