//! Synthetic data under the scenario A/B design and size/power experiments.

use std::time::Instant;

use nalgebra::{DMatrix, Matrix4, Vector4};
use rand::seq::index::sample as sample_indices;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal as StdNormalCdf};

use crate::basis::{orthonormal_polynomials, BasisSet};
use crate::data::{DesignPair, FunctionalDataset, IrregularCurve, Regime};
use crate::error::{FosrError, Result};
use crate::grid::Grid;
use crate::inference::{run_test, TestOptions};
use crate::rng::{self, Domain};

/// Number of sine terms in the error process and in the scenario A deviation.
pub const SINE_TERMS: usize = 100;
/// Dimension of the polynomial family spanning the null coefficients.
pub const NULL_SPAN_DIM: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scenario {
    /// Deviation along a sine series, outside every polynomial span.
    A,
    /// Deviation along the fifth orthonormal polynomial.
    B,
}

impl std::str::FromStr for Scenario {
    type Err = FosrError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Scenario::A),
            "B" | "b" => Ok(Scenario::B),
            other => Err(FosrError::Config(format!("unknown scenario `{other}`"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Scenario::A => "A",
            Scenario::B => "B",
        })
    }
}

/// Complete generative description of one simulated dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimulationScenario {
    pub n: usize,
    pub n_grid: usize,
    pub scenario: Scenario,
    /// Deviation magnitude `d`.
    pub d: f64,
    /// Local-alternative rate; the deviation is scaled by `n^{-τ/2}`.
    pub tau: f64,
    pub regime: Regime,
    pub p_miss: usize,
    pub k_miss: usize,
    /// Observations per subject for irregular regimes; 80 (irregular) or 60
    /// (composition) when unset.
    pub n_obs: Option<usize>,
    pub noise_sd: f64,
    pub seed: u64,
    /// Generate missing intervals but do not remove anything.
    #[serde(default)]
    pub force_empty_missing: bool,
}

impl Default for SimulationScenario {
    fn default() -> Self {
        SimulationScenario {
            n: 100,
            n_grid: 100,
            scenario: Scenario::A,
            d: 0.0,
            tau: 1.0,
            regime: Regime::Full,
            p_miss: 3,
            k_miss: 3,
            n_obs: None,
            noise_sd: 0.5,
            seed: 0,
            force_empty_missing: false,
        }
    }
}

impl SimulationScenario {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(FosrError::Config(m));
        if self.n < 8 {
            return bad(format!("n must be at least 8, got {}", self.n));
        }
        if self.n_grid < 5 {
            return bad(format!("the grid needs at least 5 points, got {}", self.n_grid));
        }
        if !(self.d.is_finite() && self.d >= 0.0) {
            return bad(format!("d must be finite and nonnegative, got {}", self.d));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau must lie in [0, 1], got {}", self.tau));
        }
        if self.p_miss < 1 || self.k_miss < self.p_miss {
            return bad(format!(
                "missingness needs k >= p >= 1, got p = {}, k = {}",
                self.p_miss, self.k_miss
            ));
        }
        if let Some(m) = self.n_obs {
            if m < 2 || m > self.n_grid {
                return bad(format!(
                    "observations per subject must lie in [2, {}], got {m}",
                    self.n_grid
                ));
            }
        }
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return bad(format!("noise sd must be nonnegative, got {}", self.noise_sd));
        }
        Ok(())
    }

    pub fn effective_n_obs(&self) -> usize {
        let default = match self.regime {
            Regime::PartialIrregularNoisy => 60,
            _ => 80,
        };
        self.n_obs.unwrap_or(default).min(self.n_grid)
    }

    /// `n^{-τ/2} d`
    pub fn deviation_scale(&self) -> f64 {
        (self.n as f64).powf(-self.tau / 2.0) * self.d
    }
}

/// What the generator knows and the analyst does not.
#[derive(Clone, Debug, PartialEq)]
pub struct Truth {
    /// True coefficient functions, `p × N`.
    pub beta: DMatrix<f64>,
    /// True nuisance functions, `q × N`.
    pub alpha: DMatrix<f64>,
    pub null_holds: bool,
    /// Realized observation mask from the missing intervals (all `true` when
    /// no intervals are applied).
    pub mask: DMatrix<bool>,
    /// Missing interval per subject, for the partial regimes.
    pub intervals: Vec<(f64, f64)>,
}

/// Coefficient functions shared by every replicate of a scenario.
#[derive(Clone, Debug)]
pub struct Coefficients {
    pub beta0: DMatrix<f64>,
    pub alpha: DMatrix<f64>,
    pub delta: DMatrix<f64>,
    pub v5: BasisSet,
}

fn sine_basis(grid: &Grid, terms: usize) -> DMatrix<f64> {
    let t = grid.points();
    DMatrix::from_fn(terms, t.len(), |m, i| {
        std::f64::consts::SQRT_2 * (2.0 * (m + 1) as f64 * std::f64::consts::PI * t[i]).sin()
    })
}

/// Null coefficients, nuisance coefficients and deviation direction.
pub fn coefficients(grid: &Grid, scenario: Scenario) -> Result<Coefficients> {
    let v5 = orthonormal_polynomials(5, grid)?;
    let v = v5.functions();
    let nn = grid.len();
    let beta0 = DMatrix::from_fn(3, nn, |j, i| (v[(0, i)] + v[(j + 1, i)]) / std::f64::consts::SQRT_2);
    let alpha = DMatrix::from_fn(2, nn, |k, i| {
        let k = (k + 1) as f64;
        let norm = (4..=5).map(|l| 1.0 / (k + l as f64)).sum::<f64>().sqrt();
        (4..=5)
            .map(|l| {
                let sign = if l % 2 == 0 { 1.0 } else { -1.0 };
                (k + l as f64).powf(-0.5) * sign * v[(l - 1, i)]
            })
            .sum::<f64>()
            / norm
    });
    let delta = match scenario {
        Scenario::A => {
            let phi = sine_basis(grid, SINE_TERMS);
            let mut out = DMatrix::zeros(3, nn);
            for j in 0..3 {
                let jj = (j + 1) as f64;
                let w: Vec<f64> = (1..=SINE_TERMS).map(|m| (jj + m as f64).powf(-0.5)).collect();
                let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
                for (m, wm) in w.iter().enumerate() {
                    for i in 0..nn {
                        out[(j, i)] += wm / norm * phi[(m, i)];
                    }
                }
            }
            out
        }
        Scenario::B => DMatrix::from_fn(3, nn, |_, i| v[(4, i)]),
    };
    Ok(Coefficients {
        beta0,
        alpha,
        delta,
        v5,
    })
}

/// The hypothesis tested in every experiment: each coefficient lies in the
/// span of the first four orthonormal polynomials.
pub fn scenario_hypothesis(grid: &Grid) -> Result<BasisSet> {
    orthonormal_polynomials(NULL_SPAN_DIM, grid)
}

/// Sorted sample of `2p+k+2` uniforms and the interval between the order
/// statistics of rank `p+1` and `p+k+2`.
pub fn missing_interval<R: Rng + ?Sized>(rng: &mut R, p: usize, k: usize) -> (f64, f64) {
    let mut u: Vec<f64> = (0..2 * p + k + 2).map(|_| rng.random::<f64>()).collect();
    u.sort_by(f64::total_cmp);
    (u[p], u[p + k + 1])
}

fn covariates(sc: &SimulationScenario) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let sigma = Matrix4::from_fn(|a, b| 0.5f64.powi((a as i32 - b as i32).abs()));
    let chol = sigma
        .cholesky()
        .ok_or_else(|| FosrError::Numerical("covariate covariance is not positive definite".into()))?;
    let l = chol.l();
    let phi = StdNormalCdf::standard();
    let mut x = DMatrix::zeros(sc.n, 3);
    let mut z = DMatrix::zeros(sc.n, 2);
    let mut r = rng::stream(sc.seed, Domain::Covariates, 0);
    for i in 0..sc.n {
        let e = Vector4::from_fn(|_, _| StandardNormal.sample(&mut r));
        let u = l * e;
        x[(i, 0)] = if u[0] > 0.0 { 1.0 } else { 0.0 };
        x[(i, 1)] = phi.cdf(u[1]);
        x[(i, 2)] = u[2];
        z[(i, 0)] = 1.0;
        z[(i, 1)] = u[3];
    }
    Ok((x, z))
}

/// Generate one dataset. Each random component (covariates, curve errors,
/// missing intervals, sampling locations, measurement noise) reads its own
/// streams, so changing the regime never changes the other components.
pub fn generate_dataset(sc: &SimulationScenario) -> Result<(FunctionalDataset, DesignPair, Truth)> {
    sc.validate()?;
    let grid = Grid::uniform(sc.n_grid)?;
    let nn = grid.len();
    let co = coefficients(&grid, sc.scenario)?;
    let beta = &co.beta0 + &co.delta * sc.deviation_scale();

    let (x, z) = covariates(sc)?;
    let phi = sine_basis(&grid, SINE_TERMS);
    let mut y = &x * &beta + &z * &co.alpha;
    for i in 0..sc.n {
        let mut r = rng::stream(sc.seed, Domain::CurveErrors, i as u64);
        for m in 0..SINE_TERMS {
            let sd = 2.0 / ((m + 1) * (m + 1)) as f64;
            let e: f64 = sd * Distribution::<f64>::sample(&StandardNormal, &mut r);
            for c in 0..nn {
                y[(i, c)] += e * phi[(m, c)];
            }
        }
    }

    let partial = matches!(sc.regime, Regime::Partial | Regime::PartialIrregularNoisy);
    let mut mask = DMatrix::from_element(sc.n, nn, true);
    let mut intervals = Vec::new();
    if partial {
        for i in 0..sc.n {
            let mut r = rng::stream(sc.seed, Domain::Missingness, i as u64);
            let (lo, hi) = missing_interval(&mut r, sc.p_miss, sc.k_miss);
            intervals.push((lo, hi));
            if sc.force_empty_missing {
                continue;
            }
            for (c, t) in grid.points().iter().enumerate() {
                if *t >= lo && *t <= hi {
                    mask[(i, c)] = false;
                }
            }
        }
    }

    let dp = DesignPair::new(x, z)?;
    let ds = match sc.regime {
        Regime::Full => FunctionalDataset::full(grid.clone(), y)?,
        Regime::Partial => FunctionalDataset::partial(grid.clone(), y, mask.clone())?,
        Regime::IrregularNoisy | Regime::PartialIrregularNoisy => {
            let n_obs = sc.effective_n_obs();
            let noise = Normal::new(0.0, sc.noise_sd)
                .map_err(|e| FosrError::Config(format!("noise law: {e}")))?;
            let mut curves = Vec::with_capacity(sc.n);
            for i in 0..sc.n {
                let available: Vec<usize> = (0..nn).filter(|&c| mask[(i, c)]).collect();
                let mut r = rng::stream(sc.seed, Domain::SamplingLocations, i as u64);
                let mut idx: Vec<usize> = if available.len() > n_obs {
                    sample_indices(&mut r, available.len(), n_obs)
                        .into_iter()
                        .map(|a| available[a])
                        .collect()
                } else {
                    available
                };
                idx.sort_unstable();
                let mut rn = rng::stream(sc.seed, Domain::MeasurementNoise, i as u64);
                let t = idx.iter().map(|&c| grid.points()[c]).collect();
                let yy = idx.iter().map(|&c| y[(i, c)] + noise.sample(&mut rn)).collect();
                curves.push(IrregularCurve::new(t, yy)?);
            }
            FunctionalDataset::irregular(grid.clone(), curves, sc.regime)?
        }
    };
    let truth = Truth {
        beta,
        alpha: co.alpha,
        null_holds: sc.d == 0.0,
        mask,
        intervals,
    };
    Ok((ds, dp, truth))
}

/// Tallies of a size or power experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub config: SimulationScenario,
    /// Replicates that produced a decision.
    pub replicates: usize,
    pub failures: usize,
    pub rejections: usize,
    pub rejection_rate: f64,
    /// Seconds per replicate.
    pub mean_runtime: f64,
}

impl ExperimentResult {
    /// `√(r(1−r)/R)`
    pub fn binomial_se(&self) -> f64 {
        let r = self.rejection_rate;
        (r * (1.0 - r) / self.replicates.max(1) as f64).sqrt()
    }
}

/// Run `replicates` independent datasets through the test at level `alpha`
/// with `draws` null draws each.
pub fn run_experiment(sc: &SimulationScenario, replicates: usize, alpha: f64, draws: usize) -> Result<ExperimentResult> {
    let opts = TestOptions {
        alpha,
        null_draws: draws,
        ..TestOptions::default()
    };
    run_experiment_with(sc, replicates, &opts)
}

/// As [`run_experiment`] with explicit test options. Replicate `r` uses the
/// dataset seed `derive_seed(seed, Replicate, r)` and the null-draw seed
/// derived from it, so the outcome does not depend on scheduling.
pub fn run_experiment_with(sc: &SimulationScenario, replicates: usize, opts: &TestOptions) -> Result<ExperimentResult> {
    if replicates == 0 {
        return Err(FosrError::Config("at least one replicate is required".into()));
    }
    sc.validate()?;
    let grid = Grid::uniform(sc.n_grid)?;
    let hypothesis = scenario_hypothesis(&grid)?;
    let outcomes: Vec<Result<(bool, f64)>> = (0..replicates as u64)
        .into_par_iter()
        .map(|r| {
            let start = Instant::now();
            let rep_seed = rng::derive_seed(sc.seed, Domain::Replicate, r);
            let rep = SimulationScenario {
                seed: rep_seed,
                ..sc.clone()
            };
            let (ds, dp, _) = generate_dataset(&rep)?;
            let o = TestOptions {
                seed: rng::derive_seed(rep_seed, Domain::NullDraws, 0),
                ..opts.clone()
            };
            let report = run_test(&ds, &dp, &hypothesis, &o)?;
            Ok((report.reject, start.elapsed().as_secs_f64()))
        })
        .collect();
    let mut failures = 0;
    let mut rejections = 0;
    let mut runtime = 0.0;
    let mut first_error = None;
    for o in outcomes {
        match o {
            Ok((rej, secs)) => {
                rejections += rej as usize;
                runtime += secs;
            }
            Err(e) => {
                failures += 1;
                first_error.get_or_insert(e);
            }
        }
    }
    if failures * 100 >= replicates {
        let e = first_error.expect("failures were counted");
        return Err(FosrError::Numerical(format!(
            "{failures} of {replicates} replicates failed; first failure: {e}"
        )));
    }
    let done = replicates - failures;
    Ok(ExperimentResult {
        config: sc.clone(),
        replicates: done,
        failures,
        rejections,
        rejection_rate: rejections as f64 / done as f64,
        mean_runtime: runtime / done as f64,
    })
}

/// Monte Carlo check of the missing-interval mechanism.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MissingnessReport {
    pub draws: usize,
    pub mean_length: f64,
    pub variance_length: f64,
    /// Mean of `Beta(k+1, 2p+2)`.
    pub beta_mean: f64,
    /// Variance of `Beta(k+1, 2p+2)`.
    pub beta_variance: f64,
    /// `(|s−t|, P(δ(s) ≠ δ(t)))` for increasing gaps.
    pub discordance: Vec<(f64, f64)>,
    /// Whether the discordance probability is nondecreasing in the gap.
    pub monotone: bool,
}

pub const DISCORDANCE_GAPS: [f64; 6] = [0.01, 0.02, 0.05, 0.1, 0.15, 0.2];

pub fn verify_missingness_model(p: usize, k: usize, draws: usize, seed: u64) -> Result<MissingnessReport> {
    if p < 1 || k < p {
        return Err(FosrError::Config(format!(
            "missingness needs k >= p >= 1, got p = {p}, k = {k}"
        )));
    }
    if draws < 2 {
        return Err(FosrError::Config("at least two draws are required".into()));
    }
    let mut r = rng::stream(seed, Domain::Diagnostics, 0);
    let mut lengths = Vec::with_capacity(draws);
    let mut discord = vec![0usize; DISCORDANCE_GAPS.len()];
    for _ in 0..draws {
        let (lo, hi) = missing_interval(&mut r, p, k);
        lengths.push(hi - lo);
        let s: f64 = r.random::<f64>();
        let inside = |t: f64| t >= lo && t <= hi;
        for (g, gap) in DISCORDANCE_GAPS.iter().enumerate() {
            let s = s * (1.0 - gap);
            if inside(s) != inside(s + gap) {
                discord[g] += 1;
            }
        }
    }
    let n = draws as f64;
    let mean = lengths.iter().sum::<f64>() / n;
    let var = lengths.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let a = (k + 1) as f64;
    let b = (2 * p + 2) as f64;
    let discordance: Vec<(f64, f64)> = DISCORDANCE_GAPS
        .iter()
        .zip(&discord)
        .map(|(g, c)| (*g, *c as f64 / n))
        .collect();
    let monotone = discordance.windows(2).all(|w| w[0].1 <= w[1].1);
    Ok(MissingnessReport {
        draws,
        mean_length: mean,
        variance_length: var,
        beta_mean: a / (a + b),
        beta_variance: a * b / ((a + b).powi(2) * (a + b + 1.0)),
        discordance,
        monotone,
    })
}
