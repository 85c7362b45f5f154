//! Command-line front end. [`run`] parses arguments, executes one
//! subcommand and returns the process exit code.

use std::fs::File;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use fosr_core::inference::MaskedNull;
use fosr_core::io::{
    read_design_csv, read_long_csv, read_wide_csv, write_basis_csv, write_curves_csv, write_experiments_csv,
    write_fit_csv, write_report_csv, write_report_json, LoadedCurves, RoleMap,
};
use fosr_core::sim::{run_experiment_with, ExperimentResult, Scenario, SimulationScenario};
use fosr_core::{
    pointwise_wls, run_test, smooth_onto_grid, BasisSpec, CovMethod, DesignPair, FosrError, Grid, KernelFamily,
    Regime, TestOptions,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USER: i32 = 1;
pub const EXIT_INTERNAL: i32 = 2;

/// Replicates and null draws of the `--paper-scale` preset.
pub const PAPER_SCALE: usize = 5000;
pub const FIGURE3_D: [f64; 6] = [0.0, 0.3, 0.6, 0.9, 1.2, 1.5];
pub const FIGURE3_TAU: [f64; 3] = [1.0, 0.8, 0.67];

#[derive(Parser, Debug)]
#[command(name = "fosr", version, about = "Shape-constraint tests for function-on-scalar regression")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug)]
pub struct GlobalArgs {
    /// Seed for every random draw; a fresh seed is drawn and printed when absent.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Maximum number of worker threads.
    #[arg(long, global = true, env = "FOSR_THREADS")]
    pub threads: Option<usize>,
    /// Report failures as a JSON object on stderr.
    #[arg(long, global = true)]
    pub json_errors: bool,
    /// Output format.
    #[arg(long, global = true, value_enum)]
    pub format: Option<Format>,
    /// Output file; stdout when absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Test the hypothesis that every tested coefficient function lies in a span.
    Test(TestArgs),
    /// Run a size or power experiment on synthetic data.
    Simulate(SimulateArgs),
    /// Smooth irregular noisy curves onto a grid.
    Smooth(SmoothArgs),
    /// Write the orthonormal basis of a hypothesis.
    Basis(BasisArgs),
    /// Write the pointwise coefficient estimates.
    Fit(FitArgs),
}

#[derive(Args, Debug)]
pub struct DataArgs {
    /// Curves CSV, long format `subject_id,t,y`.
    #[arg(long)]
    pub data: PathBuf,
    /// Read the curves as wide format: `subject_id` then one column per grid point.
    #[arg(long)]
    pub wide: bool,
    /// Observation regime: full, partial, irregular or composition.
    #[arg(long, default_value = "full")]
    pub regime: String,
    /// Number of equispaced grid points; defaults to the distinct t values (100 for irregular data).
    #[arg(long)]
    pub grid: Option<usize>,
}

#[derive(Args, Debug)]
pub struct DesignArgs {
    /// Design CSV with a `subject_id` column and one column per covariate.
    #[arg(long)]
    pub design: PathBuf,
    /// JSON file assigning design columns to the tested (`x`) and nuisance (`z`) blocks.
    #[arg(long)]
    pub roles: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SmoothingArgs {
    /// Fixed smoothing bandwidth; chosen by leave-one-out cross-validation when absent.
    #[arg(long)]
    pub bandwidth: Option<f64>,
    /// Smoothing kernel: epanechnikov or gaussian.
    #[arg(long, default_value = "epanechnikov")]
    pub kernel: String,
}

#[derive(Args, Debug)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub design: DesignArgs,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
    /// Hypothesis: poly:<r>, pwlinear:<k1,k2,...> or zero.
    #[arg(long = "null", default_value = "poly:1")]
    pub hypothesis: String,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Number of null draws.
    #[arg(long, default_value_t = fosr_core::inference::DEFAULT_NULL_DRAWS)]
    pub draws: usize,
    /// Covariance surface estimator: empirical or smoothed.
    #[arg(long, default_value = "empirical")]
    pub cov_method: String,
    /// Null covariance for incomplete masks: finite-sample or mask-moments.
    #[arg(long, default_value = "finite-sample")]
    pub masked_null: String,
    /// Use the unstandardized statistic for partially observed curves.
    #[arg(long)]
    pub unstandardized: bool,
}

#[derive(Args, Debug)]
pub struct SimulateArgs {
    /// Deviation family: A or B.
    #[arg(long, default_value = "A")]
    pub scenario: String,
    /// Deviation magnitude.
    #[arg(long, default_value_t = 0.0)]
    pub d: f64,
    /// Local-alternative rate in [0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub tau: f64,
    /// Number of subjects.
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    /// Number of grid points.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    /// Observation regime: full, partial, irregular or composition.
    #[arg(long, default_value = "full")]
    pub regime: String,
    /// Number of Monte Carlo replicates.
    #[arg(long, default_value_t = 100)]
    pub reps: usize,
    /// Significance level.
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Number of null draws per replicate.
    #[arg(long, default_value_t = 1000)]
    pub draws: usize,
    /// Shape parameter p of the missing-interval model.
    #[arg(long, default_value_t = 3)]
    pub p_miss: usize,
    /// Shape parameter k of the missing-interval model.
    #[arg(long, default_value_t = 3)]
    pub k_miss: usize,
    /// Standard deviation of the measurement noise in irregular regimes.
    #[arg(long, default_value_t = 0.5)]
    pub noise_sd: f64,
    /// Power curves for scenario B over a grid of d and tau; overrides --scenario, --d and --tau.
    #[arg(long)]
    pub figure3: bool,
    /// Use 5000 replicates and 5000 null draws; this takes hours.
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Args, Debug)]
pub struct SmoothArgs {
    /// Irregular curves CSV, long format `subject_id,t,y`.
    #[arg(long)]
    pub data: PathBuf,
    /// Number of equispaced target grid points.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
}

#[derive(Args, Debug)]
pub struct BasisArgs {
    /// Hypothesis: poly:<r>, pwlinear:<k1,k2,...> or zero.
    #[arg(long = "null")]
    pub hypothesis: String,
    /// Number of equispaced grid points.
    #[arg(long, default_value_t = 100)]
    pub grid: usize,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub design: DesignArgs,
    #[command(flatten)]
    pub smoothing: SmoothingArgs,
}

#[derive(Debug)]
enum CliError {
    Fosr(FosrError),
    Usage(String),
    File(PathBuf, io::Error),
}

impl From<FosrError> for CliError {
    fn from(e: FosrError) -> Self {
        CliError::Fosr(e)
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        CliError::Fosr(FosrError::Io(e))
    }
}

impl CliError {
    fn exit_code(&self) -> i32 {
        match self {
            CliError::Fosr(e) if !e.is_user_error() => EXIT_INTERNAL,
            _ => EXIT_USER,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::File(..) => "file",
            CliError::Fosr(e) => match e.root() {
                FosrError::InvalidGrid(_) => "invalid_grid",
                FosrError::GridMismatch(_) => "grid_mismatch",
                FosrError::Dimension(_) => "dimension",
                FosrError::InvalidInput(_) => "invalid_input",
                FosrError::RankDeficient(_) => "rank_deficient",
                FosrError::Numerical(_) => "numerical",
                FosrError::TooSparse(_) => "too_sparse",
                FosrError::DegenerateNull(_) => "degenerate_null",
                FosrError::Config(_) => "config",
                FosrError::Parse { .. } => "parse",
                FosrError::Io(_) => "io",
                FosrError::Serde(_) => "serialization",
                FosrError::Stage { .. } => "internal",
            },
        }
    }

    fn message(&self) -> String {
        match self {
            CliError::Fosr(e) => e.to_string(),
            CliError::Usage(m) => m.clone(),
            CliError::File(p, e) => format!("{}: {e}", p.display()),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// The clap command tree, for help rendering and documentation checks.
pub fn command() -> clap::Command {
    Cli::command()
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let json_errors = argv.iter().any(|a| a == "--json-errors");
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return EXIT_OK;
            }
            let text = e.render().to_string();
            let text = text.trim_end();
            let err = CliError::Usage(text.strip_prefix("error: ").unwrap_or(text).to_string());
            report_error(&err, json_errors);
            return err.exit_code();
        }
    };
    match execute(&cli) {
        Ok(()) => EXIT_OK,
        Err(err) => {
            report_error(&err, cli.global.json_errors);
            err.exit_code()
        }
    }
}

fn report_error(err: &CliError, json: bool) {
    if json {
        let v = serde_json::json!({ "error": err.kind(), "message": err.message() });
        eprintln!("{v}");
    } else {
        eprintln!("error: {}", err.message());
    }
}

fn execute(cli: &Cli) -> CliResult<()> {
    let g = &cli.global;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = g.threads {
        if t == 0 {
            return Err(CliError::Usage("--threads must be positive".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::Fosr(FosrError::Numerical(format!("thread pool: {e}"))))?;
    let out = pool.install(|| dispatch(cli))?;
    match &g.out {
        Some(path) => std::fs::write(path, &out).map_err(|e| CliError::File(path.clone(), e)),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(&out)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn seed_or_draw(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(|| {
        let s: u64 = rand::random();
        eprintln!("seed: {s}");
        s
    })
}

fn parse<T: std::str::FromStr<Err = FosrError>>(s: &str) -> CliResult<T> {
    Ok(s.parse::<T>()?)
}

fn open(path: &Path) -> CliResult<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::File(path.to_path_buf(), e))
}

fn dispatch(cli: &Cli) -> CliResult<Vec<u8>> {
    let g = &cli.global;
    let mut out = Vec::new();
    match &cli.command {
        Command::Test(a) => {
            let spec: BasisSpec = parse(&a.hypothesis)?;
            if !(a.alpha > 0.0 && a.alpha < 1.0) {
                return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", a.alpha)));
            }
            let loaded = load_curves(&a.data)?;
            let dp = load_design(&a.design, &loaded.subjects)?;
            let mut opts = smoothing_options(&a.smoothing)?;
            opts.alpha = a.alpha;
            opts.null_draws = a.draws;
            opts.standardized = !a.unstandardized;
            opts.masked_null = parse::<MaskedNull>(&a.masked_null)?;
            opts.cov_method = match a.cov_method.as_str() {
                "empirical" => CovMethod::Empirical,
                "smoothed" => CovMethod::Smoothed {
                    family: opts.kernel,
                    bandwidth: None,
                },
                other => return Err(CliError::Usage(format!("unknown covariance method `{other}`"))),
            };
            opts.seed = seed_or_draw(g.seed);
            let basis = spec.build(loaded.dataset.grid())?;
            let report = run_test(&loaded.dataset, &dp, &basis, &opts)?;
            match g.format.unwrap_or(Format::Json) {
                Format::Json => {
                    write_report_json(&mut out, &report)?;
                    out.push(b'\n');
                }
                Format::Csv => write_report_csv(&mut out, &report)?,
            }
        }
        Command::Simulate(a) => simulate(a, g, &mut out)?,
        Command::Smooth(a) => {
            let grid = Grid::uniform(a.grid)?;
            let loaded = read_long_csv(open(&a.data)?, Regime::IrregularNoisy, Some(grid))?;
            let opts = smoothing_options(&a.smoothing)?;
            let (smoothed, diag) = smooth_onto_grid(&loaded.dataset, &opts)?;
            if let Some(h) = diag.bandwidth {
                eprintln!("bandwidth: {h}");
            }
            require_csv(g)?;
            write_curves_csv(&mut out, &loaded.subjects, &smoothed)?;
        }
        Command::Basis(a) => {
            let grid = Grid::uniform(a.grid)?;
            let basis = parse::<BasisSpec>(&a.hypothesis)?.build(&grid)?;
            require_csv(g)?;
            write_basis_csv(&mut out, &basis)?;
        }
        Command::Fit(a) => {
            let loaded = load_curves(&a.data)?;
            let dp = load_design(&a.design, &loaded.subjects)?;
            let ds = if loaded.dataset.regime().is_irregular() {
                smooth_onto_grid(&loaded.dataset, &smoothing_options(&a.smoothing)?)?.0
            } else {
                loaded.dataset
            };
            let fit = pointwise_wls(&ds, &dp)?;
            require_csv(g)?;
            write_fit_csv(&mut out, &fit)?;
        }
    }
    Ok(out)
}

fn require_csv(g: &GlobalArgs) -> CliResult<()> {
    match g.format {
        Some(Format::Json) => Err(CliError::Usage("this subcommand only writes CSV".into())),
        _ => Ok(()),
    }
}

fn load_curves(a: &DataArgs) -> CliResult<LoadedCurves> {
    let regime: Regime = parse(&a.regime)?;
    let reader = open(&a.data)?;
    if a.wide {
        if regime.is_irregular() {
            return Err(CliError::Usage("--wide applies to gridded curves only".into()));
        }
        if a.grid.is_some() {
            return Err(CliError::Usage("--grid cannot be combined with --wide".into()));
        }
        return Ok(read_wide_csv(reader)?);
    }
    let grid = a.grid.map(Grid::uniform).transpose()?;
    Ok(read_long_csv(reader, regime, grid)?)
}

fn load_design(a: &DesignArgs, subjects: &[String]) -> CliResult<DesignPair> {
    let roles = match &a.roles {
        Some(p) => Some(RoleMap::from_json(open(p)?)?),
        None => None,
    };
    Ok(read_design_csv(open(&a.design)?, subjects, roles.as_ref())?)
}

fn smoothing_options(a: &SmoothingArgs) -> CliResult<TestOptions> {
    Ok(TestOptions {
        kernel: parse::<KernelFamily>(&a.kernel)?,
        bandwidth: a.bandwidth,
        ..TestOptions::default()
    })
}

fn simulate(a: &SimulateArgs, g: &GlobalArgs, out: &mut Vec<u8>) -> CliResult<()> {
    if !(a.alpha > 0.0 && a.alpha < 1.0) {
        return Err(CliError::Usage(format!("--alpha must lie in (0, 1), got {}", a.alpha)));
    }
    let (reps, draws) = if a.paper_scale {
        eprintln!(
            "warning: --paper-scale runs {PAPER_SCALE} replicates with {PAPER_SCALE} null draws each per configuration; expect hours"
        );
        (PAPER_SCALE, PAPER_SCALE)
    } else {
        (a.reps, a.draws)
    };
    let base = SimulationScenario {
        n: a.n,
        n_grid: a.grid,
        scenario: parse::<Scenario>(&a.scenario)?,
        d: a.d,
        tau: a.tau,
        regime: parse(&a.regime)?,
        p_miss: a.p_miss,
        k_miss: a.k_miss,
        noise_sd: a.noise_sd,
        seed: seed_or_draw(g.seed),
        ..SimulationScenario::default()
    };
    let configs: Vec<SimulationScenario> = if a.figure3 {
        FIGURE3_TAU
            .iter()
            .flat_map(|&tau| {
                let base = &base;
                FIGURE3_D.iter().map(move |&d| SimulationScenario {
                    scenario: Scenario::B,
                    d,
                    tau,
                    ..base.clone()
                })
            })
            .collect()
    } else {
        vec![base]
    };
    let opts = TestOptions {
        alpha: a.alpha,
        null_draws: draws,
        ..TestOptions::default()
    };
    let results = configs
        .iter()
        .map(|sc| run_experiment_with(sc, reps, &opts).map(|r| (r, a.alpha, draws)))
        .collect::<fosr_core::Result<Vec<(ExperimentResult, f64, usize)>>>()?;
    match g.format.unwrap_or(Format::Csv) {
        Format::Csv => write_experiments_csv(&mut *out, &results)?,
        Format::Json => {
            let rows: Vec<serde_json::Value> = results
                .iter()
                .map(|(r, alpha, draws)| {
                    serde_json::json!({
                        "config": r.config,
                        "alpha": alpha,
                        "null_draws": draws,
                        "replicates": r.replicates,
                        "failures": r.failures,
                        "rejections": r.rejections,
                        "rejection_rate": r.rejection_rate,
                        "binomial_se": r.binomial_se(),
                    })
                })
                .collect();
            serde_json::to_writer_pretty(&mut *out, &rows).map_err(FosrError::from)?;
            out.push(b'\n');
        }
    }
    Ok(())
}
