//! `locker`: fit locally sparse varying coefficient models to asynchronous
//! longitudinal CSV data, generate simulations, tune, and benchmark.
//!
//! Exit codes: 0 success, 2 i/o or data errors, 3 usage errors, 4 benchmark
//! scenarios with zero successful replicates, 5 numeric failures. Errors are
//! reported as one JSON line on stderr.

mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use locker::bspline::SplineBasis;
use locker::family::Family;
use locker::kernel::{default_bandwidth, pair_expand, KernelFamily, KernelSpec};
use locker::longdata::{load_csv_with_domain, rescale_time};
use locker::simbench::{gen_dataset_with_stats, run_benchmark, BenchOptions, Scenario};
use locker::tuning::{
    default_lambda_grid, default_rho_grid, select_l, select_rho_lambda, CvOptions,
};
use locker::LockerError;
use nalgebra::DVector;

use output::{
    bench_csv, bench_text, curves_csv, cv_table_csv, ebic_table_csv, ensure_out_dir,
    observations_csv, read_fit_summary, truth_csv, write_atomic, write_fit_summary, EbicJson,
    FitSummary,
};

/// Points in the emitted curve grids.
const CURVE_GRID: usize = 201;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrClass {
    Io,
    Usage,
    Benchmark,
    Numeric,
}

impl ErrClass {
    fn code(self) -> u8 {
        match self {
            ErrClass::Io => 2,
            ErrClass::Usage => 3,
            ErrClass::Benchmark => 4,
            ErrClass::Numeric => 5,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ErrClass::Io => "io",
            ErrClass::Usage => "usage",
            ErrClass::Benchmark => "benchmark",
            ErrClass::Numeric => "numeric",
        }
    }
}

#[derive(Debug)]
pub struct CliError {
    class: ErrClass,
    message: String,
}

impl CliError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError {
            class: ErrClass::Io,
            message: format!("{}: {e}", path.display()),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        CliError {
            class: ErrClass::Usage,
            message: message.into(),
        }
    }

    pub fn numeric(message: impl Into<String>) -> Self {
        CliError {
            class: ErrClass::Numeric,
            message: message.into(),
        }
    }

    pub fn benchmark(message: impl Into<String>) -> Self {
        CliError {
            class: ErrClass::Benchmark,
            message: message.into(),
        }
    }

    fn code(&self) -> u8 {
        self.class.code()
    }

    fn json_line(&self) -> String {
        serde_json::json!({
            "error": self.class.name(),
            "message": self.message,
        })
        .to_string()
    }
}

impl From<LockerError> for CliError {
    fn from(e: LockerError) -> Self {
        let class = match &e {
            LockerError::Io { .. } | LockerError::Parse { .. } | LockerError::EmptyDataset => {
                ErrClass::Io
            }
            LockerError::InvalidParameter { .. }
            | LockerError::IndexOutOfRange { .. }
            | LockerError::DegenerateDomain { .. }
            | LockerError::TimeOutsideDomain { .. } => ErrClass::Usage,
            LockerError::AllReplicatesFailed { .. } => ErrClass::Benchmark,
            LockerError::OutsideDomain { .. }
            | LockerError::SingularSystem { .. }
            | LockerError::NonFinite { .. }
            | LockerError::GridExhausted { .. }
            | LockerError::AllFoldsSkipped => ErrClass::Numeric,
        };
        CliError {
            class,
            message: e.to_string(),
        }
    }
}

#[derive(Parser)]
#[command(
    name = "locker",
    version,
    about = "Locally sparse kernel-weighted varying coefficient models for asynchronous longitudinal data"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit coefficient functions to a response/covariate CSV pair
    Fit(FitArgs),
    /// Generate a simulated dataset in the two-file CSV schema
    Simulate(SimulateArgs),
    /// Run tuning only: criterion grid table and optional CV table
    Tune(TuneArgs),
    /// Monte Carlo benchmark over simulation scenarios
    Benchmark(BenchmarkArgs),
    /// Re-evaluate coefficient curves from a saved fit summary
    Curves(CurvesArgs),
}

#[derive(Args, Clone)]
struct GridArgs {
    /// Comma-separated roughness grid (default: 1e-6..1e-1, log-spaced)
    #[arg(long = "rho-grid", value_delimiter = ',')]
    rho_grid: Option<Vec<f64>>,
    /// Comma-separated sparseness grid (default: 0 plus logspace(1e-4, 1, 9))
    #[arg(long = "lambda-grid", value_delimiter = ',')]
    lambda_grid: Option<Vec<f64>>,
}

impl GridArgs {
    fn rho(&self) -> Vec<f64> {
        self.rho_grid.clone().unwrap_or_else(default_rho_grid)
    }

    fn lambda(&self) -> Vec<f64> {
        self.lambda_grid.clone().unwrap_or_else(default_lambda_grid)
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    response: PathBuf,
    #[arg(long)]
    covariate: PathBuf,
    /// gaussian | bernoulli | poisson
    #[arg(long)]
    family: String,
    /// Basis dimension; several comma-separated candidates trigger CV
    #[arg(long = "L", value_delimiter = ',', default_value = "13")]
    l: Vec<usize>,
    #[arg(long, default_value_t = 3)]
    degree: usize,
    /// CV folds used when several basis dimensions are given
    #[arg(long, default_value_t = 5)]
    folds: usize,
    #[command(flatten)]
    grids: GridArgs,
    /// epanechnikov | truncated-gaussian
    #[arg(long, default_value = "epanechnikov")]
    kernel: String,
    /// Bandwidth override (default: data-driven rule)
    #[arg(long)]
    bandwidth: Option<f64>,
    /// Explicit input time domain `lo,hi` (default: observed range)
    #[arg(long, value_delimiter = ',', num_args = 2)]
    domain: Option<Vec<f64>>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    family: String,
    /// Locally sparse truth for the coefficient function
    #[arg(long, action = clap::ArgAction::Set, default_value_t = false)]
    sparse: bool,
    /// Observe response and covariate at identical times
    #[arg(long, action = clap::ArgAction::Set, default_value_t = false)]
    synchronous: bool,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 20.0)]
    m: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TuneArgs {
    #[command(flatten)]
    fit: FitArgs,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Scenario name(s): <family>-<sparse|nonsparse>[-sync]; repeatable
    #[arg(long)]
    scenario: Vec<String>,
    #[arg(long, default_value_t = 200)]
    n: usize,
    #[arg(long, default_value_t = 20.0)]
    m: f64,
    #[arg(long, default_value_t = 20)]
    replicates: usize,
    #[arg(long = "L", default_value_t = 13)]
    l: usize,
    #[arg(long, default_value_t = 3)]
    degree: usize,
    #[arg(long, default_value = "epanechnikov")]
    kernel: String,
    #[arg(long)]
    bandwidth: Option<f64>,
    #[command(flatten)]
    grids: GridArgs,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CurvesArgs {
    /// fit_summary.json produced by `locker fit`
    #[arg(long)]
    summary: PathBuf,
    /// Number of grid points
    #[arg(long = "grid-points", default_value_t = CURVE_GRID)]
    grid_points: usize,
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    init_threads();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return ExitCode::SUCCESS;
            }
            let err = CliError::usage(e.to_string());
            eprintln!("{}", err.json_line());
            return ExitCode::from(err.code());
        }
    };
    let result = match cli.command {
        Command::Fit(args) => cmd_fit(&args, true),
        Command::Simulate(args) => cmd_simulate(&args),
        Command::Tune(args) => cmd_fit(&args.fit, false),
        Command::Benchmark(args) => cmd_benchmark(&args),
        Command::Curves(args) => cmd_curves(&args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.json_line());
            ExitCode::from(e.code())
        }
    }
}

fn init_threads() {
    if let Ok(raw) = std::env::var("LOCKER_THREADS") {
        if let Ok(n) = raw.trim().parse::<usize>() {
            if n >= 1 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn parse_domain(domain: &Option<Vec<f64>>) -> Result<Option<(f64, f64)>, CliError> {
    match domain {
        None => Ok(None),
        Some(v) if v.len() == 2 && v[0] < v[1] => Ok(Some((v[0], v[1]))),
        Some(v) => Err(CliError::usage(format!("invalid --domain {v:?}"))),
    }
}

/// Evaluates `(β̂₀, β̂₁)` from a stacked coefficient vector; mirrors the
/// solver's own evaluation term for term so emitted grids agree exactly.
fn eval_beta(basis: &SplineBasis, gamma: &DVector<f64>, t: f64) -> (f64, f64) {
    let b = basis.evaluate(t).expect("grid point inside domain");
    let l = basis.num_basis();
    let mut b0 = 0.0;
    let mut b1 = 0.0;
    for i in 0..l {
        b0 += b[i] * gamma[i];
        b1 += b[i] * gamma[l + i];
    }
    (b0, b1)
}

/// Shared pipeline of `fit` and `tune`. `full_outputs` controls whether the
/// fitted model (summary + curves) is written in addition to the tuning
/// tables.
fn cmd_fit(args: &FitArgs, full_outputs: bool) -> Result<(), CliError> {
    ensure_out_dir(&args.out)?;
    let family = Family::from_name(&args.family)?;
    let kernel = KernelFamily::from_name(&args.kernel)?;
    if args.l.is_empty() {
        return Err(CliError::usage("--L needs at least one value"));
    }
    for &l in &args.l {
        if l < args.degree + 2 {
            return Err(CliError::usage(format!(
                "--L {l} below minimum {} for degree {}",
                args.degree + 2,
                args.degree
            )));
        }
    }

    let raw = load_csv_with_domain(&args.response, &args.covariate, parse_domain(&args.domain)?)?;
    let input_domain = raw.domain();
    let ds = rescale_time(&raw)?;
    let bandwidth = match args.bandwidth {
        Some(h) => h,
        None => default_bandwidth(&ds)?,
    };
    let spec = KernelSpec::new(kernel, bandwidth)?;
    let rho_grid = args.grids.rho();
    let lambda_grid = args.grids.lambda();

    // Basis dimension: direct, or subject-level CV over the candidates.
    let (l_best, cv_table) = if args.l.len() == 1 {
        (args.l[0], None)
    } else {
        let opts = CvOptions {
            degree: args.degree,
            folds: args.folds,
            seed: args.seed,
            kernel,
            bandwidth: args.bandwidth,
            rho_grid: rho_grid.clone(),
            lambda_grid: lambda_grid.clone(),
        };
        let sel = select_l(&ds, family, &args.l, &opts)?;
        for cell in sel.table.iter().filter(|c| c.score.is_none()) {
            eprintln!(
                "warning: skipped CV fold {} for L = {}: {}",
                cell.fold,
                cell.l,
                cell.note.as_deref().unwrap_or("unknown")
            );
        }
        (sel.l, Some(sel.table))
    };

    let basis = {
        let (lo, hi) = ds.domain();
        SplineBasis::uniform(args.degree, l_best - args.degree - 1, lo, hi)?
    };
    let pairs = pair_expand(&ds, &basis, &spec)?;
    let selection = select_rho_lambda(&pairs, &basis, family, &rho_grid, &lambda_grid)?;
    let fit = &selection.fit;
    eprintln!(
        "selected L = {l_best}, rho = {}, lambda = {}, score = {:.6} ({} pairs retained of {})",
        selection.rho,
        selection.lambda,
        selection.ebic.score,
        pairs.num_retained(),
        pairs.total_pairs(),
    );

    write_atomic(&args.out, "ebic_table.csv", &ebic_table_csv(&selection.table))?;
    if let Some(table) = &cv_table {
        write_atomic(&args.out, "cv_table.csv", &cv_table_csv(table))?;
    }

    let summary = FitSummary {
        family: family.name().to_string(),
        kernel: kernel.name().to_string(),
        bandwidth,
        degree: args.degree,
        l: l_best,
        l_selected_by_cv: args.l.len() > 1,
        domain: [ds.domain().0, ds.domain().1],
        input_domain: [input_domain.0, input_domain.1],
        rho: selection.rho,
        lambda: selection.lambda,
        ebic: EbicJson::from(&selection.ebic),
        iterations: fit.iterations,
        converged: fit.converged,
        active_set_size: fit.active_set.len(),
        n_subjects: ds.num_subjects(),
        total_pairs: pairs.total_pairs(),
        retained_pairs: pairs.num_retained(),
        seed: args.seed,
        gamma: fit.gamma.iter().copied().collect(),
    };
    if full_outputs {
        write_fit_summary(&args.out, &summary)?;
        let curves = curves_csv(CURVE_GRID, ds.domain(), |t| {
            fit.beta_at(t).expect("grid point inside domain")
        });
        write_atomic(&args.out, "curves.csv", &curves)?;
    } else {
        let mut body = serde_json::json!({
            "family": summary.family,
            "kernel": summary.kernel,
            "bandwidth": summary.bandwidth,
            "l": summary.l,
            "l_selected_by_cv": summary.l_selected_by_cv,
            "rho": summary.rho,
            "lambda": summary.lambda,
            "score": summary.ebic.score,
        })
        .to_string();
        body.push('\n');
        write_atomic(&args.out, "tune_summary.json", &body)?;
    }
    Ok(())
}

fn cmd_simulate(args: &SimulateArgs) -> Result<(), CliError> {
    ensure_out_dir(&args.out)?;
    let family = Family::from_name(&args.family)?;
    let mut scenario = Scenario::new(family, args.sparse, args.n, args.m, args.seed)?;
    if args.synchronous {
        scenario = scenario.synchronous();
    }
    let (ds, truth, stats) = gen_dataset_with_stats(&scenario)?;

    let response_rows = ds.subjects().iter().flat_map(|s| {
        s.response_obs
            .iter()
            .map(move |&(t, y)| (s.id.clone(), t, y))
    });
    write_atomic(&args.out, "response.csv", &observations_csv(response_rows))?;
    let covariate_rows = ds.subjects().iter().flat_map(|s| {
        s.covariate_obs
            .iter()
            .map(move |&(t, x)| (s.id.clone(), t, x))
    });
    write_atomic(&args.out, "covariate.csv", &observations_csv(covariate_rows))?;
    write_atomic(
        &args.out,
        "truth.csv",
        &truth_csv(CURVE_GRID, |t| (truth.beta0(t), truth.beta1(t))),
    )?;
    if stats.clamp_rate() > 0.0 {
        eprintln!(
            "note: response-mean clamp was binding on {:.2}% of draws",
            100.0 * stats.clamp_rate()
        );
    }
    Ok(())
}

fn parse_scenario(name: &str, args: &BenchmarkArgs) -> Result<Scenario, CliError> {
    let parts: Vec<&str> = name.split('-').collect();
    let usage = || {
        CliError::usage(format!(
            "invalid scenario `{name}`: expected <family>-<sparse|nonsparse>[-sync]"
        ))
    };
    if parts.len() < 2 || parts.len() > 3 {
        return Err(usage());
    }
    let family = Family::from_name(parts[0])?;
    let sparse = match parts[1] {
        "sparse" => true,
        "nonsparse" => false,
        _ => return Err(usage()),
    };
    let sync = match parts.get(2) {
        None => false,
        Some(&"sync") => true,
        Some(_) => return Err(usage()),
    };
    let mut sc = Scenario::new(family, sparse, args.n, args.m, args.seed)?;
    if sync {
        sc = sc.synchronous();
    }
    Ok(sc)
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<(), CliError> {
    ensure_out_dir(&args.out)?;
    if args.scenario.is_empty() {
        return Err(CliError::usage("--scenario needs at least one value"));
    }
    let scenarios: Vec<Scenario> = args
        .scenario
        .iter()
        .map(|name| parse_scenario(name, args))
        .collect::<Result<_, _>>()?;
    let opts = BenchOptions {
        l: args.l,
        degree: args.degree,
        kernel: KernelFamily::from_name(&args.kernel)?,
        bandwidth: args.bandwidth,
        rho_grid: args.grids.rho(),
        lambda_grid: args.grids.lambda(),
    };
    let report = run_benchmark(&scenarios, args.replicates, &opts)?;
    write_atomic(&args.out, "bench.csv", &bench_csv(&report))?;
    write_atomic(&args.out, "bench.txt", &bench_text(&report))?;
    eprint!("{}", bench_text(&report));
    eprintln!("benchmark wall time: {:.1}s", report.elapsed.as_secs_f64());
    if let Some(row) = report.rows.iter().find(|r| r.successes == 0) {
        return Err(CliError::benchmark(format!(
            "scenario {}: all {} replicates failed",
            row.scenario.name, row.replicates
        )));
    }
    Ok(())
}

fn cmd_curves(args: &CurvesArgs) -> Result<(), CliError> {
    ensure_out_dir(&args.out)?;
    if args.grid_points < 2 {
        return Err(CliError::usage("--grid-points must be at least 2"));
    }
    let summary = read_fit_summary(&args.summary)?;
    if summary.l < summary.degree + 2 {
        return Err(CliError::usage("summary has inconsistent degree and L"));
    }
    let basis = SplineBasis::uniform(
        summary.degree,
        summary.l - summary.degree - 1,
        summary.domain[0],
        summary.domain[1],
    )?;
    if summary.gamma.len() != 2 * basis.num_basis() {
        return Err(CliError::usage(format!(
            "summary gamma length {} does not match 2L = {}",
            summary.gamma.len(),
            2 * basis.num_basis()
        )));
    }
    let gamma = DVector::from_vec(summary.gamma.clone());
    let curves = curves_csv(
        args.grid_points,
        (summary.domain[0], summary.domain[1]),
        |t| eval_beta(&basis, &gamma, t),
    );
    write_atomic(&args.out, "curves.csv", &curves)?;
    Ok(())
}
