//! Command-line front end: `check`, `estimate`, `covext` and `spectrum`.
//!
//! Exit codes: 0 success, 1 solver failure or infeasible data, 2 usage or
//! configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::config::{matrix_rows, resolve, write_spectrum_csv, ConfigError, MatrixRows, Overrides, Problem, ProblemConfig};
use crate::covext::{arma_from_solution, covext_solve, Arma, CovSequence, MatrixPolynomial};
use crate::error::Error;
use crate::estimator::{homotopy_solve, phi_lambda, EstimationResult, Status, TraceRecord};
use crate::linalg::HermMat;
use crate::moment_map::{feasibility, range_basis};

pub const EXIT_OK: i32 = 0;
pub const EXIT_SOLVER: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "gmspec", version, about = "Spectral estimation with filter banks and moment constraints")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Report whether the covariance lies in Range Gamma and is positive definite.
    Check(Common),
    /// Solve the moment problem and write lambda.json, spectrum.csv and trace.ndjson.
    Estimate(Common),
    /// Covariance extension; also writes d_polynomial.json, moments_check.json and arma.json.
    Covext(Common),
    /// Evaluate the prior or the solution density on the grid.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Which::Solution)]
        which: Which,
    },
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub grid: Option<usize>,
    #[arg(long)]
    pub tol_mom: Option<f64>,
    #[arg(long)]
    pub tol_fp: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed for randomly generated banks and round-trip covariances.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Prior,
    Solution,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("solver failed: {0}")]
    Solver(#[from] Error),
    #[error("{0}")]
    Unsuccessful(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) | CliError::Write { .. } => EXIT_USAGE,
            CliError::Solver(_) | CliError::Unsuccessful(_) => EXIT_SOLVER,
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(&cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("gmspec: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: &Command) -> Result<(), CliError> {
    match command {
        Command::Check(common) => cmd_check(common),
        Command::Estimate(common) => cmd_estimate(common),
        Command::Covext(common) => cmd_covext(common),
        Command::Spectrum { common, which } => cmd_spectrum(common, *which),
    }
}

struct Loaded {
    config: ProblemConfig,
    base: PathBuf,
    problem: Problem,
    out: PathBuf,
}

fn load(common: &Common) -> Result<Loaded, CliError> {
    let (config, base) = ProblemConfig::load(&common.config)?;
    let overrides = Overrides {
        grid: common.grid,
        tol_mom: common.tol_mom,
        tol_fp: common.tol_fp,
        max_iter: common.max_iter,
        seed: common.seed,
    };
    let problem = resolve(&config, &base, &overrides)?;
    let out = match (&common.out, &config.out) {
        (Some(dir), _) => dir.clone(),
        (None, Some(dir)) => base.join(dir),
        (None, None) => PathBuf::from("gmspec-out"),
    };
    Ok(Loaded {
        config,
        base,
        problem,
        out,
    })
}

pub fn cmd_check(common: &Common) -> Result<(), CliError> {
    let Loaded { problem, .. } = load(common)?;
    let (n, m) = (problem.bank.n(), problem.bank.m());
    let basis = range_basis(&problem.bank)?;
    let feas = feasibility(&problem.sigma, &basis)?;
    println!("range_dimension: {} (m(2n-m) with n = {n}, m = {m})", basis.dim());
    println!("range_residual: {:e}", feas.range_residual);
    println!("positive_definite: {}", feas.positive_definite);
    println!("feasible: {}", feas.feasible());
    if feas.feasible() {
        Ok(())
    } else {
        Err(CliError::Unsuccessful("covariance is infeasible".into()))
    }
}

/// Contents of `lambda.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub status: Status,
    pub t_reached: f64,
    /// `null` when the residual is not finite.
    pub moment_residual: Option<f64>,
    pub verified_residual: Option<f64>,
    pub n: usize,
    pub m: usize,
    pub grid: usize,
    pub lambda: MatrixRows,
}

impl SolutionFile {
    pub fn lambda(&self) -> Result<HermMat, Error> {
        let pairs: Vec<Vec<[f64; 2]>> = self.lambda.iter().map(|r| r.iter().map(|e| e.pair()).collect()).collect();
        HermMat::new(crate::covext::matrix_from_rows(&pairs)?)
    }
}

/// One line of `trace.ndjson`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceLine {
    pub t: f64,
    pub k: usize,
    pub step_norm: Option<f64>,
    pub residual: Option<f64>,
}

fn finite(x: f64) -> Option<f64> {
    x.is_finite().then_some(x)
}

impl From<&TraceRecord> for TraceLine {
    fn from(r: &TraceRecord) -> Self {
        TraceLine {
            t: r.t,
            k: r.k,
            step_norm: finite(r.step_norm),
            residual: finite(r.residual),
        }
    }
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|source| CliError::Write {
        path: path.to_path_buf(),
        source,
    })
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut text = serde_json::to_string_pretty(value).expect("output types serialize");
    text.push('\n');
    text
}

fn write_solution(out: &Path, problem: &Problem, result: &EstimationResult) -> Result<(), CliError> {
    std::fs::create_dir_all(out).map_err(|source| CliError::Write {
        path: out.to_path_buf(),
        source,
    })?;
    let file = SolutionFile {
        status: result.status,
        t_reached: result.t_reached,
        moment_residual: finite(result.moment_residual),
        verified_residual: finite(result.verified_residual),
        n: problem.bank.n(),
        m: problem.bank.m(),
        grid: problem.options.grid.len(),
        lambda: matrix_rows(result.lambda.as_matrix()),
    };
    write(&out.join("lambda.json"), &to_json(&file))?;
    if !result.phi.is_empty() {
        write(&out.join("spectrum.csv"), &write_spectrum_csv(&problem.options.grid, &result.phi))?;
    }
    let mut trace = String::new();
    for record in &result.trace {
        trace.push_str(&serde_json::to_string(&TraceLine::from(record)).expect("trace serializes"));
        trace.push('\n');
    }
    write(&out.join("trace.ndjson"), &trace)
}

fn report(result: &EstimationResult) -> Result<(), CliError> {
    println!("status: {:?}", result.status);
    println!("t_reached: {}", result.t_reached);
    println!("moment_residual: {:e}", result.moment_residual);
    println!("verified_residual: {:e}", result.verified_residual);
    if result.status == Status::Converged {
        Ok(())
    } else {
        Err(CliError::Unsuccessful(format!("status {:?}", result.status)))
    }
}

pub fn cmd_estimate(common: &Common) -> Result<(), CliError> {
    let Loaded { problem, out, .. } = load(common)?;
    let result = homotopy_solve(&problem.bank, &problem.sigma, &problem.prior, &problem.options)?;
    write_solution(&out, &problem, &result)?;
    report(&result)
}

/// Contents of `d_polynomial.json`: `D(z)` and the unitary `U` with `D = U W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolynomialFile {
    pub d: MatrixPolynomial,
    pub rotation: MatrixRows,
}

/// Contents of `moments_check.json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentsFile {
    pub input: CovSequence,
    pub recovered: Option<CovSequence>,
    pub max_deviation: Option<f64>,
    pub verified_deviation: Option<f64>,
}

pub fn cmd_covext(common: &Common) -> Result<(), CliError> {
    let Loaded { problem, out, .. } = load(common)?;
    let lags = problem
        .lags
        .clone()
        .ok_or_else(|| ConfigError::Field {
            field: "sigma".into(),
            reason: "covariance extension needs `covariances` or `samples`".into(),
        })?;
    let sol = covext_solve(&lags, &problem.prior, &problem.options)?;
    write_solution(&out, &problem, &sol.result)?;
    if let Some(factor) = &sol.factor {
        let file = PolynomialFile {
            d: factor.d.clone(),
            rotation: matrix_rows(&factor.rotation),
        };
        write(&out.join("d_polynomial.json"), &to_json(&file))?;
        if let Some(n) = &problem.prior_ma {
            let arma: Arma = arma_from_solution(factor, n)?;
            write(&out.join("arma.json"), &to_json(&arma))?;
        }
    }
    let moments = MomentsFile {
        input: lags,
        recovered: sol.recovered.clone(),
        max_deviation: finite(sol.max_deviation),
        verified_deviation: finite(sol.verified_deviation),
    };
    write(&out.join("moments_check.json"), &to_json(&moments))?;
    if problem.prior_ma.is_none() {
        println!("arma: skipped (prior is not a moving average)");
    }
    println!("max_deviation: {:e}", sol.max_deviation);
    report(&sol.result)
}

pub fn cmd_spectrum(common: &Common, which: Which) -> Result<(), CliError> {
    let Loaded {
        config,
        base,
        problem,
        out,
    } = load(common)?;
    let grid = &problem.options.grid;
    let (samples, name) = match which {
        Which::Prior => (problem.prior.samples(grid)?, "prior_spectrum.csv"),
        Which::Solution => {
            let path = config.solution.as_ref().map_or_else(|| out.join("lambda.json"), |p| base.join(p));
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Usage(format!("cannot read solution file {}: {e}", path.display())))?;
            let file: SolutionFile = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("malformed solution file {}: {e}", path.display())))?;
            let lambda = file.lambda().map_err(|e| CliError::Usage(format!("solution file {}: {e}", path.display())))?;
            (phi_lambda(&problem.bank, &lambda, &problem.prior, grid)?, "spectrum.csv")
        }
    };
    std::fs::create_dir_all(&out).map_err(|source| CliError::Write {
        path: out.clone(),
        source,
    })?;
    let path = out.join(name);
    write(&path, &write_spectrum_csv(grid, &samples))?;
    println!("wrote {} ({} rows)", path.display(), samples.len());
    Ok(())
}
