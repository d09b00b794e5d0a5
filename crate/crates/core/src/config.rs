//! Problem configuration files (JSON) and the file formats shared by the
//! command line: complex matrices as rows of `[re, im]` pairs, spectra as
//! CSV with one row per grid node.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::covext::{matrix_from_rows, matrix_to_rows, sample_covariances, toeplitz_assemble, CovSequence, MatrixPolynomial};
use crate::error::Error;
use crate::estimator::{omega, EstimationOptions, Safeguards};
use crate::filter_bank::{CircleGrid, FilterBank};
use crate::instances::{random_admissible, random_bank};
use crate::linalg::{c, CMat, HermMat};
use crate::moment_map::{gamma, range_basis, RationalFactor, SpectrumInput, TrigPolynomial};

/// Configuration problems, reported with the offending field.
#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("invalid field `{field}`: {reason}")]
    Field { field: String, reason: String },
}

impl ConfigError {
    fn field(field: &str, reason: impl std::fmt::Display) -> Self {
        ConfigError::Field {
            field: field.to_string(),
            reason: reason.to_string(),
        }
    }
}

/// Complex matrix as rows of entries; an entry is `[re, im]` or a real number.
pub type MatrixRows = Vec<Vec<Entry>>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Entry {
    Real(f64),
    Complex([f64; 2]),
}

impl Entry {
    pub fn pair(self) -> [f64; 2] {
        match self {
            Entry::Real(x) => [x, 0.0],
            Entry::Complex(z) => z,
        }
    }
}

fn to_matrix(rows: &MatrixRows, field: &str) -> Result<CMat, ConfigError> {
    let pairs: Vec<Vec<[f64; 2]>> = rows.iter().map(|r| r.iter().map(|e| e.pair()).collect()).collect();
    matrix_from_rows(&pairs).map_err(|e| ConfigError::field(field, e))
}

fn to_hermitian(rows: &MatrixRows, field: &str) -> Result<HermMat, ConfigError> {
    HermMat::new(to_matrix(rows, field)?).map_err(|e| ConfigError::field(field, e))
}

/// Matrix in the serialized `[re, im]` convention.
pub fn matrix_rows(m: &CMat) -> MatrixRows {
    matrix_to_rows(m)
        .into_iter()
        .map(|r| r.into_iter().map(Entry::Complex).collect())
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum BankSpec {
    Explicit { a: MatrixRows, b: MatrixRows },
    Covext { m: usize, p: usize },
    /// Random bank drawn with the command-line seed.
    Random { n: usize, m: usize, max_radius: Option<f64> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaSpec {
    Matrix { value: MatrixRows },
    /// Lags `C_0, ..., C_p` assembled into a block-Toeplitz matrix.
    Covariances { blocks: Vec<MatrixRows> },
    /// Biased sample covariances of observations, one row per time step.
    Samples { observations: MatrixRows },
    /// `Gamma` of a density.
    FromSpectrum { density: Box<PriorSpec> },
    /// `omega` of a random admissible `Lambda` under the configured prior,
    /// drawn with the command-line seed.
    RoundTrip,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum PriorSpec {
    Identity,
    Constant { value: MatrixRows },
    /// CSV file in the spectrum format.
    GridCsv { path: PathBuf },
    /// `Psi = N N*` for the moving average `N(z) = sum_k N_k z^{-k}`.
    Ma { coeffs: Vec<MatrixRows> },
    /// `Psi = S S*` for `S(z) = D + C (zI - A)^{-1} B`.
    Rational { a: MatrixRows, b: MatrixRows, c: MatrixRows, d: MatrixRows },
    /// `P_0 + sum_k (P_k z^k + P_k* z^{-k})`.
    Trig { coeffs: Vec<MatrixRows> },
}

/// Overrides of [`EstimationOptions`]; absent fields keep the defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptionsSpec {
    pub grid: Option<usize>,
    pub tol_fp: Option<f64>,
    pub tol_mom: Option<f64>,
    pub max_iter: Option<usize>,
    pub dt_init: Option<f64>,
    pub dt_min: Option<f64>,
    pub divergence_window: Option<usize>,
    pub project_iterates: Option<bool>,
    pub newton_corrector: Option<bool>,
    pub admissibility_margin: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    /// Optional for covariance extension, where the lags fix the bank.
    pub bank: Option<BankSpec>,
    pub sigma: SigmaSpec,
    pub prior: PriorSpec,
    #[serde(default)]
    pub options: OptionsSpec,
    /// Output directory; the command line flag takes precedence.
    pub out: Option<PathBuf>,
    /// Solution file read by the spectrum command.
    pub solution: Option<PathBuf>,
}

impl ProblemConfig {
    pub fn load(path: &Path) -> Result<(Self, PathBuf), ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let config = serde_json::from_str(&text).map_err(|source| ConfigError::Parse {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok((config, base))
    }
}

/// Command-line overrides applied on top of the file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub grid: Option<usize>,
    pub tol_mom: Option<f64>,
    pub tol_fp: Option<f64>,
    pub max_iter: Option<usize>,
    pub seed: u64,
}

/// A fully resolved problem.
#[derive(Clone, Debug)]
pub struct Problem {
    pub bank: FilterBank,
    pub sigma: HermMat,
    pub prior: SpectrumInput,
    /// Moving-average factor of the prior, when it was given as one.
    pub prior_ma: Option<MatrixPolynomial>,
    /// Lags when `Sigma` came from covariance data on a companion bank.
    pub lags: Option<CovSequence>,
    pub options: EstimationOptions,
}

pub fn resolve(config: &ProblemConfig, base: &Path, overrides: &Overrides) -> Result<Problem, ConfigError> {
    let options = resolve_options(&config.options, overrides)?;
    let mut rng = ChaCha8Rng::seed_from_u64(overrides.seed);
    let lags = match &config.sigma {
        SigmaSpec::Covariances { blocks } => {
            let blocks = blocks
                .iter()
                .enumerate()
                .map(|(k, b)| to_matrix(b, &format!("sigma.blocks[{k}]")))
                .collect::<Result<Vec<_>, _>>()?;
            Some(CovSequence::new(blocks).map_err(|e| ConfigError::field("sigma.blocks", e))?)
        }
        SigmaSpec::Samples { observations } => {
            let data = to_matrix(observations, "sigma.observations")?.transpose();
            let p = match &config.bank {
                Some(BankSpec::Covext { p, .. }) => *p,
                _ => return Err(ConfigError::field("bank", "sample covariances need a covext bank")),
            };
            Some(sample_covariances(&data, p).map_err(|e| ConfigError::field("sigma.observations", e))?)
        }
        _ => None,
    };
    let bank = match (&config.bank, &lags) {
        (Some(spec), _) => resolve_bank(spec, &mut rng)?,
        (None, Some(seq)) => FilterBank::covext(seq.m(), seq.p()),
        (None, None) => return Err(ConfigError::field("bank", "missing")),
    };
    if let Some(seq) = &lags {
        if bank.covext_shape() != Some((seq.m(), seq.p())) {
            return Err(ConfigError::field(
                "sigma.blocks",
                format!("{} lags of size {} do not match the bank", seq.p() + 1, seq.m()),
            ));
        }
    }
    let (prior, prior_ma) = resolve_prior(&config.prior, "prior", base, &options.grid, bank.m())?;
    if prior.m() != bank.m() {
        return Err(ConfigError::field("prior", format!("size {} differs from bank inputs {}", prior.m(), bank.m())));
    }
    let sigma = match &config.sigma {
        SigmaSpec::Matrix { value } => to_hermitian(value, "sigma.value")?,
        SigmaSpec::Covariances { .. } | SigmaSpec::Samples { .. } => toeplitz_assemble(lags.as_ref().expect("lags resolved above")),
        SigmaSpec::FromSpectrum { density } => {
            let (density, _) = resolve_prior(density, "sigma.density", base, &options.grid, bank.m())?;
            gamma(&bank, &density, &options.grid).map_err(|e| ConfigError::field("sigma.density", e))?
        }
        SigmaSpec::RoundTrip => {
            let basis = range_basis(&bank).map_err(|e| ConfigError::field("bank", e))?;
            let lambda = random_admissible(&mut rng, &basis);
            omega(&bank, &lambda, &prior, &options.grid).map_err(|e| ConfigError::field("sigma", e))?
        }
    };
    if sigma.dim() != bank.n() {
        return Err(ConfigError::field("sigma", format!("size {} differs from bank states {}", sigma.dim(), bank.n())));
    }
    Ok(Problem {
        bank,
        sigma,
        prior,
        prior_ma,
        lags,
        options,
    })
}

fn resolve_options(spec: &OptionsSpec, overrides: &Overrides) -> Result<EstimationOptions, ConfigError> {
    let d = EstimationOptions::default();
    let grid_size = overrides.grid.or(spec.grid).unwrap_or(d.grid.len());
    let grid = CircleGrid::new(grid_size).map_err(|e| ConfigError::field("options.grid", e))?;
    let ds = Safeguards::default();
    let opts = EstimationOptions {
        grid,
        tol_fp: overrides.tol_fp.or(spec.tol_fp).unwrap_or(d.tol_fp),
        tol_mom: overrides.tol_mom.or(spec.tol_mom).unwrap_or(d.tol_mom),
        max_iter: overrides.max_iter.or(spec.max_iter).unwrap_or(d.max_iter),
        dt_init: spec.dt_init.unwrap_or(d.dt_init),
        dt_min: spec.dt_min.unwrap_or(d.dt_min),
        divergence_window: spec.divergence_window.unwrap_or(d.divergence_window),
        safeguards: Safeguards {
            project_iterates: spec.project_iterates.unwrap_or(ds.project_iterates),
            newton_corrector: spec.newton_corrector.unwrap_or(ds.newton_corrector),
            admissibility_margin: spec.admissibility_margin.unwrap_or(ds.admissibility_margin),
        },
    };
    opts.validate().map_err(|e| ConfigError::field("options", e))?;
    Ok(opts)
}

fn resolve_bank(spec: &BankSpec, rng: &mut ChaCha8Rng) -> Result<FilterBank, ConfigError> {
    match spec {
        BankSpec::Explicit { a, b } => {
            FilterBank::new(to_matrix(a, "bank.a")?, to_matrix(b, "bank.b")?).map_err(|e| ConfigError::field("bank", e))
        }
        BankSpec::Covext { m, p } => {
            if *m == 0 {
                return Err(ConfigError::field("bank.m", "must be positive"));
            }
            Ok(FilterBank::covext(*m, *p))
        }
        BankSpec::Random { n, m, max_radius } => {
            if *m == 0 || m > n {
                return Err(ConfigError::field("bank.m", format!("need 1 <= m <= n = {n}")));
            }
            let radius = max_radius.unwrap_or(0.8);
            if !(radius > 0.2 && radius < 1.0) {
                return Err(ConfigError::field("bank.max_radius", "must lie in (0.2, 1)"));
            }
            Ok(random_bank(rng, *n, *m, radius))
        }
    }
}

fn resolve_prior(
    spec: &PriorSpec,
    field: &str,
    base: &Path,
    grid: &CircleGrid,
    m: usize,
) -> Result<(SpectrumInput, Option<MatrixPolynomial>), ConfigError> {
    let err = |e: Error| ConfigError::field(field, e);
    let list = |coeffs: &[MatrixRows]| {
        coeffs
            .iter()
            .enumerate()
            .map(|(k, x)| to_matrix(x, &format!("{field}.coeffs[{k}]")))
            .collect::<Result<Vec<_>, _>>()
    };
    let out = match spec {
        PriorSpec::Identity => (SpectrumInput::identity(m), None),
        PriorSpec::Constant { value } => (SpectrumInput::Constant(to_hermitian(value, &format!("{field}.value"))?), None),
        PriorSpec::GridCsv { path } => {
            let path = base.join(path);
            let text = std::fs::read_to_string(&path).map_err(|source| ConfigError::Io { path: path.clone(), source })?;
            let samples = read_spectrum_csv(&text).map_err(|e| ConfigError::field(&format!("{field}.path"), e))?;
            (SpectrumInput::grid_samples(grid.clone(), samples).map_err(err)?, None)
        }
        PriorSpec::Ma { coeffs } => {
            let coeffs = list(coeffs)?;
            let factor = RationalFactor::from_ma(&coeffs).map_err(err)?;
            let poly = MatrixPolynomial::new(coeffs).map_err(err)?;
            if factor.outputs() != factor.inputs() {
                return Err(ConfigError::field(field, "moving-average coefficients must be square"));
            }
            (SpectrumInput::RationalFactor(factor), Some(poly))
        }
        PriorSpec::Rational { a, b, c, d } => {
            let factor = RationalFactor::new(
                to_matrix(a, &format!("{field}.a"))?,
                to_matrix(b, &format!("{field}.b"))?,
                to_matrix(c, &format!("{field}.c"))?,
                to_matrix(d, &format!("{field}.d"))?,
            )
            .map_err(err)?;
            (SpectrumInput::RationalFactor(factor), None)
        }
        PriorSpec::Trig { coeffs } => (SpectrumInput::TrigPolynomial(TrigPolynomial::new(list(coeffs)?).map_err(err)?), None),
    };
    out.0.validate(grid).map_err(err)?;
    Ok(out)
}

/// Spectrum CSV: header, then per node `theta` followed by the `m x m`
/// entries as `re, im` pairs in row-major order.
pub fn write_spectrum_csv(grid: &CircleGrid, samples: &[HermMat]) -> String {
    let m = samples.first().map_or(0, HermMat::dim);
    let mut out = String::from("theta");
    for i in 0..m {
        for j in 0..m {
            write!(out, ",re_{i}{j},im_{i}{j}").expect("writing to a string");
        }
    }
    out.push('\n');
    for (theta, s) in grid.angles().zip(samples) {
        write!(out, "{theta:.16e}").expect("writing to a string");
        for i in 0..m {
            for j in 0..m {
                let z = s.as_matrix()[(i, j)];
                write!(out, ",{:.16e},{:.16e}", z.re, z.im).expect("writing to a string");
            }
        }
        out.push('\n');
    }
    out
}

pub fn read_spectrum_csv(text: &str) -> Result<Vec<HermMat>, Error> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::InvalidArgument("empty spectrum file".into()))?;
    let cols = header.split(',').count();
    let m = (((cols.saturating_sub(1)) / 2) as f64).sqrt().round() as usize;
    if m == 0 || 1 + 2 * m * m != cols {
        return Err(Error::InvalidArgument(format!("spectrum header has {cols} columns")));
    }
    lines
        .enumerate()
        .map(|(row, line)| {
            let values = line
                .split(',')
                .map(|v| v.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| Error::InvalidArgument(format!("row {}: {e}", row + 1)))?;
            if values.len() != cols {
                return Err(Error::InvalidArgument(format!("row {} has {} columns", row + 1, values.len())));
            }
            let mat = CMat::from_fn(m, m, |i, j| {
                let at = 1 + 2 * (i * m + j);
                c(values[at], values[at + 1])
            });
            HermMat::new(mat)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> ProblemConfig {
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn covext_config_resolves() {
        let config = parse(
            r#"{"sigma": {"type": "covariances", "blocks": [[[1.0]], [[[0.5, 0.0]]]]},
                "prior": {"type": "identity"}, "options": {"grid": 256}}"#,
        );
        let problem = resolve(&config, Path::new("."), &Overrides::default()).unwrap();
        assert_eq!(problem.bank, FilterBank::covext(1, 1));
        assert_eq!(problem.sigma.as_matrix(), &crate::filter_bank::real_matrix(2, 2, &[1.0, 0.5, 0.5, 1.0]));
        assert_eq!(problem.options.grid.len(), 256);
        let o = Overrides {
            grid: Some(64),
            tol_mom: Some(1e-5),
            ..Default::default()
        };
        let problem = resolve(&config, Path::new("."), &o).unwrap();
        assert_eq!((problem.options.grid.len(), problem.options.tol_mom), (64, 1e-5));
    }

    #[test]
    fn field_errors_name_the_field() {
        let config = parse(
            r#"{"bank": {"type": "explicit", "a": [[1.5]], "b": [[1.0]]},
                "sigma": {"type": "matrix", "value": [[1.0]]}, "prior": {"type": "constant", "value": [[1.0]]}}"#,
        );
        let err = resolve(&config, Path::new("."), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("`bank`"), "{err}");
        let config = parse(
            r#"{"bank": {"type": "covext", "m": 1, "p": 0},
                "sigma": {"type": "matrix", "value": [[1.0]]}, "prior": {"type": "constant", "value": [[1.0]]},
                "options": {"grid": 100}}"#,
        );
        let err = resolve(&config, Path::new("."), &Overrides::default()).unwrap_err();
        assert!(err.to_string().contains("options.grid"), "{err}");
        assert!(serde_json::from_str::<ProblemConfig>(r#"{"sigma": {"type": "matrix"}}"#).is_err());
        assert!(serde_json::from_str::<ProblemConfig>(r#"{"sigma": {"type": "round_trip"}, "prior": {"type": "identity"}, "extra": 1}"#).is_err());
    }

    #[test]
    fn priors_of_every_kind() {
        let grid = CircleGrid::new(16).unwrap();
        let base = Path::new(".");
        let ma = parse_prior(r#"{"type": "ma", "coeffs": [[[1.0]], [[0.5]]]}"#);
        let (psi, poly) = resolve_prior(&ma, "prior", base, &grid, 1).unwrap();
        assert_eq!(poly.unwrap().degree(), 1);
        // |1 + 0.5 e^{-j theta}|^2 at theta = 0
        let at_zero = psi.samples(&grid).unwrap()[8].trace();
        assert!((at_zero - 2.25).abs() < 1e-14);
        let trig = parse_prior(r#"{"type": "trig", "coeffs": [[[2.0]], [[[0.0, 0.5]]]]}"#);
        assert!(resolve_prior(&trig, "prior", base, &grid, 1).is_ok());
        let bad = parse_prior(r#"{"type": "constant", "value": [[-1.0]]}"#);
        assert!(resolve_prior(&bad, "prior", base, &grid, 1).is_err());
        let rational = parse_prior(r#"{"type": "rational", "a": [[0.5]], "b": [[1.0]], "c": [[0.2]], "d": [[1.0]]}"#);
        assert!(resolve_prior(&rational, "prior", base, &grid, 1).is_ok());
    }

    fn parse_prior(text: &str) -> PriorSpec {
        serde_json::from_str(text).unwrap()
    }

    #[test]
    fn spectrum_csv_round_trip() {
        let grid = CircleGrid::new(8).unwrap();
        let samples: Vec<HermMat> = grid
            .angles()
            .map(|t| HermMat::new(CMat::from_row_slice(2, 2, &[c(2.0, 0.0), c(t.cos() / 3.0, 0.1), c(t.cos() / 3.0, -0.1), c(1.0, 0.0)])).unwrap())
            .collect();
        let text = write_spectrum_csv(&grid, &samples);
        assert_eq!(text.lines().count(), 9);
        assert!(text.starts_with("theta,re_00,im_00,re_01"));
        assert_eq!(read_spectrum_csv(&text).unwrap(), samples);
        assert!(read_spectrum_csv("theta,re_00\n").is_err());
        assert!(read_spectrum_csv("theta,re_00,im_00\n0.0,1.0\n").is_err());
    }
}
