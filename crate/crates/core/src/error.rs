use thiserror::Error;

/// Failure modes shared by every module of the crate.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("matrix is not Hermitian: max |H - H*| = {deviation:e}")]
    NotHermitian { deviation: f64 },
    #[error("matrix is not positive definite: pivot {pivot} has value {value:e}")]
    NotPositiveDefinite { pivot: usize, value: f64 },
    #[error("matrix is not positive semidefinite: eigenvalue {eigenvalue:e}")]
    NotPsd { eigenvalue: f64 },
    #[error("matrix is not positive definite (smallest eigenvalue {min_eig:e})")]
    NotPd { min_eig: f64 },
    #[error("iterative eigenvalue reduction did not converge")]
    ConvergenceFailure,
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: String, actual: String },
    #[error("A is not Schur stable (spectral radius {radius})")]
    NotSchurStable { radius: f64 },
    #[error("B does not have full column rank ({rank} < {cols})")]
    RankDeficientB { rank: usize, cols: usize },
    #[error("(A, B) is not reachable (controllability rank {rank} < {n})")]
    NotReachable { rank: usize, n: usize },
    #[error("matrix is not stable (spectral radius {radius})")]
    NotStable { radius: f64 },
    #[error("spectrum sampled on {actual} points but grid has {expected}")]
    GridMismatch { expected: usize, actual: usize },
    #[error("computed Range Gamma rank {computed} differs from m(2n-m) = {expected}")]
    DimensionMismatchWithTheory { computed: usize, expected: usize },
    #[error("Lambda is not admissible: min eigenvalue of G*LG on grid is {min_eig:e}")]
    NotAdmissible { min_eig: f64 },
    #[error("Riccati solver diverged: {reason}")]
    SolverDivergence { reason: String },
    #[error("covariance data is infeasible: {reason}")]
    Infeasible { reason: String },
    #[error("filter bank is not in covariance-extension companion form")]
    NotCompanionForm,
    #[error("could not normalize polynomial factor: {reason}")]
    NormalizationFailure { reason: String },
    #[error("MA factor degree {ma} exceeds AR degree {ar}")]
    DegreeMismatch { ar: usize, ma: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dims(expected: impl ToString, actual: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
