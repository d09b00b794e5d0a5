//! Covariance extension: block-Toeplitz covariance data on the companion
//! bank, the polynomial spectral factor `D(z)` and ARMA model output.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{homotopy_solve, EstimationOptions, EstimationResult, Status};
use crate::filter_bank::{CircleGrid, FilterBank};
use crate::linalg::{c, cholesky_right, eigenvalues, inverse, CMat, HermMat};
use crate::moment_map::SpectrumInput;
use crate::riccati::{spectral_factor_on, SpectralFactor};

/// Tolerance on `|C_0 - C_0*|` accepted by [`CovSequence::new`].
pub const HERMITIAN_TOL: f64 = 1e-10;

/// Covariance lags `C_0, ..., C_p` of an `m`-variate process.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CovSequenceData", into = "CovSequenceData")]
pub struct CovSequence {
    blocks: Vec<CMat>,
}

impl CovSequence {
    pub fn new(blocks: Vec<CMat>) -> Result<Self> {
        let first = blocks.first().ok_or_else(|| Error::InvalidArgument("empty covariance sequence".into()))?;
        let m = first.nrows();
        if m == 0 || blocks.iter().any(|b| b.shape() != (m, m)) {
            return Err(Error::dims(format!("{m}x{m} blocks"), "mixed or empty shapes"));
        }
        let deviation = (first - first.adjoint()).camax();
        if deviation > HERMITIAN_TOL * first.camax().max(1.0) {
            return Err(Error::NotHermitian { deviation });
        }
        let mut blocks = blocks;
        blocks[0] = HermMat::symmetrized(blocks[0].clone()).into_matrix();
        Ok(CovSequence { blocks })
    }

    pub fn m(&self) -> usize {
        self.blocks[0].nrows()
    }

    /// Number of lags beyond `C_0`.
    pub fn p(&self) -> usize {
        self.blocks.len() - 1
    }

    pub fn blocks(&self) -> &[CMat] {
        &self.blocks
    }

    /// Largest Frobenius norm of a block difference.
    pub fn max_deviation(&self, other: &CovSequence) -> Result<f64> {
        if self.m() != other.m() || self.p() != other.p() {
            return Err(Error::dims(
                format!("m = {}, p = {}", self.m(), self.p()),
                format!("m = {}, p = {}", other.m(), other.p()),
            ));
        }
        Ok(self
            .blocks
            .iter()
            .zip(&other.blocks)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max))
    }
}

/// Serialized form: `{"blocks": [[[[re, im], ...], ...], ...]}`.
#[derive(Clone, Debug, Serialize, Deserialize)]
struct CovSequenceData {
    blocks: Vec<Vec<Vec<[f64; 2]>>>,
}

impl TryFrom<CovSequenceData> for CovSequence {
    type Error = Error;

    fn try_from(data: CovSequenceData) -> Result<Self> {
        let blocks = data.blocks.iter().map(|rows| matrix_from_rows(rows)).collect::<Result<Vec<_>>>()?;
        CovSequence::new(blocks)
    }
}

impl From<CovSequence> for CovSequenceData {
    fn from(seq: CovSequence) -> Self {
        CovSequenceData {
            blocks: seq.blocks.iter().map(matrix_to_rows).collect(),
        }
    }
}

/// Rows of `[re, im]` pairs to a complex matrix.
pub fn matrix_from_rows(rows: &[Vec<[f64; 2]>]) -> Result<CMat> {
    let r = rows.len();
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != cols) {
        return Err(Error::dims(format!("rows of length {cols}"), "ragged rows"));
    }
    Ok(CMat::from_fn(r, cols, |i, j| c(rows[i][j][0], rows[i][j][1])))
}

pub fn matrix_to_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
        .collect()
}

/// Block-Toeplitz matrix with block `(i, j)` equal to `C_{i-j}` for `i >= j`
/// and `C_{j-i}*` otherwise.
pub fn toeplitz_assemble(seq: &CovSequence) -> HermMat {
    let (m, p) = (seq.m(), seq.p());
    let n = m * (p + 1);
    let mut out = CMat::zeros(n, n);
    for i in 0..=p {
        for j in 0..=p {
            let block = if i >= j {
                seq.blocks[i - j].clone()
            } else {
                seq.blocks[j - i].adjoint()
            };
            out.view_mut((i * m, j * m), (m, m)).copy_from(&block);
        }
    }
    HermMat::symmetrized(out)
}

/// `C_k` = grid mean of `e^{jk theta} Phi(theta)` for `k = 0..=p`.
pub fn covs_from_spectrum(samples: &[HermMat], grid: &CircleGrid, p: usize) -> Result<CovSequence> {
    if samples.len() != grid.len() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            actual: samples.len(),
        });
    }
    let m = samples.first().map_or(0, HermMat::dim);
    let blocks = (0..=p)
        .map(|k| {
            grid.mean(m, m, |i| {
                let phase = k as f64 * grid.angle(i);
                samples[i].as_matrix() * c(phase.cos(), phase.sin())
            })
        })
        .collect();
    CovSequence::new(blocks)
}

/// Biased sample covariances `C_k = (1/T) sum_t y(t+k) y(t)*` of the
/// observations `y(0), ..., y(T-1)` (one column per time step); the
/// resulting Toeplitz matrix is positive semidefinite.
pub fn sample_covariances(data: &CMat, p: usize) -> Result<CovSequence> {
    let len = data.ncols();
    if len <= p {
        return Err(Error::InvalidArgument(format!("{len} samples cannot determine {p} lags")));
    }
    let blocks = (0..=p)
        .map(|k| {
            let lead = data.columns(k, len - k);
            let lag = data.columns(0, len - k);
            lead * lag.adjoint() / c(len as f64, 0.0)
        })
        .collect();
    CovSequence::new(blocks)
}

/// `D(z) = sum_k D_k z^{-k}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolynomialData", into = "PolynomialData")]
pub struct MatrixPolynomial {
    coeffs: Vec<CMat>,
}

impl MatrixPolynomial {
    pub fn new(coeffs: Vec<CMat>) -> Result<Self> {
        let first = coeffs.first().ok_or_else(|| Error::InvalidArgument("empty matrix polynomial".into()))?;
        let m = first.nrows();
        if m == 0 || coeffs.iter().any(|x| x.shape() != (m, m)) {
            return Err(Error::dims(format!("{m}x{m} coefficients"), "mixed or empty shapes"));
        }
        Ok(MatrixPolynomial { coeffs })
    }

    pub fn degree(&self) -> usize {
        self.coeffs.len() - 1
    }

    pub fn m(&self) -> usize {
        self.coeffs[0].nrows()
    }

    pub fn coeffs(&self) -> &[CMat] {
        &self.coeffs
    }

    pub fn evaluate(&self, theta: f64) -> CMat {
        let mut out = CMat::zeros(self.m(), self.m());
        for (k, d) in self.coeffs.iter().enumerate() {
            let phase = -(k as f64) * theta;
            out += d * c(phase.cos(), phase.sin());
        }
        out
    }

    /// Block companion matrix of `z^p D(z) D_0^{-1}`-monic form; its
    /// eigenvalues are the roots of `det D(z)`.
    pub fn companion(&self) -> Result<CMat> {
        let (m, p) = (self.m(), self.degree());
        let d0_inv = inverse(&self.coeffs[0])?;
        let mut out = CMat::zeros(m * p, m * p);
        for k in 1..=p {
            let block = -(&d0_inv * &self.coeffs[k]);
            out.view_mut((0, (k - 1) * m), (m, m)).copy_from(&block);
        }
        for k in 1..p {
            for i in 0..m {
                out[(k * m + i, (k - 1) * m + i)] = c(1.0, 0.0);
            }
        }
        Ok(out)
    }

    /// Largest modulus of a root of `det D(z)`; zero for constant `D`.
    pub fn root_radius(&self) -> Result<f64> {
        if self.degree() == 0 {
            inverse(&self.coeffs[0])?;
            return Ok(0.0);
        }
        Ok(eigenvalues(&self.companion()?)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
    }

    /// All roots of `det D(z)` strictly inside the unit disk.
    pub fn is_schur(&self) -> bool {
        self.root_radius().is_ok_and(|r| r < 1.0)
    }

    /// `D_0` lower triangular with real positive diagonal.
    pub fn is_normalized(&self) -> bool {
        let d0 = &self.coeffs[0];
        let scale = d0.camax().max(1.0);
        (0..self.m()).all(|i| {
            d0[(i, i)].re > 0.0
                && d0[(i, i)].im.abs() <= 1e-12 * scale
                && ((i + 1)..self.m()).all(|j| d0[(i, j)].norm() <= 1e-12 * scale)
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct PolynomialData {
    coeffs: Vec<Vec<Vec<[f64; 2]>>>,
}

impl TryFrom<PolynomialData> for MatrixPolynomial {
    type Error = Error;

    fn try_from(data: PolynomialData) -> Result<Self> {
        MatrixPolynomial::new(data.coeffs.iter().map(|rows| matrix_from_rows(rows)).collect::<Result<_>>()?)
    }
}

impl From<MatrixPolynomial> for PolynomialData {
    fn from(poly: MatrixPolynomial) -> Self {
        PolynomialData {
            coeffs: poly.coeffs.iter().map(matrix_to_rows).collect(),
        }
    }
}

/// Normalized polynomial factor `D = U W` of `G* Lambda G` together with the
/// unitary `U` relating it to the state-space factor `W`.
#[derive(Clone, Debug, PartialEq)]
pub struct PolynomialFactor {
    pub d: MatrixPolynomial,
    pub rotation: CMat,
}

impl PolynomialFactor {
    /// `Phi = W^{-1} Psi W^{-*} = D^{-1} U Psi U* D^{-*}` at `theta`.
    pub fn shaped(&self, theta: f64, psi: &HermMat) -> Result<HermMat> {
        let d_inv = inverse(&self.d.evaluate(theta))?;
        Ok(psi.sandwich(&(d_inv * &self.rotation)))
    }
}

/// Reads `D(z)` off the state-space factor of a companion bank:
/// `W_0 = L`, `W_k = C_w A^{k-1} B`, then rotates to `D_0` lower triangular.
pub fn extract_polynomial_factor(bank: &FilterBank, sf: &SpectralFactor) -> Result<PolynomialFactor> {
    let (m, p) = bank.covext_shape().ok_or(Error::NotCompanionForm)?;
    if sf.bank() != bank {
        return Err(Error::InvalidArgument("spectral factor belongs to a different bank".into()));
    }
    let mut w = vec![sf.l().clone()];
    let mut power_b = bank.b().clone();
    for _ in 1..=p {
        w.push(sf.c_w() * &power_b);
        power_b = bank.a() * power_b;
    }
    // the would-be coefficient of z^{-(p+1)} vanishes for an exact factor
    let tail = (sf.c_w() * &power_b).norm();
    let scale = sf.l().norm();
    if tail > 1e-10 * scale {
        return Err(Error::NormalizationFailure {
            reason: format!("factor has a nonzero coefficient beyond degree {p} (norm {tail:e})"),
        });
    }
    let lower = lower_cholesky(&HermMat::symmetrized(sf.l().adjoint() * sf.l()))?;
    let rotation = &lower * crate::linalg::upper_triangular_inverse(sf.l());
    let unitarity = (rotation.adjoint() * &rotation - crate::linalg::eye(m)).norm();
    if unitarity > 1e-10 {
        return Err(Error::NormalizationFailure {
            reason: format!("rotation deviates from unitary by {unitarity:e}"),
        });
    }
    let mut coeffs: Vec<CMat> = w.iter().map(|x| &rotation * x).collect();
    coeffs[0] = lower;
    let d = MatrixPolynomial::new(coeffs)?;
    if !d.is_schur() {
        return Err(Error::NormalizationFailure {
            reason: "factor fails the Schur certificate".into(),
        });
    }
    Ok(PolynomialFactor { d, rotation })
}

/// Lower-triangular `K` with positive diagonal and `K* K = h`, obtained from
/// the upper factor of the index-reversed matrix.
fn lower_cholesky(h: &HermMat) -> Result<CMat> {
    let m = h.dim();
    let flip = |x: &CMat| CMat::from_fn(m, m, |i, j| x[(m - 1 - i, m - 1 - j)]);
    let r = cholesky_right(&HermMat::symmetrized(flip(h.as_matrix())), 0.0)?;
    Ok(flip(&r))
}

/// Output of [`covext_solve`].
#[derive(Clone, Debug)]
pub struct CovextSolution {
    pub result: EstimationResult,
    /// Present whenever the returned `Lambda` is admissible.
    pub factor: Option<PolynomialFactor>,
    /// Lags recomputed from `Phi = D^{-1} U Psi U* D^{-*}` on the working grid.
    pub recovered: Option<CovSequence>,
    /// Largest block deviation of the recovered lags from the input.
    pub max_deviation: f64,
    /// The same deviation on a grid twice as fine.
    pub verified_deviation: f64,
}

/// Solves the covariance extension problem for the lags `seq` and prior `psi`.
pub fn covext_solve(seq: &CovSequence, psi: &SpectrumInput, opts: &EstimationOptions) -> Result<CovextSolution> {
    let sigma = toeplitz_assemble(seq);
    let min_eig = sigma.min_eigenvalue()?;
    if !(min_eig > 0.0) {
        return Err(Error::Infeasible {
            reason: format!("block-Toeplitz matrix is not positive definite (smallest eigenvalue {min_eig:e})"),
        });
    }
    let bank = FilterBank::covext(seq.m(), seq.p());
    let mut result = homotopy_solve(&bank, &sigma, psi, opts)?;
    let factor = spectral_factor_on(&bank.evaluate_grid(&opts.grid), &result.lambda)
        .and_then(|sf| extract_polynomial_factor(&bank, &sf))
        .ok();
    let mut recovered = None;
    let (mut max_deviation, mut verified_deviation) = (f64::INFINITY, f64::INFINITY);
    if let Some(f) = &factor {
        let rec = recover_lags(f, psi, &opts.grid, seq.p())?;
        max_deviation = rec.max_deviation(seq)?;
        let fine = opts.grid.refined();
        verified_deviation = recover_lags(f, &psi.resampled(&fine)?, &fine, seq.p())?.max_deviation(seq)?;
        recovered = Some(rec);
    }
    if result.status == Status::Converged && !(max_deviation <= opts.tol_mom && verified_deviation <= opts.tol_mom) {
        result.status = Status::MaxIterations;
    }
    Ok(CovextSolution {
        result,
        factor,
        recovered,
        max_deviation,
        verified_deviation,
    })
}

fn recover_lags(factor: &PolynomialFactor, psi: &SpectrumInput, grid: &CircleGrid, p: usize) -> Result<CovSequence> {
    let phi = grid
        .angles()
        .zip(psi.samples(grid)?)
        .map(|(theta, s)| factor.shaped(theta, &s))
        .collect::<Result<Vec<_>>>()?;
    covs_from_spectrum(&phi, grid, p)
}

/// ARMA model `sum_k AR_k y(t-k) = sum_k MA_k w(t-k)` with white `w`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arma {
    pub ar: MatrixPolynomial,
    pub ma: MatrixPolynomial,
}

impl Arma {
    /// `AR^{-1} MA MA* AR^{-*}` at `theta`.
    pub fn spectrum(&self, theta: f64) -> Result<HermMat> {
        let ar_inv = inverse(&self.ar.evaluate(theta))?;
        let ma = self.ma.evaluate(theta);
        Ok(HermMat::symmetrized(&ar_inv * &ma * ma.adjoint() * ar_inv.adjoint()))
    }
}

/// ARMA model of the solution for the prior `Psi = N N*` with
/// `N(z) = sum_k N_k z^{-k}` of degree at most that of `D`. The MA side is
/// `U N`, so that the model spectrum equals `W^{-1} Psi W^{-*}`.
pub fn arma_from_solution(factor: &PolynomialFactor, n: &MatrixPolynomial) -> Result<Arma> {
    let p = factor.d.degree();
    if n.degree() > p {
        return Err(Error::DegreeMismatch { ar: p, ma: n.degree() });
    }
    if n.m() != factor.d.m() {
        return Err(Error::dims(factor.d.m(), n.m()));
    }
    let m = n.m();
    let ma = (0..=p)
        .map(|k| n.coeffs.get(k).map_or_else(|| CMat::zeros(m, m), |x| &factor.rotation * x))
        .collect();
    Ok(Arma {
        ar: factor.d.clone(),
        ma: MatrixPolynomial::new(ma)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{maxent_solve, omega};
    use crate::filter_bank::real_matrix;
    use crate::instances::{random_admissible, random_complex, random_ma};
    use crate::linalg::cr;
    use crate::moment_map::{gamma, range_basis, RationalFactor, TrigPolynomial};
    use crate::riccati::spectral_factor;
    use num_complex::Complex64;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn scalar(x: f64) -> CMat {
        real_matrix(1, 1, &[x])
    }

    fn opts(grid: usize) -> EstimationOptions {
        EstimationOptions {
            grid: CircleGrid::new(grid).unwrap(),
            ..Default::default()
        }
    }

    #[test]
    fn toeplitz_layout() {
        let seq = CovSequence::new(vec![scalar(1.0), scalar(0.5)]).unwrap();
        let t = toeplitz_assemble(&seq);
        assert_eq!(t.as_matrix(), &real_matrix(2, 2, &[1.0, 0.5, 0.5, 1.0]));

        let c0 = real_matrix(2, 2, &[2.0, 0.1, 0.1, 1.0]);
        let t = toeplitz_assemble(&CovSequence::new(vec![c0.clone(), CMat::zeros(2, 2), CMat::zeros(2, 2)]).unwrap());
        for blk in 0..3 {
            assert_eq!(t.as_matrix().view((2 * blk, 2 * blk), (2, 2)), c0);
        }
        assert_eq!(t.as_matrix().view((0, 2), (2, 2)), CMat::zeros(2, 2));
    }

    #[test]
    fn toeplitz_block_pattern() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_complex(&mut rng, 2, 2);
        let c0 = &x * x.adjoint() + crate::linalg::eye(2);
        let c1 = random_complex(&mut rng, 2, 2);
        let seq = CovSequence::new(vec![c0.clone(), c1.clone()]).unwrap();
        let t = toeplitz_assemble(&seq);
        assert_eq!(t.as_matrix().view((2, 0), (2, 2)), c1);
        assert_eq!(t.as_matrix().view((0, 2), (2, 2)), c1.adjoint());
        assert!((t.as_matrix() - t.as_matrix().adjoint()).norm() == 0.0);
        assert!(CovSequence::new(vec![real_matrix(2, 2, &[1.0, 2.0, 0.0, 1.0])]).is_err());
        assert!(CovSequence::new(vec![scalar(1.0), CMat::zeros(2, 2)]).is_err());
    }

    #[test]
    fn lags_of_simple_spectra() {
        let grid = CircleGrid::new(64).unwrap();
        let flat = vec![HermMat::identity(2); 64];
        let seq = covs_from_spectrum(&flat, &grid, 2).unwrap();
        assert!((&seq.blocks()[0] - crate::linalg::eye(2)).norm() <= 1e-15);
        assert!(seq.blocks()[1].norm() <= 1e-15 && seq.blocks()[2].norm() <= 1e-15);

        let cosine: Vec<HermMat> = grid.angles().map(|t| HermMat::from_diag(&[1.0 + t.cos()])).collect();
        let seq = covs_from_spectrum(&cosine, &grid, 1).unwrap();
        assert!((seq.blocks()[0][(0, 0)] - cr(1.0)).norm() <= 1e-15);
        assert!((seq.blocks()[1][(0, 0)] - cr(0.5)).norm() <= 1e-15);
        assert!(covs_from_spectrum(&cosine, &CircleGrid::new(32).unwrap(), 1).is_err());
    }

    #[test]
    fn lags_agree_with_gamma() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let grid = CircleGrid::new(256).unwrap();
        for &(m, p) in &[(1usize, 2usize), (2, 1), (2, 3)] {
            let factor = RationalFactor::from_ma(&random_ma(&mut rng, m, 2, 0.5)).unwrap();
            let psi = SpectrumInput::RationalFactor(factor);
            let samples = psi.samples(&grid).unwrap();
            let bank = FilterBank::covext(m, p);
            let direct = gamma(&bank, &psi, &grid).unwrap();
            let assembled = toeplitz_assemble(&covs_from_spectrum(&samples, &grid, p).unwrap());
            assert!(direct.sub(&assembled).frobenius_norm() <= 1e-10 * direct.frobenius_norm());
        }
    }

    #[test]
    fn sample_covariances_of_a_short_series() {
        // y = 1, -1, 1, -1: C_0 = 1, C_1 = -3/4
        let data = real_matrix(1, 4, &[1.0, -1.0, 1.0, -1.0]);
        let seq = sample_covariances(&data, 1).unwrap();
        assert!((seq.blocks()[0][(0, 0)] - cr(1.0)).norm() < 1e-15);
        assert!((seq.blocks()[1][(0, 0)] - cr(-0.75)).norm() < 1e-15);
        assert!(toeplitz_assemble(&seq).min_eigenvalue().unwrap() >= 0.0);
        assert!(sample_covariances(&data, 4).is_err());
    }

    #[test]
    fn schur_certificate() {
        // 1 - 0.5 z^{-1} has its root at 0.5
        let inside = MatrixPolynomial::new(vec![scalar(1.0), scalar(-0.5)]).unwrap();
        assert!((inside.root_radius().unwrap() - 0.5).abs() < 1e-14);
        assert!(inside.is_schur());
        let outside = MatrixPolynomial::new(vec![scalar(1.0), scalar(-2.0)]).unwrap();
        assert!(!outside.is_schur());
        assert!(MatrixPolynomial::new(vec![scalar(3.0)]).unwrap().is_schur());
        // det of diag(1 - 0.2 z^{-1}, 1 + 0.9 z^{-1}) has roots 0.2 and -0.9
        let d = MatrixPolynomial::new(vec![crate::linalg::eye(2), real_matrix(2, 2, &[-0.2, 0.0, 0.0, 0.9])]).unwrap();
        assert!((d.root_radius().unwrap() - 0.9).abs() < 1e-12);
    }

    #[test]
    fn constant_factor_for_lag_zero() {
        let bank = FilterBank::covext(2, 0);
        let lambda = HermMat::from_real_rows(2, &[2.0, 0.5, 0.5, 1.0]).unwrap();
        let sf = spectral_factor(&bank, &lambda).unwrap();
        let f = extract_polynomial_factor(&bank, &sf).unwrap();
        assert_eq!(f.d.degree(), 0);
        assert!(f.d.is_normalized());
        let d0 = &f.d.coeffs()[0];
        assert!((d0.adjoint() * d0 - lambda.as_matrix()).norm() <= 1e-12);
    }

    /// Minimum-phase factor of a scalar Laurent polynomial from its roots.
    fn root_factor(q: &[Complex64]) -> Vec<Complex64> {
        // q[k] is the coefficient of z^k, q[-k] = conj(q[k]); the roots of
        // z^p Q(z) pair up as r and 1 / conj(r)
        let p = q.len() - 1;
        let mut poly = vec![Complex64::new(0.0, 0.0); 2 * p + 1];
        for k in 0..=p {
            poly[p + k] = q[k];
            poly[p - k] = q[k].conj();
        }
        // companion of the monic polynomial in ascending coefficients
        let lead = poly[2 * p];
        let deg = 2 * p;
        let comp = CMat::from_fn(deg, deg, |i, j| {
            if i == 0 {
                -poly[deg - 1 - j] / lead
            } else if j + 1 == i {
                cr(1.0)
            } else {
                cr(0.0)
            }
        });
        let inside: Vec<Complex64> = eigenvalues(&comp).unwrap().into_iter().filter(|r| r.norm() < 1.0).collect();
        assert_eq!(inside.len(), p);
        // prod_i (1 - r_i z^{-1})
        let mut monic = vec![cr(1.0)];
        for r in inside {
            let mut next = vec![cr(0.0); monic.len() + 1];
            for (k, x) in monic.iter().enumerate() {
                next[k] += x;
                next[k + 1] -= x * r;
            }
            monic = next;
        }
        let energy: f64 = monic.iter().map(|x| x.norm_sqr()).sum();
        let d0 = (q[0].re / energy).sqrt();
        monic.iter().map(|x| x * d0).collect()
    }

    #[test]
    fn scalar_factor_matches_root_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in 1..=3usize {
            let bank = FilterBank::covext(1, p);
            let basis = range_basis(&bank).unwrap();
            for _ in 0..3 {
                let lambda = random_admissible(&mut rng, &basis);
                // Q(z) = G* Lambda G with G_i = z^{-(p+1-i)}: coefficient of z^k is sum_i Lambda_{i,i+k}
                let q: Vec<Complex64> = (0..=p)
                    .map(|k| (0..=p - k).map(|i| lambda.as_matrix()[(i, i + k)]).sum())
                    .collect();
                let oracle = root_factor(&q);
                let sf = spectral_factor(&bank, &lambda).unwrap();
                let f = extract_polynomial_factor(&bank, &sf).unwrap();
                for (k, want) in oracle.iter().enumerate() {
                    assert!((f.d.coeffs()[k][(0, 0)] - want).norm() <= 1e-8, "p={p} k={k}");
                }
            }
        }
    }

    #[test]
    fn block_factor_reproduces_the_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let bank = FilterBank::covext(2, 1);
        let basis = range_basis(&bank).unwrap();
        for _ in 0..5 {
            let lambda = random_admissible(&mut rng, &basis);
            let sf = spectral_factor(&bank, &lambda).unwrap();
            let f = extract_polynomial_factor(&bank, &sf).unwrap();
            assert!(f.d.is_normalized() && f.d.is_schur());
            for i in 0..32 {
                let theta = -3.0 + 0.19 * i as f64;
                let d = f.d.evaluate(theta);
                let q = lambda.sandwich_adj(&bank.evaluate(theta));
                assert!((d.adjoint() * &d - q.as_matrix()).norm() <= 1e-8 * q.frobenius_norm());
                let w = sf.eval_w(theta);
                assert!((d - &f.rotation * w).norm() <= 1e-10);
            }
        }
        let other = FilterBank::new(scalar(0.5), scalar(1.0)).unwrap();
        let sf = spectral_factor(&other, &HermMat::identity(1)).unwrap();
        assert_eq!(extract_polynomial_factor(&other, &sf), Err(Error::NotCompanionForm));
    }

    #[test]
    fn lag_zero_extension_with_prior() {
        let coeffs = vec![scalar(2.0), scalar(0.6)];
        let psi = SpectrumInput::TrigPolynomial(TrigPolynomial::new(coeffs).unwrap());
        let seq = CovSequence::new(vec![scalar(1.0)]).unwrap();
        let sol = covext_solve(&seq, &psi, &opts(256)).unwrap();
        assert_eq!(sol.result.status, Status::Converged);
        let f = sol.factor.unwrap();
        assert!((f.d.coeffs()[0][(0, 0)] - cr(2.0f64.sqrt())).norm() <= 1e-8);
        assert!(sol.max_deviation <= 1e-10 && sol.verified_deviation <= 1e-10);
    }

    #[test]
    fn maximum_entropy_extension() {
        let seq = CovSequence::new(vec![
            real_matrix(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            real_matrix(2, 2, &[0.5, 0.1, -0.2, 0.3]),
        ])
        .unwrap();
        let sol = covext_solve(&seq, &SpectrumInput::identity(2), &opts(256)).unwrap();
        assert_eq!(sol.result.status, Status::Converged);
        assert!(sol.max_deviation <= 1e-6 && sol.verified_deviation <= 1e-6);
        let f = sol.factor.as_ref().unwrap();
        assert!(f.d.is_schur() && f.d.is_normalized());
        // identical to the generic solver on the companion bank
        let bank = FilterBank::covext(2, 1);
        let direct = maxent_solve(&bank, &toeplitz_assemble(&seq), &opts(256)).unwrap();
        assert!(direct.lambda.sub(&sol.result.lambda).frobenius_norm() <= 1e-8);
    }

    #[test]
    fn self_consistent_prior_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = CircleGrid::new(256).unwrap();
        let n0 = random_ma(&mut rng, 2, 1, 0.4);
        let psi = SpectrumInput::RationalFactor(RationalFactor::from_ma(&n0).unwrap());
        let seq = covs_from_spectrum(&psi.samples(&grid).unwrap(), &grid, 2).unwrap();
        let sol = covext_solve(&seq, &psi, &opts(256)).unwrap();
        assert_eq!(sol.result.status, Status::Converged);
        assert!(sol.result.moment_residual <= 1e-6 && sol.max_deviation <= 1e-6);
        // the prior itself is a solution, so Phi reproduces it
        for (phi, want) in sol.result.phi.iter().zip(psi.samples(&grid).unwrap()) {
            assert!(phi.sub(&want).frobenius_norm() <= 1e-5 * want.frobenius_norm());
        }
    }

    #[test]
    fn infeasible_sequences_are_rejected() {
        let seq = CovSequence::new(vec![scalar(1.0), scalar(1.5)]).unwrap();
        assert!(matches!(
            covext_solve(&seq, &SpectrumInput::identity(1), &opts(64)),
            Err(Error::Infeasible { .. })
        ));
    }

    #[test]
    fn arma_spectrum_matches_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let grid = CircleGrid::new(256).unwrap();
        for m in [1usize, 2] {
            let n_coeffs = random_ma(&mut rng, m, 1, 0.4);
            let psi = SpectrumInput::RationalFactor(RationalFactor::from_ma(&n_coeffs).unwrap());
            let bank = FilterBank::covext(m, 1);
            let lambda = random_admissible(&mut rng, &range_basis(&bank).unwrap());
            let sigma = omega(&bank, &lambda, &psi, &grid).unwrap();
            let seq = covs_from_spectrum(&crate::estimator::phi_lambda(&bank, &lambda, &psi, &grid).unwrap(), &grid, 1).unwrap();
            assert!(toeplitz_assemble(&seq).sub(&sigma).frobenius_norm() <= 1e-10 * sigma.frobenius_norm());
            let sol = covext_solve(&seq, &psi, &opts(256)).unwrap();
            assert_eq!(sol.result.status, Status::Converged);
            let f = sol.factor.unwrap();
            let arma = arma_from_solution(&f, &MatrixPolynomial::new(n_coeffs).unwrap()).unwrap();
            for (k, theta) in grid.angles().enumerate().step_by(7) {
                let s = arma.spectrum(theta).unwrap();
                let phi = &sol.result.phi[k];
                assert!(s.sub(phi).frobenius_norm() <= 1e-8 * phi.frobenius_norm());
            }
        }
    }

    #[test]
    fn arma_degree_and_white_case() {
        let bank = FilterBank::covext(1, 0);
        let sf = spectral_factor(&bank, &HermMat::from_diag(&[4.0])).unwrap();
        let f = extract_polynomial_factor(&bank, &sf).unwrap();
        let white = arma_from_solution(&f, &MatrixPolynomial::new(vec![scalar(1.0)]).unwrap()).unwrap();
        assert!((white.ar.coeffs()[0][(0, 0)] - cr(2.0)).norm() < 1e-12);
        assert!((white.spectrum(0.4).unwrap().trace() - 0.25).abs() < 1e-12);
        let too_long = MatrixPolynomial::new(vec![scalar(1.0), scalar(0.5)]).unwrap();
        assert_eq!(arma_from_solution(&f, &too_long), Err(Error::DegreeMismatch { ar: 0, ma: 1 }));
    }

    #[test]
    fn serialized_forms_round_trip() {
        let seq = CovSequence::new(vec![scalar(1.0), CMat::from_element(1, 1, c(0.25, -0.5))]).unwrap();
        let text = serde_json::to_string(&seq).unwrap();
        assert_eq!(serde_json::from_str::<CovSequence>(&text).unwrap(), seq);
        let poly = MatrixPolynomial::new(vec![crate::linalg::eye(2), real_matrix(2, 2, &[0.1, 0.2, 0.3, 0.4])]).unwrap();
        let text = serde_json::to_string(&poly).unwrap();
        assert_eq!(serde_json::from_str::<MatrixPolynomial>(&text).unwrap(), poly);
        assert!(serde_json::from_str::<CovSequence>(r#"{"blocks": [[[[1.0, 0.0], [2.0, 0.0]], [[0.0, 0.0], [1.0, 0.0]]]]}"#).is_err());
    }
}
