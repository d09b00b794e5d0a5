//! Dense complex matrix substrate.
//!
//! [`HermMat`] is the workhorse type: covariances, multipliers and spectral
//! samples all live in the space of Hermitian matrices. [`RealCoords`] gives
//! that space an orthonormal real coordinate system so that subspace
//! computations (ranks, projections, Newton systems) become ordinary real
//! linear algebra.

use nalgebra::{DMatrix, Schur, SymmetricEigen, SVD};
use num_complex::Complex64;

use crate::error::{Error, Result};

pub type CMat = DMatrix<Complex64>;

/// Absolute tolerance below which an asymmetric input is silently symmetrized.
pub const HERMITIAN_TOL: f64 = 1e-12;

const EIG_MAX_SWEEPS: usize = 10_000;
const SCHUR_MAX_ITER: usize = 10_000;

#[inline]
pub fn c(re: f64, im: f64) -> Complex64 {
    Complex64::new(re, im)
}

#[inline]
pub fn cr(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Complex identity of size `n`.
pub fn eye(n: usize) -> CMat {
    CMat::identity(n, n)
}

/// Real matrix lifted to complex entries.
pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> CMat {
    CMat::from_row_iterator(rows, cols, data.iter().map(|&x| cr(x)))
}

/// An `n x n` complex Hermitian matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct HermMat(CMat);

impl HermMat {
    /// Validates Hermitian symmetry; deviations up to [`HERMITIAN_TOL`] are
    /// averaged away, larger ones are rejected.
    pub fn new(m: CMat) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::dims("square matrix", format!("{}x{}", m.nrows(), m.ncols())));
        }
        let n = m.nrows();
        let mut deviation: f64 = 0.0;
        for i in 0..n {
            for j in i..n {
                deviation = deviation.max((m[(i, j)] - m[(j, i)].conj()).norm());
            }
        }
        if !deviation.is_finite() || deviation > HERMITIAN_TOL {
            return Err(Error::NotHermitian { deviation });
        }
        Ok(Self::symmetrized(m))
    }

    /// Hermitian part `(M + M*)/2` without any tolerance check.
    pub fn symmetrized(m: CMat) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrized needs a square matrix");
        let h = (&m + m.adjoint()).scale(0.5);
        HermMat(h)
    }

    pub fn identity(n: usize) -> Self {
        HermMat(eye(n))
    }

    pub fn zeros(n: usize) -> Self {
        HermMat(CMat::zeros(n, n))
    }

    pub fn scaled_identity(n: usize, s: f64) -> Self {
        HermMat(eye(n).scale(s))
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let n = diag.len();
        HermMat(CMat::from_fn(n, n, |i, j| if i == j { cr(diag[i]) } else { cr(0.0) }))
    }

    /// Real symmetric matrix given in row-major order.
    pub fn from_real_rows(n: usize, data: &[f64]) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::dims(n * n, data.len()));
        }
        Self::new(from_real(n, n, data))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMat {
        &self.0
    }

    pub fn into_matrix(self) -> CMat {
        self.0
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.norm()
    }

    /// Real Frobenius inner product `Re tr(self * other*)`.
    pub fn inner(&self, other: &HermMat) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a * b.conj()).re)
            .sum()
    }

    pub fn scale(&self, s: f64) -> HermMat {
        HermMat(self.0.scale(s))
    }

    pub fn add(&self, other: &HermMat) -> HermMat {
        HermMat(&self.0 + &other.0)
    }

    pub fn sub(&self, other: &HermMat) -> HermMat {
        HermMat(&self.0 - &other.0)
    }

    /// `self + s * other`
    pub fn axpy(&self, s: f64, other: &HermMat) -> HermMat {
        HermMat(&self.0 + other.0.scale(s))
    }

    /// Congruence `X H X*` for an arbitrary (possibly rectangular) `X`.
    pub fn sandwich(&self, x: &CMat) -> HermMat {
        HermMat::symmetrized(x * &self.0 * x.adjoint())
    }

    /// Congruence `X* H X`.
    pub fn sandwich_adj(&self, x: &CMat) -> HermMat {
        HermMat::symmetrized(x.adjoint() * &self.0 * x)
    }

    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().map(|z| z.re).sum()
    }

    pub fn min_eigenvalue(&self) -> Result<f64> {
        let (vals, _) = eig_hermitian(self)?;
        Ok(vals.first().copied().unwrap_or(f64::INFINITY))
    }

    /// Inverse of a positive definite matrix through its Cholesky factor.
    pub fn inverse_pd(&self) -> Result<HermMat> {
        let u = cholesky_right(self, 0.0)?;
        let u_inv = upper_triangular_inverse(&u);
        // H = U*U  =>  H^{-1} = U^{-1} U^{-*}
        Ok(HermMat::symmetrized(&u_inv * u_inv.adjoint()))
    }
}

/// Orthonormal real coordinates of a Hermitian matrix.
///
/// Layout: the `n` real diagonal entries first, then for every `i < j` in
/// row-major order the pair `sqrt(2) Re h_ij, sqrt(2) Im h_ij`.
#[derive(Clone, Debug, PartialEq)]
pub struct RealCoords {
    n: usize,
    values: Vec<f64>,
}

impl RealCoords {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::dims(n * n, values.len()));
        }
        Ok(RealCoords { n, values })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dot(&self, other: &RealCoords) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }
}

pub fn to_real_coords(h: &HermMat) -> RealCoords {
    let n = h.dim();
    let m = h.as_matrix();
    let mut values = Vec::with_capacity(n * n);
    values.extend((0..n).map(|i| m[(i, i)].re));
    let s = std::f64::consts::SQRT_2;
    for i in 0..n {
        for j in (i + 1)..n {
            values.push(s * m[(i, j)].re);
            values.push(s * m[(i, j)].im);
        }
    }
    RealCoords { n, values }
}

pub fn from_real_coords(v: &RealCoords) -> HermMat {
    let n = v.n;
    let mut m = CMat::zeros(n, n);
    for i in 0..n {
        m[(i, i)] = cr(v.values[i]);
    }
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let mut k = n;
    for i in 0..n {
        for j in (i + 1)..n {
            let z = c(s * v.values[k], s * v.values[k + 1]);
            m[(i, j)] = z;
            m[(j, i)] = z.conj();
            k += 2;
        }
    }
    HermMat(m)
}

/// Right Cholesky factor: upper-triangular `L` with real positive diagonal
/// and `L* L = H`.
pub fn cholesky_right(h: &HermMat, tol: f64) -> Result<CMat> {
    let n = h.dim();
    let a = h.as_matrix();
    let mut u = CMat::zeros(n, n);
    for j in 0..n {
        let mut pivot = a[(j, j)].re;
        for k in 0..j {
            pivot -= u[(k, j)].norm_sqr();
        }
        if !(pivot > tol) {
            return Err(Error::NotPositiveDefinite { pivot: j, value: pivot });
        }
        let d = pivot.sqrt();
        u[(j, j)] = cr(d);
        for i in (j + 1)..n {
            let mut s = a[(j, i)];
            for k in 0..j {
                s -= u[(k, j)].conj() * u[(k, i)];
            }
            u[(j, i)] = s / d;
        }
    }
    Ok(u)
}

/// Inverse of an upper-triangular matrix by back substitution.
pub fn upper_triangular_inverse(u: &CMat) -> CMat {
    let n = u.nrows();
    let mut inv = CMat::zeros(n, n);
    for col in 0..n {
        inv[(col, col)] = u[(col, col)].inv();
        for i in (0..col).rev() {
            let mut s = cr(0.0);
            for k in (i + 1)..=col {
                s += u[(i, k)] * inv[(k, col)];
            }
            inv[(i, col)] = -s / u[(i, i)];
        }
    }
    inv
}

/// Eigen-decomposition of a Hermitian matrix: ascending eigenvalues and a
/// unitary matrix whose columns are the matching eigenvectors.
pub fn eig_hermitian(h: &HermMat) -> Result<(Vec<f64>, CMat)> {
    let n = h.dim();
    if n == 0 {
        return Ok((Vec::new(), CMat::zeros(0, 0)));
    }
    let eig = SymmetricEigen::try_new(h.as_matrix().clone(), f64::EPSILON, EIG_MAX_SWEEPS)
        .ok_or(Error::ConvergenceFailure)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let vals = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = CMat::from_fn(n, n, |r, k| eig.eigenvectors[(r, order[k])]);
    Ok((vals, vecs))
}

/// Positive semidefinite square root through the eigen-decomposition.
/// Eigenvalues down to `-1e-12 ||H||` are clamped to zero.
pub fn psd_sqrt(h: &HermMat) -> Result<HermMat> {
    let (vals, vecs) = eig_hermitian(h)?;
    let scale = vals.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let floor = -1e-12 * scale;
    let mut roots = Vec::with_capacity(vals.len());
    for &v in &vals {
        if v < floor {
            return Err(Error::NotPsd { eigenvalue: v });
        }
        roots.push(v.max(0.0).sqrt());
    }
    let n = h.dim();
    let scaled = CMat::from_fn(n, n, |i, k| vecs[(i, k)] * roots[k]);
    Ok(HermMat::symmetrized(scaled * vecs.adjoint()))
}

/// Complex Schur form `M = U T U*`. Triangular input is returned as is; when
/// the QR iteration stalls it is rerun on a fixed unitary similarity of `M`.
pub fn complex_schur(m: &CMat) -> Result<(CMat, CMat)> {
    let n = m.nrows();
    if (0..n).all(|j| ((j + 1)..n).all(|i| m[(i, j)] == cr(0.0))) {
        return Ok((eye(n), m.clone()));
    }
    if let Some(schur) = Schur::try_new(m.clone(), f64::EPSILON, SCHUR_MAX_ITER) {
        return Ok(schur.unpack());
    }
    // Householder reflector of a dense fixed vector
    let v = nalgebra::DVector::from_fn(n, |i, _| c(1.0 + i as f64, 0.5 - 0.25 * i as f64));
    let h = eye(n) - (&v * v.adjoint()) * cr(2.0 / v.norm_squared());
    let rotated = &h * m * &h;
    let schur = Schur::try_new(rotated, f64::EPSILON, SCHUR_MAX_ITER).ok_or(Error::ConvergenceFailure)?;
    let (u, t) = schur.unpack();
    Ok((h * u, t))
}

/// Eigenvalues of a general square complex matrix via the complex Schur form.
pub fn eigenvalues(m: &CMat) -> Result<Vec<Complex64>> {
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    let (_, t) = complex_schur(m)?;
    Ok(t.diagonal().iter().copied().collect())
}

pub fn spectral_radius(m: &CMat) -> Result<f64> {
    Ok(eigenvalues(m)?.iter().fold(0.0_f64, |a, z| a.max(z.norm())))
}

/// Singular values in descending order.
pub fn singular_values(m: &CMat) -> Vec<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Vec::new();
    }
    let mut s: Vec<f64> = SVD::new(m.clone(), false, false).singular_values.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Rank with a tolerance relative to the largest singular value.
pub fn numerical_rank(m: &CMat, rel_tol: f64) -> usize {
    let s = singular_values(m);
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&v| v > rel_tol * top).count(),
        _ => 0,
    }
}

pub fn inverse(m: &CMat) -> Result<CMat> {
    m.clone().try_inverse().ok_or(Error::InvalidArgument("singular matrix".into()))
}

/// Solves the Stein equation `X = M X M* + Q` for a general complex `Q` by
/// reducing `M` to complex Schur form and back-substituting column by column.
pub fn stein_solve_general(m: &CMat, q: &CMat) -> Result<CMat> {
    let n = m.nrows();
    if m.ncols() != n || q.nrows() != n || q.ncols() != n {
        return Err(Error::dims(format!("{n}x{n}"), format!("{}x{}", q.nrows(), q.ncols())));
    }
    if n == 0 {
        return Ok(CMat::zeros(0, 0));
    }
    let (u, t) = complex_schur(m)?;
    let radius = t.diagonal().iter().fold(0.0_f64, |a, z| a.max(z.norm()));
    if radius >= 1.0 {
        return Err(Error::NotStable { radius });
    }
    let qt = u.adjoint() * q * &u;
    let mut x = CMat::zeros(n, n);
    let mut y = vec![cr(0.0); n];
    let mut w = vec![cr(0.0); n];
    for j in (0..n).rev() {
        let tjj = t[(j, j)].conj();
        // y_k = sum_{l>j} X_kl conj(T_jl)
        for (k, yk) in y.iter_mut().enumerate() {
            let mut s = cr(0.0);
            for l in (j + 1)..n {
                s += x[(k, l)] * t[(j, l)].conj();
            }
            *yk = s;
        }
        for i in (0..n).rev() {
            let mut rhs = qt[(i, j)] + t[(i, i)] * y[i];
            for k in (i + 1)..n {
                rhs += t[(i, k)] * w[k];
            }
            let xij = rhs / (cr(1.0) - t[(i, i)] * tjj);
            x[(i, j)] = xij;
            // w_k = X_kj conj(T_jj) + y_k, reused by rows above
            w[i] = xij * tjj + y[i];
        }
    }
    Ok(&u * x * u.adjoint())
}

/// Complex product `A B` with a column-oriented kernel on the raw storage;
/// faster than the generic product for the wide matrices of grid sweeps.
pub fn mul(a: &CMat, b: &CMat) -> CMat {
    assert_eq!(a.ncols(), b.nrows(), "inner dimensions differ");
    let (rows, inner, cols) = (a.nrows(), a.ncols(), b.ncols());
    let mut out = CMat::zeros(rows, cols);
    let (av, bv) = (a.as_slice(), b.as_slice());
    let ov = out.as_mut_slice();
    for j in 0..cols {
        let oc = &mut ov[j * rows..(j + 1) * rows];
        for l in 0..inner {
            let blj = bv[l + j * inner];
            let ac = &av[l * rows..(l + 1) * rows];
            for (o, x) in oc.iter_mut().zip(ac) {
                *o += x * blj;
            }
        }
    }
    out
}

/// `Y Y*` carried out as one real product of the stacked `[Re Y; Im Y]`.
pub fn outer_gram(y: &CMat) -> HermMat {
    let n = y.nrows();
    let mut stacked = DMatrix::<f64>::zeros(y.ncols(), 2 * n);
    for j in 0..y.ncols() {
        for i in 0..n {
            stacked[(j, i)] = y[(i, j)].re;
            stacked[(j, n + i)] = y[(i, j)].im;
        }
    }
    gram_of_stacked(&stacked)
}

/// `Y Y*` from the transposed real stacking `S = [Re Y; Im Y]^T`.
pub(crate) fn gram_of_stacked(stacked: &DMatrix<f64>) -> HermMat {
    let n = stacked.ncols() / 2;
    let g = stacked.tr_mul(stacked);
    // (Yr + iYi)(Yr - iYi)^T = Yr Yr^T + Yi Yi^T + i (Yi Yr^T - Yr Yi^T)
    let m = CMat::from_fn(n, n, |i, j| {
        c(g[(i, j)] + g[(n + i, n + j)], g[(n + i, j)] - g[(i, n + j)])
    });
    HermMat::symmetrized(m)
}

/// Fixed-order pairwise sum of `count` matrix terms produced by `term`.
/// The reduction tree depends only on `count`, so results are reproducible.
pub fn pairwise_sum<F>(count: usize, rows: usize, cols: usize, term: &F) -> CMat
where
    F: Fn(usize) -> CMat,
{
    fn go<F: Fn(usize) -> CMat>(lo: usize, hi: usize, rows: usize, cols: usize, term: &F) -> CMat {
        if hi - lo <= 16 {
            let mut acc = CMat::zeros(rows, cols);
            for k in lo..hi {
                acc += term(k);
            }
            acc
        } else {
            let mid = lo + (hi - lo) / 2;
            go(lo, mid, rows, cols, term) + go(mid, hi, rows, cols, term)
        }
    }
    go(0, count, rows, cols, term)
}

/// Real coordinates stacked as the columns of a real matrix.
pub(crate) fn coords_matrix(items: &[RealCoords], dim: usize) -> DMatrix<f64> {
    DMatrix::from_fn(dim, items.len(), |r, k| items[k].values()[r])
}
