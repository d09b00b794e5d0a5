//! The generalized moment operator `Gamma: Phi -> integral of G Phi G*`.
//!
//! Quadrature on a [`CircleGrid`] is the production path. For densities with a
//! stable rational factor the same integral is a controllability Gramian and
//! [`gamma_exact`] computes it through a Stein equation, which the tests use
//! as an oracle for the quadrature.

use nalgebra::{DMatrix, DVector, SVD};

use crate::error::{Error, Result};
use crate::filter_bank::{CircleGrid, FilterBank, SampledBank, RANK_TOL};
use crate::linalg::{
    c, eigenvalues, eye, from_real_coords, spectral_radius, stein_solve_general, to_real_coords, CMat, HermMat,
    RealCoords,
};

/// Relative range residual below which a covariance counts as lying in Range Gamma.
pub const RANGE_TOL: f64 = 1e-8;

/// Stable rational factor `S(z) = D + C (zI - A)^{-1} B` of a density `S S*`.
/// A factor with zero states is a constant.
#[derive(Clone, Debug, PartialEq)]
pub struct RationalFactor {
    a: CMat,
    b: CMat,
    c: CMat,
    d: CMat,
}

impl RationalFactor {
    pub fn new(a: CMat, b: CMat, c: CMat, d: CMat) -> Result<Self> {
        let k = a.nrows();
        if a.ncols() != k || b.nrows() != k || c.ncols() != k || c.nrows() != d.nrows() || b.ncols() != d.ncols() {
            return Err(Error::dims(
                "consistent (A, B, C, D) shapes",
                format!(
                    "A {}x{}, B {}x{}, C {}x{}, D {}x{}",
                    a.nrows(),
                    a.ncols(),
                    b.nrows(),
                    b.ncols(),
                    c.nrows(),
                    c.ncols(),
                    d.nrows(),
                    d.ncols()
                ),
            ));
        }
        if k > 0 {
            let radius = spectral_radius(&a)?;
            if radius >= 1.0 {
                return Err(Error::NotStable { radius });
            }
        }
        Ok(RationalFactor { a, b, c, d })
    }

    pub fn constant(d: CMat) -> Self {
        let (m, r) = (d.nrows(), d.ncols());
        RationalFactor {
            a: CMat::zeros(0, 0),
            b: CMat::zeros(0, r),
            c: CMat::zeros(m, 0),
            d,
        }
    }

    /// Realization of the moving-average polynomial `sum_k N_k z^{-k}`.
    pub fn from_ma(coeffs: &[CMat]) -> Result<Self> {
        let first = coeffs.first().ok_or_else(|| Error::InvalidArgument("empty MA polynomial".into()))?;
        let (m, r) = (first.nrows(), first.ncols());
        if coeffs.iter().any(|x| x.shape() != (m, r)) {
            return Err(Error::dims(format!("{m}x{r} coefficients"), "mixed shapes"));
        }
        let p = coeffs.len() - 1;
        if p == 0 {
            return Ok(Self::constant(first.clone()));
        }
        // state blocks hold u(t-p), ..., u(t-1)
        let k = p * r;
        let mut a = CMat::zeros(k, k);
        for blk in 0..p - 1 {
            for i in 0..r {
                a[(blk * r + i, (blk + 1) * r + i)] = c(1.0, 0.0);
            }
        }
        let mut b = CMat::zeros(k, r);
        for i in 0..r {
            b[((p - 1) * r + i, i)] = c(1.0, 0.0);
        }
        let mut cm = CMat::zeros(m, k);
        for blk in 0..p {
            cm.view_mut((0, blk * r), (m, r)).copy_from(&coeffs[p - blk]);
        }
        Self::new(a, b, cm, first.clone())
    }

    pub fn outputs(&self) -> usize {
        self.d.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.d.ncols()
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn parts(&self) -> (&CMat, &CMat, &CMat, &CMat) {
        (&self.a, &self.b, &self.c, &self.d)
    }

    pub fn evaluate(&self, theta: f64) -> CMat {
        if self.states() == 0 {
            return self.d.clone();
        }
        let z = c(theta.cos(), theta.sin());
        let lhs = eye(self.states()) * z - &self.a;
        let x = lhs.lu().solve(&self.b).expect("stable factor has no poles on the unit circle");
        &self.d + &self.c * x
    }

    /// Density value `S S*` at `theta`.
    pub fn density(&self, theta: f64) -> HermMat {
        let s = self.evaluate(theta);
        HermMat::symmetrized(&s * s.adjoint())
    }
}

/// Hermitian trigonometric polynomial `sum_{|k|<=d} P_k e^{jk theta}` with
/// `P_{-k} = P_k*`; `coeffs[0]` must be Hermitian.
#[derive(Clone, Debug, PartialEq)]
pub struct TrigPolynomial {
    coeffs: Vec<CMat>,
}

impl TrigPolynomial {
    pub fn new(coeffs: Vec<CMat>) -> Result<Self> {
        let first = coeffs.first().ok_or_else(|| Error::InvalidArgument("empty trigonometric polynomial".into()))?;
        let m = first.nrows();
        if coeffs.iter().any(|x| x.shape() != (m, m)) {
            return Err(Error::dims(format!("{m}x{m} coefficients"), "mixed shapes"));
        }
        HermMat::new(first.clone())?;
        Ok(TrigPolynomial { coeffs })
    }

    pub fn coeffs(&self) -> &[CMat] {
        &self.coeffs
    }

    pub fn evaluate(&self, theta: f64) -> HermMat {
        let mut acc = self.coeffs[0].clone();
        for (k, ck) in self.coeffs.iter().enumerate().skip(1) {
            let z = c((k as f64 * theta).cos(), (k as f64 * theta).sin());
            let term = ck * z;
            acc += &term + term.adjoint();
        }
        HermMat::symmetrized(acc)
    }
}

/// A spectral density on the unit circle.
#[derive(Clone, Debug, PartialEq)]
pub enum SpectrumInput {
    /// Samples on the nodes of a specific grid.
    GridSamples { grid: CircleGrid, samples: Vec<HermMat> },
    /// `Psi = N N*` with `N` a stable rational factor.
    RationalFactor(RationalFactor),
    /// Explicit trigonometric polynomial.
    TrigPolynomial(TrigPolynomial),
    Constant(HermMat),
}

impl SpectrumInput {
    pub fn identity(m: usize) -> Self {
        SpectrumInput::Constant(HermMat::identity(m))
    }

    pub fn grid_samples(grid: CircleGrid, samples: Vec<HermMat>) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(Error::GridMismatch {
                expected: grid.len(),
                actual: samples.len(),
            });
        }
        let m = samples.first().map(|s| s.dim()).unwrap_or(0);
        if samples.iter().any(|s| s.dim() != m) {
            return Err(Error::dims(format!("{m}x{m} samples"), "mixed sample sizes"));
        }
        Ok(SpectrumInput::GridSamples { grid, samples })
    }

    /// Matrix size `m` of the density values.
    pub fn m(&self) -> usize {
        match self {
            SpectrumInput::GridSamples { samples, .. } => samples.first().map(|s| s.dim()).unwrap_or(0),
            SpectrumInput::RationalFactor(f) => f.outputs(),
            SpectrumInput::TrigPolynomial(p) => p.coeffs[0].nrows(),
            SpectrumInput::Constant(h) => h.dim(),
        }
    }

    pub fn is_identity(&self) -> bool {
        match self {
            SpectrumInput::Constant(h) => *h == HermMat::identity(h.dim()),
            SpectrumInput::GridSamples { samples, .. } => {
                let id = HermMat::identity(self.m());
                samples.iter().all(|s| *s == id)
            }
            _ => false,
        }
    }

    /// Density values on the nodes of `grid`. Grid samples taken on a
    /// different grid are rejected; see [`SpectrumInput::resampled`].
    pub fn samples(&self, grid: &CircleGrid) -> Result<Vec<HermMat>> {
        match self {
            SpectrumInput::GridSamples { grid: own, samples } => {
                if own != grid {
                    return Err(Error::GridMismatch {
                        expected: grid.len(),
                        actual: own.len(),
                    });
                }
                Ok(samples.clone())
            }
            SpectrumInput::RationalFactor(f) => Ok(grid.angles().map(|t| f.density(t)).collect()),
            SpectrumInput::TrigPolynomial(p) => Ok(grid.angles().map(|t| p.evaluate(t)).collect()),
            SpectrumInput::Constant(h) => Ok(vec![h.clone(); grid.len()]),
        }
    }

    /// The same density on another grid. Grid samples are carried over by
    /// trigonometric interpolation, exact for densities band-limited below
    /// half the source grid size.
    pub fn resampled(&self, grid: &CircleGrid) -> Result<SpectrumInput> {
        match self {
            SpectrumInput::GridSamples { grid: own, samples } if own != grid => {
                let values = trig_interpolate(own, samples, grid);
                SpectrumInput::grid_samples(grid.clone(), values)
            }
            _ => Ok(self.clone()),
        }
    }

    /// Checks membership in the bounded coercive class on `grid` and returns
    /// the smallest eigenvalue found.
    pub fn validate(&self, grid: &CircleGrid) -> Result<f64> {
        if let SpectrumInput::RationalFactor(f) = self {
            if f.outputs() != f.inputs() {
                return Err(Error::dims("square factor", format!("{}x{}", f.outputs(), f.inputs())));
            }
        }
        let mut min_eig = f64::INFINITY;
        for s in self.samples(grid)? {
            let e = s.min_eigenvalue()?;
            if !e.is_finite() {
                return Err(Error::NotPd { min_eig: e });
            }
            min_eig = min_eig.min(e);
        }
        if min_eig <= 0.0 {
            return Err(Error::NotPd { min_eig });
        }
        Ok(min_eig)
    }
}

fn trig_interpolate(from: &CircleGrid, samples: &[HermMat], to: &CircleGrid) -> Vec<HermMat> {
    let n = from.len() as i64;
    let m = samples[0].dim();
    let half = n / 2;
    let coeffs: Vec<(i64, CMat)> = (-half..=half)
        .map(|k| {
            let ck = from.mean(m, m, |i| {
                let th = -(k as f64) * from.angle(i);
                samples[i].as_matrix() * c(th.cos(), th.sin())
            });
            let w = if k.abs() == half { 0.5 } else { 1.0 };
            (k, ck.scale(w))
        })
        .collect();
    to.angles()
        .map(|theta| {
            let mut acc = CMat::zeros(m, m);
            for (k, ck) in &coeffs {
                let th = *k as f64 * theta;
                acc += ck * c(th.cos(), th.sin());
            }
            HermMat::symmetrized(acc)
        })
        .collect()
}

/// Quadrature of `G Phi G*` over the grid of `sampled`.
pub fn gamma_sampled(sampled: &SampledBank, samples: &[HermMat]) -> Result<HermMat> {
    let grid = sampled.grid();
    if samples.len() != grid.len() {
        return Err(Error::GridMismatch {
            expected: grid.len(),
            actual: samples.len(),
        });
    }
    let n = sampled.bank().n();
    let m = sampled.bank().m();
    if samples.first().map(|s| s.dim()) != Some(m) {
        return Err(Error::dims(format!("{m}x{m} density"), samples[0].dim()));
    }
    let sum = grid.mean(n, n, |k| {
        let g = sampled.at(k);
        g * samples[k].as_matrix() * g.adjoint()
    });
    Ok(HermMat::symmetrized(sum))
}

/// `Gamma(Phi)`: quadrature on `grid`, or the exact Gramian for constant densities.
pub fn gamma(bank: &FilterBank, phi: &SpectrumInput, grid: &CircleGrid) -> Result<HermMat> {
    if phi.m() != bank.m() {
        return Err(Error::dims(format!("{0}x{0} density", bank.m()), phi.m()));
    }
    match phi {
        SpectrumInput::Constant(h) => gamma_constant(bank, h),
        _ => {
            let samples = phi.samples(grid)?;
            gamma_sampled(&bank.evaluate_grid(grid), &samples)
        }
    }
}

/// `Gamma(C)` for a constant density: the Gramian `X = A X A* + B C B*`.
pub fn gamma_constant(bank: &FilterBank, value: &HermMat) -> Result<HermMat> {
    stein_solve(bank.a(), &value.sandwich(bank.b()))
}

/// `X = M X M* + Q` for Hermitian `Q`.
pub fn stein_solve(m: &CMat, q: &HermMat) -> Result<HermMat> {
    let x = stein_solve_general(m, q.as_matrix())?;
    Ok(HermMat::symmetrized(x))
}

/// Exact `Gamma(S S*)` through the cascade realization of `G S`.
pub fn gamma_exact(bank: &FilterBank, s: &RationalFactor) -> Result<HermMat> {
    let (n, m) = (bank.n(), bank.m());
    if s.outputs() != m {
        return Err(Error::dims(format!("factor with {m} outputs"), s.outputs()));
    }
    let k = s.states();
    let (a_s, b_s, c_s, d_s) = s.parts();
    // x+ = A x + B (C_s xi + D_s u),  xi+ = A_s xi + B_s u
    let mut a_c = CMat::zeros(n + k, n + k);
    a_c.view_mut((0, 0), (n, n)).copy_from(bank.a());
    if k > 0 {
        a_c.view_mut((0, n), (n, k)).copy_from(&(bank.b() * c_s));
        a_c.view_mut((n, n), (k, k)).copy_from(a_s);
    }
    let r = s.inputs();
    let mut b_c = CMat::zeros(n + k, r);
    b_c.view_mut((0, 0), (n, r)).copy_from(&(bank.b() * d_s));
    if k > 0 {
        b_c.view_mut((n, 0), (k, r)).copy_from(b_s);
    }
    let x = stein_solve_general(&a_c, &(&b_c * b_c.adjoint()))?;
    Ok(HermMat::symmetrized(x.view((0, 0), (n, n)).into_owned()))
}

/// Orthonormal basis (in [`RealCoords`]) of Range Gamma.
#[derive(Clone, Debug)]
pub struct RangeGammaBasis {
    n: usize,
    m: usize,
    columns: DMatrix<f64>,
    complement: DMatrix<f64>,
}

impl RangeGammaBasis {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Real dimension `d` of the subspace.
    pub fn dim(&self) -> usize {
        self.columns.ncols()
    }

    pub fn columns(&self) -> &DMatrix<f64> {
        &self.columns
    }

    /// Orthonormal basis of the orthogonal complement, the matrices `K`
    /// with `G* K G = 0` on the circle.
    pub fn complement(&self) -> &DMatrix<f64> {
        &self.complement
    }

    pub fn complement_elements(&self) -> Vec<HermMat> {
        (0..self.complement.ncols())
            .map(|i| {
                let values = self.complement.column(i).iter().copied().collect();
                from_real_coords(&RealCoords::new(self.n, values).expect("n^2 coordinates"))
            })
            .collect()
    }

    pub fn element(&self, i: usize) -> HermMat {
        let values = self.columns.column(i).iter().copied().collect();
        from_real_coords(&RealCoords::new(self.n, values).expect("basis column length is n^2"))
    }

    pub fn elements(&self) -> Vec<HermMat> {
        (0..self.dim()).map(|i| self.element(i)).collect()
    }

    /// Coefficients of the orthogonal projection of `h` in this basis.
    pub fn coefficients(&self, h: &HermMat) -> DVector<f64> {
        let v = DVector::from_vec(to_real_coords(h).values().to_vec());
        self.columns.tr_mul(&v)
    }

    pub fn from_coefficients(&self, coeffs: &DVector<f64>) -> HermMat {
        let v = &self.columns * coeffs;
        from_real_coords(&RealCoords::new(self.n, v.iter().copied().collect()).expect("n^2 coordinates"))
    }

    pub fn project(&self, h: &HermMat) -> HermMat {
        self.from_coefficients(&self.coefficients(h))
    }
}

/// Basis of Range Gamma, the solutions of `X - A X A* = B H + H* B*` over
/// all `H` in `C^{m x n}`.
///
/// Each elementary `H` contributes one Stein solution; the generators lose
/// rank only along the `m^2`-dimensional kernel `H = K B*`, `K` skew-Hermitian.
pub fn range_basis(bank: &FilterBank) -> Result<RangeGammaBasis> {
    let (n, m) = (bank.n(), bank.m());
    let mut images: Vec<RealCoords> = Vec::with_capacity(2 * m * n);
    for i in 0..m {
        for j in 0..n {
            for val in [c(1.0, 0.0), c(0.0, 1.0)] {
                let mut h = CMat::zeros(m, n);
                h[(i, j)] = val;
                let bh = bank.b() * h;
                let x = stein_solve_general(bank.a(), &(&bh + bh.adjoint()))?;
                images.push(to_real_coords(&HermMat::symmetrized(x)));
            }
        }
    }
    let gen = crate::linalg::coords_matrix(&images, n * n);
    let svd = SVD::new(gen, true, false);
    let u = svd.u.expect("left singular vectors requested");
    let top = svd.singular_values.iter().copied().fold(0.0_f64, f64::max);
    let keep: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > RANK_TOL * top)
        .collect();
    let expected = m * (2 * n - m);
    if keep.len() != expected {
        return Err(Error::DimensionMismatchWithTheory {
            computed: keep.len(),
            expected,
        });
    }
    let columns = DMatrix::from_fn(n * n, keep.len(), |r, k| u[(r, keep[k])]);
    let residual_projector = DMatrix::<f64>::identity(n * n, n * n) - &columns * columns.transpose();
    let svd = SVD::new(residual_projector, true, false);
    let u = svd.u.expect("left singular vectors requested");
    let rest: Vec<usize> = (0..svd.singular_values.len())
        .filter(|&k| svd.singular_values[k] > 0.5)
        .collect();
    let complement = DMatrix::from_fn(n * n, rest.len(), |r, k| u[(r, rest[k])]);
    Ok(RangeGammaBasis {
        n,
        m,
        columns,
        complement,
    })
}

pub fn project_range(h: &HermMat, basis: &RangeGammaBasis) -> HermMat {
    basis.project(h)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Feasibility {
    pub in_range: bool,
    pub range_residual: f64,
    pub positive_definite: bool,
}

impl Feasibility {
    pub fn feasible(&self) -> bool {
        self.in_range && self.positive_definite
    }
}

pub fn feasibility(sigma: &HermMat, basis: &RangeGammaBasis) -> Result<Feasibility> {
    if sigma.dim() != basis.n() {
        return Err(Error::dims(basis.n(), sigma.dim()));
    }
    let norm = sigma.frobenius_norm();
    let range_residual = if norm == 0.0 {
        0.0
    } else {
        sigma.sub(&basis.project(sigma)).frobenius_norm() / norm
    };
    let min_eig = eigenvalues(sigma.as_matrix())?
        .iter()
        .map(|z| z.re)
        .fold(f64::INFINITY, f64::min);
    Ok(Feasibility {
        in_range: range_residual <= RANGE_TOL,
        range_residual,
        positive_definite: min_eig > 0.0,
    })
}
