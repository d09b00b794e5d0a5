//! Parametric spectral estimation: find `Lambda` with
//! `integral of G W^{-1} Psi W^{-*} G* = Sigma`, where `W` is the spectral
//! factor of `G* Lambda G`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter_bank::{CircleGrid, FilterBank, SampledBank};
use crate::linalg::{cholesky_right, eig_hermitian, outer_gram, psd_sqrt, CMat, HermMat};
use crate::moment_map::{feasibility, gamma_sampled, range_basis, RangeGammaBasis, SpectrumInput};
use crate::riccati::{factor_unchecked, factor_warm, spectral_factor_on, SpectralFactor};

/// Solver outcome of an estimation run.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    MaxIterations,
    HomotopyStuck,
    Infeasible,
}

/// One record per iteration `k` of the stage at homotopy parameter `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub t: f64,
    pub k: usize,
    pub step_norm: f64,
    pub residual: f64,
}

/// Optional protections layered on top of the plain fixed-point iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct Safeguards {
    /// Project every fixed-point iterate onto Range Gamma. Off by default;
    /// the iterate is still reported through its projection.
    pub project_iterates: bool,
    /// Finish a stage with Newton steps on the moment equation when the
    /// fixed-point iteration stalls or leaves the admissible set.
    pub newton_corrector: bool,
    /// Iterates must satisfy `min eig(G* Lambda G) > margin` on the grid.
    pub admissibility_margin: f64,
}

impl Default for Safeguards {
    fn default() -> Self {
        Safeguards {
            project_iterates: false,
            newton_corrector: true,
            admissibility_margin: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimationOptions {
    pub grid: CircleGrid,
    /// Relative fixed-point increment `||L_{k+1} - L_k|| / ||L_k||` at which a stage stops.
    pub tol_fp: f64,
    /// Relative moment residual required for convergence.
    pub tol_mom: f64,
    pub max_iter: usize,
    pub dt_init: f64,
    pub dt_min: f64,
    /// Consecutive residual increases that count as divergence.
    pub divergence_window: usize,
    pub safeguards: Safeguards,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        EstimationOptions {
            grid: CircleGrid::default(),
            tol_fp: 1e-9,
            tol_mom: 1e-6,
            max_iter: 5000,
            dt_init: 0.1,
            dt_min: 1e-4,
            divergence_window: 50,
            safeguards: Safeguards::default(),
        }
    }
}

impl EstimationOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [self.tol_fp, self.tol_mom, self.dt_init, self.dt_min];
        if positive.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidArgument("tolerances and step sizes must be positive".into()));
        }
        if !(self.dt_min < self.dt_init && self.dt_init <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "need dt_min < dt_init <= 1, got dt_min = {}, dt_init = {}",
                self.dt_min, self.dt_init
            )));
        }
        if self.max_iter == 0 || self.divergence_window == 0 {
            return Err(Error::InvalidArgument("iteration limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct EstimationResult {
    /// Solution, represented in Range Gamma.
    pub lambda: HermMat,
    /// `||Gamma(Phi_Lambda) - Sigma||_F / ||Sigma||_F` on the working grid.
    pub moment_residual: f64,
    /// The same residual on a grid twice as fine.
    pub verified_residual: f64,
    /// Samples of `Phi_Lambda` on the working grid.
    pub phi: Vec<HermMat>,
    pub trace: Vec<TraceRecord>,
    pub status: Status,
    /// Homotopy parameter reached.
    pub t_reached: f64,
}

/// Samples of `Phi_Lambda = W^{-1} Psi W^{-*}` on `grid`.
pub fn phi_lambda(bank: &FilterBank, lambda: &HermMat, psi: &SpectrumInput, grid: &CircleGrid) -> Result<Vec<HermMat>> {
    check_psi(bank, psi)?;
    let sf = spectral_factor_on(&bank.evaluate_grid(grid), lambda)?;
    Ok(phi_samples(&sf, grid, &psi.samples(grid)?))
}

fn phi_samples(sf: &SpectralFactor, grid: &CircleGrid, psi: &[HermMat]) -> Vec<HermMat> {
    grid.angles()
        .zip(psi)
        .map(|(theta, s)| s.sandwich(&sf.eval_w_inv(theta)))
        .collect()
}

/// `omega(Lambda) = Gamma(Phi_Lambda)`.
pub fn omega(bank: &FilterBank, lambda: &HermMat, psi: &SpectrumInput, grid: &CircleGrid) -> Result<HermMat> {
    let phi = phi_lambda(bank, lambda, psi, grid)?;
    gamma_sampled(&bank.evaluate_grid(grid), &phi)
}

/// `integral of G (G* Lambda G)^{-1} G*`, evaluated by pointwise inversion.
pub fn omega_tilde(bank: &FilterBank, lambda: &HermMat, grid: &CircleGrid) -> Result<HermMat> {
    omega_tilde_sampled(&bank.evaluate_grid(grid), lambda)
}

fn omega_tilde_sampled(sampled: &SampledBank, lambda: &HermMat) -> Result<HermMat> {
    let mut inverses = Vec::with_capacity(sampled.values().len());
    for g in sampled.values() {
        let q = lambda.sandwich_adj(g);
        let inv = q.inverse_pd().map_err(|_| Error::NotAdmissible {
            min_eig: q.min_eigenvalue().unwrap_or(f64::NAN),
        })?;
        inverses.push(inv);
    }
    gamma_sampled(sampled, &inverses)
}

/// The prior blend `t Psi + (1 - t) I`.
pub fn homotopy_density(psi: &SpectrumInput, t: f64, grid: &CircleGrid) -> Result<SpectrumInput> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidArgument(format!("homotopy parameter {t} outside [0, 1]")));
    }
    let m = psi.m();
    let id = HermMat::identity(m);
    if let SpectrumInput::Constant(h) = psi {
        return Ok(SpectrumInput::Constant(h.scale(t).axpy(1.0 - t, &id)));
    }
    let samples = psi.samples(grid)?.iter().map(|s| s.scale(t).axpy(1.0 - t, &id)).collect();
    SpectrumInput::grid_samples(grid.clone(), samples)
}

/// `Lambda^{1/2} omega(Lambda) Lambda^{1/2}` for a problem normalized to `Sigma = I`.
pub fn fixed_point_step(bank: &FilterBank, lambda: &HermMat, psi_t: &SpectrumInput, grid: &CircleGrid) -> Result<HermMat> {
    let w = omega(bank, lambda, psi_t, grid)?;
    let root = psd_sqrt(lambda)?;
    Ok(w.sandwich(root.as_matrix()))
}

/// Congruence relating a problem to its `Sigma = I` normalization:
/// `A' = T A T^{-1}`, `B' = T B`, `Lambda = T* Lambda' T`.
#[derive(Clone, Debug)]
pub struct BackMap {
    t: CMat,
    t_inv: CMat,
}

impl BackMap {
    pub fn t(&self) -> &CMat {
        &self.t
    }

    /// Normalized-problem `Lambda'` to original `Lambda`.
    pub fn apply(&self, lambda_normalized: &HermMat) -> HermMat {
        lambda_normalized.sandwich_adj(&self.t)
    }

    /// Original `Lambda` to normalized `Lambda'`.
    pub fn forward(&self, lambda: &HermMat) -> HermMat {
        lambda.sandwich_adj(&self.t_inv)
    }

    /// Original `Sigma`-space matrix to the normalized problem: `T X T*`.
    pub fn covariance_forward(&self, x: &HermMat) -> HermMat {
        x.sandwich(&self.t)
    }
}

pub fn normalize_problem(bank: &FilterBank, sigma: &HermMat) -> Result<(FilterBank, BackMap)> {
    if sigma.dim() != bank.n() {
        return Err(Error::dims(bank.n(), sigma.dim()));
    }
    let (vals, vecs) = eig_hermitian(sigma)?;
    let min_eig = vals.first().copied().unwrap_or(0.0);
    if !(min_eig > 0.0) {
        return Err(Error::NotPd { min_eig });
    }
    let scale = |f: fn(f64) -> f64| {
        let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
            vals.len(),
            vals.iter().map(|&v| crate::linalg::cr(f(v))),
        ));
        HermMat::symmetrized(&vecs * d * vecs.adjoint()).into_matrix()
    };
    let t = scale(|v| 1.0 / v.sqrt());
    let t_inv = scale(f64::sqrt);
    Ok((bank.similarity(&t, &t_inv), BackMap { t, t_inv }))
}

/// Cached quantities of one problem on one grid.
struct Workspace {
    sampled: SampledBank,
    /// `[G(theta_0), ..., G(theta_{N-1})]`
    g_all: CMat,
    basis: RangeGammaBasis,
    sigma: HermMat,
    sigma_norm: f64,
    last_factor: std::cell::RefCell<Option<SpectralFactor>>,
    /// Scratch buffer for the real stacking of `Y`.
    stacked: std::cell::RefCell<DMatrix<f64>>,
}

impl Workspace {
    fn new(bank: &FilterBank, sigma: &HermMat, grid: &CircleGrid) -> Result<Self> {
        let basis = range_basis(bank)?;
        let sampled = bank.evaluate_grid(grid);
        let (n, m) = (bank.n(), bank.m());
        let mut g_all = CMat::zeros(n, m * grid.len());
        for (k, g) in sampled.values().iter().enumerate() {
            g_all.columns_mut(k * m, m).copy_from(g);
        }
        Ok(Workspace {
            g_all,
            sampled,
            basis,
            sigma: sigma.clone(),
            sigma_norm: sigma.frobenius_norm(),
            last_factor: std::cell::RefCell::new(None),
            stacked: std::cell::RefCell::new(DMatrix::zeros(0, 0)),
        })
    }

    fn grid(&self) -> &CircleGrid {
        self.sampled.grid()
    }

    fn residual(&self, w: &HermMat) -> f64 {
        w.sub(&self.sigma).frobenius_norm() / self.sigma_norm
    }

    /// `G_k* Lambda G_k` at every node.
    fn node_forms(&self, lambda: &HermMat) -> Vec<HermMat> {
        let (n, m) = (self.sampled.bank().n(), self.sampled.bank().m());
        let lg = crate::linalg::mul(lambda.as_matrix(), &self.g_all);
        let (g_all, lg) = (self.g_all.as_slice(), lg.as_slice());
        (0..self.grid().len())
            .map(|k| {
                let (g, h) = (&g_all[k * m * n..(k + 1) * m * n], &lg[k * m * n..(k + 1) * m * n]);
                let q = CMat::from_fn(m, m, |i, j| {
                    (0..n).map(|r| g[r + i * n].conj() * h[r + j * n]).sum::<Complex64>()
                });
                HermMat::symmetrized(q)
            })
            .collect()
    }

    /// Cholesky test of `G* Lambda G - margin I > 0` at every node.
    fn admissible(&self, lambda: &HermMat, margin: f64) -> bool {
        let m = self.sampled.bank().m();
        self.node_forms(lambda).iter().all(|q| cholesky_right(&q.axpy(-margin, &HermMat::identity(m)), 0.0).is_ok())
    }

    /// Dual objective `J(Lambda) = <Lambda, Sigma> - integral of log det(G* Lambda G)`;
    /// `None` outside the admissible set.
    fn dual_objective(&self, lambda: &HermMat) -> Option<f64> {
        let mut logdet = Vec::with_capacity(self.grid().len());
        for q in self.node_forms(lambda) {
            let chol = cholesky_right(&q, 0.0).ok()?;
            logdet.push(chol.diagonal().iter().map(|d| 2.0 * d.re.ln()).sum::<f64>());
        }
        let mean = pairwise_mean(&logdet);
        Some(lambda.inner(&self.sigma) - mean)
    }

    /// `omega` with the prior given through factors `R_k R_k* = Psi(theta_k)`.
    /// Uses the cached values of `G` and `W^{-1} = (L + C_w G)^{-1}`; failure
    /// of the factorization means `Lambda` left the admissible set.
    fn omega(&self, lambda: &HermMat, psi_roots: &[CMat]) -> Result<HermMat> {
        let previous = self.last_factor.take();
        let sf = factor_warm(self.sampled.bank(), lambda, previous.as_ref())?;
        let (n, m) = (self.sampled.bank().n(), self.sampled.bank().m());
        let count = self.grid().len();
        let g_all = self.g_all.as_slice();
        let c_w = sf.c_w().as_slice();
        let l = sf.l().as_slice();
        let mut stacked = self.stacked.take();
        if stacked.shape() != (m * count, 2 * n) {
            stacked = DMatrix::zeros(m * count, 2 * n);
        }
        let zero = Complex64::new(0.0, 0.0);
        let mut w = vec![zero; m * m];
        let mut v = vec![zero; m * m];
        let mut col = vec![zero; n];
        for (k, root) in psi_roots.iter().enumerate() {
            // column-major node block G_k starts at column k m of g_all
            let g = &g_all[k * m * n..(k + 1) * m * n];
            for ((wj, lj), gj) in w.chunks_exact_mut(m).zip(l.chunks_exact(m)).zip(g.chunks_exact(n)) {
                wj.copy_from_slice(lj);
                for (cr_, &grj) in c_w.chunks_exact(m).zip(gj) {
                    for (x, &cw) in wj.iter_mut().zip(cr_) {
                        *x += cw * grj;
                    }
                }
            }
            if !invert_in_place(&mut w, m) {
                self.stacked.replace(stacked);
                return Err(Error::NotAdmissible { min_eig: 0.0 });
            }
            // v = W^{-1} R_k, then the node block of Y is G_k v
            for (vj, rj) in v.chunks_exact_mut(m).zip(root.as_slice().chunks_exact(m)) {
                vj.fill(zero);
                for (wr, &rrj) in w.chunks_exact(m).zip(rj) {
                    for (x, &wv) in vj.iter_mut().zip(wr) {
                        *x += wv * rrj;
                    }
                }
            }
            for (j, vj) in v.chunks_exact(m).enumerate() {
                col.fill(zero);
                for (gr, &vrj) in g.chunks_exact(n).zip(vj) {
                    for (x, &gv) in col.iter_mut().zip(gr) {
                        *x += gv * vrj;
                    }
                }
                let row = k * m + j;
                for (i, x) in col.iter().enumerate() {
                    stacked[(row, i)] = x.re;
                    stacked[(row, n + i)] = x.im;
                }
            }
        }
        self.last_factor.replace(Some(sf));
        let gram = crate::linalg::gram_of_stacked(&stacked);
        self.stacked.replace(stacked);
        Ok(gram.scale(self.grid().weight()))
    }

    /// Gradient and Hessian of the dual objective in basis coordinates.
    ///
    /// With `Y_k = G_k R_k` and `R_k R_k* = (G_k* Lambda G_k)^{-1}` the Hessian
    /// is the grid mean of `<Y* E_i Y, Y* E_j Y>`; the maps `E -> Y_k* E Y_k`
    /// are stacked in real coordinates so that it reduces to two real products.
    fn dual_derivatives(&self, lambda: &HermMat) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let (n, m) = (self.sampled.bank().n(), self.sampled.bank().m());
        let count = self.grid().len();
        let mut y = CMat::zeros(n, m * count);
        for (k, q) in self.node_forms(lambda).iter().enumerate() {
            let u = cholesky_right(q, 0.0).map_err(|_| Error::NotAdmissible {
                min_eig: q.min_eigenvalue().unwrap_or(f64::NAN),
            })?;
            let r = crate::linalg::upper_triangular_inverse(&u);
            let block = self.sampled.at(k) * r;
            y.columns_mut(k * m, m).copy_from(&block);
        }
        let grad = self.basis.coefficients(&self.sigma.sub(&outer_gram(&y).scale(self.grid().weight())));

        let (nn, mm) = (n * n, m * m);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let ys = y.as_slice();
        let mut stack = DMatrix::<f64>::zeros(mm * count, nn);
        let mut h = vec![Complex64::new(0.0, 0.0); mm];
        for k in 0..count {
            let yk = &ys[k * m * n..(k + 1) * m * n];
            let at = |i: usize, p: usize| yk[i + p * n];
            let mut col = 0;
            let emit = |col: usize, h: &[Complex64], stack: &mut DMatrix<f64>| {
                let dst = &mut stack.column_mut(col);
                let base = k * mm;
                let mut row = m;
                for p in 0..m {
                    dst[base + p] = h[p + p * m].re;
                    for q in (p + 1)..m {
                        dst[base + row] = std::f64::consts::SQRT_2 * h[p + q * m].re;
                        dst[base + row + 1] = std::f64::consts::SQRT_2 * h[p + q * m].im;
                        row += 2;
                    }
                }
            };
            for a in 0..n {
                for p in 0..m {
                    for q in p..m {
                        h[p + q * m] = at(a, p).conj() * at(a, q);
                    }
                }
                emit(col, &h, &mut stack);
                col += 1;
            }
            for a in 0..n {
                for b in (a + 1)..n {
                    for p in 0..m {
                        for q in p..m {
                            let x = at(a, p).conj() * at(b, q);
                            let z = at(b, p).conj() * at(a, q);
                            h[p + q * m] = (x + z) * s;
                        }
                    }
                    emit(col, &h, &mut stack);
                    for p in 0..m {
                        for q in p..m {
                            let x = at(a, p).conj() * at(b, q);
                            let z = at(b, p).conj() * at(a, q);
                            h[p + q * m] = Complex64::new(0.0, s) * (x - z);
                        }
                    }
                    emit(col + 1, &h, &mut stack);
                    col += 2;
                }
            }
        }
        let v = stack * self.basis.columns();
        let hess = v.tr_mul(&v).scale(self.grid().weight());
        Ok((grad, hess))
    }
}

fn pairwise_mean(values: &[f64]) -> f64 {
    fn go(v: &[f64]) -> f64 {
        if v.len() <= 16 {
            v.iter().sum()
        } else {
            let mid = v.len() / 2;
            go(&v[..mid]) + go(&v[mid..])
        }
    }
    go(values) / values.len() as f64
}

/// Gauss-Jordan inversion with partial pivoting of a column-major `m x m`
/// matrix. Returns `false` for a numerically singular input.
fn invert_in_place(a: &mut [Complex64], m: usize) -> bool {
    let mut inv = vec![Complex64::new(0.0, 0.0); m * m];
    for i in 0..m {
        inv[i + i * m] = Complex64::new(1.0, 0.0);
    }
    for col in 0..m {
        let pivot = (col..m)
            .max_by(|&x, &y| a[x + col * m].norm_sqr().total_cmp(&a[y + col * m].norm_sqr()))
            .expect("nonempty range");
        if a[pivot + col * m].norm_sqr() == 0.0 {
            return false;
        }
        if pivot != col {
            for j in 0..m {
                a.swap(col + j * m, pivot + j * m);
                inv.swap(col + j * m, pivot + j * m);
            }
        }
        let d = a[col + col * m].inv();
        for j in 0..m {
            a[col + j * m] *= d;
            inv[col + j * m] *= d;
        }
        for i in 0..m {
            if i != col {
                let f = a[i + col * m];
                if f != Complex64::new(0.0, 0.0) {
                    for j in 0..m {
                        let (ac, ic) = (a[col + j * m], inv[col + j * m]);
                        a[i + j * m] -= f * ac;
                        inv[i + j * m] -= f * ic;
                    }
                }
            }
        }
    }
    a.copy_from_slice(&inv);
    true
}

fn check_psi(bank: &FilterBank, psi: &SpectrumInput) -> Result<()> {
    if psi.m() != bank.m() {
        return Err(Error::dims(format!("{0}x{0} prior", bank.m()), psi.m()));
    }
    Ok(())
}

/// Damped Newton on the dual objective, restricted to Range Gamma.
fn newton_maxent(ws: &Workspace, start: HermMat, opts: &EstimationOptions, trace: &mut Vec<TraceRecord>) -> Result<(HermMat, bool)> {
    let mut lambda = start;
    let margin = opts.safeguards.admissibility_margin;
    let target = (opts.tol_mom * 1e-3).max(1e-13);
    for k in 0..opts.max_iter {
        let (grad, hess) = ws.dual_derivatives(&lambda)?;
        let w = ws.sigma.sub(&ws.basis.from_coefficients(&grad));
        let residual = ws.residual(&w);
        if residual <= target {
            trace.push(TraceRecord {
                t: 0.0,
                k,
                step_norm: 0.0,
                residual,
            });
            return Ok((lambda, true));
        }
        let chol = hess.clone().cholesky().ok_or_else(|| Error::SolverDivergence {
            reason: "dual Hessian is not positive definite".into(),
        })?;
        // descent direction: minus the gradient of J, which is Sigma - omega_tilde
        let dir = chol.solve(&(-&grad));
        let j0 = ws.dual_objective(&lambda).ok_or(Error::NotAdmissible { min_eig: 0.0 })?;
        let slope = grad.dot(&dir);
        let mut step = 1.0;
        let mut accepted = None;
        while step > 1e-12 {
            let cand = lambda.add(&ws.basis.from_coefficients(&(&dir * step)));
            if ws.admissible(&cand, margin) {
                if let Some(j) = ws.dual_objective(&cand) {
                    if j <= j0 + 1e-4 * step * slope || slope.abs() < 1e-14 * j0.abs().max(1.0) {
                        accepted = Some(cand);
                        break;
                    }
                }
            }
            step *= 0.5;
        }
        let Some(next) = accepted else {
            return Ok((lambda, false));
        };
        let step_norm = next.sub(&lambda).frobenius_norm();
        trace.push(TraceRecord {
            t: 0.0,
            k,
            step_norm,
            residual,
        });
        lambda = next;
    }
    Ok((lambda, false))
}

/// Solves `omega_tilde(Lambda) = Sigma` (the `Psi = I` problem).
pub fn maxent_solve(bank: &FilterBank, sigma: &HermMat, opts: &EstimationOptions) -> Result<EstimationResult> {
    homotopy_solve(bank, sigma, &SpectrumInput::identity(bank.m()), opts)
}

/// Tracks `t Psi + (1 - t) I` from `t = 0` to `t = 1`, solving the moment
/// equation at every accepted `t`.
pub fn homotopy_solve(
    bank: &FilterBank,
    sigma: &HermMat,
    psi: &SpectrumInput,
    opts: &EstimationOptions,
) -> Result<EstimationResult> {
    opts.validate()?;
    check_psi(bank, psi)?;
    if sigma.dim() != bank.n() {
        return Err(Error::dims(bank.n(), sigma.dim()));
    }
    let grid = &opts.grid;
    psi.validate(grid)?;
    let basis = range_basis(bank)?;
    let feas = feasibility(sigma, &basis)?;
    if !feas.feasible() {
        return Ok(infeasible_result(bank.n()));
    }
    let (nbank, back) = normalize_problem(bank, sigma)?;
    let n = bank.n();
    let ws = Workspace::new(&nbank, &HermMat::identity(n), grid)?;
    let mut trace = Vec::new();

    let ratio = omega_tilde_sampled(&ws.sampled, &HermMat::identity(n))?.trace() / n as f64;
    let start = ws.basis.project(&HermMat::scaled_identity(n, ratio));
    let (mut lambda, ok) = newton_maxent(&ws, start, opts, &mut trace)?;
    let ok = ok && {
        match positive_representative(&nbank, &ws.basis, &lambda) {
            Ok(lifted) => {
                lambda = lifted;
                true
            }
            Err(_) => psi.is_identity(),
        }
    };
    let mut status = if ok { Status::Converged } else { Status::MaxIterations };
    let mut t = 0.0;
    if ok && !psi.is_identity() {
        let psi_samples = psi.samples(grid)?;
        let tracker = Tracker {
            ws: &ws,
            psi: &psi_samples,
            opts,
        };
        let (lam, t_end, st) = tracker.run(lambda, &mut trace);
        lambda = lam;
        t = t_end;
        status = st;
    } else if ok {
        t = 1.0;
    }
    finish(bank, sigma, psi, opts, &back, &ws, lambda, status, t, trace)
}

#[allow(clippy::too_many_arguments)]
fn finish(
    bank: &FilterBank,
    sigma: &HermMat,
    psi: &SpectrumInput,
    opts: &EstimationOptions,
    back: &BackMap,
    ws: &Workspace,
    lambda_normalized: HermMat,
    mut status: Status,
    t: f64,
    trace: Vec<TraceRecord>,
) -> Result<EstimationResult> {
    let lambda_projected = ws.basis.project(&lambda_normalized);
    let basis = range_basis(bank)?;
    let mut lambda = basis.project(&back.apply(&lambda_projected));
    let grid = &opts.grid;
    let mut trace = trace;
    if status == Status::Converged {
        lambda = polish(bank, &basis, sigma, psi, opts, lambda, &mut trace);
    }
    let sampled = bank.evaluate_grid(grid);
    let (phi, moment_residual) = match spectral_factor_on(&sampled, &lambda) {
        Ok(sf) => {
            let phi = phi_samples(&sf, grid, &psi.samples(grid)?);
            let w = gamma_sampled(&sampled, &phi)?;
            let r = w.sub(sigma).frobenius_norm() / sigma.frobenius_norm();
            (phi, r)
        }
        Err(_) => (Vec::new(), f64::INFINITY),
    };
    let fine = grid.refined();
    let verified_residual = match psi.resampled(&fine) {
        Ok(fine_psi) => omega(bank, &lambda, &fine_psi, &fine)
            .map(|w| w.sub(sigma).frobenius_norm() / sigma.frobenius_norm())
            .unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    };
    if status == Status::Converged && !(moment_residual <= opts.tol_mom && verified_residual <= opts.tol_mom) {
        status = Status::MaxIterations;
    }
    Ok(EstimationResult {
        lambda,
        moment_residual,
        verified_residual,
        phi,
        trace,
        status,
        t_reached: t,
    })
}

/// Newton on `Gamma(Phi_Lambda) = Sigma` in the original coordinates with a
/// forward-difference Jacobian. Removes the error that the normalization
/// `T = Sigma^{-1/2}` amplifies when `Sigma` is badly conditioned.
fn polish(
    bank: &FilterBank,
    basis: &RangeGammaBasis,
    sigma: &HermMat,
    psi: &SpectrumInput,
    opts: &EstimationOptions,
    lambda: HermMat,
    trace: &mut Vec<TraceRecord>,
) -> HermMat {
    let grid = &opts.grid;
    let sigma_norm = sigma.frobenius_norm();
    let eval = |x: &HermMat| omega(bank, x, psi, grid).ok().map(|w| basis.coefficients(&w.sub(sigma)));
    let mut lambda = lambda;
    let Some(mut r) = eval(&lambda) else {
        return lambda;
    };
    let elements = basis.elements();
    for k in 0..8 {
        if r.norm() / sigma_norm <= opts.tol_mom * 1e-3 {
            break;
        }
        let h = 1e-7 * lambda.frobenius_norm();
        let mut jac = DMatrix::zeros(r.len(), elements.len());
        for (j, e) in elements.iter().enumerate() {
            let Some(rp) = eval(&lambda.axpy(h, e)) else {
                return lambda;
            };
            jac.set_column(j, &((rp - &r) / h));
        }
        let Some(dx) = jac.lu().solve(&(-&r)) else {
            return lambda;
        };
        let mut step = 1.0;
        let mut moved = false;
        while step > 1e-6 {
            let cand = lambda.add(&basis.from_coefficients(&(&dx * step)));
            if let Some(rc) = eval(&cand) {
                if rc.norm() < (1.0 - 1e-4 * step) * r.norm() {
                    trace.push(TraceRecord {
                        t: 1.0,
                        k,
                        step_norm: cand.sub(&lambda).frobenius_norm() / lambda.frobenius_norm(),
                        residual: rc.norm() / sigma_norm,
                    });
                    lambda = cand;
                    r = rc;
                    moved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    lambda
}

fn infeasible_result(n: usize) -> EstimationResult {
    EstimationResult {
        lambda: HermMat::zeros(n),
        moment_residual: f64::INFINITY,
        verified_residual: f64::INFINITY,
        phi: Vec::new(),
        trace: Vec::new(),
        status: Status::Infeasible,
        t_reached: 0.0,
    }
}

enum StageOutcome {
    Converged(HermMat),
    Failed,
    MaxIterations(HermMat),
}

struct Tracker<'a> {
    ws: &'a Workspace,
    psi: &'a [HermMat],
    opts: &'a EstimationOptions,
}

impl Tracker<'_> {
    /// Factors of `t Psi + (1 - t) I` at every node.
    fn blend_roots(&self, t: f64) -> Result<Vec<CMat>> {
        let id = HermMat::identity(self.ws.sampled.bank().m());
        self.psi
            .iter()
            .map(|s| Ok(cholesky_right(&s.scale(t).axpy(1.0 - t, &id), 0.0)?.adjoint()))
            .collect()
    }

    fn run(&self, mut lambda: HermMat, trace: &mut Vec<TraceRecord>) -> (HermMat, f64, Status) {
        let mut t = 0.0;
        let mut dt = self.opts.dt_init;
        while t < 1.0 {
            let t_next = (t + dt).min(1.0);
            let Ok(roots) = self.blend_roots(t_next) else {
                return (lambda, t, Status::HomotopyStuck);
            };
            match self.stage(&lambda, t_next, &roots, trace) {
                StageOutcome::Converged(next) => {
                    lambda = next;
                    t = t_next;
                    dt = (dt * 2.0).min(self.opts.dt_init);
                }
                StageOutcome::MaxIterations(next) if t_next >= 1.0 => {
                    return (next, t_next, Status::MaxIterations);
                }
                _ => {
                    dt *= 0.5;
                    if dt < self.opts.dt_min {
                        return (lambda, t, Status::HomotopyStuck);
                    }
                }
            }
        }
        (lambda, 1.0, Status::Converged)
    }

    /// Fixed-point iteration at one value of `t`, warm-started from `start`.
    fn stage(&self, start: &HermMat, t: f64, roots: &[CMat], trace: &mut Vec<TraceRecord>) -> StageOutcome {
        let opts = self.opts;
        let ws = self.ws;
        let margin = opts.safeguards.admissibility_margin;
        let mut lambda = start.clone();
        let mut stalled = false;
        let mut w = match ws.omega(&lambda, roots) {
            Ok(w) => Some(w),
            Err(_) => {
                stalled = true;
                None
            }
        };
        let mut last_residual = w.as_ref().map_or(f64::INFINITY, |w| ws.residual(w));
        let mut growth = 0usize;
        let mut k = 0;
        while let (Some(current), false) = (&w, k >= opts.max_iter) {
            let Ok(root) = psd_sqrt(&lambda) else {
                stalled = true;
                break;
            };
            let mut next = current.sandwich(root.as_matrix());
            if opts.safeguards.project_iterates {
                next = ws.basis.project(&next);
            }
            let step_norm =
                ws.basis.project(&next.sub(&lambda)).frobenius_norm() / ws.basis.project(&lambda).frobenius_norm();
            let admissible = margin <= 0.0 || ws.admissible(&next, margin);
            let next_w = if admissible { ws.omega(&next, roots).ok() } else { None };
            let Some(next_w) = next_w else {
                trace.push(TraceRecord {
                    t,
                    k,
                    step_norm,
                    residual: f64::INFINITY,
                });
                stalled = true;
                break;
            };
            let residual = ws.residual(&next_w);
            trace.push(TraceRecord { t, k, step_norm, residual });
            k += 1;
            lambda = next;
            w = Some(next_w);
            if step_norm <= opts.tol_fp && residual <= opts.tol_mom {
                return StageOutcome::Converged(lambda);
            }
            if residual > last_residual {
                growth += 1;
                if growth >= opts.divergence_window {
                    stalled = true;
                    break;
                }
            } else {
                growth = 0;
            }
            last_residual = residual;
        }
        if opts.safeguards.newton_corrector {
            if let Some(fixed) = self.newton_corrector(&lambda, start, t, roots, trace) {
                if let Ok(lifted) = positive_representative(ws.sampled.bank(), &ws.basis, &fixed) {
                    return StageOutcome::Converged(lifted);
                }
            }
        }
        if stalled {
            StageOutcome::Failed
        } else {
            StageOutcome::MaxIterations(lambda)
        }
    }

    /// Newton on `omega(Lambda) = I` in Range Gamma coordinates with a
    /// forward-difference Jacobian.
    fn newton_corrector(
        &self,
        lambda: &HermMat,
        start: &HermMat,
        t: f64,
        roots: &[CMat],
        trace: &mut Vec<TraceRecord>,
    ) -> Option<HermMat> {
        let ws = self.ws;
        let margin = self.opts.safeguards.admissibility_margin;
        let id = HermMat::identity(ws.basis.n());
        let eval = |x: &DVector<f64>| -> Option<(HermMat, DVector<f64>)> {
            let lam = ws.basis.from_coefficients(x);
            if !ws.admissible(&lam, margin) {
                return None;
            }
            let w = ws.omega(&lam, roots).ok()?;
            let r = ws.basis.coefficients(&w.sub(&id));
            Some((lam, r))
        };
        let candidates = [ws.basis.coefficients(lambda), ws.basis.coefficients(start)];
        for x0 in candidates {
            let mut x = x0;
            let Some((_, mut r)) = eval(&x) else { continue };
            for k in 0..50 {
                let res = r.norm() / ws.sigma_norm;
                if res <= self.opts.tol_mom * 1e-3 {
                    let lam = ws.basis.from_coefficients(&x);
                    return Some(lam);
                }
                let d = x.len();
                let h = 1e-7 * x.norm().max(1.0);
                let mut jac = DMatrix::zeros(d, d);
                let mut ok = true;
                for j in 0..d {
                    let mut xp = x.clone();
                    xp[j] += h;
                    match eval(&xp) {
                        Some((_, rp)) => jac.set_column(j, &((rp - &r) / h)),
                        None => {
                            ok = false;
                            break;
                        }
                    }
                }
                if !ok {
                    break;
                }
                let Some(dx) = jac.lu().solve(&(-&r)) else { break };
                let mut step = 1.0;
                let mut moved = false;
                while step > 1e-6 {
                    let cand = &x + &dx * step;
                    if let Some((_, rc)) = eval(&cand) {
                        if rc.norm() < (1.0 - 1e-4 * step) * r.norm() {
                            trace.push(TraceRecord {
                                t,
                                k,
                                step_norm: (&dx * step).norm() / x.norm().max(1e-300),
                                residual: rc.norm() / ws.sigma_norm,
                            });
                            x = cand;
                            r = rc;
                            moved = true;
                            break;
                        }
                    }
                    step *= 0.5;
                }
                if !moved {
                    break;
                }
            }
        }
        None
    }
}

/// A positive definite matrix with the same `G* Lambda G` as the admissible
/// `lambda`.
///
/// Starts from the rank-`m` representative `P B (B*PB)^{-1} B* P` and adds
/// `s K`, where `K` annihilates `G` and is the identity on the kernel of
/// `B* P`; a positive `s` making the sum definite is then searched for. The
/// Range Gamma component of the result equals that of `lambda`.
pub fn positive_representative(bank: &FilterBank, basis: &RangeGammaBasis, lambda: &HermMat) -> Result<HermMat> {
    if lambda.min_eigenvalue()? > 0.0 {
        return Ok(lambda.clone());
    }
    let sf = factor_unchecked(bank, lambda)?;
    let (n, m) = (bank.n(), bank.m());
    let bp = bank.b().adjoint() * sf.p().as_matrix();
    let h = sf.p().sandwich_adj(bank.b());
    let low_rank = h.inverse_pd()?.sandwich(&bp.adjoint());
    let not_definite = Error::NotPd { min_eig: lambda.min_eigenvalue()? };
    if n == m {
        return Err(not_definite);
    }
    // orthonormal basis of ker(B* P)
    let (_, vecs) = eig_hermitian(&HermMat::symmetrized(bp.adjoint() * &bp))?;
    let kernel = vecs.columns(0, n - m).into_owned();
    let elements = basis.complement_elements();
    let k = elements.len();
    let system = DMatrix::from_fn(k, k, |r, c| {
        crate::linalg::to_real_coords(&elements[c].sandwich_adj(&kernel)).values()[r]
    });
    let target = DVector::from_vec(crate::linalg::to_real_coords(&HermMat::identity(n - m)).values().to_vec());
    let coeffs = system.lu().solve(&target).ok_or_else(|| not_definite.clone())?;
    let shift = elements
        .iter()
        .zip(coeffs.iter())
        .fold(HermMat::zeros(n), |acc, (e, &x)| acc.axpy(x, e));
    // Restore the Range Gamma component lost to rounding in the factorization.
    let shift = shift.sub(&basis.project(&shift));
    let low_rank = low_rank.add(&basis.project(lambda).sub(&basis.project(&low_rank)));
    let scale = low_rank.frobenius_norm().max(1e-300) / shift.frobenius_norm().max(1e-300);
    let mut best: Option<(f64, HermMat)> = None;
    for i in -40..=40 {
        let s = scale * 10f64.powf(i as f64 / 8.0);
        let cand = low_rank.axpy(s, &shift);
        let e = cand.min_eigenvalue()? / cand.frobenius_norm();
        if best.as_ref().is_none_or(|(b, _)| e > *b) {
            best = Some((e, cand));
        }
    }
    match best {
        Some((e, cand)) if e > 1e-10 => Ok(cand),
        _ => Err(not_definite),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter_bank::real_matrix;
    use crate::instances::{random_admissible, random_bank, random_hermitian, random_trig_prior};
    use crate::linalg::{c, cr};
    use crate::moment_map::{gamma, TrigPolynomial};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn opts(grid: usize) -> EstimationOptions {
        EstimationOptions {
            grid: CircleGrid::new(grid).unwrap(),
            ..Default::default()
        }
    }

    fn rel(a: &HermMat, b: &HermMat) -> f64 {
        a.sub(b).frobenius_norm() / b.frobenius_norm()
    }

    fn scalar_trig(p0: f64, p1: f64) -> SpectrumInput {
        let coeffs = vec![real_matrix(1, 1, &[p0]), real_matrix(1, 1, &[p1])];
        SpectrumInput::TrigPolynomial(TrigPolynomial::new(coeffs).unwrap())
    }

    #[test]
    fn memoryless_maxent_inverts_sigma() {
        let bank = FilterBank::new(CMat::zeros(2, 2), crate::linalg::eye(2)).unwrap();
        let sigma = HermMat::new(CMat::from_row_slice(2, 2, &[cr(2.0), c(0.5, 0.3), c(0.5, -0.3), cr(1.0)])).unwrap();
        let res = maxent_solve(&bank, &sigma, &opts(64)).unwrap();
        assert_eq!(res.status, Status::Converged);
        assert!(rel(&res.lambda, &sigma.inverse_pd().unwrap()) <= 1e-10);
    }

    #[test]
    fn scalar_maxent_is_reciprocal() {
        let bank = FilterBank::covext(1, 0);
        let res = maxent_solve(&bank, &HermMat::from_diag(&[4.0]), &opts(64)).unwrap();
        assert_eq!(res.status, Status::Converged);
        assert!((res.lambda.as_matrix()[(0, 0)].re - 0.25).abs() <= 1e-12);
    }

    #[test]
    fn white_covariances_give_identity() {
        let bank = FilterBank::covext(1, 1);
        let res = maxent_solve(&bank, &HermMat::identity(2), &opts(128)).unwrap();
        assert_eq!(res.status, Status::Converged);
        // G* G = 2 for the two-delay stack, so a flat density needs Lambda = I / 2
        assert!(rel(&res.lambda, &HermMat::scaled_identity(2, 0.5)) <= 1e-10);
        for phi in &res.phi {
            assert!((phi.as_matrix()[(0, 0)].re - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn lag_zero_estimate_with_prior() {
        // Phi = psi / lambda, so the variance constraint gives lambda = mean(psi) / C0
        let bank = FilterBank::covext(1, 0);
        let psi = scalar_trig(2.0, 0.7);
        let res = homotopy_solve(&bank, &HermMat::from_diag(&[3.0]), &psi, &opts(256)).unwrap();
        assert_eq!(res.status, Status::Converged);
        assert!((res.lambda.as_matrix()[(0, 0)].re - 2.0 / 3.0).abs() <= 1e-8);
        assert_eq!(res.t_reached, 1.0);
    }

    #[test]
    fn constant_prior_scales_the_maxent_solution() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let bank = random_bank(&mut rng, 3, 1, 0.8);
        let basis = range_basis(&bank).unwrap();
        let lambda0 = random_admissible(&mut rng, &basis);
        let grid = CircleGrid::new(256).unwrap();
        let sigma = omega_tilde(&bank, &lambda0, &grid).unwrap();
        let maxent = maxent_solve(&bank, &sigma, &opts(256)).unwrap();
        assert_eq!(maxent.status, Status::Converged);
        let scaled = homotopy_solve(&bank, &sigma, &SpectrumInput::Constant(HermMat::from_diag(&[2.5])), &opts(256)).unwrap();
        assert_eq!(scaled.status, Status::Converged);
        assert!(rel(&scaled.lambda, &maxent.lambda.scale(2.5)) <= 1e-6);
        assert!(rel(&maxent.lambda, &lambda0) <= 1e-6);
    }

    #[test]
    fn round_trip_recovers_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (n, m) in [(3usize, 1usize), (4, 2)] {
            let bank = random_bank(&mut rng, n, m, 0.8);
            let basis = range_basis(&bank).unwrap();
            let lambda0 = random_admissible(&mut rng, &basis);
            let psi = SpectrumInput::TrigPolynomial(random_trig_prior(&mut rng, m, 2, 0.2).unwrap());
            let o = opts(256);
            let sigma = omega(&bank, &lambda0, &psi, &o.grid).unwrap();
            let res = homotopy_solve(&bank, &sigma, &psi, &o).unwrap();
            assert_eq!(res.status, Status::Converged, "n={n} m={m}");
            assert!(res.moment_residual <= 1e-6 && res.verified_residual <= 1e-6);
            assert!(rel(&res.lambda, &lambda0) <= 1e-5);
            assert!(!res.trace.is_empty());
        }
    }

    #[test]
    fn infeasible_covariances_are_reported() {
        let bank = FilterBank::covext(1, 1);
        let outside = HermMat::from_diag(&[1.0, 2.0]);
        let res = maxent_solve(&bank, &outside, &opts(64)).unwrap();
        assert_eq!(res.status, Status::Infeasible);
        let indefinite = HermMat::from_real_rows(2, &[1.0, 2.0, 2.0, 1.0]).unwrap();
        assert_eq!(maxent_solve(&bank, &indefinite, &opts(64)).unwrap().status, Status::Infeasible);
    }

    #[test]
    fn realization_and_pointwise_inverse_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = CircleGrid::new(512).unwrap();
        for _ in 0..5 {
            let bank = random_bank(&mut rng, 5, 2, 0.8);
            let lambda = random_admissible(&mut rng, &range_basis(&bank).unwrap());
            let a = omega(&bank, &lambda, &SpectrumInput::identity(2), &grid).unwrap();
            let b = omega_tilde(&bank, &lambda, &grid).unwrap();
            assert!(rel(&a, &b) <= 1e-10);
        }
    }

    #[test]
    fn workspace_omega_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let grid = CircleGrid::new(256).unwrap();
        let bank = random_bank(&mut rng, 4, 2, 0.8);
        let lambda = random_admissible(&mut rng, &range_basis(&bank).unwrap());
        let psi = SpectrumInput::TrigPolynomial(random_trig_prior(&mut rng, 2, 2, 0.2).unwrap());
        let ws = Workspace::new(&bank, &HermMat::identity(4), &grid).unwrap();
        let roots: Vec<CMat> = psi
            .samples(&grid)
            .unwrap()
            .iter()
            .map(|s| cholesky_right(s, 0.0).unwrap().adjoint())
            .collect();
        let fast = ws.omega(&lambda, &roots).unwrap();
        let reference = omega(&bank, &lambda, &psi, &grid).unwrap();
        assert!(rel(&fast, &reference) <= 1e-10);
        // the forms G* Lambda G agree with direct evaluation
        let forms = ws.node_forms(&lambda);
        for k in [0, 100, 255] {
            assert!(rel(&forms[k], &lambda.sandwich_adj(ws.sampled.at(k))) <= 1e-12);
        }
    }

    #[test]
    fn dual_derivatives_match_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let grid = CircleGrid::new(256).unwrap();
        let bank = random_bank(&mut rng, 3, 2, 0.7);
        let basis = range_basis(&bank).unwrap();
        let lambda = random_admissible(&mut rng, &basis);
        let sigma = random_admissible(&mut rng, &basis);
        let ws = Workspace::new(&bank, &sigma, &grid).unwrap();
        let (grad, hess) = ws.dual_derivatives(&lambda).unwrap();
        let h = 1e-6;
        for i in 0..basis.dim() {
            let e = basis.element(i);
            let up = ws.dual_objective(&lambda.axpy(h, &e)).unwrap();
            let down = ws.dual_objective(&lambda.axpy(-h, &e)).unwrap();
            assert!(((up - down) / (2.0 * h) - grad[i]).abs() <= 1e-6, "gradient {i}");
            let (g_up, _) = ws.dual_derivatives(&lambda.axpy(h, &e)).unwrap();
            let (g_down, _) = ws.dual_derivatives(&lambda.axpy(-h, &e)).unwrap();
            let col = (g_up - g_down) / (2.0 * h);
            assert!((col - hess.column(i)).norm() <= 1e-5 * hess.norm(), "hessian column {i}");
        }
    }

    #[test]
    fn omega_tilde_is_homogeneous_of_degree_minus_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let grid = CircleGrid::new(256).unwrap();
        let bank = random_bank(&mut rng, 4, 2, 0.8);
        let lambda = random_admissible(&mut rng, &range_basis(&bank).unwrap());
        let base = omega_tilde(&bank, &lambda, &grid).unwrap();
        for s in [0.5, 2.0] {
            let scaled = omega_tilde(&bank, &lambda.scale(s), &grid).unwrap();
            assert!(rel(&scaled, &base.scale(1.0 / s)) <= 1e-10);
        }
    }

    #[test]
    fn omega_tilde_is_decreasing_along_range_directions() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let grid = CircleGrid::new(256).unwrap();
        let bank = random_bank(&mut rng, 3, 1, 0.8);
        let basis = range_basis(&bank).unwrap();
        for _ in 0..10 {
            let lambda = random_admissible(&mut rng, &basis);
            let delta = basis.project(&random_hermitian(&mut rng, 3));
            let eps = 1e-5;
            let diff = omega_tilde(&bank, &lambda.axpy(eps, &delta), &grid)
                .unwrap()
                .sub(&omega_tilde(&bank, &lambda, &grid).unwrap());
            assert!(diff.inner(&delta) < 0.0);
        }
    }

    #[test]
    fn fixed_point_step_in_the_scalar_case() {
        // omega(lambda) = c / lambda, so one step lands on c
        let bank = FilterBank::covext(1, 0);
        let grid = CircleGrid::new(64).unwrap();
        let psi = SpectrumInput::Constant(HermMat::from_diag(&[1.5]));
        let next = fixed_point_step(&bank, &HermMat::from_diag(&[4.0]), &psi, &grid).unwrap();
        assert!((next.as_matrix()[(0, 0)].re - 1.5).abs() <= 1e-12);
    }

    #[test]
    fn fixed_point_step_fixes_normalized_solutions() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let grid = CircleGrid::new(256).unwrap();
        let bank = random_bank(&mut rng, 3, 1, 0.7);
        let lambda0 = random_admissible(&mut rng, &range_basis(&bank).unwrap());
        let psi = scalar_trig(1.0, 0.3);
        let sigma = omega(&bank, &lambda0, &psi, &grid).unwrap();
        let res = homotopy_solve(&bank, &sigma, &psi, &opts(256)).unwrap();
        let (nbank, back) = normalize_problem(&bank, &sigma).unwrap();
        let lambda_n = positive_representative(&nbank, &range_basis(&nbank).unwrap(), &back.forward(&res.lambda)).unwrap();
        let next = fixed_point_step(&nbank, &lambda_n, &psi, &grid).unwrap();
        let basis_n = range_basis(&nbank).unwrap();
        assert!(rel(&basis_n.project(&next), &basis_n.project(&lambda_n)) <= 1e-6);
    }

    #[test]
    fn homotopy_density_endpoints() {
        let grid = CircleGrid::new(32).unwrap();
        let psi = scalar_trig(2.0, 0.5);
        let start = homotopy_density(&psi, 0.0, &grid).unwrap().samples(&grid).unwrap();
        let end = homotopy_density(&psi, 1.0, &grid).unwrap().samples(&grid).unwrap();
        let mid = homotopy_density(&psi, 0.25, &grid).unwrap().samples(&grid).unwrap();
        let target = psi.samples(&grid).unwrap();
        for k in 0..grid.len() {
            assert!((start[k].as_matrix()[(0, 0)].re - 1.0).abs() <= 1e-15);
            assert!(rel(&end[k], &target[k]) <= 1e-15);
            let want = 0.25 * target[k].as_matrix()[(0, 0)].re + 0.75;
            assert!((mid[k].as_matrix()[(0, 0)].re - want).abs() <= 1e-14);
        }
        let constant = homotopy_density(&SpectrumInput::Constant(HermMat::from_diag(&[3.0])), 0.5, &grid).unwrap();
        assert!(matches!(constant, SpectrumInput::Constant(ref h) if (h.trace() - 2.0).abs() < 1e-15));
        assert!(homotopy_density(&psi, 1.5, &grid).is_err());
    }

    #[test]
    fn normalization_is_a_congruence() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let grid = CircleGrid::new(256).unwrap();
        let bank = random_bank(&mut rng, 3, 2, 0.8);
        let basis = range_basis(&bank).unwrap();
        let sigma = gamma(&bank, &SpectrumInput::identity(2), &grid).unwrap();
        let (nbank, back) = normalize_problem(&bank, &sigma).unwrap();
        let white = gamma(&nbank, &SpectrumInput::identity(2), &grid).unwrap();
        assert!(rel(&white, &HermMat::identity(3)) <= 1e-10);
        assert!(rel(&back.covariance_forward(&sigma), &HermMat::identity(3)) <= 1e-12);
        let lambda = random_admissible(&mut rng, &basis);
        assert!(rel(&back.apply(&back.forward(&lambda)), &lambda) <= 1e-12);
        // G' = T G, so G'* L' G' = G* (T* L' T) G
        let g = bank.evaluate(0.3);
        let gn = nbank.evaluate(0.3);
        let lhs = back.forward(&lambda).sandwich_adj(&gn);
        assert!(rel(&lhs, &lambda.sandwich_adj(&g)) <= 1e-10);
        assert!(matches!(
            normalize_problem(&bank, &HermMat::from_diag(&[1.0, -1.0, 1.0])),
            Err(Error::NotPd { .. })
        ));
    }

    #[test]
    fn positive_representative_keeps_the_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let bank = random_bank(&mut rng, 4, 1, 0.8);
        let basis = range_basis(&bank).unwrap();
        for _ in 0..5 {
            let lambda = random_admissible(&mut rng, &basis);
            let lifted = positive_representative(&bank, &basis, &lambda).unwrap();
            assert!(lifted.min_eigenvalue().unwrap() > 0.0);
            assert!(rel(&basis.project(&lifted), &lambda) <= 1e-9);
        }
    }

    #[test]
    fn options_are_validated() {
        let mut o = EstimationOptions::default();
        assert!(o.validate().is_ok());
        o.tol_mom = 0.0;
        assert!(o.validate().is_err());
        let o = EstimationOptions {
            dt_min: 0.5,
            ..Default::default()
        };
        assert!(o.validate().is_err());
        let o = EstimationOptions {
            max_iter: 0,
            ..Default::default()
        };
        assert!(o.validate().is_err());
    }
}
