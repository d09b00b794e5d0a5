//! Stabilizing Riccati solutions and the minimum-phase spectral factor of
//! `G* Lambda G`.

use crate::error::{Error, Result};
use crate::filter_bank::{CircleGrid, FilterBank, SampledBank};
use crate::linalg::{c, cholesky_right, eye, spectral_radius, stein_solve_general, upper_triangular_inverse, CMat, HermMat};

/// Relative increment at which the Riccati iteration stops.
pub const DARE_TOL: f64 = 1e-12;
/// Iteration cap for the Riccati solver.
pub const DARE_MAX_ITER: usize = 200;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Admissibility {
    pub admissible: bool,
    pub min_eig: f64,
}

/// Grid test of `G* Lambda G > 0` on the unit circle.
pub fn lambda_admissible(bank: &FilterBank, lambda: &HermMat, grid: &CircleGrid) -> Admissibility {
    admissibility_with_margin(&bank.evaluate_grid(grid), lambda, 0.0)
}

/// As [`lambda_admissible`] on cached bank values, requiring `min_eig > margin`.
pub fn admissibility_with_margin(sampled: &SampledBank, lambda: &HermMat, margin: f64) -> Admissibility {
    let mut min_eig = f64::INFINITY;
    for g in sampled.values() {
        match lambda.sandwich_adj(g).min_eigenvalue() {
            Ok(e) => min_eig = min_eig.min(e),
            Err(_) => min_eig = f64::NAN,
        }
    }
    Admissibility {
        admissible: min_eig > margin,
        min_eig,
    }
}

fn require_admissible(sampled: &SampledBank, lambda: &HermMat) -> Result<()> {
    let n = sampled.bank().n();
    if lambda.dim() != n {
        return Err(Error::dims(format!("{n}x{n} Lambda"), lambda.dim()));
    }
    let adm = admissibility_with_margin(sampled, lambda, 0.0);
    if !adm.admissible {
        return Err(Error::NotAdmissible { min_eig: adm.min_eig });
    }
    Ok(())
}

/// Stabilizing solution of
/// `P = A*PA - A*PB (B*PB)^{-1} B*PA + Lambda`, after checking admissibility
/// on the default grid.
pub fn dare_stabilizing(bank: &FilterBank, lambda: &HermMat) -> Result<HermMat> {
    require_admissible(&bank.evaluate_grid(&CircleGrid::default()), lambda)?;
    solve_dare(bank, lambda, None)
}

/// Newton iteration on the feedback gain. Each step solves the closed-loop
/// Stein equation `P = A_K* P A_K + Lambda`. The iteration starts from
/// `start_gain` when it is stabilizing and from `K = 0` otherwise, which is
/// stabilizing because `A` is stable.
fn solve_dare(bank: &FilterBank, lambda: &HermMat, start_gain: Option<&CMat>) -> Result<HermMat> {
    let n = bank.n();
    if lambda.dim() != n {
        return Err(Error::dims(format!("{n}x{n} Lambda"), lambda.dim()));
    }
    let (a, b) = (bank.a(), bank.b());
    if let Some(gain) = start_gain {
        if let Ok(p) = newton_dare(a, b, lambda, a - b * gain) {
            return Ok(p);
        }
    }
    newton_dare(a, b, lambda, a.clone())
}

fn newton_dare(a: &CMat, b: &CMat, lambda: &HermMat, start: CMat) -> Result<HermMat> {
    let mut a_k = start;
    let mut p_prev: Option<HermMat> = None;
    for _ in 0..DARE_MAX_ITER {
        let p = match stein_solve_general(&a_k.adjoint(), lambda.as_matrix()) {
            Ok(x) => HermMat::symmetrized(x),
            Err(Error::NotStable { radius }) => {
                return Err(Error::SolverDivergence {
                    reason: format!("closed loop lost stability (radius {radius})"),
                })
            }
            Err(e) => return Err(e),
        };
        if !p.frobenius_norm().is_finite() {
            return Err(Error::SolverDivergence {
                reason: "non-finite iterate".into(),
            });
        }
        let h = p.sandwich_adj(b);
        let chol = cholesky_right(&h, 0.0).map_err(|_| Error::SolverDivergence {
            reason: "B*PB lost positive definiteness".into(),
        })?;
        let l_inv = upper_triangular_inverse(&chol);
        let gain = &l_inv * l_inv.adjoint() * b.adjoint() * p.as_matrix() * a;
        a_k = a - b * gain;
        if let Some(prev) = &p_prev {
            let step = p.sub(prev).frobenius_norm();
            if step <= DARE_TOL * p.frobenius_norm().max(1.0) {
                return Ok(p);
            }
        }
        p_prev = Some(p);
    }
    Err(Error::SolverDivergence {
        reason: format!("no convergence in {DARE_MAX_ITER} steps"),
    })
}

/// `|| P - A*PA + A*PB (B*PB)^{-1} B*PA - Lambda ||_F`.
pub fn dare_residual(bank: &FilterBank, lambda: &HermMat, p: &HermMat) -> Result<f64> {
    let (a, b) = (bank.a(), bank.b());
    let pa = p.as_matrix() * a;
    let h = p.sandwich_adj(b);
    let bpa = b.adjoint() * &pa;
    let solved = h.as_matrix().clone().lu().solve(&bpa).ok_or(Error::SolverDivergence {
        reason: "B*PB is singular".into(),
    })?;
    let r = p.as_matrix() - a.adjoint() * &pa + bpa.adjoint() * solved - lambda.as_matrix();
    Ok(r.norm())
}

/// Minimum-phase factor `W(z) = L + C_w (zI - A)^{-1} B` with `W* W = G* Lambda G`.
#[derive(Clone, Debug)]
pub struct SpectralFactor {
    bank: FilterBank,
    lambda: HermMat,
    p: HermMat,
    l: CMat,
    l_inv: CMat,
    c_w: CMat,
    a_cl: CMat,
}

impl SpectralFactor {
    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn lambda(&self) -> &HermMat {
        &self.lambda
    }

    pub fn p(&self) -> &HermMat {
        &self.p
    }

    /// Upper-triangular constant term with real positive diagonal.
    pub fn l(&self) -> &CMat {
        &self.l
    }

    pub fn c_w(&self) -> &CMat {
        &self.c_w
    }

    /// `A - B L^{-1} C_w`, the state matrix of `W^{-1}`.
    pub fn a_cl(&self) -> &CMat {
        &self.a_cl
    }

    pub fn eval_w(&self, theta: f64) -> CMat {
        &self.l + &self.c_w * self.bank.evaluate(theta)
    }

    /// `W` from a precomputed value of `G`.
    pub fn eval_w_from_g(&self, g: &CMat) -> CMat {
        &self.l + &self.c_w * g
    }

    /// `W^{-1}(z) = L^{-1} - L^{-1} C_w (zI - A_cl)^{-1} B L^{-1}`.
    pub fn eval_w_inv(&self, theta: f64) -> CMat {
        let z = c(theta.cos(), theta.sin());
        let lhs = eye(self.bank.n()) * z - &self.a_cl;
        let bl = self.bank.b() * &self.l_inv;
        let x = lhs.lu().solve(&bl).expect("closed loop is stable");
        &self.l_inv - &self.l_inv * &self.c_w * x
    }
}

/// Spectral factor of `G* Lambda G`, checking admissibility on the default grid.
pub fn spectral_factor(bank: &FilterBank, lambda: &HermMat) -> Result<SpectralFactor> {
    spectral_factor_on(&bank.evaluate_grid(&CircleGrid::default()), lambda)
}

/// As [`spectral_factor`], checking admissibility on the grid of `sampled`.
pub fn spectral_factor_on(sampled: &SampledBank, lambda: &HermMat) -> Result<SpectralFactor> {
    require_admissible(sampled, lambda)?;
    factor_unchecked(sampled.bank(), lambda)
}

pub(crate) fn factor_unchecked(bank: &FilterBank, lambda: &HermMat) -> Result<SpectralFactor> {
    factor_warm(bank, lambda, None)
}

/// Factor computed with the Riccati iteration warm-started from the gain of
/// a nearby factor.
pub(crate) fn factor_warm(bank: &FilterBank, lambda: &HermMat, near: Option<&SpectralFactor>) -> Result<SpectralFactor> {
    let gain = near.map(|sf| &sf.l_inv * &sf.c_w);
    let p = solve_dare(bank, lambda, gain.as_ref())?;
    let (a, b) = (bank.a(), bank.b());
    let l = cholesky_right(&p.sandwich_adj(b), 0.0)?;
    let l_inv = upper_triangular_inverse(&l);
    let c_w = l_inv.adjoint() * b.adjoint() * p.as_matrix() * a;
    let a_cl = a - b * &l_inv * &c_w;
    let radius = spectral_radius(&a_cl)?;
    if radius >= 1.0 {
        return Err(Error::SolverDivergence {
            reason: format!("factor is not minimum phase (closed-loop radius {radius})"),
        });
    }
    Ok(SpectralFactor {
        bank: bank.clone(),
        lambda: lambda.clone(),
        p,
        l,
        l_inv,
        c_w,
        a_cl,
    })
}

/// Largest pointwise relative residual `||G*LG - W*W|| / ||G*LG||` on the grid.
pub fn factorization_residual(sf: &SpectralFactor, sampled: &SampledBank) -> f64 {
    sampled
        .values()
        .iter()
        .map(|g| {
            let target = sf.lambda.sandwich_adj(g);
            let w = sf.eval_w_from_g(g);
            let diff = target.as_matrix() - w.adjoint() * w;
            diff.norm() / target.frobenius_norm()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filter_bank::real_matrix;
    use crate::linalg::cr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_bank(rng: &mut ChaCha8Rng, n: usize, m: usize) -> FilterBank {
        loop {
            let a = CMat::from_fn(n, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            let radius = spectral_radius(&a).unwrap();
            let a = a.scale(rng.random_range(0.2..0.9) / radius.max(1e-3));
            let b = CMat::from_fn(n, m, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
            if let Ok(bank) = FilterBank::new(a, b) {
                return bank;
            }
        }
    }

    fn random_psd_plus(rng: &mut ChaCha8Rng, n: usize) -> HermMat {
        let x = CMat::from_fn(n, n, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        HermMat::symmetrized(&x * x.adjoint() + eye(n) * cr(0.1))
    }

    #[test]
    fn admissibility_examples() {
        let bank = FilterBank::covext(1, 1);
        let grid = CircleGrid::new(64).unwrap();
        assert!(lambda_admissible(&bank, &HermMat::identity(2), &grid).admissible);
        assert!(!lambda_admissible(&bank, &HermMat::scaled_identity(2, -1.0), &grid).admissible);
        let adm = lambda_admissible(&bank, &HermMat::from_diag(&[1.0, -0.4]), &grid);
        assert!(adm.admissible);
        assert!((adm.min_eig - 0.6).abs() < 1e-14);
        let margin = admissibility_with_margin(&bank.evaluate_grid(&grid), &HermMat::from_diag(&[1.0, -0.4]), 0.7);
        assert!(!margin.admissible);
    }

    #[test]
    fn zero_state_matrix_gives_lambda() {
        let bank = FilterBank::new(CMat::zeros(3, 3), real_matrix(3, 3, &[1.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 3.0]))
            .unwrap();
        let lambda = HermMat::from_real_rows(3, &[2.0, 0.5, 0.0, 0.5, 1.0, 0.1, 0.0, 0.1, 1.5]).unwrap();
        let p = dare_stabilizing(&bank, &lambda).unwrap();
        assert!(p.sub(&lambda).frobenius_norm() <= 1e-12);
    }

    #[test]
    fn invertible_b_gives_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..5 {
            let bank = random_bank(&mut rng, 3, 3);
            let lambda = random_psd_plus(&mut rng, 3);
            let p = dare_stabilizing(&bank, &lambda).unwrap();
            assert!(p.sub(&lambda).frobenius_norm() <= 1e-12 * lambda.frobenius_norm().max(1.0));
        }
    }

    #[test]
    fn scalar_closed_form() {
        let bank = FilterBank::new(real_matrix(1, 1, &[0.5]), real_matrix(1, 1, &[1.0])).unwrap();
        let sf = spectral_factor(&bank, &HermMat::identity(1)).unwrap();
        assert!((sf.p().as_matrix()[(0, 0)] - cr(1.0)).norm() < 1e-14);
        assert!((sf.l()[(0, 0)] - cr(1.0)).norm() < 1e-14);
        assert!((sf.c_w()[(0, 0)] - cr(0.5)).norm() < 1e-14);
        for &theta in &[0.0, 0.9, -2.0, 3.1] {
            let z = c(f64::cos(theta), f64::sin(theta));
            let w = z / (z - 0.5);
            assert!((sf.eval_w(theta)[(0, 0)] - w).norm() < 1e-13);
            assert!((sf.eval_w_inv(theta)[(0, 0)] - (z - 0.5) / z).norm() < 1e-13);
            let g = bank.evaluate(theta)[(0, 0)];
            assert!((w.norm_sqr() - g.norm_sqr()).abs() < 1e-13);
        }
    }

    #[test]
    fn constant_factor_is_cholesky() {
        let bank = FilterBank::new(CMat::zeros(2, 2), eye(2)).unwrap();
        let q = HermMat::from_real_rows(2, &[4.0, 1.0, 1.0, 3.0]).unwrap();
        let sf = spectral_factor(&bank, &q).unwrap();
        let chol = cholesky_right(&q, 0.0).unwrap();
        let inv = upper_triangular_inverse(&chol);
        for &theta in &[0.0, 1.0, -2.0] {
            assert!((sf.eval_w(theta) - &chol).norm() < 1e-14);
            assert!((sf.eval_w_inv(theta) - &inv).norm() < 1e-14);
        }
    }

    #[test]
    fn random_factorizations() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let grid = CircleGrid::new(512).unwrap();
        for (n, m) in [(2, 1), (3, 2), (5, 2), (6, 3), (8, 1)] {
            let bank = random_bank(&mut rng, n, m);
            // indefinite Lambda: a PD part shifted by a random Hermitian direction
            let base = random_psd_plus(&mut rng, n);
            let lambda = base.axpy(-0.05, &random_psd_plus(&mut rng, n));
            let sampled = bank.evaluate_grid(&grid);
            if !admissibility_with_margin(&sampled, &lambda, 0.0).admissible {
                continue;
            }
            let sf = spectral_factor(&bank, &lambda).unwrap();
            let res = dare_residual(&bank, &lambda, sf.p()).unwrap();
            assert!(res <= 1e-10 * lambda.frobenius_norm().max(1.0), "dare residual {res:e}");
            assert!(spectral_radius(sf.a_cl()).unwrap() < 1.0);
            assert!(factorization_residual(&sf, &sampled) <= 1e-8);
            for &theta in &[0.3, -1.7, 2.9] {
                let prod = sf.eval_w(theta) * sf.eval_w_inv(theta);
                assert!((prod - eye(m)).norm() < 1e-10);
            }
            let l = sf.l();
            for i in 0..m {
                assert!(l[(i, i)].im == 0.0 && l[(i, i)].re > 0.0);
                for j in 0..i {
                    assert_eq!(l[(i, j)], cr(0.0));
                }
            }
        }
    }

    #[test]
    fn scaling_covariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let bank = random_bank(&mut rng, 4, 2);
        let lambda = random_psd_plus(&mut rng, 4);
        let base = spectral_factor(&bank, &lambda).unwrap();
        for &s in &[0.5, 3.0] {
            let scaled = spectral_factor(&bank, &lambda.scale(s)).unwrap();
            assert!(scaled.p().sub(&base.p().scale(s)).frobenius_norm() <= 1e-10 * base.p().frobenius_norm() * s);
            let dw = scaled.eval_w(0.4) - base.eval_w(0.4) * cr(s.sqrt());
            assert!(dw.norm() <= 1e-10 * base.eval_w(0.4).norm() * s.sqrt());
        }
    }

    #[test]
    fn continuity_in_lambda() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let bank = random_bank(&mut rng, 4, 2);
        let lambda = random_psd_plus(&mut rng, 4);
        let x = CMat::from_fn(4, 4, |_, _| c(rng.random::<f64>() - 0.5, rng.random::<f64>() - 0.5));
        let delta = HermMat::symmetrized(&x + x.adjoint());
        let p0 = dare_stabilizing(&bank, &lambda).unwrap();
        let dist = |eps: f64| {
            let p = dare_stabilizing(&bank, &lambda.axpy(eps, &delta)).unwrap();
            p.sub(&p0).frobenius_norm()
        };
        let k = dist(1e-3) / 1e-3;
        for eps in [1e-4, 1e-5] {
            assert!(dist(eps) <= 1.5 * k * eps);
        }
    }

    #[test]
    fn inadmissible_lambda_fails() {
        let bank = FilterBank::covext(1, 1);
        assert!(matches!(
            spectral_factor(&bank, &HermMat::scaled_identity(2, -1.0)),
            Err(Error::NotAdmissible { .. })
        ));
        assert!(matches!(
            dare_stabilizing(&bank, &HermMat::from_diag(&[0.2, -0.4])),
            Err(Error::NotAdmissible { .. })
        ));
    }
}
