//! Seeded random problem instances shared by the command line, the examples
//! and the test suites.

use rand::Rng;

use crate::error::Result;
use crate::filter_bank::FilterBank;
use crate::linalg::{c, cr, eye, spectral_radius, CMat, HermMat};
use crate::moment_map::{RangeGammaBasis, RationalFactor, TrigPolynomial};

pub fn random_complex<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> CMat {
    CMat::from_fn(rows, cols, |_, _| c(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0))
}

pub fn random_hermitian<R: Rng>(rng: &mut R, n: usize) -> HermMat {
    let x = random_complex(rng, n, n);
    HermMat::symmetrized((&x + x.adjoint()).scale(0.5))
}

/// `X X* / n + floor I` for a random square `X`.
pub fn random_pd<R: Rng>(rng: &mut R, n: usize, floor: f64) -> HermMat {
    let x = random_complex(rng, n, n);
    HermMat::symmetrized(&x * x.adjoint() / cr(n as f64) + eye(n) * cr(floor))
}

/// Random square matrix rescaled to the given spectral radius.
pub fn random_stable<R: Rng>(rng: &mut R, n: usize, radius: f64) -> CMat {
    loop {
        let a = random_complex(rng, n, n);
        let r = spectral_radius(&a).unwrap_or(0.0);
        if r > 1e-3 {
            return a * cr(radius / r);
        }
    }
}

/// Random valid bank with spectral radius drawn from `[0.2, max_radius)`.
pub fn random_bank<R: Rng>(rng: &mut R, n: usize, m: usize, max_radius: f64) -> FilterBank {
    loop {
        let radius = rng.random_range(0.2..max_radius);
        let a = random_stable(rng, n, radius);
        let b = random_complex(rng, n, m);
        if let Ok(bank) = FilterBank::new(a, b) {
            return bank;
        }
    }
}

/// Admissible element of Range Gamma: the projection of a random positive
/// definite matrix. Projection leaves `G* Lambda G` unchanged.
pub fn random_admissible<R: Rng>(rng: &mut R, basis: &RangeGammaBasis) -> HermMat {
    basis.project(&random_pd(rng, basis.n(), 0.2))
}

/// Moving-average coefficients `N_0, ..., N_q` with `N_0 = I + noise`.
pub fn random_ma<R: Rng>(rng: &mut R, m: usize, q: usize, scale: f64) -> Vec<CMat> {
    (0..=q)
        .map(|k| {
            let noise = random_complex(rng, m, m) * cr(scale);
            if k == 0 {
                eye(m) + noise
            } else {
                noise
            }
        })
        .collect()
}

/// Positive definite trigonometric polynomial `N N* + floor I` for a random
/// moving-average `N` of degree `q`.
pub fn random_trig_prior<R: Rng>(rng: &mut R, m: usize, q: usize, floor: f64) -> Result<TrigPolynomial> {
    let n = random_ma(rng, m, q, 0.5);
    trig_from_ma(&n, floor)
}

/// Coefficients of `N(e^{jt}) N(e^{jt})* + floor I` for `N(z) = sum_k N_k z^{-k}`.
pub fn trig_from_ma(n: &[CMat], floor: f64) -> Result<TrigPolynomial> {
    let m = n[0].nrows();
    let coeffs = (0..n.len())
        .map(|d| {
            let mut p = CMat::zeros(m, m);
            for k in 0..n.len() - d {
                p += &n[k] * n[k + d].adjoint();
            }
            if d == 0 {
                p += eye(m) * cr(floor);
                p = HermMat::symmetrized(p).into_matrix();
            }
            p
        })
        .collect();
    TrigPolynomial::new(coeffs)
}

/// Stable square factor `D + C (zI - A)^{-1} B` with `k` states.
pub fn random_factor<R: Rng>(rng: &mut R, m: usize, k: usize) -> Result<RationalFactor> {
    let radius = rng.random_range(0.2..0.8);
    let a = random_stable(rng, k, radius);
    let b = random_complex(rng, k, m);
    let cm = random_complex(rng, m, k) * cr(0.5);
    let d = eye(m) + random_complex(rng, m, m) * cr(0.3);
    RationalFactor::new(a, b, cm, d)
}
