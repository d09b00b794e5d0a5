//! The moment map `Gamma`: quadrature against the Stein solution, and the
//! dimension of its range.

use gmspec::instances::{random_bank, random_factor};
use gmspec::{gamma, gamma_exact, range_basis, CircleGrid, SpectrumInput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gmspec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let bank = random_bank(&mut rng, 5, 2, 0.85);
    let factor = random_factor(&mut rng, 2, 2)?;

    let exact = gamma_exact(&bank, &factor)?;
    for size in [64, 256, 1024, 2048] {
        let grid = CircleGrid::new(size)?;
        let quad = gamma(&bank, &SpectrumInput::RationalFactor(factor.clone()), &grid)?;
        let err = quad.sub(&exact).frobenius_norm() / exact.frobenius_norm();
        println!("N = {size:5}: relative quadrature error {err:.3e}");
    }

    let basis = range_basis(&bank)?;
    let (n, m) = (bank.n(), bank.m());
    println!("dim Range Gamma = {} (m(2n-m) = {})", basis.dim(), m * (2 * n - m));
    Ok(())
}
