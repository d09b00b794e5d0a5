//! Spectral factorization `G* Lambda G = W* W` of a random admissible `Lambda`.

use gmspec::instances::{random_admissible, random_bank};
use gmspec::riccati::{dare_residual, factorization_residual, spectral_factor};
use gmspec::{range_basis, CircleGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gmspec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let bank = random_bank(&mut rng, 6, 2, 0.8);
    let basis = range_basis(&bank)?;
    let lambda = random_admissible(&mut rng, &basis);

    let sf = spectral_factor(&bank, &lambda)?;
    let grid = CircleGrid::new(2048)?;
    let sampled = bank.evaluate_grid(&grid);
    println!("n = {}, m = {}", bank.n(), bank.m());
    println!("DARE residual:          {:.3e}", dare_residual(&bank, &lambda, sf.p())?);
    println!("factorization residual: {:.3e}", factorization_residual(&sf, &sampled));
    let radius = gmspec::linalg::eigenvalues(sf.a_cl())?.iter().map(|z| z.norm()).fold(0.0, f64::max);
    println!("spectral radius of A_cl: {radius:.6}");
    Ok(())
}
