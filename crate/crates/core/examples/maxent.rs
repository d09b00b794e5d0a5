//! Maximum-entropy solution (`Psi = I`) for a covariance generated by a
//! known density.

use gmspec::estimator::{maxent_solve, EstimationOptions};
use gmspec::instances::{random_bank, random_factor};
use gmspec::{gamma_exact, CircleGrid};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gmspec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let bank = random_bank(&mut rng, 6, 2, 0.8);
    let sigma = gamma_exact(&bank, &random_factor(&mut rng, 2, 1)?)?;
    let opts = EstimationOptions {
        grid: CircleGrid::new(1024)?,
        ..Default::default()
    };
    let result = maxent_solve(&bank, &sigma, &opts)?;
    println!("status: {:?}", result.status);
    println!("moment residual: {:.3e} (verified {:.3e})", result.moment_residual, result.verified_residual);
    println!("Phi at theta = 0: {:.4}", result.phi[opts.grid.len() / 2].as_matrix());
    Ok(())
}
