//! Round trip: `Sigma = omega(Lambda_0)` for a random admissible `Lambda_0`
//! and a trigonometric prior, then recover `Lambda_0` by homotopy.

use gmspec::estimator::{homotopy_solve, omega, EstimationOptions};
use gmspec::instances::{random_admissible, random_bank, random_trig_prior};
use gmspec::{range_basis, CircleGrid, SpectrumInput};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gmspec::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let bank = random_bank(&mut rng, 8, 2, 0.8);
    let basis = range_basis(&bank)?;
    let psi = SpectrumInput::TrigPolynomial(random_trig_prior(&mut rng, 2, 2, 0.5)?);
    let grid = CircleGrid::new(1024)?;
    let lambda0 = random_admissible(&mut rng, &basis);
    let sigma = omega(&bank, &lambda0, &psi, &grid)?;

    let opts = EstimationOptions {
        grid,
        ..Default::default()
    };
    let result = homotopy_solve(&bank, &sigma, &psi, &opts)?;
    let err = result.lambda.sub(&basis.project(&lambda0)).frobenius_norm() / lambda0.frobenius_norm();
    println!("status: {:?} at t = {}", result.status, result.t_reached);
    println!("iterations: {}", result.trace.len());
    println!("moment residual: {:.3e}, verified: {:.3e}", result.moment_residual, result.verified_residual);
    println!("relative error in Lambda: {err:.3e}");
    Ok(())
}
