//! Plain fixed-point steps on a scalar covariance extension problem,
//! normalized to `Sigma = I` and started from a perturbed solution.

use gmspec::estimator::{fixed_point_step, homotopy_solve, normalize_problem, omega, EstimationOptions};
use gmspec::filter_bank::real_matrix;
use gmspec::linalg::HermMat;
use gmspec::moment_map::TrigPolynomial;
use gmspec::{CircleGrid, FilterBank, SpectrumInput};

fn main() -> gmspec::Result<()> {
    let bank = FilterBank::covext(1, 2);
    let grid = CircleGrid::new(512)?;
    let psi = SpectrumInput::TrigPolynomial(TrigPolynomial::new(vec![real_matrix(1, 1, &[1.5]), real_matrix(1, 1, &[0.4])])?);
    let sigma = HermMat::from_real_rows(3, &[1.0, 0.4, 0.1, 0.4, 1.0, 0.4, 0.1, 0.4, 1.0])?;

    let opts = EstimationOptions {
        grid: grid.clone(),
        ..Default::default()
    };
    let reference = homotopy_solve(&bank, &sigma, &psi, &opts)?;
    println!("homotopy: {:?}, residual {:.3e}", reference.status, reference.moment_residual);

    let (normalized, back) = normalize_problem(&bank, &sigma)?;
    let identity = HermMat::identity(bank.n());
    let solution = back.forward(&reference.lambda);
    let mut lambda = solution.axpy(0.05, &identity);
    for k in 0..8 {
        let residual = omega(&normalized, &lambda, &psi, &grid)?.sub(&identity).frobenius_norm() / identity.frobenius_norm();
        println!("step {k}: moment residual {residual:.3e}");
        lambda = fixed_point_step(&normalized, &lambda, &psi, &grid)?;
    }
    Ok(())
}
