//! Covariance extension with a moving-average prior: the normalized
//! polynomial factor, its ARMA model and the recovered lags.

use gmspec::covext::{arma_from_solution, covext_solve, CovSequence, MatrixPolynomial};
use gmspec::estimator::EstimationOptions;
use gmspec::filter_bank::real_matrix;
use gmspec::{CircleGrid, RationalFactor, SpectrumInput};

fn main() -> gmspec::Result<()> {
    let seq = CovSequence::new(vec![
        real_matrix(1, 1, &[1.0]),
        real_matrix(1, 1, &[0.6]),
        real_matrix(1, 1, &[0.2]),
    ])?;
    let ma = MatrixPolynomial::new(vec![real_matrix(1, 1, &[1.0]), real_matrix(1, 1, &[-0.4])])?;
    let psi = SpectrumInput::RationalFactor(RationalFactor::from_ma(ma.coeffs())?);
    let opts = EstimationOptions {
        grid: CircleGrid::new(1024)?,
        ..Default::default()
    };

    let sol = covext_solve(&seq, &psi, &opts)?;
    println!("status: {:?}, max lag deviation {:.3e}", sol.result.status, sol.max_deviation);
    if let Some(factor) = &sol.factor {
        println!("D root radius: {:.4} (Schur: {})", factor.d.root_radius()?, factor.d.is_schur());
        let arma = arma_from_solution(factor, &ma)?;
        for (k, c) in arma.ar.coeffs().iter().enumerate() {
            println!("AR[{k}] = {:.6}", c[(0, 0)].re);
        }
        for (k, c) in arma.ma.coeffs().iter().enumerate() {
            println!("MA[{k}] = {:.6}", c[(0, 0)].re);
        }
    }
    Ok(())
}
