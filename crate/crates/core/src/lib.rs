//! Spectral estimation with filter banks: moment maps, Riccati spectral
//! factorization, the homotopy estimator and covariance extension.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod covext;
pub mod error;
pub mod filter_bank;
pub mod instances;
pub mod linalg;
pub mod moment_map;
pub mod riccati;
pub mod estimator;

pub use error::{Error, Result};
pub use filter_bank::{CircleGrid, FilterBank, SampledBank};
pub use linalg::{CMat, HermMat};
pub use moment_map::{gamma, gamma_exact, range_basis, RangeGammaBasis, RationalFactor, SpectrumInput};
