//! Filter banks `G(z) = (zI - A)^{-1} B` and their evaluation on the unit circle.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{c, cr, eye, numerical_rank, spectral_radius, CMat};

/// Relative singular-value tolerance used for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Default number of quadrature nodes on the unit circle.
pub const DEFAULT_GRID: usize = 2048;

/// A validated filter bank: `A` Schur stable, `B` of full column rank and
/// `(A, B)` reachable.
#[derive(Clone, Debug, PartialEq)]
pub struct FilterBank {
    a: CMat,
    b: CMat,
}

impl FilterBank {
    pub fn new(a: CMat, b: CMat) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || n == 0 {
            return Err(Error::dims("nonempty square A", format!("{}x{}", a.nrows(), a.ncols())));
        }
        if b.nrows() != n {
            return Err(Error::dims(format!("B with {n} rows"), format!("{} rows", b.nrows())));
        }
        let m = b.ncols();
        if m == 0 || m > n {
            return Err(Error::dims(format!("1 <= m <= {n}"), m));
        }
        let radius = spectral_radius(&a)?;
        if radius >= 1.0 {
            return Err(Error::NotSchurStable { radius });
        }
        let rank = numerical_rank(&b, RANK_TOL);
        if rank < m {
            return Err(Error::RankDeficientB { rank, cols: m });
        }
        let rank = numerical_rank(&controllability_matrix(&a, &b), RANK_TOL);
        if rank < n {
            return Err(Error::NotReachable { rank, n });
        }
        Ok(FilterBank { a, b })
    }

    /// Companion-form bank whose transfer function stacks the delays
    /// `z^{-p-1} I, ..., z^{-1} I`.
    pub fn covext(m: usize, p: usize) -> Self {
        assert!(m >= 1, "block size must be positive");
        let n = m * (p + 1);
        let mut a = CMat::zeros(n, n);
        for blk in 0..p {
            for i in 0..m {
                a[(blk * m + i, (blk + 1) * m + i)] = cr(1.0);
            }
        }
        let mut b = CMat::zeros(n, m);
        for i in 0..m {
            b[(p * m + i, i)] = cr(1.0);
        }
        FilterBank { a, b }
    }

    /// Bank obtained by the state change `x' = T x`. The caller supplies `T^{-1}`.
    pub(crate) fn similarity(&self, t: &CMat, t_inv: &CMat) -> FilterBank {
        FilterBank {
            a: t * &self.a * t_inv,
            b: t * &self.b,
        }
    }

    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &CMat {
        &self.a
    }

    pub fn b(&self) -> &CMat {
        &self.b
    }

    /// `Some((m, p))` when the bank is exactly the companion pair of [`FilterBank::covext`].
    pub fn covext_shape(&self) -> Option<(usize, usize)> {
        let (n, m) = (self.n(), self.m());
        if n % m != 0 {
            return None;
        }
        let p = n / m - 1;
        let reference = FilterBank::covext(m, p);
        (reference == *self).then_some((m, p))
    }

    /// `G(e^{j theta}) = (e^{j theta} I - A)^{-1} B`.
    pub fn evaluate(&self, theta: f64) -> CMat {
        let z = c(theta.cos(), theta.sin());
        let lhs = eye(self.n()) * z - &self.a;
        lhs.lu().solve(&self.b).expect("zI - A is invertible on the unit circle for stable A")
    }

    pub fn evaluate_grid(&self, grid: &CircleGrid) -> SampledBank {
        let values = grid.angles().map(|theta| self.evaluate(theta)).collect();
        SampledBank {
            bank: self.clone(),
            grid: grid.clone(),
            values,
        }
    }
}

/// `[B, AB, ..., A^{n-1} B]`
pub fn controllability_matrix(a: &CMat, b: &CMat) -> CMat {
    let n = a.nrows();
    let m = b.ncols();
    let mut out = CMat::zeros(n, n * m);
    let mut block = b.clone();
    for k in 0..n {
        out.view_mut((0, k * m), (n, m)).copy_from(&block);
        block = a * block;
    }
    out
}

/// Uniform grid `theta_k = -pi + 2 pi k / N` with weight `1/N` per node.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CircleGrid {
    size: usize,
}

impl CircleGrid {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 || !size.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "grid size must be a power of two >= 2, got {size}"
            )));
        }
        Ok(CircleGrid { size })
    }

    pub fn len(&self) -> usize {
        self.size
    }

    pub fn is_empty(&self) -> bool {
        self.size == 0
    }

    pub fn angle(&self, k: usize) -> f64 {
        -PI + 2.0 * PI * k as f64 / self.size as f64
    }

    pub fn angles(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.size).map(|k| self.angle(k))
    }

    pub fn weight(&self) -> f64 {
        1.0 / self.size as f64
    }

    /// Grid with twice as many nodes.
    pub fn refined(&self) -> CircleGrid {
        CircleGrid { size: 2 * self.size }
    }

    /// Quadrature of a matrix-valued integrand: the pairwise-summed grid mean.
    pub fn mean<F>(&self, rows: usize, cols: usize, term: F) -> CMat
    where
        F: Fn(usize) -> CMat,
    {
        crate::linalg::pairwise_sum(self.size, rows, cols, &term).scale(self.weight())
    }
}

impl Default for CircleGrid {
    fn default() -> Self {
        CircleGrid { size: DEFAULT_GRID }
    }
}

/// A bank together with its cached values on a grid.
#[derive(Clone, Debug)]
pub struct SampledBank {
    bank: FilterBank,
    grid: CircleGrid,
    values: Vec<CMat>,
}

impl SampledBank {
    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn grid(&self) -> &CircleGrid {
        &self.grid
    }

    pub fn values(&self) -> &[CMat] {
        &self.values
    }

    pub fn at(&self, k: usize) -> &CMat {
        &self.values[k]
    }

    /// Smallest singular value of `G` over the grid.
    pub fn min_singular_value(&self) -> f64 {
        self.values
            .iter()
            .map(|g| crate::linalg::singular_values(g).last().copied().unwrap_or(0.0))
            .fold(f64::INFINITY, f64::min)
    }
}

/// Parses a dense real matrix into complex storage (test and example helper).
pub fn real_matrix(rows: usize, cols: usize, data: &[f64]) -> CMat {
    DMatrix::from_row_iterator(rows, cols, data.iter().map(|&x| cr(x)))
}
