//! Finite Markov chains: stochastic matrices, invariant laws, the gap
//! transform `Q = sum_l mu(l) P^l` and subsampled simulation.

mod gap;
mod simulate;

use nalgebra::{DMatrix, DVector};

pub use gap::{GapDistribution, DEFAULT_TAIL_TOL, PMF_SUM_TOL};
pub use simulate::{sample_until_all_states, simulate_subsampled, ConditionedSample, InitialState};

use crate::error::{Error, Result};
use crate::graph::SupportGraph;
use crate::linalg::{self, DenseMatrix};

/// Row-sum tolerance of a [`StochasticMatrix`].
pub const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic `N x N` matrix, `N >= 2`.
#[derive(Clone, Debug, PartialEq)]
pub struct StochasticMatrix(DenseMatrix);

impl StochasticMatrix {
    pub fn new(m: DenseMatrix) -> Result<Self> {
        Self::with_tolerance(m, ROW_SUM_TOL)
    }

    /// Like [`StochasticMatrix::new`] with a custom row-sum tolerance.
    pub fn with_tolerance(m: DenseMatrix, row_tol: f64) -> Result<Self> {
        let n = linalg::ensure_square(&m)?;
        linalg::ensure_finite(&m)?;
        if n < 2 {
            return Err(Error::NotStochastic(format!(
                "need at least 2 states, got {n}"
            )));
        }
        for i in 0..n {
            if let Some(j) = (0..n).find(|&j| m[(i, j)] < 0.0) {
                return Err(Error::NotStochastic(format!(
                    "negative entry {} at ({}, {})",
                    m[(i, j)],
                    i + 1,
                    j + 1
                )));
            }
            let s = m.row(i).sum();
            if (s - 1.0).abs() > row_tol {
                return Err(Error::NotStochastic(format!("row {} sums to {s}", i + 1)));
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        Self::new(linalg::from_rows(rows)?)
    }

    pub fn identity(n: usize) -> Result<Self> {
        Self::new(DMatrix::identity(n, n))
    }

    pub fn n_states(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DenseMatrix {
        &self.0
    }

    pub fn into_inner(self) -> DenseMatrix {
        self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Positions with a strictly positive entry.
    pub fn positive_entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.n_states();
        (0..n).flat_map(move |i| {
            (0..n)
                .filter(move |&j| self.0[(i, j)] > 0.0)
                .map(move |j| (i, j))
        })
    }

    pub(crate) fn graph(&self) -> SupportGraph {
        SupportGraph::new(self.n_states(), self.positive_entries())
    }

    pub fn is_irreducible(&self) -> bool {
        self.graph().strongly_connected()
    }

    /// Period of an irreducible chain; `None` when reducible.
    pub fn period(&self) -> Option<usize> {
        self.graph().period()
    }
}

impl AsRef<DenseMatrix> for StochasticMatrix {
    fn as_ref(&self) -> &DenseMatrix {
        &self.0
    }
}

/// Unique invariant law of an irreducible aperiodic chain.
///
/// Solves `pi^T (P - I) = 0` with one equation swapped for `sum(pi) = 1`.
pub fn stationary_distribution(p: &StochasticMatrix) -> Result<DVector<f64>> {
    match p.period() {
        None => Err(Error::Reducible),
        Some(1) => invariant_distribution(p),
        Some(d) => Err(Error::Periodic(d)),
    }
}

/// Unique invariant law of an irreducible chain, periodic or not.
pub fn invariant_distribution(p: &StochasticMatrix) -> Result<DVector<f64>> {
    if !p.is_irreducible() {
        return Err(Error::Reducible);
    }
    let n = p.n_states();
    let mut a = p.matrix().transpose() - DMatrix::<f64>::identity(n, n);
    a.row_mut(n - 1).fill(1.0);
    let mut b = DVector::zeros(n);
    b[n - 1] = 1.0;
    let pi = a
        .lu()
        .solve(&b)
        .ok_or_else(|| Error::Singular("stationary system".into()))?;
    if pi.iter().any(|&x| !(x > 0.0)) {
        return Err(Error::Numerical(format!(
            "stationary solve produced a non-positive entry: {pi:?}"
        )));
    }
    let total = pi.sum();
    Ok(pi / total)
}

/// `Q = sum_{l=0}^{L} mu(l) P^l`, with `L` the truncation level of
/// [`GapDistribution::truncated_pmf`]. Rows are renormalized only when the
/// truncated mass makes them drift by more than `tail_tol`.
pub fn gap_transform(
    p: &StochasticMatrix,
    mu: &GapDistribution,
    tail_tol: f64,
) -> Result<StochasticMatrix> {
    if !(tail_tol > 0.0 && tail_tol.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "tail_tol must be positive, got {tail_tol}"
        )));
    }
    let n = p.n_states();
    let weights = mu.truncated_pmf(tail_tol);
    let mut q = DMatrix::zeros(n, n);
    let mut power = DMatrix::<f64>::identity(n, n);
    for (l, &w) in weights.iter().enumerate() {
        if l > 0 {
            power = &power * p.matrix();
        }
        if w != 0.0 {
            q += &power * w;
        }
    }
    let drift = (0..n)
        .map(|i| (q.row(i).sum() - 1.0).abs())
        .fold(0.0, f64::max);
    if drift > tail_tol {
        for i in 0..n {
            let s = q.row(i).sum();
            q.row_mut(i).scale_mut(1.0 / s);
        }
    }
    StochasticMatrix::with_tolerance(q, (10.0 * tail_tol).max(ROW_SUM_TOL))
}
