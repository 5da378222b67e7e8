//! Transition-kernel recovery for Markov chains observed at random, unknown
//! time gaps.
//!
//! A chain `X` with kernel `P` is only seen at times `T_1 < T_2 < ...` whose
//! increments are iid with an unknown law `mu`. The observed sub-sequence is
//! again Markov, with kernel `Q = sum_l mu(l) P^l`, so `P` and `Q` commute.
//! When the support of `P` is known to lie inside a set `S`, `P` is recovered
//! as the element of the affine space of row-stochastic matrices supported on
//! `S` that comes closest to commuting with the empirical kernel `Q_hat`.
//!
//! Module map:
//!
//! * [`linalg`] – vectorization, Kronecker products, the commutator operator,
//!   pseudoinverse, numeric rank and symmetric square roots.
//! * [`markov`] – stochastic matrices, gap distributions, the gap transform
//!   and subsampled chain simulation.
//! * [`support`] – support sets, the affine chart `(p0, Phi)` and
//!   identifiability diagnostics.
//! * [`estimator`] – the empirical kernel, plain and weighted commutator least
//!   squares, the two-step estimator and asymptotic covariances.
//! * [`montecarlo`] – replicated experiments and risk tables.
//! * [`io`] – CSV/JSON file formats shared with the command-line tool.

pub mod error;
pub mod estimator;
mod graph;
pub mod io;
pub mod linalg;
pub mod markov;
pub mod montecarlo;
pub mod seed;
pub mod support;

pub use error::{Error, Result};
pub use estimator::{
    asymptotic_covariance, empirical_kernel, estimate, estimate_weighted, optimal_omega,
    project_stochastic, sigma_matrix, two_step_estimate, AsymptoticCovariance, Diagnostics,
    EmpiricalKernel, EstimateReport,
};
pub use linalg::DenseMatrix;
pub use markov::{
    gap_transform, invariant_distribution, sample_until_all_states, simulate_subsampled,
    stationary_distribution, GapDistribution, InitialState, StochasticMatrix,
};
pub use montecarlo::{builtin_examples, emit_table, run_experiment, ExperimentConfig, RiskTable};
pub use support::{build_chart, AffineChart, SupportSet};
