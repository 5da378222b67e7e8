//! Commutator least-squares estimators of `P`.
//!
//! With `Delta(Q) = I (x) Q - Q^T (x) I`, the true kernel satisfies
//! `Delta(Q) vec(P) = 0`. Writing `vec(P) = p0 + Phi beta`, the plain
//! estimator minimizes `|| Delta(Q_hat) (p0 + Phi beta) ||^2`; the normal
//! equations read
//!
//! ```text
//! Phi^T Delta^T Delta Phi  beta = - Phi^T Delta^T Delta p0
//! ```
//!
//! The weighted variant minimizes `|| Omega Delta(Q_hat) (p0 + Phi beta) ||^2`
//! and the two-step estimator plugs in `Omega_hat` with
//! `Omega_hat^T Omega_hat = (Delta(P_hat) Sigma_hat Delta(P_hat)^T)^+`.

use nalgebra::{DMatrix, DVector};
use serde::{Serialize, Serializer};

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::markov::StochasticMatrix;
use crate::support::{build_chart, AffineChart, SupportSet, DEFAULT_RANK_RTOL};

/// Reciprocal condition number of the normal matrix below which it is
/// treated as singular.
pub const DEFAULT_RCOND: f64 = 1e-10;

/// Empirical transition frequencies of an observed sequence.
#[derive(Clone, Debug)]
pub struct EmpiricalKernel {
    pub q_hat: StochasticMatrix,
    /// Empirical occupation frequencies over the whole sequence.
    pub pi_hat: DVector<f64>,
    /// Occurrences of each state in `Y_1..Y_n`.
    pub visit_counts: Vec<usize>,
    /// Occurrences of each state in `Y_1..Y_{n-1}` (transitions out).
    pub departure_counts: Vec<usize>,
    pub n: usize,
}

/// `Q_hat[i][j] = #{k < n : Y_k = i, Y_{k+1} = j} / #{k < n : Y_k = i}`.
/// States are 0-based. Every state must be left at least once.
pub fn empirical_kernel(y: &[usize], n_states: usize) -> Result<EmpiricalKernel> {
    let n = y.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    if let Some(&s) = y.iter().find(|&&s| s >= n_states) {
        return Err(Error::InvalidInput(format!(
            "state {} outside 1..={n_states}",
            s + 1
        )));
    }
    let mut transitions = DMatrix::<f64>::zeros(n_states, n_states);
    let mut departures = vec![0usize; n_states];
    for w in y.windows(2) {
        transitions[(w[0], w[1])] += 1.0;
        departures[w[0]] += 1;
    }
    if let Some(i) = departures.iter().position(|&c| c == 0) {
        return Err(Error::UnvisitedState(i + 1));
    }
    for (i, &c) in departures.iter().enumerate() {
        transitions.row_mut(i).scale_mut(1.0 / c as f64);
    }
    let mut visits = vec![0usize; n_states];
    for &s in y {
        visits[s] += 1;
    }
    let pi_hat = DVector::from_iterator(n_states, visits.iter().map(|&c| c as f64 / n as f64));
    Ok(EmpiricalKernel {
        q_hat: StochasticMatrix::new(transitions)?,
        pi_hat,
        visit_counts: visits,
        departure_counts: departures,
        n,
    })
}

/// Limit covariance of `sqrt(n) vec(Q_hat)`:
///
/// * `Q_ij (1 - Q_ij) / pi_i` on the diagonal,
/// * `-Q_ij Q_il / pi_i` between two entries of row `i`,
/// * `0` across rows.
pub fn sigma_matrix(q: &DenseMatrix, pi: &DVector<f64>) -> Result<DenseMatrix> {
    let n = linalg::ensure_square(q)?;
    if pi.len() != n {
        return Err(Error::Dimension(format!(
            "{} stationary weights for {n} states",
            pi.len()
        )));
    }
    if let Some(i) = pi.iter().position(|&x| !(x > 0.0)) {
        return Err(Error::InvalidInput(format!(
            "stationary weight of state {} is not positive",
            i + 1
        )));
    }
    if (pi.sum() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidInput(format!(
            "stationary weights sum to {}",
            pi.sum()
        )));
    }
    let mut sigma = DMatrix::zeros(n * n, n * n);
    for i in 0..n {
        for j in 0..n {
            let a = linalg::vec_index(n, i, j);
            for l in 0..n {
                let b = linalg::vec_index(n, i, l);
                let delta = if j == l { q[(i, j)] } else { 0.0 };
                sigma[(a, b)] = (delta - q[(i, j)] * q[(i, l)]) / pi[i];
            }
        }
    }
    Ok(sigma)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Numeric rank of `Delta(Q_hat) Phi` (or of `Omega Delta(Q_hat) Phi`).
    pub rank: usize,
    /// `d - N`.
    pub expected_rank: usize,
    /// Condition number of the normal matrix; infinite when singular.
    pub condition_number: f64,
    /// The normal matrix was singular and the minimum-norm minimizer was
    /// taken through the pseudoinverse.
    pub used_pseudoinverse: bool,
}

impl Diagnostics {
    pub fn full_rank(&self) -> bool {
        self.rank == self.expected_rank
    }
}

#[derive(Clone, Debug)]
pub struct AsymptoticCovariance {
    pub sigma: DenseMatrix,
    pub b: DenseMatrix,
    /// `B Sigma B^T`.
    pub limit_cov: DenseMatrix,
}

/// Result of an estimation run. `p_hat` is `vec(P_hat)` in column-major
/// order; matrix views are available through the accessors.
#[derive(Clone, Debug)]
pub struct EstimateReport {
    pub n_states: usize,
    pub p_hat: DVector<f64>,
    pub beta_hat: DVector<f64>,
    /// `P_hat` with negative entries set to zero and rows rescaled; `None`
    /// when a row has no positive entry left.
    pub p_hat_projected: Option<StochasticMatrix>,
    pub diagnostics: Diagnostics,
    /// Two-step estimate, when it was requested and admissible.
    pub p_hat_omega: Option<DVector<f64>>,
    pub omega_diagnostics: Option<Diagnostics>,
    /// Why the two-step estimate fell back to `p_hat`.
    pub two_step_fallback: Option<String>,
    pub q_hat: Option<DenseMatrix>,
    pub pi_hat: Option<DVector<f64>>,
    /// Plug-in `B Sigma B^T`.
    pub covariance: Option<AsymptoticCovariance>,
}

impl EstimateReport {
    pub fn p_hat_matrix(&self) -> DenseMatrix {
        DMatrix::from_column_slice(self.n_states, self.n_states, self.p_hat.as_slice())
    }

    pub fn p_hat_omega_matrix(&self) -> Option<DenseMatrix> {
        self.p_hat_omega
            .as_ref()
            .map(|v| DMatrix::from_column_slice(self.n_states, self.n_states, v.as_slice()))
    }
}

#[derive(Serialize)]
struct ReportJson<'a> {
    n_states: usize,
    p_hat: Vec<Vec<f64>>,
    beta_hat: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_hat_projected: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_hat_omega: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    q_hat: Option<Vec<Vec<f64>>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pi_hat: Option<Vec<f64>>,
    diagnostics: &'a Diagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    omega_diagnostics: Option<&'a Diagnostics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    two_step_fallback: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    asymptotic_covariance: Option<Vec<Vec<f64>>>,
}

impl Serialize for EstimateReport {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        ReportJson {
            n_states: self.n_states,
            p_hat: linalg::to_rows(&self.p_hat_matrix()),
            beta_hat: self.beta_hat.iter().copied().collect(),
            p_hat_projected: self
                .p_hat_projected
                .as_ref()
                .map(|m| linalg::to_rows(m.matrix())),
            p_hat_omega: self.p_hat_omega_matrix().as_ref().map(linalg::to_rows),
            q_hat: self.q_hat.as_ref().map(linalg::to_rows),
            pi_hat: self.pi_hat.as_ref().map(|v| v.iter().copied().collect()),
            diagnostics: &self.diagnostics,
            omega_diagnostics: self.omega_diagnostics.as_ref(),
            two_step_fallback: self.two_step_fallback.as_deref(),
            asymptotic_covariance: self
                .covariance
                .as_ref()
                .map(|c| linalg::to_rows(&c.limit_cov)),
        }
        .serialize(s)
    }
}

struct LeastSquares {
    beta: DVector<f64>,
    diagnostics: Diagnostics,
    rcond: f64,
}

/// Minimizes `|| a beta + b ||^2` through the SVD of `a`. When the normal
/// matrix `a^T a` has reciprocal condition below `rcond_threshold`, the
/// directions it cannot resolve are dropped (minimum-norm minimizer).
fn commutator_least_squares(
    a: &DenseMatrix,
    b: &DVector<f64>,
    rcond_threshold: f64,
) -> Result<LeastSquares> {
    let k = a.ncols();
    if k == 0 {
        return Ok(LeastSquares {
            beta: DVector::zeros(0),
            diagnostics: Diagnostics {
                rank: 0,
                expected_rank: 0,
                condition_number: 1.0,
                used_pseudoinverse: false,
            },
            rcond: 1.0,
        });
    }
    let svd = linalg::thin_svd(a)?;
    let s = &svd.s;
    let s_max = svd.max_singular_value();
    let s_min = if s.len() < k { 0.0 } else { s.min() };
    let rcond = if s_max > 0.0 {
        (s_min / s_max).powi(2)
    } else {
        0.0
    };
    let used_pseudoinverse = rcond < rcond_threshold;
    let keep = if used_pseudoinverse {
        rcond_threshold.sqrt() * s_max
    } else {
        0.0
    };
    let mut beta = DVector::zeros(k);
    for (idx, &sv) in s.iter().enumerate() {
        if sv > keep && sv > 0.0 {
            let coef = -svd.u.column(idx).dot(b) / sv;
            beta.axpy(coef, &svd.v.column(idx), 1.0);
        }
    }
    let rank = s.iter().filter(|&&x| x > DEFAULT_RANK_RTOL * s_max).count();
    Ok(LeastSquares {
        beta,
        diagnostics: Diagnostics {
            rank,
            expected_rank: k,
            condition_number: if rcond > 0.0 {
                rcond.recip()
            } else {
                f64::INFINITY
            },
            used_pseudoinverse,
        },
        rcond,
    })
}

fn check_kernel(q: &DenseMatrix, chart: &AffineChart) -> Result<()> {
    let n = linalg::ensure_square(q)?;
    if n != chart.n_states() {
        return Err(Error::Dimension(format!(
            "kernel has {n} states, chart has {}",
            chart.n_states()
        )));
    }
    Ok(())
}

fn report_from(
    chart: &AffineChart,
    beta: DVector<f64>,
    diagnostics: Diagnostics,
) -> Result<EstimateReport> {
    let p_hat = chart.point(&beta);
    let p_hat_projected = match project_stochastic(&p_hat, chart.support()) {
        Ok(m) => Some(m),
        Err(Error::Numerical(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EstimateReport {
        n_states: chart.n_states(),
        p_hat,
        beta_hat: beta,
        p_hat_projected,
        diagnostics,
        p_hat_omega: None,
        omega_diagnostics: None,
        two_step_fallback: None,
        q_hat: None,
        pi_hat: None,
        covariance: None,
    })
}

/// Plain commutator least-squares estimate. `rcond` is the reciprocal
/// condition threshold of the normal matrix (see [`DEFAULT_RCOND`]); below
/// it the pseudoinverse solution is returned and flagged.
pub fn estimate(
    q_hat: &StochasticMatrix,
    chart: &AffineChart,
    rcond: f64,
) -> Result<EstimateReport> {
    check_kernel(q_hat.matrix(), chart)?;
    let (a, b) = chart.commutator_system(q_hat.matrix())?;
    let ls = commutator_least_squares(&a, &b, rcond)?;
    report_from(chart, ls.beta, ls.diagnostics)
}

/// Weighted estimate minimizing `|| Omega Delta(Q_hat) (p0 + Phi beta) ||^2`
/// for `Omega` of shape `q x N^2`. Fails with [`Error::Inadmissible`] when the
/// weighted normal matrix is singular to `rcond`.
pub fn estimate_weighted(
    q_hat: &StochasticMatrix,
    chart: &AffineChart,
    omega: &DenseMatrix,
    rcond: f64,
) -> Result<EstimateReport> {
    check_kernel(q_hat.matrix(), chart)?;
    let n = chart.n_states();
    if omega.ncols() != n * n {
        return Err(Error::Dimension(format!(
            "weighting matrix has {} columns, expected {}",
            omega.ncols(),
            n * n
        )));
    }
    linalg::ensure_finite(omega)?;
    let (a, b) = chart.commutator_system(q_hat.matrix())?;
    let ls = commutator_least_squares(&(omega * a), &(omega * b), rcond)?;
    if ls.diagnostics.used_pseudoinverse {
        return Err(Error::Inadmissible { rcond: ls.rcond });
    }
    report_from(chart, ls.beta, ls.diagnostics)
}

/// `Omega_hat` with `Omega_hat^T Omega_hat = (Delta(P_hat) Sigma_hat
/// Delta(P_hat)^T)^+`, taken as the symmetric square root. `rtol` is the
/// relative eigenvalue cutoff of the pseudoinverse.
pub fn optimal_omega(
    p_hat: &DenseMatrix,
    sigma_hat: &DenseMatrix,
    rtol: f64,
) -> Result<DenseMatrix> {
    let n = linalg::ensure_square(p_hat)?;
    if sigma_hat.shape() != (n * n, n * n) {
        return Err(Error::Dimension(format!(
            "Sigma has shape {:?}, expected {}x{}",
            sigma_hat.shape(),
            n * n,
            n * n
        )));
    }
    let d = linalg::commutator_op(p_hat)?;
    let middle = &d * sigma_hat * d.transpose();
    let middle = (&middle + middle.transpose()) * 0.5;
    linalg::psd_pinv_sqrt(&middle, rtol)
}

/// Default pseudoinverse cutoff used by [`optimal_omega`] in the two-step
/// estimator.
pub fn default_omega_rtol(n_states: usize) -> f64 {
    linalg::default_rtol(n_states * n_states, n_states * n_states)
}

/// Two-step estimate from an already computed empirical kernel.
pub fn two_step_from_kernel(
    kernel: &EmpiricalKernel,
    chart: &AffineChart,
    rcond: f64,
) -> Result<EstimateReport> {
    let mut report = estimate(&kernel.q_hat, chart, rcond)?;
    let sigma_hat = sigma_matrix(kernel.q_hat.matrix(), &kernel.pi_hat)?;
    let omega = optimal_omega(
        &report.p_hat_matrix(),
        &sigma_hat,
        default_omega_rtol(chart.n_states()),
    )?;
    match estimate_weighted(&kernel.q_hat, chart, &omega, rcond) {
        Ok(weighted) => {
            report.p_hat_omega = Some(weighted.p_hat);
            report.omega_diagnostics = Some(weighted.diagnostics);
        }
        Err(e @ Error::Inadmissible { .. }) => report.two_step_fallback = Some(e.to_string()),
        Err(e) => return Err(e),
    }
    report.q_hat = Some(kernel.q_hat.matrix().clone());
    report.pi_hat = Some(kernel.pi_hat.clone());
    Ok(report)
}

/// Plain estimate followed by the plug-in optimally weighted estimate.
/// An inadmissible plug-in weight leaves `p_hat_omega` empty and records the
/// reason in `two_step_fallback`.
pub fn two_step_estimate(y: &[usize], support: &SupportSet, rcond: f64) -> Result<EstimateReport> {
    let kernel = empirical_kernel(y, support.n_states())?;
    let chart = build_chart(support)?;
    two_step_from_kernel(&kernel, &chart, rcond)
}

/// Clamps negative entries to zero and rescales each row to sum to one.
pub fn project_stochastic(p_hat: &DVector<f64>, support: &SupportSet) -> Result<StochasticMatrix> {
    let n = support.n_states();
    let mut m = linalg::unvec(p_hat, n)?;
    for i in 0..n {
        let s = m.row(i).sum();
        if (s - 1.0).abs() > 1e-8 {
            return Err(Error::InvalidInput(format!(
                "row {} of the estimate sums to {s}",
                i + 1
            )));
        }
        for j in 0..n {
            if m[(i, j)] < 0.0 || !support.contains(i, j) {
                m[(i, j)] = 0.0;
            }
        }
        let s = m.row(i).sum();
        if !(s > 0.0) {
            return Err(Error::Numerical(format!(
                "row {} vanishes after clamping negative entries",
                i + 1
            )));
        }
        m.row_mut(i).scale_mut(1.0 / s);
    }
    StochasticMatrix::new(m)
}

/// Delta-method covariance of `sqrt(n) (p_hat - p)`:
/// `B(Omega) = Phi [Phi^T Delta(Q)^T W Delta(Q) Phi]^{-1} Phi^T Delta(Q)^T W Delta(P)`
/// with `W = Omega^T Omega` (identity when `omega` is `None`).
pub fn asymptotic_covariance(
    p: &DenseMatrix,
    q: &DenseMatrix,
    sigma: &DenseMatrix,
    chart: &AffineChart,
    omega: Option<&DenseMatrix>,
) -> Result<AsymptoticCovariance> {
    check_kernel(q, chart)?;
    check_kernel(p, chart)?;
    let n = chart.n_states();
    let nn = n * n;
    if sigma.shape() != (nn, nn) {
        return Err(Error::Dimension(format!(
            "Sigma has shape {:?}",
            sigma.shape()
        )));
    }
    let (a, _) = chart.commutator_system(q)?;
    let dp = linalg::commutator_op(p)?;
    let w = match omega {
        Some(o) if o.ncols() != nn => {
            return Err(Error::Dimension(format!(
                "weighting matrix has {} columns",
                o.ncols()
            )))
        }
        Some(o) => o.transpose() * o,
        None => DMatrix::identity(nn, nn),
    };
    let a_t_w = a.transpose() * &w;
    let g = &a_t_w * &a;
    let k = g.nrows();
    if k > 0 {
        let eig = g.clone().symmetric_eigenvalues();
        let (lo, hi) = eig.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
        if !(hi > 0.0) || lo / hi < DEFAULT_RCOND {
            return Err(Error::Singular(format!(
                "normal matrix has reciprocal condition {:e}",
                if hi > 0.0 { lo / hi } else { 0.0 }
            )));
        }
    }
    let rhs = &a_t_w * &dp;
    let solved = if k == 0 {
        DMatrix::zeros(0, nn)
    } else {
        g.cholesky()
            .ok_or_else(|| Error::Singular("normal matrix is not positive definite".into()))?
            .solve(&rhs)
    };
    let b = chart.phi() * solved;
    let limit_cov = &b * sigma * b.transpose();
    Ok(AsymptoticCovariance {
        sigma: sigma.clone(),
        b,
        limit_cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::{gap_transform, GapDistribution};
    use crate::support::random_kernel_on;

    fn example_three() -> StochasticMatrix {
        StochasticMatrix::from_rows(&[
            vec![0.0, 0.22, 0.33, 0.45],
            vec![0.38, 0.0, 0.06, 0.56],
            vec![0.40, 0.13, 0.0, 0.47],
            vec![0.42, 0.20, 0.38, 0.0],
        ])
        .unwrap()
    }

    fn objective(chart: &AffineChart, q: &DenseMatrix, beta: &DVector<f64>) -> f64 {
        let p = linalg::unvec(&chart.point(beta), chart.n_states()).unwrap();
        linalg::commutator_apply(q, &p).unwrap().norm_squared()
    }

    #[test]
    fn alternating_sequence() {
        let k = empirical_kernel(&[0, 1, 0, 1, 0], 2).unwrap();
        assert_eq!(
            k.q_hat.matrix(),
            &DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0])
        );
        assert_eq!(k.pi_hat.as_slice(), &[0.6, 0.4]);
        assert_eq!(k.visit_counts, vec![3, 2]);
    }

    #[test]
    fn frequency_count() {
        let k = empirical_kernel(&[0, 0, 1, 0], 2).unwrap();
        assert_eq!(
            k.q_hat.matrix(),
            &DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 1.0, 0.0])
        );
    }

    #[test]
    fn unvisited_state_is_an_error() {
        // state 3 occurs only in the last position
        assert!(matches!(
            empirical_kernel(&[0, 1, 0, 2], 3),
            Err(Error::UnvisitedState(3))
        ));
        assert!(empirical_kernel(&[0, 5], 3).is_err());
        assert!(empirical_kernel(&[0], 3).is_err());
    }

    #[test]
    fn sigma_two_state_row() {
        let q = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 0.5, 0.5]);
        let pi = DVector::from_vec(vec![0.5, 0.5]);
        let s = sigma_matrix(&q, &pi).unwrap();
        let (a, b) = (linalg::vec_index(2, 0, 0), linalg::vec_index(2, 0, 1));
        assert!((s[(a, a)] - 0.5).abs() < 1e-15);
        assert!((s[(a, b)] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn sigma_deterministic_row_is_zero() {
        let q = DMatrix::from_row_slice(3, 3, &[0.0, 1.0, 0.0, 0.2, 0.3, 0.5, 0.4, 0.4, 0.2]);
        let pi = DVector::from_vec(vec![0.2, 0.5, 0.3]);
        let s = sigma_matrix(&q, &pi).unwrap();
        for j in 0..3 {
            let a = linalg::vec_index(3, 0, j);
            assert!(s.row(a).iter().all(|&x| x == 0.0));
        }
        assert!(sigma_matrix(&q, &DVector::from_vec(vec![0.0, 0.5, 0.5])).is_err());
    }

    #[test]
    fn exact_recovery_on_hollow_matrix() {
        let p = example_three();
        let q = gap_transform(&p, &GapDistribution::geometric(0.5).unwrap(), 1e-12).unwrap();
        let chart = build_chart(&SupportSet::from_matrix(p.matrix()).unwrap()).unwrap();
        let r = estimate(&q, &chart, DEFAULT_RCOND).unwrap();
        assert!((r.p_hat_matrix() - p.matrix()).amax() < 1e-8);
        assert!(!r.diagnostics.used_pseudoinverse);
        assert!(r.diagnostics.full_rank());
    }

    #[test]
    fn single_entry_rows_give_base_point() {
        let s = SupportSet::new(3, [(0, 1), (1, 2), (2, 0)]).unwrap();
        let chart = build_chart(&s).unwrap();
        let q = StochasticMatrix::from_rows(&[
            vec![0.2, 0.3, 0.5],
            vec![0.1, 0.1, 0.8],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let r = estimate(&q, &chart, DEFAULT_RCOND).unwrap();
        assert_eq!(&r.p_hat, chart.p0());
        assert_eq!(r.beta_hat.len(), 0);
    }

    #[test]
    fn minimizer_certificate_on_noisy_kernel() {
        let p = example_three();
        let s = SupportSet::from_matrix(p.matrix()).unwrap();
        let chart = build_chart(&s).unwrap();
        for seed in 0..5 {
            // a perturbed kernel that does not commute with anything in A(S)
            let noise = random_kernel_on(&SupportSet::full(4), seed).unwrap();
            let q = StochasticMatrix::new(p.matrix() * 0.8 + noise.matrix() * 0.2).unwrap();
            let r = estimate(&q, &chart, DEFAULT_RCOND).unwrap();
            let f0 = objective(&chart, q.matrix(), &r.beta_hat);
            for j in 0..chart.dim() {
                for eps in [1e-4, -1e-4] {
                    let mut b = r.beta_hat.clone();
                    b[j] += eps;
                    assert!(objective(&chart, q.matrix(), &b) >= f0);
                }
            }
            // p_hat stays in A(S)
            let m = r.p_hat_matrix();
            for i in 0..4 {
                assert!((m.row(i).sum() - 1.0).abs() < 1e-10);
                assert_eq!(m[(i, i)], 0.0);
            }
        }
    }

    #[test]
    fn weighted_with_identity_and_scaled_identity() {
        let p = example_three();
        let chart = build_chart(&SupportSet::from_matrix(p.matrix()).unwrap()).unwrap();
        let noise = random_kernel_on(&SupportSet::full(4), 9).unwrap();
        let q = StochasticMatrix::new(p.matrix() * 0.9 + noise.matrix() * 0.1).unwrap();
        let plain = estimate(&q, &chart, DEFAULT_RCOND).unwrap();
        let eye = DMatrix::<f64>::identity(16, 16);
        let w1 = estimate_weighted(&q, &chart, &eye, DEFAULT_RCOND).unwrap();
        let w3 = estimate_weighted(&q, &chart, &(eye * 3.0), DEFAULT_RCOND).unwrap();
        assert!((&plain.p_hat - &w1.p_hat).amax() < 1e-12);
        assert!((&plain.p_hat - &w3.p_hat).amax() < 1e-12);
    }

    #[test]
    fn zero_weight_is_inadmissible() {
        let p = example_three();
        let chart = build_chart(&SupportSet::from_matrix(p.matrix()).unwrap()).unwrap();
        let omega = optimal_omega(p.matrix(), &DMatrix::zeros(16, 16), 1e-12).unwrap();
        assert_eq!(omega.amax(), 0.0);
        let err = estimate_weighted(&p, &chart, &omega, DEFAULT_RCOND);
        assert!(matches!(err, Err(Error::Inadmissible { .. })));
    }

    #[test]
    fn projection_rule() {
        let s = SupportSet::full(3);
        let rows = DMatrix::from_row_slice(3, 3, &[-0.1, 0.6, 0.5, 0.2, 0.3, 0.5, -1.0, 0.0, 2.0]);
        let proj = project_stochastic(&linalg::vec(&rows).unwrap(), &s).unwrap();
        let m = proj.matrix();
        assert_eq!(m[(0, 0)], 0.0);
        assert!((m[(0, 1)] - 6.0 / 11.0).abs() < 1e-15);
        assert!((m[(0, 2)] - 5.0 / 11.0).abs() < 1e-15);
        assert_eq!(m.row(1), rows.row(1));
        assert_eq!(
            m.row(2).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 0.0, 1.0]
        );
        let bad = DMatrix::from_row_slice(3, 3, &[0.5, 0.0, 0.0, 0.2, 0.3, 0.5, 0.0, 0.0, 1.0]);
        assert!(project_stochastic(&linalg::vec(&bad).unwrap(), &s).is_err());
    }

    #[test]
    fn identity_weight_reproduces_plain_sensitivity() {
        let p = example_three();
        let q = gap_transform(&p, &GapDistribution::poisson(1.0).unwrap(), 1e-12).unwrap();
        let chart = build_chart(&SupportSet::from_matrix(p.matrix()).unwrap()).unwrap();
        let pi = crate::markov::stationary_distribution(&p).unwrap();
        let sigma = sigma_matrix(q.matrix(), &pi).unwrap();
        let plain = asymptotic_covariance(p.matrix(), q.matrix(), &sigma, &chart, None).unwrap();
        let eye = DMatrix::<f64>::identity(16, 16);
        let weighted =
            asymptotic_covariance(p.matrix(), q.matrix(), &sigma, &chart, Some(&eye)).unwrap();
        assert!((&plain.b - &weighted.b).amax() < 1e-12);
        let c = &plain.limit_cov;
        assert!((c - c.transpose()).amax() < 1e-12);
        assert!(linalg::min_eigenvalue(c).unwrap() > -1e-10 * c.amax());
    }

    #[test]
    fn report_serializes_nested_arrays() {
        let p = example_three();
        let chart = build_chart(&SupportSet::from_matrix(p.matrix()).unwrap()).unwrap();
        let r = estimate(&p, &chart, DEFAULT_RCOND).unwrap();
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v["n_states"], 4);
        assert_eq!(v["p_hat"].as_array().unwrap().len(), 4);
        assert_eq!(v["p_hat"][0].as_array().unwrap().len(), 4);
        assert_eq!(v["diagnostics"]["rank"], 8);
        assert!(v.get("p_hat_omega").is_none());
    }
}
