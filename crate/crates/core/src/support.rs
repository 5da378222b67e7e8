//! Support sets, the affine chart of `A(S)` and identifiability diagnostics.
//!
//! `A(S)` is the set of `N x N` matrices with unit row sums whose non-zero
//! entries lie in `S`; it is an affine space of dimension `d - N` with
//! `d = |S|`. A chart `(p0, Phi)` writes every element as `p0 + Phi beta`.
//! The problem is identifiable exactly when `Delta(Q) Phi` has full column
//! rank, i.e. when no non-zero direction of `A(S)` commutes with `Q`.

use std::collections::BTreeSet;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Exp1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::SupportGraph;
use crate::linalg::{self, DenseMatrix};
use crate::markov::{gap_transform, GapDistribution, StochasticMatrix, DEFAULT_TAIL_TOL};
use crate::seed::{derive_seed, rng_from_seed};

/// Default relative rank threshold for identifiability decisions.
pub const DEFAULT_RANK_RTOL: f64 = 1e-8;

/// Set of allowed transitions, 0-based. Every row owns at least one pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SupportSet {
    n_states: usize,
    pairs: BTreeSet<(usize, usize)>,
}

impl SupportSet {
    pub fn new(n_states: usize, pairs: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        let pairs: BTreeSet<_> = pairs.into_iter().collect();
        if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n_states || j >= n_states) {
            return Err(Error::InvalidSupport(format!(
                "pair ({}, {}) outside 1..={n_states}",
                i + 1,
                j + 1
            )));
        }
        if let Some(i) = (0..n_states).find(|&i| !pairs.iter().any(|&(r, _)| r == i)) {
            return Err(Error::EmptyRowSupport(i + 1));
        }
        Ok(Self { n_states, pairs })
    }

    /// Builds from 1-based pairs, as they appear in support files.
    pub fn from_one_based(n_states: usize, pairs: &[[usize; 2]]) -> Result<Self> {
        let mut zero_based = Vec::with_capacity(pairs.len());
        for &[i, j] in pairs {
            if i == 0 || j == 0 {
                return Err(Error::InvalidSupport(format!(
                    "support indices are 1-based, got ({i}, {j})"
                )));
            }
            zero_based.push((i - 1, j - 1));
        }
        Self::new(n_states, zero_based)
    }

    pub fn full(n_states: usize) -> Self {
        let pairs = (0..n_states)
            .flat_map(|i| (0..n_states).map(move |j| (i, j)))
            .collect();
        Self { n_states, pairs }
    }

    /// Non-zero pattern of a matrix.
    pub fn from_matrix(m: &DenseMatrix) -> Result<Self> {
        let n = linalg::ensure_square(m)?;
        Self::new(
            n,
            (0..n).flat_map(|i| {
                (0..n)
                    .filter(move |&j| m[(i, j)] != 0.0)
                    .map(move |j| (i, j))
            }),
        )
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    /// `d = |S|`.
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn contains(&self, i: usize, j: usize) -> bool {
        self.pairs.contains(&(i, j))
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().copied()
    }

    pub fn one_based_pairs(&self) -> Vec<[usize; 2]> {
        self.pairs.iter().map(|&(i, j)| [i + 1, j + 1]).collect()
    }

    /// Columns allowed in row `i`, ascending.
    pub fn row_columns(&self, i: usize) -> Vec<usize> {
        self.pairs
            .range((i, 0)..(i + 1, 0))
            .map(|&(_, j)| j)
            .collect()
    }

    /// Dimension `d - N` of `A(S)`.
    pub fn chart_dim(&self) -> usize {
        self.len() - self.n_states
    }

    pub fn is_subset_of(&self, other: &SupportSet) -> bool {
        self.n_states == other.n_states && self.pairs.is_subset(&other.pairs)
    }

    pub(crate) fn graph(&self) -> SupportGraph {
        SupportGraph::new(self.n_states, self.pairs())
    }
}

#[derive(Serialize, Deserialize)]
struct SupportJson {
    n_states: usize,
    pairs: Vec<[usize; 2]>,
}

impl Serialize for SupportSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        SupportJson {
            n_states: self.n_states,
            pairs: self.one_based_pairs(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for SupportSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = SupportJson::deserialize(d)?;
        SupportSet::from_one_based(raw.n_states, &raw.pairs).map_err(serde::de::Error::custom)
    }
}

/// Base point and basis of `A(S)`: `vec(A) = p0 + Phi beta`.
#[derive(Clone, Debug)]
pub struct AffineChart {
    support: SupportSet,
    p0: DVector<f64>,
    phi: DenseMatrix,
}

impl AffineChart {
    /// Validated constructor for an arbitrary chart of `A(S)`.
    pub fn from_parts(support: SupportSet, p0: DVector<f64>, phi: DenseMatrix) -> Result<Self> {
        let n = support.n_states();
        let k = support.chart_dim();
        if p0.len() != n * n || phi.nrows() != n * n || phi.ncols() != k {
            return Err(Error::Dimension(format!(
                "chart for N = {n}, d - N = {k} needs p0 of length {} and Phi of shape {}x{k}, got {} and {:?}",
                n * n,
                n * n,
                p0.len(),
                phi.shape()
            )));
        }
        let check = |v: DVector<f64>, target: f64, what: &str| -> Result<()> {
            let m = linalg::unvec(&v, n)?;
            for i in 0..n {
                if (m.row(i).sum() - target).abs() > 1e-10 {
                    return Err(Error::InvalidSupport(format!(
                        "{what}: row {} sum off",
                        i + 1
                    )));
                }
                for j in 0..n {
                    if m[(i, j)] != 0.0 && !support.contains(i, j) {
                        return Err(Error::InvalidSupport(format!(
                            "{what}: entry ({}, {}) outside the support",
                            i + 1,
                            j + 1
                        )));
                    }
                }
            }
            Ok(())
        };
        check(p0.clone(), 1.0, "base point")?;
        for c in 0..k {
            check(phi.column(c).into_owned(), 0.0, "basis column")?;
        }
        if linalg::numeric_rank(&phi, 1e-12)? != k {
            return Err(Error::InvalidSupport("basis is rank deficient".into()));
        }
        Ok(Self { support, p0, phi })
    }

    pub fn support(&self) -> &SupportSet {
        &self.support
    }

    pub fn n_states(&self) -> usize {
        self.support.n_states()
    }

    pub fn p0(&self) -> &DVector<f64> {
        &self.p0
    }

    pub fn phi(&self) -> &DenseMatrix {
        &self.phi
    }

    /// `d - N`.
    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    /// `p0 + Phi beta`.
    pub fn point(&self, beta: &DVector<f64>) -> DVector<f64> {
        &self.p0 + &self.phi * beta
    }

    /// `Delta(Q) Phi` and `Delta(Q) p0`, one commutator per column.
    pub(crate) fn commutator_system(&self, q: &DenseMatrix) -> Result<(DenseMatrix, DVector<f64>)> {
        let n = self.n_states();
        let mut a = DMatrix::zeros(n * n, self.dim());
        for c in 0..self.dim() {
            let phi_c = linalg::unvec(&self.phi.column(c).into_owned(), n)?;
            a.set_column(c, &linalg::commutator_apply(q, &phi_c)?);
        }
        let b = linalg::commutator_apply(q, &linalg::unvec(&self.p0, n)?)?;
        Ok((a, b))
    }
}

/// Canonical chart: `p0` is uniform over each row's support; for a row with
/// support columns `j_1 < ... < j_k` the basis gets `k - 1` matrices with
/// `+1` at `(i, j_m)` and `-1` at `(i, j_1)`. Columns are ordered by row,
/// then by `j_m`.
pub fn build_chart(support: &SupportSet) -> Result<AffineChart> {
    let n = support.n_states();
    let mut p0 = DMatrix::zeros(n, n);
    let mut columns = Vec::with_capacity(support.chart_dim());
    for i in 0..n {
        let cols = support.row_columns(i);
        let (&anchor, rest) = cols.split_first().ok_or(Error::EmptyRowSupport(i + 1))?;
        let w = 1.0 / cols.len() as f64;
        for &j in &cols {
            p0[(i, j)] = w;
        }
        for &j in rest {
            let mut v = DVector::zeros(n * n);
            v[linalg::vec_index(n, i, j)] = 1.0;
            v[linalg::vec_index(n, i, anchor)] = -1.0;
            columns.push(v);
        }
    }
    let phi = if columns.is_empty() {
        DMatrix::zeros(n * n, 0)
    } else {
        DMatrix::from_columns(&columns)
    };
    Ok(AffineChart {
        support: support.clone(),
        p0: linalg::vec(&p0)?,
        phi,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IdentifiabilityCheck {
    pub identifiable: bool,
    pub rank: usize,
    pub expected: usize,
    pub min_singular_value: f64,
}

/// Rank test on `Delta(Q) Phi`; identifiable iff the rank equals `d - N`.
pub fn identifiability_rank_check(
    q: &StochasticMatrix,
    chart: &AffineChart,
    rtol: f64,
) -> Result<IdentifiabilityCheck> {
    if q.n_states() != chart.n_states() {
        return Err(Error::Dimension(format!(
            "kernel has {} states, chart has {}",
            q.n_states(),
            chart.n_states()
        )));
    }
    let (a, _) = chart.commutator_system(q.matrix())?;
    let expected = chart.dim();
    let s = linalg::singular_values(&a)?;
    let rank = linalg::numeric_rank(&a, rtol)?;
    Ok(IdentifiabilityCheck {
        identifiable: rank == expected,
        rank,
        expected,
        min_singular_value: s.iter().copied().fold(f64::INFINITY, f64::min),
    })
}

/// Outcome of the necessary-condition heuristics on a support. Passing all
/// of them is not a proof of identifiability.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ConditionsReport {
    pub n_states: usize,
    pub d: usize,
    /// (a) the directed graph of `S` is strongly connected.
    pub strongly_connected: bool,
    /// gcd of cycle lengths; `None` when not strongly connected.
    pub period: Option<usize>,
    /// (b) period 1.
    pub aperiodic: bool,
    /// (c) `d <= N (N - 1)`.
    pub size_bound: bool,
    /// (d) some diagonal entry is excluded.
    pub missing_diagonal: bool,
    /// The undirected graph of `S` is bipartite (connected, 2-colourable).
    pub bipartite: bool,
    /// (e) `S` is not `A x B  U  B x A` for a partition `{A, B}`.
    pub not_full_bipartite: bool,
}

impl ConditionsReport {
    /// `(label, passed)` for conditions (a)-(e).
    pub fn conditions(&self) -> [(&'static str, bool); 5] {
        [
            (
                "(a) support graph strongly connected",
                self.strongly_connected,
            ),
            ("(b) support graph aperiodic", self.aperiodic),
            ("(c) d <= N(N-1)", self.size_bound),
            ("(d) some diagonal entry excluded", self.missing_diagonal),
            ("(e) not a full bipartite pattern", self.not_full_bipartite),
        ]
    }

    pub fn all_pass(&self) -> bool {
        self.conditions().iter().all(|(_, ok)| *ok)
    }

    /// A failure of (c), (d) or (e) rules identifiability out for every
    /// kernel on `S` and every gap law.
    pub fn structurally_non_identifiable(&self) -> bool {
        !(self.size_bound && self.missing_diagonal && self.not_full_bipartite)
    }
}

impl fmt::Display for ConditionsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "necessary-condition heuristics (N = {}, d = {}):",
            self.n_states, self.d
        )?;
        for (label, ok) in self.conditions() {
            writeln!(f, "  [{}] {label}", if ok { "pass" } else { "FAIL" })?;
        }
        match self.period {
            Some(p) => writeln!(f, "  period: {p}")?,
            None => writeln!(f, "  period: undefined (reducible)")?,
        }
        if self.bipartite {
            writeln!(
                f,
                "  warning: support graph is bipartite; non-identifiability risk"
            )?;
        }
        Ok(())
    }
}

pub fn necessary_conditions_report(support: &SupportSet) -> ConditionsReport {
    let n = support.n_states();
    let d = support.len();
    let graph = support.graph();
    let strongly_connected = graph.strongly_connected();
    let period = graph.period();
    ConditionsReport {
        n_states: n,
        d,
        strongly_connected,
        period,
        aperiodic: period == Some(1),
        size_bound: d <= n * (n - 1),
        missing_diagonal: (0..n).any(|j| !support.contains(j, j)),
        bipartite: graph.bipartition().is_some(),
        not_full_bipartite: !graph.is_complete_bipartite(),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ProbeResult {
    pub trials: usize,
    pub identifiable: usize,
    pub fraction: f64,
}

/// Random kernel on `S`: each row is Dirichlet(1, ..., 1) over its support.
pub fn random_kernel_on(support: &SupportSet, seed: u64) -> Result<StochasticMatrix> {
    let n = support.n_states();
    let mut rng = rng_from_seed(seed);
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        let cols = support.row_columns(i);
        let draws: Vec<f64> = cols.iter().map(|_| Exp1.sample(&mut rng)).collect();
        let total: f64 = draws.iter().sum();
        for (&j, x) in cols.iter().zip(draws) {
            m[(i, j)] = x / total;
        }
    }
    StochasticMatrix::with_tolerance(m, 1e-12)
}

/// Fraction of random kernels `A` on `S` for which `G_mu(A)` passes the
/// rank check. Trials are independent and run in parallel; trial `t` uses
/// a seed derived from `(seed, t)`.
pub fn randomized_genericity_probe(
    support: &SupportSet,
    mu: &GapDistribution,
    trials: usize,
    seed: u64,
    rtol: f64,
) -> Result<ProbeResult> {
    if trials == 0 {
        return Err(Error::InvalidInput("probe needs at least one trial".into()));
    }
    let chart = build_chart(support)?;
    let outcomes = (0..trials)
        .into_par_iter()
        .map(|t| {
            let a = random_kernel_on(support, derive_seed(seed, &[t as u64]))?;
            let q = gap_transform(&a, mu, DEFAULT_TAIL_TOL)?;
            Ok(identifiability_rank_check(&q, &chart, rtol)?.identifiable)
        })
        .collect::<Result<Vec<bool>>>()?;
    let identifiable = outcomes.iter().filter(|&&b| b).count();
    Ok(ProbeResult {
        trials,
        identifiable,
        fraction: identifiable as f64 / trials as f64,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::gap_transform;

    fn example_one_support() -> SupportSet {
        let rows: [&[usize]; 5] = [
            &[1, 4],
            &[0, 2, 3, 4],
            &[0, 2, 4],
            &[0, 1, 2, 3],
            &[0, 2, 4],
        ];
        SupportSet::new(
            5,
            rows.iter()
                .enumerate()
                .flat_map(|(i, cols)| cols.iter().map(move |&j| (i, j))),
        )
        .unwrap()
    }

    fn example_one() -> StochasticMatrix {
        StochasticMatrix::from_rows(&[
            vec![0.0, 0.61, 0.0, 0.0, 0.39],
            vec![0.07, 0.0, 0.48, 0.27, 0.18],
            vec![0.53, 0.0, 0.30, 0.0, 0.17],
            vec![0.18, 0.20, 0.27, 0.35, 0.0],
            vec![0.20, 0.0, 0.69, 0.0, 0.11],
        ])
        .unwrap()
    }

    fn tridiagonal_hollow(n: usize) -> SupportSet {
        SupportSet::new(n, (0..n - 1).flat_map(|i| [(i, i + 1), (i + 1, i)])).unwrap()
    }

    fn hollow(n: usize) -> SupportSet {
        SupportSet::new(
            n,
            (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))),
        )
        .unwrap()
    }

    #[test]
    fn support_validation() {
        assert!(matches!(
            SupportSet::new(3, [(0, 1), (2, 0)]),
            Err(Error::EmptyRowSupport(2))
        ));
        assert!(SupportSet::new(2, [(0, 1), (1, 2)]).is_err());
        assert!(SupportSet::from_one_based(2, &[[0, 1], [2, 1]]).is_err());
        let s = SupportSet::from_one_based(2, &[[1, 2], [2, 1]]).unwrap();
        assert!(s.contains(0, 1) && s.contains(1, 0));
    }

    #[test]
    fn support_json_is_one_based() {
        let s = tridiagonal_hollow(3);
        let json = serde_json::to_string(&s).unwrap();
        assert_eq!(json, r#"{"n_states":3,"pairs":[[1,2],[2,1],[2,3],[3,2]]}"#);
        let back: SupportSet = serde_json::from_str(&json).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn chart_of_full_two_state_support() {
        let chart = build_chart(&SupportSet::full(2)).unwrap();
        let p0 = linalg::unvec(chart.p0(), 2).unwrap();
        assert!(p0.iter().all(|&x| x == 0.5));
        assert_eq!(chart.phi().shape(), (4, 2));
    }

    #[test]
    fn chart_row_with_two_entries() {
        // N = 5, row 1 supported on columns {2, 5} (1-based); other rows
        // carry a single diagonal entry
        let mut pairs = vec![(0, 1), (0, 4)];
        pairs.extend((1..5).map(|i| (i, i)));
        let chart = build_chart(&SupportSet::new(5, pairs).unwrap()).unwrap();
        assert_eq!(chart.dim(), 1);
        let phi = linalg::unvec(&chart.phi().column(0).into_owned(), 5).unwrap();
        let mut expected = DMatrix::zeros(5, 5);
        expected[(0, 4)] = 1.0;
        expected[(0, 1)] = -1.0;
        assert_eq!(phi, expected);
    }

    #[test]
    fn example_one_chart_has_full_rank() {
        let s = example_one_support();
        assert_eq!(s.len(), 16);
        let chart = build_chart(&s).unwrap();
        assert_eq!(chart.phi().shape(), (25, 11));
        assert_eq!(linalg::numeric_rank(chart.phi(), 1e-12).unwrap(), 11);
        assert_eq!(SupportSet::from_matrix(example_one().matrix()).unwrap(), s);
    }

    #[test]
    fn chart_points_stay_in_affine_space() {
        let s = example_one_support();
        let chart = build_chart(&s).unwrap();
        let mut rng = rng_from_seed(3);
        use rand::Rng;
        for _ in 0..100 {
            let beta = DVector::from_fn(chart.dim(), |_, _| rng.random_range(-5.0..5.0));
            let m = linalg::unvec(&chart.point(&beta), 5).unwrap();
            for i in 0..5 {
                assert!((m.row(i).sum() - 1.0).abs() < 1e-12);
                for j in 0..5 {
                    assert!(m[(i, j)] == 0.0 || s.contains(i, j));
                }
            }
        }
    }

    #[test]
    fn from_parts_validates() {
        let s = example_one_support();
        let chart = build_chart(&s).unwrap();
        assert!(
            AffineChart::from_parts(s.clone(), chart.p0().clone(), chart.phi().clone()).is_ok()
        );
        let mut bad = chart.phi().clone();
        let first = bad.column(0).into_owned();
        bad.set_column(1, &first);
        assert!(AffineChart::from_parts(s.clone(), chart.p0().clone(), bad).is_err());
        assert!(AffineChart::from_parts(s, DVector::zeros(25), chart.phi().clone()).is_err());
    }

    #[test]
    fn example_one_poisson_is_identifiable() {
        let q = gap_transform(
            &example_one(),
            &GapDistribution::poisson(1.0).unwrap(),
            1e-12,
        )
        .unwrap();
        let chart = build_chart(&example_one_support()).unwrap();
        let check = identifiability_rank_check(&q, &chart, DEFAULT_RANK_RTOL).unwrap();
        assert!(check.identifiable);
        assert_eq!((check.rank, check.expected), (11, 11));
        assert!(check.min_singular_value > 1e-6);
    }

    #[test]
    fn diagonal_support_is_never_identifiable() {
        let mut pairs: Vec<_> = example_one_support().pairs().collect();
        pairs.extend((0..5).map(|i| (i, i)));
        let s = SupportSet::new(5, pairs).unwrap();
        let q = gap_transform(
            &example_one(),
            &GapDistribution::geometric(0.5).unwrap(),
            1e-12,
        )
        .unwrap();
        let check =
            identifiability_rank_check(&q, &build_chart(&s).unwrap(), DEFAULT_RANK_RTOL).unwrap();
        assert!(!check.identifiable);
    }

    #[test]
    fn large_supports_are_never_identifiable() {
        // d > N^2 - N: full support minus one diagonal entry has d = N^2 - 1
        let n = 4;
        let s = SupportSet::new(
            n,
            (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .filter(|&p| p != (0, 0)),
        )
        .unwrap();
        let a = random_kernel_on(&s, 5).unwrap();
        let q = gap_transform(&a, &GapDistribution::poisson(1.0).unwrap(), 1e-12).unwrap();
        let check =
            identifiability_rank_check(&q, &build_chart(&s).unwrap(), DEFAULT_RANK_RTOL).unwrap();
        assert!(!check.identifiable);
        assert!(!necessary_conditions_report(&s).size_bound);
    }

    #[test]
    fn conditions_on_diagonal_support() {
        let r = necessary_conditions_report(&SupportSet::full(3));
        assert!(!r.missing_diagonal);
        assert!(r.structurally_non_identifiable());
    }

    #[test]
    fn conditions_on_tridiagonal_hollow_support() {
        let r = necessary_conditions_report(&tridiagonal_hollow(11));
        assert!(r.strongly_connected);
        assert_eq!(r.period, Some(2));
        assert!(!r.aperiodic);
        assert!(r.bipartite);
        assert!(r.not_full_bipartite);
        assert!(!r.structurally_non_identifiable());
        assert!(r.to_string().contains("bipartite"));
    }

    #[test]
    fn conditions_on_hollow_support() {
        let r = necessary_conditions_report(&hollow(4));
        assert!(r.all_pass(), "{r}");
        assert_eq!(r.d, 12);
    }

    #[test]
    fn probe_dichotomy() {
        let mu = GapDistribution::poisson(1.0).unwrap();
        let p = randomized_genericity_probe(&example_one_support(), &mu, 100, 1, DEFAULT_RANK_RTOL)
            .unwrap();
        assert_eq!(p.fraction, 1.0);
        let mut pairs: Vec<_> = hollow(4).pairs().collect();
        pairs.extend((0..4).map(|i| (i, i)));
        let diag = SupportSet::new(4, pairs).unwrap();
        let p = randomized_genericity_probe(&diag, &mu, 100, 1, DEFAULT_RANK_RTOL).unwrap();
        assert_eq!(p.fraction, 0.0);
        let tri =
            randomized_genericity_probe(&tridiagonal_hollow(11), &mu, 100, 1, DEFAULT_RANK_RTOL)
                .unwrap();
        assert!(tri.fraction == 0.0 || tri.fraction == 1.0, "{tri:?}");
        assert!(randomized_genericity_probe(&hollow(4), &mu, 0, 1, DEFAULT_RANK_RTOL).is_err());
    }

    #[test]
    fn rank_check_is_chart_invariant() {
        // reverse the anchor: use each row's largest column as the -1 entry
        let s = example_one_support();
        let n = 5;
        let canonical = build_chart(&s).unwrap();
        let mut cols = Vec::new();
        for i in 0..n {
            let row = s.row_columns(i);
            let (&anchor, rest) = row.split_last().unwrap();
            for &j in rest {
                let mut v = DVector::zeros(n * n);
                v[linalg::vec_index(n, i, j)] = 1.0;
                v[linalg::vec_index(n, i, anchor)] = -1.0;
                cols.push(v);
            }
        }
        let mut p0 = DMatrix::zeros(n, n);
        for i in 0..n {
            p0[(i, *s.row_columns(i).last().unwrap())] = 1.0;
        }
        let alt = AffineChart::from_parts(
            s.clone(),
            linalg::vec(&p0).unwrap(),
            DMatrix::from_columns(&cols),
        )
        .unwrap();
        for seed in 0..10 {
            let a = random_kernel_on(&s, seed).unwrap();
            let q = gap_transform(&a, &GapDistribution::geometric(0.5).unwrap(), 1e-12).unwrap();
            let x = identifiability_rank_check(&q, &canonical, DEFAULT_RANK_RTOL).unwrap();
            let y = identifiability_rank_check(&q, &alt, DEFAULT_RANK_RTOL).unwrap();
            assert_eq!(x.identifiable, y.identifiable);
        }
    }
}
