//! Replicated estimation experiments and mean-squared-error tables.
//!
//! Every replication draws a trajectory conditioned on visiting all states,
//! computes the requested estimators and records `|| p_hat - vec(P) ||^2`.
//! Replication `r` of cell `c` uses the seed `derive_seed(base_seed, [c, r])`,
//! so any cell can be re-run on its own and results do not depend on the
//! number of worker threads.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::{self, empirical_kernel, project_stochastic, DEFAULT_RCOND};
use crate::linalg;
use crate::markov::{
    invariant_distribution, sample_until_all_states, GapDistribution, InitialState,
    StochasticMatrix,
};
use crate::seed::derive_seed;
use crate::support::{build_chart, AffineChart, SupportSet};

/// Replications per cell in the built-in experiments.
pub const DEFAULT_REPLICATIONS: usize = 10_000;

pub const DEFAULT_MAX_RETRIES: usize = 1_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Plain,
    TwoStep,
}

impl EstimatorKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Plain => "plain",
            Self::TwoStep => "two_step",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "plain" => Ok(Self::Plain),
            "two_step" | "twostep" => Ok(Self::TwoStep),
            other => Err(Error::InvalidConfig(format!("unknown estimator {other:?}"))),
        }
    }
}

/// Which version of an estimate enters the risk.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    /// Plain estimate projected, two-step estimate raw. This is the
    /// combination behind the reference risk values for the built-in
    /// examples; the two-step risk at `n = 200` keeps its heavy tail.
    #[default]
    PlainProjected,
    /// Negative entries set to zero and rows rescaled, for both estimators.
    Projected,
    /// The unconstrained least-squares solution, for both estimators.
    Raw,
}

impl Scoring {
    /// Whether estimates of `kind` are projected before scoring.
    pub fn projects(self, kind: EstimatorKind) -> bool {
        match self {
            Self::PlainProjected => kind == EstimatorKind::Plain,
            Self::Projected => true,
            Self::Raw => false,
        }
    }
}

impl FromStr for Scoring {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "plain_projected" | "plain-projected" => Ok(Self::PlainProjected),
            "projected" => Ok(Self::Projected),
            "raw" => Ok(Self::Raw),
            other => Err(Error::InvalidConfig(format!("unknown scoring {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ExperimentConfig {
    pub name: String,
    /// Ground-truth kernel.
    pub p: StochasticMatrix,
    pub support: SupportSet,
    pub gaps: Vec<GapDistribution>,
    pub sample_sizes: Vec<usize>,
    pub replications: usize,
    pub base_seed: u64,
    pub estimators: Vec<EstimatorKind>,
    /// Trajectory redraws allowed per replication to see every state.
    pub max_retries: usize,
    pub scoring: Scoring,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.support.n_states() != self.p.n_states() {
            return bad(format!(
                "support is on {} states, P on {}",
                self.support.n_states(),
                self.p.n_states()
            ));
        }
        if let Some((i, j)) = self
            .p
            .positive_entries()
            .find(|&(i, j)| !self.support.contains(i, j))
        {
            return bad(format!(
                "P[{}][{}] > 0 lies outside the support",
                i + 1,
                j + 1
            ));
        }
        if !self.p.is_irreducible() {
            return bad("P must be irreducible".into());
        }
        if self.replications == 0 {
            return bad("replications must be at least 1".into());
        }
        if self.max_retries == 0 {
            return bad("max_retries must be at least 1".into());
        }
        if self.gaps.is_empty() || self.sample_sizes.is_empty() || self.estimators.is_empty() {
            return bad("gaps, sample sizes and estimators must be non-empty".into());
        }
        if let Some(n) = self.sample_sizes.iter().find(|&&n| n < 2) {
            return bad(format!("sample size {n} is below 2"));
        }
        for g in &self.gaps {
            g.validate()
                .map_err(|e| Error::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }

    fn sorted_sizes(&self) -> Vec<(usize, usize)> {
        let mut v: Vec<(usize, usize)> = self.sample_sizes.iter().copied().enumerate().collect();
        v.sort_by_key(|&(idx, n)| (n, idx));
        v
    }

    fn sorted_estimators(&self) -> Vec<EstimatorKind> {
        let mut v = self.estimators.clone();
        v.sort();
        v.dedup();
        v
    }

    /// Index of cell `(n, mu)` in the seed derivation.
    pub fn cell_index(&self, n_index: usize, mu_index: usize) -> usize {
        n_index * self.gaps.len() + mu_index
    }

    pub fn replication_seed(&self, n_index: usize, mu_index: usize, rep: usize) -> u64 {
        derive_seed(
            self.base_seed,
            &[self.cell_index(n_index, mu_index) as u64, rep as u64],
        )
    }
}

/// An estimate `vec(P_hat)` and its projection onto stochastic matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct Estimate {
    pub raw: DVector<f64>,
    /// `None` when a row vanishes after clamping.
    pub projected: Option<DVector<f64>>,
}

impl Estimate {
    fn new(raw: DVector<f64>, support: &SupportSet) -> Self {
        let projected = project_stochastic(&raw, support)
            .ok()
            .and_then(|m| linalg::vec(m.matrix()).ok());
        Self { raw, projected }
    }

    /// The vector that enters the risk; `None` if it should be projected
    /// but cannot be.
    pub fn scored(&self, projected: bool) -> Option<&DVector<f64>> {
        match projected {
            true => self.projected.as_ref(),
            false => Some(&self.raw),
        }
    }
}

type Outcome = std::result::Result<Estimate, String>;

/// Outcome of one replication.
#[derive(Clone, Debug, PartialEq)]
pub struct Replication {
    pub plain: Outcome,
    /// `None` when the two-step estimator was not requested.
    pub two_step: Option<Outcome>,
    /// Trajectories drawn until every state occurred.
    pub attempts: usize,
}

impl Replication {
    fn failed(msg: String, two_step: bool, attempts: usize) -> Self {
        Self {
            plain: Err(msg.clone()),
            two_step: two_step.then_some(Err(msg)),
            attempts,
        }
    }

    fn get(&self, kind: EstimatorKind) -> Option<&Outcome> {
        match kind {
            EstimatorKind::Plain => Some(&self.plain),
            EstimatorKind::TwoStep => self.two_step.as_ref(),
        }
    }
}

struct Prepared {
    chart: AffineChart,
    init: InitialState,
}

fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let chart = build_chart(&config.support)?;
    // The invariant law is also invariant for the observed chain, so the
    // observations start in equilibrium even when P is periodic.
    let pi = invariant_distribution(&config.p)?;
    Ok(Prepared {
        chart,
        init: InitialState::Distribution(pi.iter().copied().collect()),
    })
}

const SINGULAR: &str = "singular normal matrix";

/// A replication fails when no trajectory visits every state within the
/// retry budget or when the normal matrix is singular; the two-step
/// estimator also fails when its plug-in weight is inadmissible. Under
/// projected scoring, an estimate whose projection does not exist counts as
/// a failure too.
fn run_one(
    config: &ExperimentConfig,
    prep: &Prepared,
    n: usize,
    mu: &GapDistribution,
    seed: u64,
    two_step: bool,
) -> Replication {
    let sample =
        match sample_until_all_states(&config.p, mu, n, &prep.init, seed, config.max_retries) {
            Ok(s) => s,
            Err(e) => return Replication::failed(e.to_string(), two_step, config.max_retries),
        };
    let attempts = sample.attempts;
    let kernel = match empirical_kernel(&sample.states, config.p.n_states()) {
        Ok(k) => k,
        Err(e) => return Replication::failed(e.to_string(), two_step, attempts),
    };
    if !two_step {
        let plain = estimator::estimate(&kernel.q_hat, &prep.chart, DEFAULT_RCOND)
            .map_err(|e| e.to_string())
            .and_then(|r| match r.diagnostics.used_pseudoinverse {
                true => Err(SINGULAR.to_string()),
                false => Ok(Estimate::new(r.p_hat, &config.support)),
            });
        return Replication {
            plain,
            two_step: None,
            attempts,
        };
    }
    match estimator::two_step_from_kernel(&kernel, &prep.chart, DEFAULT_RCOND) {
        Ok(r) if r.diagnostics.used_pseudoinverse => {
            Replication::failed(SINGULAR.into(), true, attempts)
        }
        Ok(r) => {
            let ts = match (r.p_hat_omega, r.two_step_fallback) {
                (Some(v), _) => Ok(Estimate::new(v, &config.support)),
                (None, reason) => {
                    Err(reason.unwrap_or_else(|| "two-step estimate unavailable".into()))
                }
            };
            Replication {
                plain: Ok(Estimate::new(r.p_hat, &config.support)),
                two_step: Some(ts),
                attempts,
            }
        }
        Err(e) => Replication::failed(e.to_string(), true, attempts),
    }
}

/// All replications of cell `(sample_sizes[n_index], gaps[mu_index])`, in
/// replication order.
pub fn replicate_cell(
    config: &ExperimentConfig,
    n_index: usize,
    mu_index: usize,
) -> Result<Vec<Replication>> {
    let prep = prepare(config)?;
    replicate_prepared(config, &prep, n_index, mu_index)
}

fn replicate_prepared(
    config: &ExperimentConfig,
    prep: &Prepared,
    n_index: usize,
    mu_index: usize,
) -> Result<Vec<Replication>> {
    let n = *config
        .sample_sizes
        .get(n_index)
        .ok_or_else(|| Error::InvalidConfig(format!("no sample size at index {n_index}")))?;
    let mu = config
        .gaps
        .get(mu_index)
        .ok_or_else(|| Error::InvalidConfig(format!("no gap law at index {mu_index}")))?;
    let two_step = config.estimators.contains(&EstimatorKind::TwoStep);
    Ok((0..config.replications)
        .into_par_iter()
        .map(|r| {
            run_one(
                config,
                prep,
                n,
                mu,
                config.replication_seed(n_index, mu_index, r),
                two_step,
            )
        })
        .collect())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiskCell {
    pub n: usize,
    pub mu: GapDistribution,
    #[serde(skip)]
    pub mu_index: usize,
    pub estimator: EstimatorKind,
    /// Mean of `|| p_hat - p ||^2` over successful replications.
    pub mse: f64,
    /// Standard error of `mse`; `None` with fewer than two successes.
    pub std_err: Option<f64>,
    /// Successful replications.
    pub reps: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RiskTable {
    pub example: String,
    pub cells: Vec<RiskCell>,
}

impl RiskTable {
    pub fn empty(example: impl Into<String>) -> Self {
        Self {
            example: example.into(),
            cells: Vec::new(),
        }
    }

    pub fn cell(
        &self,
        n: usize,
        mu: &GapDistribution,
        estimator: EstimatorKind,
    ) -> Option<&RiskCell> {
        self.cells
            .iter()
            .find(|c| c.n == n && &c.mu == mu && c.estimator == estimator)
    }
}

/// Summarizes squared errors: mean and standard error of the mean.
pub fn summarize(squared_errors: &[f64]) -> (f64, Option<f64>) {
    let m = squared_errors.len();
    if m == 0 {
        return (f64::NAN, None);
    }
    let mean = squared_errors.iter().sum::<f64>() / m as f64;
    if m < 2 {
        return (mean, None);
    }
    let var = squared_errors
        .iter()
        .map(|x| (x - mean).powi(2))
        .sum::<f64>()
        / (m - 1) as f64;
    (mean, Some((var / m as f64).sqrt()))
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<RiskTable> {
    let prep = prepare(config)?;
    let truth = linalg::vec(config.p.matrix())?;
    let estimators = config.sorted_estimators();
    let mut cells = Vec::new();
    for (n_index, n) in config.sorted_sizes() {
        for (mu_index, mu) in config.gaps.iter().enumerate() {
            let reps = replicate_prepared(config, &prep, n_index, mu_index)?;
            for &kind in &estimators {
                let mut errs = Vec::with_capacity(reps.len());
                let mut failures = 0;
                for rep in &reps {
                    match rep
                        .get(kind)
                        .and_then(|o| o.as_ref().ok())
                        .and_then(|e| e.scored(config.scoring.projects(kind)))
                    {
                        Some(v) => errs.push((v - &truth).norm_squared()),
                        None => failures += 1,
                    }
                }
                let (mse, std_err) = summarize(&errs);
                cells.push(RiskCell {
                    n,
                    mu: mu.clone(),
                    mu_index,
                    estimator: kind,
                    mse,
                    std_err,
                    reps: errs.len(),
                    failures,
                });
            }
        }
    }
    Ok(RiskTable {
        example: config.name.clone(),
        cells,
    })
}

fn example(name: &str, rows: &[&[f64]], gaps: Vec<GapDistribution>) -> ExperimentConfig {
    let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
    let p = StochasticMatrix::from_rows(&rows).expect("built-in kernel is stochastic");
    let support = SupportSet::from_matrix(p.matrix()).expect("built-in support is valid");
    ExperimentConfig {
        name: name.into(),
        p,
        support,
        gaps,
        sample_sizes: vec![200, 1000, 5000],
        replications: DEFAULT_REPLICATIONS,
        base_seed: 0,
        estimators: vec![EstimatorKind::Plain, EstimatorKind::TwoStep],
        max_retries: DEFAULT_MAX_RETRIES,
        scoring: Scoring::default(),
    }
}

/// The three reference settings: a random sparse 5-state kernel, an
/// 11-state birth-death queue and a hollow 4-state kernel. The support is
/// the support of `P` in each case.
pub fn builtin_examples() -> Vec<ExperimentConfig> {
    let g = |r: Result<GapDistribution>| r.expect("built-in gap law");
    let ex1 = example(
        "example-1",
        &[
            &[0.0, 0.61, 0.0, 0.0, 0.39],
            &[0.07, 0.0, 0.48, 0.27, 0.18],
            &[0.53, 0.0, 0.30, 0.0, 0.17],
            &[0.18, 0.20, 0.27, 0.35, 0.0],
            &[0.20, 0.0, 0.69, 0.0, 0.11],
        ],
        vec![
            g(GapDistribution::binomial(5, 0.3)),
            g(GapDistribution::poisson(1.0)),
            g(GapDistribution::geometric(0.5)),
        ],
    );
    let up = [1.0, 0.47, 0.35, 0.55, 0.70, 0.38, 0.32, 0.36, 0.48, 0.39];
    let down = [0.53, 0.65, 0.45, 0.30, 0.62, 0.68, 0.64, 0.52, 0.61, 1.0];
    let mut queue = vec![vec![0.0; 11]; 11];
    for i in 0..10 {
        queue[i][i + 1] = up[i];
        queue[i + 1][i] = down[i];
    }
    let queue_rows: Vec<&[f64]> = queue.iter().map(|r| r.as_slice()).collect();
    let small_gaps = || {
        vec![
            g(GapDistribution::binomial(2, 0.5)),
            g(GapDistribution::poisson(1.0)),
            g(GapDistribution::geometric(0.5)),
        ]
    };
    let ex2 = example("example-2", &queue_rows, small_gaps());
    let ex3 = example(
        "example-3",
        &[
            &[0.0, 0.22, 0.33, 0.45],
            &[0.38, 0.0, 0.06, 0.56],
            &[0.40, 0.13, 0.0, 0.47],
            &[0.42, 0.20, 0.38, 0.0],
        ],
        small_gaps(),
    );
    vec![ex1, ex2, ex3]
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Json,
    Text,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "text" | "txt" => Ok(Self::Text),
            other => Err(Error::InvalidInput(format!(
                "unknown table format {other:?}"
            ))),
        }
    }
}

pub const CSV_HEADER: [&str; 8] = [
    "example",
    "n",
    "mu",
    "estimator",
    "mse",
    "std_err",
    "reps",
    "failures",
];

fn ordered(table: &RiskTable) -> Vec<&RiskCell> {
    let mut cells: Vec<&RiskCell> = table.cells.iter().collect();
    cells.sort_by_key(|c| (c.n, c.mu_index, c.estimator));
    cells
}

fn fmt_num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.8}")
    } else {
        String::new()
    }
}

/// Serializes a table. Rows are ordered by `n`, then gap law in config
/// order, then plain before two-step.
pub fn emit_table(table: &RiskTable, format: TableFormat) -> Result<String> {
    match format {
        TableFormat::Csv => {
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(CSV_HEADER)?;
            for c in ordered(table) {
                w.write_record([
                    table.example.clone(),
                    c.n.to_string(),
                    c.mu.to_string(),
                    c.estimator.to_string(),
                    fmt_num(c.mse),
                    c.std_err.map(fmt_num).unwrap_or_default(),
                    c.reps.to_string(),
                    c.failures.to_string(),
                ])?;
            }
            let bytes = w
                .into_inner()
                .map_err(|e| Error::Numerical(e.to_string()))?;
            Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
        }
        TableFormat::Json => {
            let sorted = RiskTable {
                example: table.example.clone(),
                cells: ordered(table).into_iter().cloned().collect(),
            };
            let mut s = serde_json::to_string_pretty(&sorted)?;
            s.push('\n');
            Ok(s)
        }
        TableFormat::Text => Ok(text_table(table)),
    }
}

/// One column per `(n, mu)` and one row per estimator, with standard errors
/// in brackets.
fn text_table(table: &RiskTable) -> String {
    let cells = ordered(table);
    let mut columns: Vec<(usize, usize, String)> = Vec::new();
    let mut kinds: Vec<EstimatorKind> = Vec::new();
    for c in &cells {
        if !columns.iter().any(|&(n, m, _)| n == c.n && m == c.mu_index) {
            columns.push((c.n, c.mu_index, c.mu.label()));
        }
        if !kinds.contains(&c.estimator) {
            kinds.push(c.estimator);
        }
    }
    kinds.sort();
    let row_label = |k: EstimatorKind| match k {
        EstimatorKind::Plain => "R(p_hat)",
        EstimatorKind::TwoStep => "R(p_hat_Omega)",
    };
    let mut rows: Vec<Vec<String>> = vec![
        std::iter::once("n".to_string())
            .chain(columns.iter().map(|c| c.0.to_string()))
            .collect(),
        std::iter::once("mu".to_string())
            .chain(columns.iter().map(|c| c.2.clone()))
            .collect(),
    ];
    let any_failures = cells.iter().any(|c| c.failures > 0);
    for &k in &kinds {
        let mut row = vec![row_label(k).to_string()];
        let mut fail_row = vec![format!("failures {}", k.as_str())];
        for &(n, m, _) in &columns {
            let cell = cells
                .iter()
                .find(|c| c.n == n && c.mu_index == m && c.estimator == k);
            row.push(match cell {
                Some(c) if c.reps > 0 => match c.std_err {
                    Some(se) => format!("{:.4} ({:.4})", c.mse, se),
                    None => format!("{:.4}", c.mse),
                },
                _ => "-".into(),
            });
            fail_row.push(cell.map(|c| c.failures.to_string()).unwrap_or_default());
        }
        rows.push(row);
        if any_failures {
            rows.push(fail_row);
        }
    }
    let width: Vec<usize> = (0..=columns.len())
        .map(|j| rows.iter().map(|r| r[j].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    if !table.example.is_empty() {
        let _ = writeln!(out, "{}", table.example);
    }
    for (i, r) in rows.iter().enumerate() {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(j, s)| {
                if j == 0 {
                    format!("{s:<w$}", w = width[0])
                } else {
                    format!("{s:>w$}", w = width[j])
                }
            })
            .collect();
        let _ = writeln!(out, "{}", line.join(" | ").trim_end());
        if i == 1 {
            let total = width.iter().sum::<usize>() + 3 * columns.len();
            let _ = writeln!(out, "{}", "-".repeat(total));
        }
    }
    out
}
