//! `kernel-unveil`: estimate a Markov transition kernel from observations
//! taken at random, unknown time gaps.
//!
//! Exit codes: 0 success, 2 bad input, 3 a state is never observed (or the
//! simulation retry budget ran out), 4 the support is not identifiable or the
//! normal matrix is singular, 5 other numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use kernel_unveil::estimator::{two_step_from_kernel, DEFAULT_RCOND};
use kernel_unveil::io::{
    format_observations, load_experiment_config, matrix_to_csv, parse_gap_spec, read_observations,
    read_stochastic_matrix, read_support, write_atomic,
};
use kernel_unveil::montecarlo::{EstimatorKind, ExperimentConfig, Scoring, TableFormat};
use kernel_unveil::support::{
    necessary_conditions_report, randomized_genericity_probe, DEFAULT_RANK_RTOL,
};
use kernel_unveil::{
    asymptotic_covariance, build_chart, builtin_examples, emit_table, empirical_kernel, estimate,
    run_experiment, sample_until_all_states, sigma_matrix, simulate_subsampled, Error,
    InitialState,
};

const EXIT_INPUT: u8 = 2;
const EXIT_UNVISITED: u8 = 3;
const EXIT_IDENTIFIABILITY: u8 = 4;
const EXIT_NUMERICAL: u8 = 5;

const THREADS_VAR: &str = "KERNEL_UNVEIL_THREADS";

#[derive(Parser)]
#[command(
    name = "kernel-unveil",
    version,
    about = "Transition-kernel recovery from randomly subsampled Markov chains"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate P from an observed state sequence and a support file.
    Estimate(EstimateArgs),
    /// Simulate a subsampled chain.
    Simulate(SimulateArgs),
    /// Run a Monte Carlo risk experiment.
    Benchmark(BenchmarkArgs),
    /// Necessary conditions and a randomized rank probe for a support.
    CheckIdentifiability(CheckArgs),
    /// List the built-in examples or print one of them.
    Examples(ExamplesArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// 1-based states separated by commas or whitespace.
    observations: PathBuf,
    /// Support as JSON: {"n_states": N, "pairs": [[i, j], ...]} (1-based).
    support: PathBuf,
    /// Also compute the plug-in optimally weighted estimate.
    #[arg(long)]
    two_step: bool,
    /// Include the estimate projected onto stochastic matrices.
    #[arg(long)]
    project: bool,
    /// Include the plug-in asymptotic covariance of the plain estimate.
    #[arg(long)]
    covariance: bool,
    /// Reciprocal condition number below which the normal matrix counts as singular.
    #[arg(long, default_value_t = DEFAULT_RCOND)]
    tol: f64,
    /// Write the JSON report here instead of stdout.
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Transition matrix, CSV or JSON.
    p: PathBuf,
    /// Gap law, e.g. geometric:0.5, binomial:5,0.3, poisson:1, point:1, pmf:@file.
    #[arg(long)]
    mu: String,
    /// Number of observations.
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `stationary`, `invariant` (allowed for periodic chains) or a 1-based state.
    #[arg(long, default_value = "stationary")]
    init: String,
    /// Redraw whole trajectories until every state is observed.
    #[arg(long)]
    condition_all_states: bool,
    #[arg(long, default_value_t = 1000)]
    max_retries: usize,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Experiment config (JSON).
    #[arg(required_unless_present = "example", conflicts_with = "example")]
    config: Option<PathBuf>,
    /// Built-in example 1, 2 or 3.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    example: Option<u8>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    /// Gap law; repeat for several.
    #[arg(long)]
    mu: Vec<String>,
    /// Comma-separated: plain, two_step.
    #[arg(long, value_delimiter = ',')]
    estimators: Option<Vec<String>>,
    /// plain_projected, projected or raw.
    #[arg(long)]
    scoring: Option<String>,
    /// csv, json or text.
    #[arg(long, default_value = "csv")]
    format: String,
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct CheckArgs {
    support: PathBuf,
    #[arg(long, default_value = "geometric:0.5")]
    mu: String,
    #[arg(long, default_value_t = 100)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct ExamplesArgs {
    /// Example to print (1, 2 or 3); lists all when omitted.
    #[arg(value_parser = clap::value_parser!(u8).range(1..=3))]
    index: Option<u8>,
    /// Print the support as JSON instead of P as CSV.
    #[arg(long)]
    support: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Estimate(a) => cmd_estimate(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Benchmark(a) => cmd_benchmark(a),
        Command::CheckIdentifiability(a) => cmd_check(a),
        Command::Examples(a) => cmd_examples(a),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    let Some(err) = e.chain().find_map(|c| c.downcast_ref::<Error>()) else {
        return EXIT_INPUT;
    };
    match err {
        Error::UnvisitedState(_) | Error::RetryBudgetExhausted { .. } => EXIT_UNVISITED,
        Error::Inadmissible { .. } | Error::Singular(_) => EXIT_IDENTIFIABILITY,
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(value) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let threads: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&t| t > 0)
        .with_context(|| format!("{THREADS_VAR} must be a positive integer, got {value:?}"))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn emit(output: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(path) => write_atomic(path, text.as_bytes())
            .with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn cmd_estimate(a: EstimateArgs) -> anyhow::Result<u8> {
    if !(a.tol > 0.0 && a.tol < 1.0) {
        bail!("--tol must lie in (0, 1), got {}", a.tol);
    }
    let y = read_observations(&a.observations)
        .with_context(|| format!("reading {}", a.observations.display()))?;
    let support =
        read_support(&a.support).with_context(|| format!("reading {}", a.support.display()))?;
    let conditions = necessary_conditions_report(&support);
    let structural = conditions.structurally_non_identifiable();
    if structural {
        eprint!("warning: support cannot be identifiable\n{conditions}");
    }
    let kernel = empirical_kernel(&y, support.n_states())?;
    let chart = build_chart(&support)?;
    let mut report = if a.two_step {
        two_step_from_kernel(&kernel, &chart, a.tol)?
    } else {
        let mut r = estimate(&kernel.q_hat, &chart, a.tol)?;
        r.q_hat = Some(kernel.q_hat.matrix().clone());
        r.pi_hat = Some(kernel.pi_hat.clone());
        r
    };
    if let Some(reason) = &report.two_step_fallback {
        eprintln!("warning: two-step estimate unavailable: {reason}");
    }
    if a.covariance {
        let sigma = sigma_matrix(kernel.q_hat.matrix(), &kernel.pi_hat)?;
        match asymptotic_covariance(
            &report.p_hat_matrix(),
            kernel.q_hat.matrix(),
            &sigma,
            &chart,
            None,
        ) {
            Ok(c) => report.covariance = Some(c),
            Err(e) => eprintln!("warning: no covariance: {e}"),
        }
    }
    if !a.project {
        report.p_hat_projected = None;
    }
    let singular = report.diagnostics.used_pseudoinverse;
    if singular {
        eprintln!(
            "warning: normal matrix is singular (rank {} of {}); reporting the minimum-norm solution",
            report.diagnostics.rank, report.diagnostics.expected_rank
        );
    }
    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    emit(a.output.as_deref(), &json)?;
    Ok(if structural || singular {
        EXIT_IDENTIFIABILITY
    } else {
        0
    })
}

fn cmd_simulate(a: SimulateArgs) -> anyhow::Result<u8> {
    let p = read_stochastic_matrix(&a.p).with_context(|| format!("reading {}", a.p.display()))?;
    let mu = parse_gap_spec(&a.mu, None)?;
    let init = match a.init.trim() {
        "stationary" => InitialState::Stationary,
        "invariant" => InitialState::Distribution(
            kernel_unveil::invariant_distribution(&p)?
                .iter()
                .copied()
                .collect(),
        ),
        s => {
            let state: usize = s
                .parse()
                .ok()
                .filter(|&k| (1..=p.n_states()).contains(&k))
                .with_context(|| {
                    format!(
                        "--init must be stationary, invariant or a state in 1..={}, got {s:?}",
                        p.n_states()
                    )
                })?;
            InitialState::State(state - 1)
        }
    };
    let states = if a.condition_all_states {
        let sample = sample_until_all_states(&p, &mu, a.n, &init, a.seed, a.max_retries)?;
        eprintln!("retries: {}", sample.attempts - 1);
        sample.states
    } else {
        simulate_subsampled(&p, &mu, a.n, &init, a.seed)?
    };
    emit(a.output.as_deref(), &format_observations(&states))?;
    Ok(0)
}

fn benchmark_config(a: &BenchmarkArgs) -> anyhow::Result<ExperimentConfig> {
    let mut config = match (&a.config, a.example) {
        (Some(path), _) => {
            load_experiment_config(path).with_context(|| format!("loading {}", path.display()))?
        }
        (None, Some(k)) => builtin_examples().remove(k as usize - 1),
        (None, None) => bail!("give a config file or --example"),
    };
    if let Some(reps) = a.reps {
        config.replications = reps;
    }
    if let Some(seed) = a.seed {
        config.base_seed = seed;
    }
    if let Some(n) = &a.n {
        config.sample_sizes = n.clone();
    }
    if !a.mu.is_empty() {
        config.gaps =
            a.mu.iter()
                .map(|s| parse_gap_spec(s, None))
                .collect::<Result<_, _>>()?;
    }
    if let Some(names) = &a.estimators {
        config.estimators = names
            .iter()
            .map(|s| s.parse())
            .collect::<Result<Vec<EstimatorKind>, _>>()?;
    }
    if let Some(s) = &a.scoring {
        config.scoring = s.parse::<Scoring>()?;
    }
    config.validate()?;
    Ok(config)
}

fn cmd_benchmark(a: BenchmarkArgs) -> anyhow::Result<u8> {
    let format: TableFormat = a.format.parse()?;
    let config = benchmark_config(&a)?;
    let table = run_experiment(&config)?;
    emit(a.output.as_deref(), &emit_table(&table, format)?)?;
    Ok(0)
}

fn cmd_check(a: CheckArgs) -> anyhow::Result<u8> {
    let support =
        read_support(&a.support).with_context(|| format!("reading {}", a.support.display()))?;
    let mu = parse_gap_spec(&a.mu, None)?;
    let conditions = necessary_conditions_report(&support);
    let probe = randomized_genericity_probe(&support, &mu, a.trials, a.seed, DEFAULT_RANK_RTOL)?;
    if a.json {
        let v = serde_json::json!({
            "conditions": conditions,
            "structurally_non_identifiable": conditions.structurally_non_identifiable(),
            "mu": mu.to_string(),
            "probe": probe,
        });
        println!("{}", serde_json::to_string_pretty(&v)?);
    } else {
        print!("{conditions}");
        println!(
            "rank probe ({mu}, seed {}): {}/{} random kernels identifiable, fraction {:.3}",
            a.seed, probe.identifiable, probe.trials, probe.fraction
        );
    }
    Ok(0)
}

fn cmd_examples(a: ExamplesArgs) -> anyhow::Result<u8> {
    let examples = builtin_examples();
    match a.index {
        None => {
            for (k, ex) in examples.iter().enumerate() {
                println!(
                    "{}  {}  N = {}  d = {}",
                    k + 1,
                    ex.name,
                    ex.p.n_states(),
                    ex.support.len()
                );
            }
        }
        Some(k) => {
            let ex = &examples[k as usize - 1];
            if a.support {
                println!("{}", serde_json::to_string_pretty(&ex.support)?);
            } else {
                print!("{}", matrix_to_csv(ex.p.matrix()));
            }
        }
    }
    Ok(0)
}
