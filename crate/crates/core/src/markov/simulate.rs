use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::Distribution;

use super::{stationary_distribution, GapDistribution, StochasticMatrix};
use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Law of `X_0`.
#[derive(Clone, Debug, PartialEq)]
pub enum InitialState {
    /// Fixed 0-based state.
    State(usize),
    /// Stationary law of `P` (requires an irreducible aperiodic chain).
    Stationary,
    /// Explicit probability vector.
    Distribution(Vec<f64>),
}

struct ChainSampler {
    rows: Vec<WeightedIndex<f64>>,
}

impl ChainSampler {
    fn new(p: &StochasticMatrix) -> Result<Self> {
        let m = p.matrix();
        let rows = (0..p.n_states())
            .map(|i| {
                let w: Vec<f64> = m.row(i).iter().copied().collect();
                WeightedIndex::new(&w)
                    .map_err(|e| Error::NotStochastic(format!("row {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { rows })
    }

    #[inline]
    fn step<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        self.rows[state].sample(rng)
    }
}

enum StartSampler {
    Fixed(usize),
    Random(WeightedIndex<f64>),
}

impl StartSampler {
    fn new(p: &StochasticMatrix, init: &InitialState) -> Result<Self> {
        let n = p.n_states();
        let from_weights = |w: &[f64]| -> Result<Self> {
            if w.len() != n {
                return Err(Error::Dimension(format!(
                    "initial law has {} entries for {} states",
                    w.len(),
                    n
                )));
            }
            WeightedIndex::new(w)
                .map(Self::Random)
                .map_err(|e| Error::InvalidInput(format!("initial law: {e}")))
        };
        match init {
            InitialState::State(s) if *s < n => Ok(Self::Fixed(*s)),
            InitialState::State(s) => Err(Error::InvalidInput(format!(
                "initial state {} outside 1..={}",
                s + 1,
                n
            ))),
            InitialState::Stationary => {
                let pi = stationary_distribution(p)?;
                from_weights(pi.as_slice())
            }
            InitialState::Distribution(w) => from_weights(w),
        }
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            Self::Fixed(s) => *s,
            Self::Random(d) => d.sample(rng),
        }
    }
}

fn simulate_with<R: Rng + ?Sized>(
    chain: &ChainSampler,
    start: &StartSampler,
    mu: &GapDistribution,
    n: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let gaps = mu.sampler()?;
    let mut x = start.draw(rng);
    let taus: Vec<usize> = (1..n).map(|_| gaps.sample(rng)).collect();
    let mut y = Vec::with_capacity(n);
    y.push(x);
    for tau in taus {
        for _ in 0..tau {
            x = chain.step(x, rng);
        }
        y.push(x);
    }
    Ok(y)
}

/// Observes `Y_1 = X_0` drawn from `init`, then `Y_k = X_{S_k}` with
/// `S_k = tau_2 + ... + tau_k` and iid gaps `tau_k ~ mu`. States are 0-based.
/// Deterministic in `seed`.
pub fn simulate_subsampled(
    p: &StochasticMatrix,
    mu: &GapDistribution,
    n: usize,
    init: &InitialState,
    seed: u64,
) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    let chain = ChainSampler::new(p)?;
    let start = StartSampler::new(p, init)?;
    simulate_with(&chain, &start, mu, n, &mut rng_from_seed(seed))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConditionedSample {
    pub states: Vec<usize>,
    /// Number of trajectories drawn, including the accepted one.
    pub attempts: usize,
}

/// Redraws whole trajectories until every state occurs. Attempt `k`
/// (0-based) uses seed `seed + k`.
pub fn sample_until_all_states(
    p: &StochasticMatrix,
    mu: &GapDistribution,
    n: usize,
    init: &InitialState,
    seed: u64,
    max_retries: usize,
) -> Result<ConditionedSample> {
    if max_retries == 0 {
        return Err(Error::InvalidInput("max_retries must be at least 1".into()));
    }
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "need at least 2 observations, got {n}"
        )));
    }
    let n_states = p.n_states();
    if n < n_states {
        return Err(Error::RetryBudgetExhausted {
            n_states,
            attempts: 0,
        });
    }
    let chain = ChainSampler::new(p)?;
    let start = StartSampler::new(p, init)?;
    let mut seen = vec![false; n_states];
    for attempt in 0..max_retries {
        let mut rng = rng_from_seed(seed.wrapping_add(attempt as u64));
        let states = simulate_with(&chain, &start, mu, n, &mut rng)?;
        seen.fill(false);
        for &s in &states {
            seen[s] = true;
        }
        if seen.iter().all(|&b| b) {
            return Ok(ConditionedSample {
                states,
                attempts: attempt + 1,
            });
        }
    }
    Err(Error::RetryBudgetExhausted {
        n_states,
        attempts: max_retries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn cycle3() -> StochasticMatrix {
        StochasticMatrix::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .unwrap()
    }

    #[test]
    fn unit_gaps_trace_the_chain() {
        let swap = StochasticMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let y = simulate_subsampled(
            &swap,
            &GapDistribution::point_mass(1),
            4,
            &InitialState::State(0),
            3,
        )
        .unwrap();
        assert_eq!(y, vec![0, 1, 0, 1]);
    }

    #[test]
    fn stride_three_on_three_cycle_is_constant() {
        let y = simulate_subsampled(
            &cycle3(),
            &GapDistribution::point_mass(3),
            50,
            &InitialState::State(1),
            9,
        )
        .unwrap();
        assert!(y.iter().all(|&s| s == 1));
    }

    #[test]
    fn seeded_runs_are_identical() {
        let p = StochasticMatrix::from_rows(&[vec![0.3, 0.7], vec![0.6, 0.4]]).unwrap();
        let mu = GapDistribution::poisson(1.0).unwrap();
        let a = simulate_subsampled(&p, &mu, 500, &InitialState::Stationary, 77).unwrap();
        let b = simulate_subsampled(&p, &mu, 500, &InitialState::Stationary, 77).unwrap();
        let c = simulate_subsampled(&p, &mu, 500, &InitialState::Stationary, 78).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn stationary_start_rejected_for_periodic_chain() {
        let swap = StochasticMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let err = simulate_subsampled(
            &swap,
            &GapDistribution::point_mass(1),
            4,
            &InitialState::Stationary,
            0,
        );
        assert!(matches!(err, Err(Error::Periodic(2))));
    }

    #[test]
    fn unit_gap_frequencies_pass_chi_square() {
        // Pearson statistic of transition counts against P, per row,
        // compared with the 0.999 quantile of chi^2 with (k - 1) dof.
        let p = StochasticMatrix::from_rows(&[
            vec![0.2, 0.5, 0.3],
            vec![0.6, 0.0, 0.4],
            vec![0.1, 0.1, 0.8],
        ])
        .unwrap();
        let y = simulate_subsampled(
            &p,
            &GapDistribution::point_mass(1),
            100_000,
            &InitialState::Stationary,
            4,
        )
        .unwrap();
        let mut counts = DMatrix::<f64>::zeros(3, 3);
        for w in y.windows(2) {
            counts[(w[0], w[1])] += 1.0;
        }
        // chi^2_{0.999} quantiles for 1 and 2 degrees of freedom
        let crit = [10.828, 13.816];
        for i in 0..3 {
            let total = counts.row(i).sum();
            let cells: Vec<usize> = (0..3).filter(|&j| p.get(i, j) > 0.0).collect();
            let stat: f64 = cells
                .iter()
                .map(|&j| {
                    let e = total * p.get(i, j);
                    (counts[(i, j)] - e).powi(2) / e
                })
                .sum();
            assert!(stat < crit[cells.len() - 2], "row {i}: chi2 = {stat}");
            assert!(cells.len() == 3 || counts[(i, 1)] == 0.0);
        }
    }

    #[test]
    fn conditioning_accepts_easy_case_immediately() {
        let p = StochasticMatrix::from_rows(&[vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        let s = sample_until_all_states(
            &p,
            &GapDistribution::point_mass(1),
            100,
            &InitialState::Stationary,
            1,
            10,
        )
        .unwrap();
        assert_eq!(s.attempts, 1);
        assert_eq!(s.states.len(), 100);
    }

    #[test]
    fn conditioning_fails_when_n_below_state_count() {
        let err = sample_until_all_states(
            &cycle3(),
            &GapDistribution::point_mass(1),
            2,
            &InitialState::State(0),
            1,
            50,
        );
        assert!(matches!(err, Err(Error::RetryBudgetExhausted { .. })));
    }

    #[test]
    fn conditioning_budget_is_enforced() {
        // stride-3 on a 3-cycle never leaves the start state
        let err = sample_until_all_states(
            &cycle3(),
            &GapDistribution::point_mass(3),
            10,
            &InitialState::State(0),
            1,
            5,
        );
        assert!(matches!(
            err,
            Err(Error::RetryBudgetExhausted { attempts: 5, .. })
        ));
    }
}
