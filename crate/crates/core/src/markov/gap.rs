//! Laws of the number of hidden jumps between two observations.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Binomial, Distribution, Geometric, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Accepted deviation of an explicit pmf (or a truncated series) from 1.
pub const PMF_SUM_TOL: f64 = 1e-10;

/// Default truncation threshold for unbounded supports.
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

/// Distribution `mu` of the iid gaps `tau_k`, supported on the naturals.
///
/// JSON form: `{"kind": "geometric", "params": {"p": 0.5}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(
    tag = "kind",
    content = "params",
    rename_all = "snake_case",
    try_from = "RawGap"
)]
pub enum GapDistribution {
    Binomial {
        n: u64,
        p: f64,
    },
    Poisson {
        lambda: f64,
    },
    /// Number of trials up to and including the first success; `mu(0) = 0`.
    Geometric {
        p: f64,
    },
    /// `pmf[l] = mu(l)`.
    Pmf {
        pmf: Vec<f64>,
    },
}

#[derive(Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
enum RawGap {
    Binomial { n: u64, p: f64 },
    Poisson { lambda: f64 },
    Geometric { p: f64 },
    Pmf { pmf: Vec<f64> },
}

impl TryFrom<RawGap> for GapDistribution {
    type Error = Error;

    fn try_from(raw: RawGap) -> Result<Self> {
        let gap = match raw {
            RawGap::Binomial { n, p } => Self::Binomial { n, p },
            RawGap::Poisson { lambda } => Self::Poisson { lambda },
            RawGap::Geometric { p } => Self::Geometric { p },
            RawGap::Pmf { pmf } => Self::Pmf { pmf },
        };
        gap.validate()?;
        Ok(gap)
    }
}

impl GapDistribution {
    pub fn binomial(n: u64, p: f64) -> Result<Self> {
        let g = Self::Binomial { n, p };
        g.validate()?;
        Ok(g)
    }

    pub fn poisson(lambda: f64) -> Result<Self> {
        let g = Self::Poisson { lambda };
        g.validate()?;
        Ok(g)
    }

    pub fn geometric(p: f64) -> Result<Self> {
        let g = Self::Geometric { p };
        g.validate()?;
        Ok(g)
    }

    pub fn pmf(pmf: Vec<f64>) -> Result<Self> {
        let g = Self::Pmf { pmf };
        g.validate()?;
        Ok(g)
    }

    /// Dirac mass at `l` jumps.
    pub fn point_mass(l: usize) -> Self {
        let mut pmf = vec![0.0; l + 1];
        pmf[l] = 1.0;
        Self::Pmf { pmf }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidGap(msg));
        match *self {
            Self::Binomial { p, .. } if !(0.0..=1.0).contains(&p) => {
                bad(format!("binomial p must lie in [0, 1], got {p}"))
            }
            Self::Poisson { lambda } if !(lambda > 0.0 && lambda.is_finite()) => {
                bad(format!("poisson lambda must be positive, got {lambda}"))
            }
            Self::Geometric { p } if !(p > 0.0 && p <= 1.0) => {
                bad(format!("geometric p must lie in (0, 1], got {p}"))
            }
            Self::Pmf { ref pmf } => {
                if pmf.is_empty() {
                    return bad("empty pmf".into());
                }
                if let Some(x) = pmf.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
                    return bad(format!("pmf entries must be non-negative, got {x}"));
                }
                let total: f64 = pmf.iter().sum();
                if (total - 1.0).abs() > PMF_SUM_TOL {
                    return bad(format!("pmf sums to {total}, not 1"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// `mu(l)`.
    pub fn prob(&self, l: usize) -> f64 {
        match *self {
            Self::Binomial { n, p } => {
                let n = n as usize;
                if l > n {
                    return 0.0;
                }
                if p == 0.0 {
                    return if l == 0 { 1.0 } else { 0.0 };
                }
                if p == 1.0 {
                    return if l == n { 1.0 } else { 0.0 };
                }
                let ln_choose = ln_factorial(n) - ln_factorial(l) - ln_factorial(n - l);
                (ln_choose + l as f64 * p.ln() + (n - l) as f64 * (1.0 - p).ln()).exp()
            }
            Self::Poisson { lambda } => (l as f64 * lambda.ln() - lambda - ln_factorial(l)).exp(),
            Self::Geometric { p } => {
                if l == 0 {
                    0.0
                } else {
                    p * (1.0 - p).powi(l as i32 - 1)
                }
            }
            Self::Pmf { ref pmf } => pmf.get(l).copied().unwrap_or(0.0),
        }
    }

    /// `mu(0), ..., mu(L)` where `L` is the smallest level whose remaining
    /// tail mass is below `tail_tol` (or the end of a bounded support).
    pub fn truncated_pmf(&self, tail_tol: f64) -> Vec<f64> {
        match *self {
            Self::Binomial { n, .. } => (0..=n as usize).map(|l| self.prob(l)).collect(),
            Self::Pmf { ref pmf } => pmf.clone(),
            Self::Geometric { p } => {
                // tail beyond L is (1-p)^L
                let mut table = vec![0.0];
                let mut tail = 1.0;
                let mut l = 1;
                while tail >= tail_tol {
                    table.push(self.prob(l));
                    tail = (1.0 - p).powi(l as i32);
                    l += 1;
                }
                table
            }
            Self::Poisson { .. } => {
                let mut table = Vec::new();
                let mut cumulative = 0.0;
                let mut l = 0;
                loop {
                    let m = self.prob(l);
                    table.push(m);
                    cumulative += m;
                    l += 1;
                    if 1.0 - cumulative < tail_tol {
                        break;
                    }
                }
                table
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            Self::Binomial { n, p } => n as f64 * p,
            Self::Poisson { lambda } => lambda,
            Self::Geometric { p } => 1.0 / p,
            Self::Pmf { ref pmf } => pmf.iter().enumerate().map(|(l, m)| l as f64 * m).sum(),
        }
    }

    /// Probability generating function `G(z) = sum_l mu(l) z^l` for
    /// `|z| <= 1`.
    pub fn pgf(&self, z: f64) -> f64 {
        match *self {
            Self::Binomial { n, p } => (1.0 - p + p * z).powi(n as i32),
            Self::Poisson { lambda } => (lambda * (z - 1.0)).exp(),
            Self::Geometric { p } => p * z / (1.0 - (1.0 - p) * z),
            Self::Pmf { ref pmf } => pmf.iter().rev().fold(0.0, |acc, m| acc * z + m),
        }
    }

    pub(crate) fn sampler(&self) -> Result<GapSampler> {
        let err = |e: &dyn fmt::Display| Error::InvalidGap(e.to_string());
        Ok(match *self {
            Self::Binomial { n, p } => {
                GapSampler::Binomial(Binomial::new(n, p).map_err(|e| err(&e))?)
            }
            Self::Poisson { lambda } => {
                GapSampler::Poisson(Poisson::new(lambda).map_err(|e| err(&e))?)
            }
            Self::Geometric { p } => GapSampler::Geometric(Geometric::new(p).map_err(|e| err(&e))?),
            Self::Pmf { ref pmf } => {
                GapSampler::Table(WeightedIndex::new(pmf).map_err(|e| err(&e))?)
            }
        })
    }

    /// Short label in risk-table notation, e.g. `G(0.5)`.
    pub fn label(&self) -> String {
        match self {
            Self::Binomial { n, p } => format!("B({n},{p})"),
            Self::Poisson { lambda } => format!("P({lambda})"),
            Self::Geometric { p } => format!("G({p})"),
            Self::Pmf { pmf } => {
                let parts: Vec<String> = pmf.iter().map(|x| x.to_string()).collect();
                format!("pmf({})", parts.join(","))
            }
        }
    }
}

pub(crate) enum GapSampler {
    Binomial(Binomial),
    Poisson(Poisson<f64>),
    Geometric(Geometric),
    Table(WeightedIndex<f64>),
}

impl GapSampler {
    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match self {
            Self::Binomial(d) => d.sample(rng) as usize,
            Self::Poisson(d) => d.sample(rng) as usize,
            // rand_distr counts failures before the first success
            Self::Geometric(d) => d.sample(rng) as usize + 1,
            Self::Table(d) => d.sample(rng),
        }
    }
}

fn ln_factorial(k: usize) -> f64 {
    (1..=k).map(|i| (i as f64).ln()).sum()
}

/// `kind:param[,param]`, e.g. `geometric:0.5`, `binomial:5,0.3`,
/// `poisson:1`, `pmf:0,0.5,0.5`. Loading `pmf:@file` is handled in
/// [`crate::io::parse_gap_spec`].
impl FromStr for GapDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, params) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidGap(format!("expected kind:params, got {s:?}")))?;
        let nums = || -> Result<Vec<f64>> {
            params
                .split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::InvalidGap(format!("bad number {t:?} in {s:?}")))
                })
                .collect()
        };
        let arity = |v: &[f64], k: usize| {
            if v.len() == k {
                Ok(())
            } else {
                Err(Error::InvalidGap(format!(
                    "{kind} takes {k} parameter(s), got {}",
                    v.len()
                )))
            }
        };
        match kind.trim().to_ascii_lowercase().as_str() {
            "binomial" => {
                let v = nums()?;
                arity(&v, 2)?;
                if v[0] < 0.0 || v[0].fract() != 0.0 {
                    return Err(Error::InvalidGap(format!(
                        "binomial n must be a count, got {}",
                        v[0]
                    )));
                }
                Self::binomial(v[0] as u64, v[1])
            }
            "poisson" => {
                let v = nums()?;
                arity(&v, 1)?;
                Self::poisson(v[0])
            }
            "geometric" => {
                let v = nums()?;
                arity(&v, 1)?;
                Self::geometric(v[0])
            }
            "pmf" => Self::pmf(nums()?),
            "point" | "dirac" => {
                let v = nums()?;
                arity(&v, 1)?;
                if v[0] < 0.0 || v[0].fract() != 0.0 {
                    return Err(Error::InvalidGap(format!(
                        "point mass needs a count, got {}",
                        v[0]
                    )));
                }
                Ok(Self::point_mass(v[0] as usize))
            }
            other => Err(Error::InvalidGap(format!("unknown gap kind {other:?}"))),
        }
    }
}

impl fmt::Display for GapDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Binomial { n, p } => write!(f, "binomial:{n},{p}"),
            Self::Poisson { lambda } => write!(f, "poisson:{lambda}"),
            Self::Geometric { p } => write!(f, "geometric:{p}"),
            Self::Pmf { pmf } => {
                let parts: Vec<String> = pmf.iter().map(|x| x.to_string()).collect();
                write!(f, "pmf:{}", parts.join(","))
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;

    #[test]
    fn truncated_tables_sum_to_one() {
        for g in [
            GapDistribution::binomial(5, 0.3).unwrap(),
            GapDistribution::poisson(1.0).unwrap(),
            GapDistribution::geometric(0.5).unwrap(),
            GapDistribution::binomial(2, 0.5).unwrap(),
        ] {
            let t = g.truncated_pmf(DEFAULT_TAIL_TOL);
            let total: f64 = t.iter().sum();
            assert!((total - 1.0).abs() < PMF_SUM_TOL, "{g}: {total}");
        }
    }

    #[test]
    fn geometric_has_no_mass_at_zero() {
        let g = GapDistribution::geometric(0.5).unwrap();
        assert_eq!(g.prob(0), 0.0);
        assert_eq!(g.prob(1), 0.5);
        assert_eq!(g.prob(2), 0.25);
        assert_eq!(g.truncated_pmf(1e-12)[0], 0.0);
    }

    #[test]
    fn binomial_pmf_values() {
        let g = GapDistribution::binomial(2, 0.5).unwrap();
        assert!((g.prob(0) - 0.25).abs() < 1e-15);
        assert!((g.prob(1) - 0.5).abs() < 1e-15);
        assert_eq!(g.prob(3), 0.0);
    }

    #[test]
    fn pgf_agrees_with_table() {
        for g in [
            GapDistribution::binomial(5, 0.3).unwrap(),
            GapDistribution::poisson(1.0).unwrap(),
            GapDistribution::geometric(0.5).unwrap(),
        ] {
            let z: f64 = 0.7;
            let series: f64 = g
                .truncated_pmf(1e-14)
                .iter()
                .enumerate()
                .map(|(l, m)| m * z.powi(l as i32))
                .sum();
            assert!((series - g.pgf(z)).abs() < 1e-12);
            assert!((g.pgf(1.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(GapDistribution::geometric(0.0).is_err());
        assert!(GapDistribution::poisson(-1.0).is_err());
        assert!(GapDistribution::binomial(3, 1.5).is_err());
        assert!(GapDistribution::pmf(vec![0.5, 0.4]).is_err());
        assert!(GapDistribution::pmf(vec![1.5, -0.5]).is_err());
    }

    #[test]
    fn spec_strings_round_trip() {
        for s in [
            "geometric:0.5",
            "binomial:5,0.3",
            "poisson:1",
            "pmf:0,0.5,0.5",
        ] {
            let g: GapDistribution = s.parse().unwrap();
            assert_eq!(g.to_string(), s);
        }
        assert_eq!(
            "point:2".parse::<GapDistribution>().unwrap(),
            GapDistribution::point_mass(2)
        );
        assert!("geometric".parse::<GapDistribution>().is_err());
        assert!("binomial:5".parse::<GapDistribution>().is_err());
        assert!("weibull:1".parse::<GapDistribution>().is_err());
    }

    #[test]
    fn json_form() {
        let g: GapDistribution =
            serde_json::from_str(r#"{"kind":"binomial","params":{"n":5,"p":0.3}}"#).unwrap();
        assert_eq!(g, GapDistribution::Binomial { n: 5, p: 0.3 });
        let back = serde_json::to_string(&GapDistribution::geometric(0.5).unwrap()).unwrap();
        assert_eq!(back, r#"{"kind":"geometric","params":{"p":0.5}}"#);
        assert!(serde_json::from_str::<GapDistribution>(
            r#"{"kind":"geometric","params":{"p":2.0}}"#
        )
        .is_err());
    }

    #[test]
    fn sample_means_match() {
        let mut rng = rng_from_seed(1);
        for g in [
            GapDistribution::binomial(5, 0.3).unwrap(),
            GapDistribution::poisson(1.0).unwrap(),
            GapDistribution::geometric(0.5).unwrap(),
            GapDistribution::pmf(vec![0.2, 0.3, 0.5]).unwrap(),
        ] {
            let s = g.sampler().unwrap();
            let n = 50_000;
            let mean = (0..n).map(|_| s.sample(&mut rng) as f64).sum::<f64>() / n as f64;
            assert!((mean - g.mean()).abs() < 0.05, "{g}: {mean}");
        }
        let s = GapDistribution::geometric(0.5).unwrap().sampler().unwrap();
        assert!((0..1000).all(|_| s.sample(&mut rng) >= 1));
    }
}
