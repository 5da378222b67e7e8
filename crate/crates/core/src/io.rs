//! Plain-text file formats.
//!
//! * Matrices: headerless CSV, or JSON either as an array of rows or as
//!   `{"n_states": N, "entries": [[...], ...]}`.
//! * Supports: `{"n_states": N, "pairs": [[i, j], ...]}` with 1-based
//!   indices, or any matrix file (the nonzero pattern is used).
//! * Observations: 1-based integer states separated by commas, whitespace
//!   or newlines.
//! * Experiment configs: JSON, see [`load_experiment_config`].

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix};
use crate::markov::{GapDistribution, StochasticMatrix};
use crate::montecarlo::{EstimatorKind, ExperimentConfig, Scoring, DEFAULT_MAX_RETRIES};
use crate::support::SupportSet;

fn is_json(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn matrix_from_json(v: &Value) -> Result<DenseMatrix> {
    let rows = match v {
        Value::Array(_) => v,
        Value::Object(o) => o
            .get("entries")
            .ok_or_else(|| Error::InvalidInput("matrix object needs \"entries\"".into()))?,
        _ => {
            return Err(Error::InvalidInput(
                "matrix must be an array of rows".into(),
            ))
        }
    };
    let rows: Vec<Vec<f64>> = serde_json::from_value(rows.clone())
        .map_err(|e| Error::InvalidInput(format!("matrix entries: {e}")))?;
    let m = linalg::from_rows(&rows)?;
    if let Some(n) = v.get("n_states").and_then(Value::as_u64) {
        if n as usize != m.nrows() {
            return Err(Error::Dimension(format!(
                "n_states is {n} but {} rows are given",
                m.nrows()
            )));
        }
    }
    Ok(m)
}

/// Parses a headerless numeric CSV matrix.
pub fn parse_matrix_csv(text: &str) -> Result<DenseMatrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        if record.iter().all(str::is_empty) {
            continue;
        }
        let row = record
            .iter()
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::InvalidInput(format!("row {}: bad number {t:?}", r + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(row);
    }
    linalg::from_rows(&rows)
}

pub fn read_matrix(path: &Path) -> Result<DenseMatrix> {
    let text = read_to_string(path)?;
    if is_json(path) {
        let v: Value = serde_json::from_str(&text)?;
        matrix_from_json(&v)
    } else {
        parse_matrix_csv(&text)
    }
}

pub fn read_stochastic_matrix(path: &Path) -> Result<StochasticMatrix> {
    StochasticMatrix::new(read_matrix(path)?)
}

pub fn matrix_to_csv(m: &DenseMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = m.row(i).iter().map(|x| x.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn support_from_json(v: &Value) -> Result<SupportSet> {
    if v.get("pairs").is_some() {
        serde_json::from_value(v.clone()).map_err(|e| Error::InvalidSupport(e.to_string()))
    } else {
        SupportSet::from_matrix(&matrix_from_json(v)?)
    }
}

/// Reads a support set, or the nonzero pattern of a matrix file.
pub fn read_support(path: &Path) -> Result<SupportSet> {
    let text = read_to_string(path)?;
    if is_json(path) {
        support_from_json(&serde_json::from_str(&text)?)
    } else {
        SupportSet::from_matrix(&parse_matrix_csv(&text)?)
    }
}

/// Parses 1-based states into 0-based indices.
pub fn parse_observations(text: &str) -> Result<Vec<usize>> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
        .enumerate()
        .map(|(k, t)| match t.parse::<usize>() {
            Ok(s) if s >= 1 => Ok(s - 1),
            _ => Err(Error::InvalidInput(format!(
                "observation {}: expected a state index >= 1, got {t:?}",
                k + 1
            ))),
        })
        .collect()
}

pub fn read_observations(path: &Path) -> Result<Vec<usize>> {
    parse_observations(&read_to_string(path)?)
}

/// One 1-based state per line.
pub fn format_observations(states: &[usize]) -> String {
    let mut out = String::with_capacity(states.len() * 3);
    for s in states {
        out.push_str(&(s + 1).to_string());
        out.push('\n');
    }
    out
}

/// `kind:params` as accepted by [`GapDistribution`]'s `FromStr`, plus
/// `pmf:@path` reading the table from a file. Relative paths are resolved
/// against `base_dir` when given.
pub fn parse_gap_spec(spec: &str, base_dir: Option<&Path>) -> Result<GapDistribution> {
    if let Some(rest) = spec.trim().strip_prefix("pmf:@") {
        let path = resolve(base_dir, rest);
        let text = read_to_string(&path)?;
        let pmf = text
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>()
                    .map_err(|_| Error::InvalidGap(format!("{}: bad number {t:?}", path.display())))
            })
            .collect::<Result<Vec<_>>>()?;
        return GapDistribution::pmf(pmf);
    }
    spec.parse()
}

fn resolve(base_dir: Option<&Path>, p: &str) -> PathBuf {
    let p = Path::new(p);
    match base_dir {
        Some(b) if p.is_relative() => b.join(p),
        _ => p.to_path_buf(),
    }
}

fn file_ref(v: &Value) -> Option<&str> {
    match v {
        Value::String(s) => Some(s),
        Value::Object(o) => o.get("file").and_then(Value::as_str),
        _ => None,
    }
}

fn usize_list(v: &Value, key: &str) -> Result<Vec<usize>> {
    serde_json::from_value(v.clone()).map_err(|e| Error::InvalidConfig(format!("{key}: {e}")))
}

/// Loads an experiment from JSON:
///
/// ```json
/// {
///   "name": "queue",
///   "p": [[0, 1], [0.5, 0.5]],
///   "support": {"n_states": 2, "pairs": [[1, 2], [2, 1], [2, 2]]},
///   "gaps": ["geometric:0.5", "poisson:1"],
///   "sample_sizes": [200, 1000],
///   "replications": 1000,
///   "base_seed": 42,
///   "estimators": ["plain", "two_step"],
///   "max_retries": 1000,
///   "scoring": "plain_projected"
/// }
/// ```
///
/// `p` and `support` may instead be file references, either a bare string or
/// `{"file": "..."}`, resolved relative to the config file. `support`
/// defaults to the nonzero pattern of `p`; `estimators` to both;
/// `base_seed` to 0; `scoring` to `"plain_projected"`. `"projected"` and
/// `"raw"` apply the same treatment to both estimators.
pub fn load_experiment_config(path: &Path) -> Result<ExperimentConfig> {
    let text = read_to_string(path)?;
    let v: Value = serde_json::from_str(&text)?;
    let dir = path.parent();
    let field = |k: &str| v.get(k);
    let need =
        |k: &str| field(k).ok_or_else(|| Error::InvalidConfig(format!("missing field {k:?}")));

    let p_val = need("p")?;
    let p = match file_ref(p_val) {
        Some(f) => read_matrix(&resolve(dir, f))?,
        None => matrix_from_json(p_val)?,
    };
    let p = StochasticMatrix::new(p)?;
    let support = match field("support") {
        None | Some(Value::Null) => SupportSet::from_matrix(p.matrix())?,
        Some(s) => match file_ref(s) {
            Some(f) => read_support(&resolve(dir, f))?,
            None => support_from_json(s)?,
        },
    };
    let gaps = need("gaps")?
        .as_array()
        .ok_or_else(|| Error::InvalidConfig("gaps must be a list".into()))?
        .iter()
        .map(|g| match g {
            Value::String(s) => parse_gap_spec(s, dir),
            other => {
                serde_json::from_value(other.clone()).map_err(|e| Error::InvalidGap(e.to_string()))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let sample_sizes = usize_list(need("sample_sizes")?, "sample_sizes")?;
    let replications = need("replications")?
        .as_u64()
        .ok_or_else(|| Error::InvalidConfig("replications must be a count".into()))?
        as usize;
    let base_seed = match field("base_seed") {
        None => 0,
        Some(s) => s.as_u64().ok_or_else(|| {
            Error::InvalidConfig("base_seed must be a non-negative integer".into())
        })?,
    };
    let estimators = match field("estimators") {
        None => vec![EstimatorKind::Plain, EstimatorKind::TwoStep],
        Some(Value::Array(a)) => a
            .iter()
            .map(|e| {
                e.as_str()
                    .ok_or_else(|| Error::InvalidConfig("estimator names must be strings".into()))?
                    .parse()
            })
            .collect::<Result<Vec<_>>>()?,
        Some(_) => return Err(Error::InvalidConfig("estimators must be a list".into())),
    };
    let max_retries = match field("max_retries") {
        None => DEFAULT_MAX_RETRIES,
        Some(m) => m
            .as_u64()
            .ok_or_else(|| Error::InvalidConfig("max_retries must be a count".into()))?
            as usize,
    };
    let scoring = match field("scoring") {
        None => Scoring::default(),
        Some(v) => v
            .as_str()
            .ok_or_else(|| Error::InvalidConfig("scoring must be a string".into()))?
            .parse()?,
    };
    let name = match field("name").and_then(Value::as_str) {
        Some(n) => n.to_string(),
        None => path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("experiment")
            .to_string(),
    };
    let config = ExperimentConfig {
        name,
        p,
        support,
        gaps,
        sample_sizes,
        replications,
        base_seed,
        estimators,
        max_retries,
        scoring,
    };
    config.validate()?;
    Ok(config)
}

/// Writes `contents` to a sibling temporary file and renames it over `path`,
/// so readers never see a partially written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidInput(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}
