//! Trace CSV, JSON fixtures and atomic file writes.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;

use gibbs_diag_core::linalg::{from_rows, Matrix};
use gibbs_diag_core::{ChainTrace, Error, FiniteModel, GaussianDist, GaussianToyModel};
use serde::{Deserialize, Serialize};

/// `step,theta_0..,y_0..`, one row per `θ_t`; the last row has no `y`.
pub fn trace_csv(trace: &ChainTrace) -> String {
    let d = trace.thetas.first().map_or(0, Vec::len);
    let m = trace.ys.first().map_or(0, Vec::len);
    let mut out = String::from("step");
    for k in 0..d {
        write!(out, ",theta_{k}").unwrap();
    }
    for k in 0..m {
        write!(out, ",y_{k}").unwrap();
    }
    out.push('\n');
    for (t, theta) in trace.thetas.iter().enumerate() {
        write!(out, "{t}").unwrap();
        for v in theta {
            write!(out, ",{v:?}").unwrap();
        }
        match trace.ys.get(t) {
            Some(y) => {
                for v in y {
                    write!(out, ",{v:?}").unwrap();
                }
            }
            None => out.push_str(&",".repeat(m)),
        }
        out.push('\n');
    }
    out
}

#[derive(Debug, thiserror::Error)]
pub enum TraceParseError {
    #[error("missing or malformed header")]
    Header,
    #[error("line {line}: {reason}")]
    Row { line: usize, reason: String },
}

/// Parses [`trace_csv`] output back into `(thetas, ys)`.
pub fn parse_trace_csv(text: &str) -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>), TraceParseError> {
    let mut lines = text.lines();
    let header: Vec<&str> = lines
        .next()
        .ok_or(TraceParseError::Header)?
        .split(',')
        .collect();
    if header.first() != Some(&"step") {
        return Err(TraceParseError::Header);
    }
    let d = header.iter().filter(|h| h.starts_with("theta_")).count();
    let m = header.iter().filter(|h| h.starts_with("y_")).count();
    if d + m + 1 != header.len() {
        return Err(TraceParseError::Header);
    }
    let mut thetas = Vec::new();
    let mut ys = Vec::new();
    for (i, line) in lines.enumerate() {
        let row = |reason: &str| TraceParseError::Row {
            line: i + 2,
            reason: reason.to_string(),
        };
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != header.len() {
            return Err(row("wrong number of fields"));
        }
        let parse = |s: &str| s.parse::<f64>().map_err(|e| row(&e.to_string()));
        thetas.push(
            fields[1..=d]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<Vec<_>, _>>()?,
        );
        if fields[d + 1..].iter().all(|s| s.is_empty()) {
            continue;
        }
        ys.push(
            fields[d + 1..]
                .iter()
                .map(|s| parse(s))
                .collect::<Result<Vec<_>, _>>()?,
        );
    }
    Ok((thetas, ys))
}

/// Writes through a temporary sibling and renames, so readers never see a
/// half-written file.
pub fn write_atomic(path: &Path, contents: &[u8]) -> io::Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, contents)?;
    fs::rename(&tmp, path)
}

pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(io::Error::other)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `{"F": [[...]], "Q": [[...]]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FiniteFixture {
    #[serde(rename = "F")]
    pub f: Vec<Vec<f64>>,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<f64>>,
}

impl FiniteFixture {
    pub fn model(&self) -> Result<FiniteModel, Error> {
        FiniteModel::from_rows(&self.f, &self.q)
    }
}

/// Gaussian toy model with one observed data set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GaussianFixture {
    pub prior_mean: Vec<f64>,
    pub prior_cov: Vec<Vec<f64>>,
    pub likelihood_cov: Vec<Vec<f64>>,
    pub n_obs: usize,
    /// `n_obs` rows of observations.
    pub y: Vec<Vec<f64>>,
}

impl GaussianFixture {
    pub fn model(&self) -> Result<GaussianToyModel, Error> {
        let prior = GaussianDist::from_slices(&self.prior_mean, &self.prior_cov)?;
        GaussianToyModel::new(prior, from_rows(&self.likelihood_cov)?, self.n_obs)
    }

    pub fn data(&self) -> Result<Matrix, Error> {
        from_rows(&self.y)
    }
}

const ARNOLD_B_EXAMPLE: &str = include_str!("../fixtures/arnold_b_example.json");
const ARNOLD_B_EXAMPLE_ALT: &str = include_str!("../fixtures/arnold_b_example_alt.json");
const SETTING_LIKE_IMPROPER: &str = include_str!("../fixtures/setting_like_improper.json");

/// Finite fixtures shipped with the crate, by file stem.
pub fn named_finite_fixture(name: &str) -> Option<FiniteFixture> {
    let text = match name {
        "arnold_b_example" => ARNOLD_B_EXAMPLE,
        "arnold_b_example_alt" => ARNOLD_B_EXAMPLE_ALT,
        _ => return None,
    };
    Some(serde_json::from_str(text).expect("bundled fixture parses"))
}

pub fn named_gaussian_fixture(name: &str) -> Option<GaussianFixture> {
    match name {
        "setting_like_improper" => {
            Some(serde_json::from_str(SETTING_LIKE_IMPROPER).expect("bundled fixture parses"))
        }
        _ => None,
    }
}
