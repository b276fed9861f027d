//! The `compare` command: numeric deltas between two reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde_json::Value;

use crate::config::ConfigError;

/// Numeric leaves by path, e.g. `entropies.prior` or `gibbs_prior.covariance[0][1]`.
pub fn numeric_leaves(value: &Value) -> BTreeMap<String, f64> {
    fn walk(v: &Value, path: String, out: &mut BTreeMap<String, f64>) {
        match v {
            Value::Number(n) => {
                if let Some(x) = n.as_f64() {
                    out.insert(path, x);
                }
            }
            Value::Array(items) => {
                for (i, item) in items.iter().enumerate() {
                    walk(item, format!("{path}[{i}]"), out);
                }
            }
            Value::Object(map) => {
                for (k, item) in map {
                    let p = if path.is_empty() {
                        k.clone()
                    } else {
                        format!("{path}.{k}")
                    };
                    walk(item, p, out);
                }
            }
            _ => {}
        }
    }
    let mut out = BTreeMap::new();
    walk(value, String::new(), &mut out);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Delta {
    pub path: String,
    pub a: Option<f64>,
    pub b: Option<f64>,
}

impl Delta {
    /// `b - a` when both sides have the leaf.
    pub fn delta(&self) -> Option<f64> {
        Some(self.b? - self.a?)
    }
}

fn experiment(report: &Value) -> Result<&str, ConfigError> {
    report
        .get("experiment")
        .and_then(Value::as_str)
        .ok_or_else(|| ConfigError::new("report has no experiment field"))
}

pub fn compare_reports(a: &Value, b: &Value) -> Result<Vec<Delta>, ConfigError> {
    let (ea, eb) = (experiment(a)?, experiment(b)?);
    if ea != eb {
        return Err(ConfigError::new(format!(
            "cannot compare a {ea} report with a {eb} report"
        )));
    }
    let la = numeric_leaves(a);
    let lb = numeric_leaves(b);
    let mut paths: Vec<&String> = la.keys().chain(lb.keys()).collect();
    paths.sort();
    paths.dedup();
    Ok(paths
        .into_iter()
        .map(|p| Delta {
            path: p.clone(),
            a: la.get(p).copied(),
            b: lb.get(p).copied(),
        })
        .collect())
}

fn read_report(path: &Path) -> Result<Value, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| ConfigError::new(format!("{}: {e}", path.display())))
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.6e}"))
}

/// Table of `path a b b-a`, one line per numeric leaf.
pub fn render(deltas: &[Delta]) -> String {
    let width = deltas
        .iter()
        .map(|d| d.path.len())
        .max()
        .unwrap_or(4)
        .max(4);
    let mut s = format!(
        "{:<width$}  {:>14}  {:>14}  {:>14}\n",
        "path", "a", "b", "b-a"
    );
    for d in deltas {
        writeln!(
            s,
            "{:<width$}  {:>14}  {:>14}  {:>14}",
            d.path,
            cell(d.a),
            cell(d.b),
            cell(d.delta())
        )
        .unwrap();
    }
    s
}

pub fn compare_files(a: &Path, b: &Path) -> Result<String, ConfigError> {
    let deltas = compare_reports(&read_report(a)?, &read_report(b)?)?;
    Ok(render(&deltas))
}
