//! Experiment runner for Gibbs-prior diagnostics: JSON configs in; traces,
//! reports and SVG figures out. External approximators plug in over a
//! line-delimited JSON protocol (see [`external`]).

pub mod compare;
pub mod config;
pub mod experiments;
pub mod external;
pub mod io;
pub mod parallel;
pub mod run;
pub mod svg;

/// Marks manifests written by this tool.
pub const TOOL_NAME: &str = "gibbs-diag";
