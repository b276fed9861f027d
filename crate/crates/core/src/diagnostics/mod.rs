//! Convergence monitoring, two-sample comparison and calibration baselines.

use alloc::vec::Vec;

use crate::linalg::frobenius;
use crate::stats::covariance;
use crate::Error;

pub mod convergence;
pub mod mmd;
pub mod sbc;

pub use convergence::{autocorrelation, gelman_rubin, gelman_rubin_traces, rhat_curve, RhatMethod};
pub use mmd::{
    mmd2, mmd2_mixture, permutation_test, permutation_test_mixture, Bandwidth, PermutationTest,
};
pub use sbc::{sbc_ranks, ChiSquareTest, RankHistogram, SbcConfig, SbcError};

/// Frobenius norm of the unbiased sample covariance.
pub fn compactness(samples: &[Vec<f64>]) -> Result<f64, Error> {
    Ok(frobenius(&covariance(samples)?))
}
