//! Gibbs-prior diagnostics for approximate Bayesian inference.
//!
//! An approximate inference method `q(θ|y)` paired with a likelihood `f(y|θ)`
//! defines a Markov chain on the latent space: draw `y ~ f(·|θ)`, then
//! `θ' ~ q(·|y)`. Its stationary distribution is the *Gibbs prior*, the prior
//! the approximation behaves as if it were using. This crate simulates that
//! chain for arbitrary pairs and provides two exact laboratories to check it
//! against:
//!
//! - [`gaussian`]: conjugate Gaussian model with mean-field approximations,
//!   where the Gibbs prior is Gaussian with covariance solving a discrete
//!   Lyapunov equation.
//! - [`finite`]: finite latent and observation spaces, where everything is a
//!   product of stochastic matrices.
//!
//! [`zoo`] holds intractable models (sum of log-normals with a
//! Fenton-Wilkinson + Laplace approximation, stochastic volatility, Gaussian
//! conditional pairs) and [`diagnostics`] the monitoring and two-sample tools.
//!
//! The crate is `no_std` and needs only `alloc`. The `std` feature switches on
//! faster matrix products and is otherwise behaviour-preserving.

#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod diagnostics;
pub mod engine;
mod error;
pub mod finite;
pub mod gaussian;
pub mod linalg;
pub mod rng;
pub mod special;
pub mod stats;
pub mod zoo;

pub use engine::{
    compatibility_score, paired_joint_samples, simulate_gibbs_chain, Approximator, ChainConfig,
    ChainError, ChainInit, ChainTrace, CompatibilityOptions, CompatibilityScore, ConditionalPair,
    JointPairs, Likelihood,
};
pub use error::Error;
pub use finite::FiniteModel;
pub use gaussian::{DivergenceKind, GaussianDist, GaussianToyModel};
