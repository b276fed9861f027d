//! Stochastic volatility: Gaussian random-walk log-scales with Student-t
//! observations. Generative side only; approximations come from outside.

use alloc::vec::Vec;

use rand::RngCore;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::engine::Likelihood;
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StochVolModel {
    /// Series length `T`.
    pub steps: usize,
    /// Random-walk step deviation.
    pub sigma: f64,
    /// Student-t degrees of freedom.
    pub nu: f64,
    pub theta0: f64,
}

impl Default for StochVolModel {
    fn default() -> Self {
        Self {
            steps: 100,
            sigma: 0.09,
            nu: 12.0,
            theta0: 0.0,
        }
    }
}

impl StochVolModel {
    pub fn validate(&self) -> Result<(), Error> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("T must be positive"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::InvalidParameter("σ must be non-negative"));
        }
        if !(self.nu > 0.0) {
            return Err(Error::InvalidParameter("ν must be positive"));
        }
        Ok(())
    }
}

/// `θ_i = θ_{i-1} + σ ε_i` from `θ₀`, returning `θ_1..θ_T`.
pub fn stochvol_sample_prior(model: &StochVolModel, rng: &mut dyn RngCore) -> Vec<f64> {
    let mut theta = model.theta0;
    (0..model.steps)
        .map(|_| {
            let e: f64 = StandardNormal.sample(rng);
            theta += model.sigma * e;
            theta
        })
        .collect()
}

/// `y_i = exp(θ_i) · z / sqrt(χ²_ν / ν)`.
pub fn stochvol_sample_obs(
    theta: &[f64],
    nu: f64,
    rng: &mut dyn RngCore,
) -> Result<Vec<f64>, Error> {
    let chi = ChiSquared::new(nu).map_err(|_| Error::InvalidParameter("ν must be positive"))?;
    Ok(theta
        .iter()
        .map(|t| {
            let z: f64 = StandardNormal.sample(rng);
            let c: f64 = chi.sample(rng);
            libm::exp(*t) * z / libm::sqrt(c / nu)
        })
        .collect())
}

#[derive(Debug, Clone, Copy)]
pub struct StochVolLikelihood {
    pub model: StochVolModel,
}

impl Likelihood for StochVolLikelihood {
    fn latent_dim(&self) -> usize {
        self.model.steps
    }

    fn observation_dim(&self) -> usize {
        self.model.steps
    }

    fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, Error> {
        if theta.len() != self.model.steps {
            return Err(Error::DimensionMismatch {
                what: "volatility path",
                expected: self.model.steps,
                found: theta.len(),
            });
        }
        stochvol_sample_obs(theta, self.model.nu, rng)
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(stochvol_sample_prior(&self.model, rng))
    }
}
