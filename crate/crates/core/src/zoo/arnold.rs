//! Pairs of one-dimensional Gaussian conditionals: one with a joint density,
//! one without.

use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{Approximator, ConditionalPair, Likelihood};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ArnoldVariant {
    /// `f(y|θ) = N(4/(1+θ²), 1/(1+θ²))`, `q(θ|y)` the same with roles swapped.
    Compatible,
    /// `f(y|θ) = N(θ/2, 1/(1+θ²))`, `q(θ|y) = N(y/2, 1/(1+y²))`.
    Incompatible,
}

impl ArnoldVariant {
    /// Mean and variance of the conditional of one coordinate given the other.
    fn conditional(self, given: f64) -> (f64, f64) {
        let precision = 1.0 + given * given;
        match self {
            ArnoldVariant::Compatible => (4.0 / precision, 1.0 / precision),
            ArnoldVariant::Incompatible => (given / 2.0, 1.0 / precision),
        }
    }

    fn draw(self, given: &[f64], rng: &mut dyn RngCore) -> Result<f64, Error> {
        let [g] = given else {
            return Err(Error::DimensionMismatch {
                what: "scalar conditioning value",
                expected: 1,
                found: given.len(),
            });
        };
        let (m, v) = self.conditional(*g);
        let z: f64 = StandardNormal.sample(rng);
        Ok(m + libm::sqrt(v) * z)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ArnoldLikelihood {
    pub variant: ArnoldVariant,
}

#[derive(Debug, Clone, Copy)]
pub struct ArnoldApproximator {
    pub variant: ArnoldVariant,
}

impl Likelihood for ArnoldLikelihood {
    fn latent_dim(&self) -> usize {
        1
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, Error> {
        Ok(vec![self.variant.draw(theta, rng)?])
    }
}

impl Approximator for ArnoldApproximator {
    fn latent_dim(&self) -> usize {
        1
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn sample(
        &mut self,
        y: &[f64],
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<f64>>, Error> {
        (0..count)
            .map(|_| Ok(vec![self.variant.draw(y, rng)?]))
            .collect()
    }
}

pub fn arnold_pair(
    variant: ArnoldVariant,
) -> ConditionalPair<ArnoldLikelihood, ArnoldApproximator> {
    ConditionalPair::new(ArnoldLikelihood { variant }, ArnoldApproximator { variant })
        .expect("scalar halves")
}

/// Unnormalized log joint of the compatible pair,
/// `4θ + 4y - θ²/2 - y²/2 - θ²y²/2`.
pub fn compatible_log_joint(theta: f64, y: f64) -> f64 {
    4.0 * theta + 4.0 * y - 0.5 * theta * theta - 0.5 * y * y - 0.5 * theta * theta * y * y
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chain_rng;
    use crate::{simulate_gibbs_chain, ChainConfig, ChainInit};

    #[test]
    fn joint_has_the_stated_conditionals() {
        // log p(y|θ) differs from the log joint by a function of θ alone.
        for theta in [-1.5, 0.0, 0.7, 2.0] {
            let (m, v) = ArnoldVariant::Compatible.conditional(theta);
            let gap = |y: f64| compatible_log_joint(theta, y) + (y - m) * (y - m) / (2.0 * v);
            let reference = gap(0.0);
            for y in [-2.0, 0.3, 1.0, 4.5] {
                assert!((gap(y) - reference).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn dimension_checks() {
        let mut rng = chain_rng(0);
        let l = ArnoldLikelihood {
            variant: ArnoldVariant::Incompatible,
        };
        assert!(l.sample(&[1.0, 2.0], &mut rng).is_err());
    }

    #[test]
    fn compatible_chain_follows_joint() {
        // Compare chain frequencies over a coarse θ grid with the marginal of
        // the normalized joint, computed by 2-D quadrature.
        let mut pair = arnold_pair(ArnoldVariant::Compatible);
        let config = ChainConfig::new(200_000, 5, ChainInit::Fixed(vec![0.0])).with_burn_in(1000);
        let trace = simulate_gibbs_chain(&mut pair, &config).unwrap();
        let thetas = trace.gibbs_prior_coordinate(0);

        let edges = [-2.0, 0.0, 1.0, 2.0, 3.0, 4.0, 7.0];
        let h = 0.01;
        let grid: Vec<f64> = (0..1300).map(|k| -4.0 + h * (k as f64 + 0.5)).collect();
        let marginal = |t: f64| {
            grid.iter()
                .map(|&y| libm::exp(compatible_log_joint(t, y)))
                .sum::<f64>()
                * h
        };
        let z: f64 = grid.iter().map(|&t| marginal(t)).sum::<f64>() * h;
        for w in edges.windows(2) {
            let mass: f64 = grid
                .iter()
                .filter(|&&t| t >= w[0] && t < w[1])
                .map(|&t| marginal(t))
                .sum::<f64>()
                * h
                / z;
            let freq = thetas.iter().filter(|&&t| t >= w[0] && t < w[1]).count() as f64
                / thetas.len() as f64;
            assert!((freq - mass).abs() < 0.01, "{w:?}: {freq} vs {mass}");
        }
    }
}
