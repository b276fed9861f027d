//! Sum of `L` i.i.d. log-normals with unknown `(μ, σ²)` and its
//! Fenton-Wilkinson surrogate likelihood.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::RngCore;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::engine::Likelihood;
use crate::Error;

/// `μ ~ N(0, 1)`, `σ² ~ Exp(1)`, `y = Σ_{l=1}^{L} x_l` with
/// `x_l ~ LogNormal(μ, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LogNormalSumModel {
    pub terms: usize,
}

impl Default for LogNormalSumModel {
    fn default() -> Self {
        Self { terms: 10 }
    }
}

impl LogNormalSumModel {
    pub fn new(terms: usize) -> Result<Self, Error> {
        if terms == 0 {
            return Err(Error::InvalidParameter("L must be at least 1"));
        }
        Ok(Self { terms })
    }

    /// `(μ, σ²)` from the prior.
    pub fn sample_prior(&self, rng: &mut dyn RngCore) -> [f64; 2] {
        let mu: f64 = StandardNormal.sample(rng);
        let sigma2: f64 = Exp1.sample(rng);
        [mu, sigma2]
    }

    /// Log prior density; `-∞` outside `σ² > 0`.
    pub fn log_prior(&self, mu: f64, sigma2: f64) -> f64 {
        if !(sigma2 > 0.0) {
            return f64::NEG_INFINITY;
        }
        -0.5 * mu * mu - 0.5 * libm::log(2.0 * PI) - sigma2
    }
}

fn check_variance(sigma2: f64) -> Result<(), Error> {
    if sigma2 > 0.0 && sigma2.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter("σ² must be positive and finite"))
    }
}

pub fn lognormal_sum_sample(
    mu: f64,
    sigma2: f64,
    terms: usize,
    rng: &mut dyn RngCore,
) -> Result<f64, Error> {
    check_variance(sigma2)?;
    let sigma = libm::sqrt(sigma2);
    Ok((0..terms)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            libm::exp(mu + sigma * z)
        })
        .sum())
}

/// Exact `E[y]` and `E[y²]` of the `L`-fold sum.
pub fn sum_moments(mu: f64, sigma2: f64, terms: usize) -> (f64, f64) {
    let l = terms as f64;
    let first = l * libm::exp(mu + 0.5 * sigma2);
    let second =
        l * libm::exp(2.0 * mu + 2.0 * sigma2) + l * (l - 1.0) * libm::exp(2.0 * mu + sigma2);
    (first, second)
}

/// `LogNormal(α, β²)` with the first two moments of the sum.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct FWParams {
    pub alpha: f64,
    pub beta2: f64,
}

impl FWParams {
    pub fn mean(&self) -> f64 {
        libm::exp(self.alpha + 0.5 * self.beta2)
    }

    pub fn second_moment(&self) -> f64 {
        libm::exp(2.0 * self.alpha + 2.0 * self.beta2)
    }

    pub fn log_density(&self, y: f64) -> f64 {
        if !(y > 0.0) {
            return f64::NEG_INFINITY;
        }
        let r = libm::log(y) - self.alpha;
        -libm::log(y) - 0.5 * libm::log(2.0 * PI * self.beta2) - r * r / (2.0 * self.beta2)
    }
}

/// `β² = ln((e^{σ²} - 1)/L + 1)`, rewritten for large `σ²` as
/// `σ² - ln L + ln(1 + (L - 1)e^{-σ²})` to stay finite.
pub fn fw_beta2(sigma2: f64, terms: usize) -> f64 {
    let l = terms as f64;
    if sigma2 > 20.0 {
        sigma2 - libm::log(l) + libm::log1p((l - 1.0) * libm::exp(-sigma2))
    } else {
        libm::log1p(libm::expm1(sigma2) / l)
    }
}

/// `dβ²/dσ² = e^{σ²} / (e^{σ²} - 1 + L)`.
pub fn fw_beta2_derivative(sigma2: f64, terms: usize) -> f64 {
    1.0 / (1.0 + (terms as f64 - 1.0) * libm::exp(-sigma2))
}

pub fn fenton_wilkinson(mu: f64, sigma2: f64, terms: usize) -> Result<FWParams, Error> {
    check_variance(sigma2)?;
    if terms == 0 {
        return Err(Error::InvalidParameter("L must be at least 1"));
    }
    let beta2 = fw_beta2(sigma2, terms);
    Ok(FWParams {
        alpha: mu + libm::log(terms as f64) + 0.5 * (sigma2 - beta2),
        beta2,
    })
}

/// `(μ, σ²) ↦ y` by summing log-normal draws.
#[derive(Debug, Clone, Copy)]
pub struct LogNormalSumLikelihood {
    pub model: LogNormalSumModel,
}

impl Likelihood for LogNormalSumLikelihood {
    fn latent_dim(&self) -> usize {
        2
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, Error> {
        if theta.len() != 2 {
            return Err(Error::DimensionMismatch {
                what: "latent (μ, σ²)",
                expected: 2,
                found: theta.len(),
            });
        }
        Ok(vec![lognormal_sum_sample(
            theta[0],
            theta[1],
            self.model.terms,
            rng,
        )?])
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(self.model.sample_prior(rng).to_vec())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chain_rng;
    use crate::stats::{mean, variance};
    use rand::Rng;

    fn sample_mean_check(terms: usize, seed: u64) {
        let mut rng = chain_rng(seed);
        let xs: Vec<f64> = (0..1_000_000)
            .map(|_| lognormal_sum_sample(0.0, 1.0, terms, &mut rng).unwrap())
            .collect();
        let (m1, m2) = sum_moments(0.0, 1.0, terms);
        let se = libm::sqrt((m2 - m1 * m1) / xs.len() as f64);
        let m = mean(&xs);
        assert!((m - m1).abs() < 3.0 * se, "{m} vs {m1} ± {se}");
        assert!(variance(&xs) > 0.0);
    }

    #[test]
    fn degenerate_variance_gives_scaled_exponential() {
        let mut rng = chain_rng(1);
        let y = lognormal_sum_sample(0.7, 1e-12, 10, &mut rng).unwrap();
        let target = 10.0 * libm::exp(0.7);
        assert!((y / target - 1.0).abs() < 1e-4);
        assert!(lognormal_sum_sample(0.0, 0.0, 10, &mut rng).is_err());
        assert!(lognormal_sum_sample(0.0, -1.0, 10, &mut rng).is_err());
    }

    #[test]
    fn single_term_mean() {
        sample_mean_check(1, 2);
    }

    #[test]
    fn ten_term_mean() {
        sample_mean_check(10, 3);
    }

    #[test]
    fn fenton_wilkinson_limits() {
        let p = fenton_wilkinson(0.3, 1.7, 1).unwrap();
        assert!((p.alpha - 0.3).abs() < 1e-14 && (p.beta2 - 1.7).abs() < 1e-14);
        let p = fenton_wilkinson(0.3, 1e-12, 10).unwrap();
        assert!(p.beta2 < 1e-12);
        assert!((p.alpha - 0.3 - libm::log(10.0)).abs() < 1e-12);
        assert!(fenton_wilkinson(0.0, 0.0, 10).is_err());
    }

    #[test]
    fn fenton_wilkinson_matches_moments() {
        let p = fenton_wilkinson(0.0, 1.0, 10).unwrap();
        let (m1, m2) = sum_moments(0.0, 1.0, 10);
        assert!((p.mean() - m1).abs() <= 1e-10 * m1);
        assert!((p.second_moment() - m2).abs() <= 1e-10 * m2);

        let mut rng = chain_rng(4);
        for _ in 0..1000 {
            let mu = rng.random_range(-3.0..3.0);
            let s = rng.random_range(1e-3..5.0);
            let terms = rng.random_range(1..=50);
            let p = fenton_wilkinson(mu, s, terms).unwrap();
            let (m1, m2) = sum_moments(mu, s, terms);
            assert!((p.mean() / m1 - 1.0).abs() <= 1e-10);
            assert!((p.second_moment() / m2 - 1.0).abs() <= 1e-10);
        }
    }

    #[test]
    fn beta2_branches_agree() {
        for terms in [1, 3, 10] {
            let small = libm::log1p(libm::expm1(20.0) / terms as f64);
            assert!((fw_beta2(20.000001, terms) - small).abs() < 1e-5);
            let h = 1e-6;
            for s in [0.01, 1.0, 7.0, 25.0] {
                let fd = (fw_beta2(s + h, terms) - fw_beta2(s - h, terms)) / (2.0 * h);
                assert!((fd - fw_beta2_derivative(s, terms)).abs() < 1e-7);
            }
        }
        assert!(fw_beta2(800.0, 10).is_finite());
    }

    #[test]
    fn fw_density_integrates_to_one() {
        let p = fenton_wilkinson(0.2, 0.8, 10).unwrap();
        // Substitute y = e^t and integrate over t.
        let (lo, hi, k) = (-10.0, 15.0, 20_000);
        let h = (hi - lo) / k as f64;
        let total: f64 = (0..=k)
            .map(|i| {
                let t = lo + i as f64 * h;
                let w = if i == 0 || i == k { 0.5 } else { 1.0 };
                w * libm::exp(p.log_density(libm::exp(t)) + t)
            })
            .sum::<f64>()
            * h;
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn prior_support() {
        let m = LogNormalSumModel::default();
        assert_eq!(m.log_prior(0.0, -1.0), f64::NEG_INFINITY);
        assert!(m.log_prior(0.0, 1.0).is_finite());
        let mut rng = chain_rng(5);
        assert!((0..1000).all(|_| m.sample_prior(&mut rng)[1] > 0.0));
        assert!(LogNormalSumModel::new(0).is_err());
    }
}
