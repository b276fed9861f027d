//! Pseudo-Gibbs chain simulation over an arbitrary likelihood/approximation pair.

use alloc::vec::Vec;

use rand::RngCore;

use crate::diagnostics::mmd::{self, Bandwidth};
use crate::rng::{chain_rng, derive_seed};
use crate::Error;

/// The model side of a pair: `f(y|θ)`, plus an optional prior used to
/// initialise chains.
pub trait Likelihood {
    fn latent_dim(&self) -> usize;
    fn observation_dim(&self) -> usize;
    fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, Error>;

    fn sample_prior(&self, _rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        None
    }
}

/// The inference side of a pair: fits `q(·|y)` for an observation and draws
/// `count` latents from it.
///
/// Implementations may hold state (a subprocess, a cache) but must be pure
/// given the RNG: the same `rng` state yields the same draws.
pub trait Approximator {
    fn latent_dim(&self) -> usize;
    fn observation_dim(&self) -> usize;
    fn sample(
        &mut self,
        y: &[f64],
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<f64>>, Error>;
}

impl<A: Approximator + ?Sized> Approximator for &mut A {
    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }
    fn observation_dim(&self) -> usize {
        (**self).observation_dim()
    }
    fn sample(
        &mut self,
        y: &[f64],
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<f64>>, Error> {
        (**self).sample(y, count, rng)
    }
}

impl<L: Likelihood + ?Sized> Likelihood for &L {
    fn latent_dim(&self) -> usize {
        (**self).latent_dim()
    }
    fn observation_dim(&self) -> usize {
        (**self).observation_dim()
    }
    fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, Error> {
        (**self).sample(theta, rng)
    }
    fn sample_prior(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        (**self).sample_prior(rng)
    }
}

/// A likelihood and an approximation with agreeing dimensions.
#[derive(Debug, Clone)]
pub struct ConditionalPair<L, A> {
    pub likelihood: L,
    pub approximator: A,
}

impl<L: Likelihood, A: Approximator> ConditionalPair<L, A> {
    pub fn new(likelihood: L, approximator: A) -> Result<Self, Error> {
        if likelihood.latent_dim() != approximator.latent_dim() {
            return Err(Error::DimensionMismatch {
                what: "latent dimension",
                expected: likelihood.latent_dim(),
                found: approximator.latent_dim(),
            });
        }
        if likelihood.observation_dim() != approximator.observation_dim() {
            return Err(Error::DimensionMismatch {
                what: "observation dimension",
                expected: likelihood.observation_dim(),
                found: approximator.observation_dim(),
            });
        }
        Ok(Self {
            likelihood,
            approximator,
        })
    }

    pub fn latent_dim(&self) -> usize {
        self.likelihood.latent_dim()
    }

    pub fn observation_dim(&self) -> usize {
        self.likelihood.observation_dim()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum ChainInit {
    Fixed(Vec<f64>),
    /// Draw θ₀ from the likelihood's prior.
    Prior,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChainConfig {
    pub steps: usize,
    pub seed: u64,
    pub init: ChainInit,
    pub burn_in: usize,
    pub thinning: usize,
}

impl ChainConfig {
    /// `steps` transitions with the default burn-in of `steps / 10`.
    pub fn new(steps: usize, seed: u64, init: ChainInit) -> Self {
        Self {
            steps,
            seed,
            init,
            burn_in: steps / 10,
            thinning: 1,
        }
    }

    pub fn with_burn_in(mut self, burn_in: usize) -> Self {
        self.burn_in = burn_in;
        self
    }

    pub fn with_thinning(mut self, thinning: usize) -> Self {
        self.thinning = thinning;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<(), ChainError> {
        if self.steps == 0 {
            return Err(ChainError::Config("steps must be positive"));
        }
        if self.burn_in + 1 > self.steps {
            return Err(ChainError::Config("burn_in must be smaller than steps"));
        }
        if self.thinning == 0 {
            return Err(ChainError::Config("thinning must be at least 1"));
        }
        Ok(())
    }

    /// Config for the `index`-th of several parallel chains.
    pub fn for_chain(&self, index: u64) -> Self {
        self.clone().with_seed(derive_seed(self.seed, index))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Likelihood,
    Approximation,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ChainError {
    #[error("invalid chain configuration: {0}")]
    Config(&'static str),
    #[error("initial state: {0}")]
    Init(Error),
    #[error("likelihood failed at step {step} for theta {theta:?}: {source}")]
    Likelihood {
        step: usize,
        theta: Vec<f64>,
        source: Error,
    },
    #[error("approximation failed at step {step} for y {y:?}: {source}")]
    Approximation {
        step: usize,
        y: Vec<f64>,
        source: Error,
    },
    #[error("non-finite draw at step {step} ({stage:?}): {value:?}")]
    NonFinite {
        step: usize,
        stage: Stage,
        value: Vec<f64>,
    },
    #[error("post-burn-in segment is empty")]
    EmptySegment,
    #[error("need at least {needed} pairs, found {found}")]
    TooFewPairs { needed: usize, found: usize },
    #[error(transparent)]
    Numeric(#[from] Error),
}

impl ChainError {
    /// Step at which the chain broke down, when there is one.
    pub fn step(&self) -> Option<usize> {
        match self {
            Self::Likelihood { step, .. }
            | Self::Approximation { step, .. }
            | Self::NonFinite { step, .. } => Some(*step),
            _ => None,
        }
    }
}

/// Alternating states `θ₀, y₀, θ₁, y₁, …, θ_T` of one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainTrace {
    pub thetas: Vec<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
    pub config: ChainConfig,
}

impl ChainTrace {
    pub fn steps(&self) -> usize {
        self.ys.len()
    }

    /// Step indices `t` kept after burn-in and thinning; each pairs `y_t`
    /// with `θ_t` and `θ_{t+1}`.
    pub fn retained_steps(&self) -> impl Iterator<Item = usize> {
        (self.config.burn_in..self.ys.len()).step_by(self.config.thinning.max(1))
    }

    /// Post-burn-in draws from the approximation, `θ_{t+1}` for retained `t`.
    pub fn gibbs_prior_samples(&self) -> Vec<Vec<f64>> {
        self.retained_steps()
            .map(|t| self.thetas[t + 1].clone())
            .collect()
    }

    /// One coordinate of [`Self::gibbs_prior_samples`].
    pub fn gibbs_prior_coordinate(&self, dim: usize) -> Vec<f64> {
        self.retained_steps()
            .map(|t| self.thetas[t + 1][dim])
            .collect()
    }

    pub fn observation_samples(&self) -> Vec<Vec<f64>> {
        self.retained_steps().map(|t| self.ys[t].clone()).collect()
    }
}

fn all_finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

/// Runs `cfg.steps` transitions `y_t ~ f(·|θ_t)`, `θ_{t+1} ~ q(·|y_t)`.
///
/// A failing or non-finite draw stops the chain and reports the step.
pub fn simulate_gibbs_chain<L, A>(
    pair: &mut ConditionalPair<L, A>,
    cfg: &ChainConfig,
) -> Result<ChainTrace, ChainError>
where
    L: Likelihood,
    A: Approximator,
{
    cfg.validate()?;
    let mut rng = chain_rng(cfg.seed);
    let d = pair.latent_dim();
    let theta0 = match &cfg.init {
        ChainInit::Fixed(v) => v.clone(),
        ChainInit::Prior => pair
            .likelihood
            .sample_prior(&mut rng)
            .ok_or(ChainError::Config("model has no prior to initialise from"))?,
    };
    if theta0.len() != d {
        return Err(ChainError::Init(Error::DimensionMismatch {
            what: "initial latent",
            expected: d,
            found: theta0.len(),
        }));
    }
    if !all_finite(&theta0) {
        return Err(ChainError::Init(Error::InvalidParameter(
            "initial latent is not finite",
        )));
    }

    let mut thetas = Vec::with_capacity(cfg.steps + 1);
    let mut ys = Vec::with_capacity(cfg.steps);
    thetas.push(theta0);
    for step in 0..cfg.steps {
        let theta = &thetas[step];
        let y =
            pair.likelihood
                .sample(theta, &mut rng)
                .map_err(|source| ChainError::Likelihood {
                    step,
                    theta: theta.clone(),
                    source,
                })?;
        if !all_finite(&y) {
            return Err(ChainError::NonFinite {
                step,
                stage: Stage::Likelihood,
                value: y,
            });
        }
        let next = pair
            .approximator
            .sample(&y, 1, &mut rng)
            .and_then(|mut draws| {
                draws
                    .pop()
                    .ok_or(Error::Backend("approximator returned no draw".into()))
            })
            .map_err(|source| ChainError::Approximation {
                step,
                y: y.clone(),
                source,
            })?;
        if next.len() != d {
            return Err(ChainError::Approximation {
                step,
                y,
                source: Error::DimensionMismatch {
                    what: "approximator draw",
                    expected: d,
                    found: next.len(),
                },
            });
        }
        if !all_finite(&next) {
            return Err(ChainError::NonFinite {
                step,
                stage: Stage::Approximation,
                value: next,
            });
        }
        ys.push(y);
        thetas.push(next);
    }
    Ok(ChainTrace {
        thetas,
        ys,
        config: cfg.clone(),
    })
}

/// Correlated joint samples read off one trace.
///
/// `gibbs[k] = (θ_t, y_t)` targets the joint with θ-marginal π_G and
/// conditional f; `evidence[k] = (θ_{t+1}, y_t)` targets the joint with
/// y-marginal p_G and conditional q. Each entry is the concatenation `θ ‖ y`.
#[derive(Debug, Clone, PartialEq)]
pub struct JointPairs {
    pub gibbs: Vec<Vec<f64>>,
    pub evidence: Vec<Vec<f64>>,
}

fn concat(theta: &[f64], y: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(theta.len() + y.len());
    v.extend_from_slice(theta);
    v.extend_from_slice(y);
    v
}

pub fn paired_joint_samples(trace: &ChainTrace) -> Result<JointPairs, ChainError> {
    if trace.thetas.len() != trace.ys.len() + 1 {
        return Err(ChainError::Config("trace has inconsistent lengths"));
    }
    let steps: Vec<usize> = trace.retained_steps().collect();
    if steps.is_empty() {
        return Err(ChainError::EmptySegment);
    }
    let gibbs = steps
        .iter()
        .map(|&t| concat(&trace.thetas[t], &trace.ys[t]))
        .collect();
    let evidence = steps
        .iter()
        .map(|&t| concat(&trace.thetas[t + 1], &trace.ys[t]))
        .collect();
    Ok(JointPairs { gibbs, evidence })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityOptions {
    pub bandwidth: Bandwidth,
    pub permutations: usize,
    /// Seed of the permutation stream.
    pub seed: u64,
}

impl Default for CompatibilityOptions {
    fn default() -> Self {
        Self {
            bandwidth: Bandwidth::MultiScale,
            permutations: 200,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompatibilityScore {
    /// Unbiased MMD² between the two joints.
    pub score: f64,
    /// Base bandwidth (fixed value or median distance).
    pub bandwidth: f64,
    /// Bandwidths averaged in the kernel.
    pub bandwidths: Vec<f64>,
    /// Quantiles of the permutation null at [`Self::QUANTILE_LEVELS`].
    pub null_quantiles: Vec<f64>,
    pub p_value: f64,
    /// Pairs per joint that entered the statistic.
    pub pairs: usize,
}

impl CompatibilityScore {
    pub const QUANTILE_LEVELS: [f64; 4] = [0.5, 0.9, 0.95, 0.99];

    pub fn quantile_99(&self) -> f64 {
        self.null_quantiles[3]
    }

    /// True when the score does not exceed the 99% null quantile.
    pub fn consistent_at_1pct(&self) -> bool {
        self.score <= self.quantile_99()
    }
}

/// Kernel two-sample comparison of the two joints read off a trace.
///
/// Both joints share `y_t` at the same step, which makes pairs taken at the
/// same `t` nearly identical and the permutation null invalid. The retained
/// steps are therefore split by parity: even positions feed the `(θ_t, y_t)`
/// sample, odd positions the `(θ_{t+1}, y_t)` sample. Thinning the chain
/// reduces the remaining serial dependence.
pub fn compatibility_score(
    trace: &ChainTrace,
    options: &CompatibilityOptions,
) -> Result<CompatibilityScore, ChainError> {
    let pairs = paired_joint_samples(trace)?;
    let total = pairs.gibbs.len();
    if total < 10 {
        return Err(ChainError::TooFewPairs {
            needed: 10,
            found: total,
        });
    }
    let gibbs: Vec<Vec<f64>> = pairs.gibbs.into_iter().step_by(2).collect();
    let evidence: Vec<Vec<f64>> = pairs.evidence.into_iter().skip(1).step_by(2).collect();
    let bandwidth = options.bandwidth.resolve(&gibbs, &evidence)?;
    let bandwidths = options.bandwidth.resolve_all(&gibbs, &evidence)?;
    let mut rng = chain_rng(options.seed);
    let test = mmd::permutation_test_mixture(
        &gibbs,
        &evidence,
        &bandwidths,
        options.permutations,
        &mut rng,
    )?;
    let null_quantiles = CompatibilityScore::QUANTILE_LEVELS
        .iter()
        .map(|&q| test.null_quantile(q))
        .collect();
    Ok(CompatibilityScore {
        score: test.statistic,
        bandwidth,
        bandwidths,
        null_quantiles,
        p_value: test.p_value,
        pairs: evidence.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand_distr::{Distribution, Normal};

    /// Ignores y and always draws N(5, 1).
    struct Constant;

    impl Approximator for Constant {
        fn latent_dim(&self) -> usize {
            1
        }
        fn observation_dim(&self) -> usize {
            1
        }
        fn sample(
            &mut self,
            _y: &[f64],
            count: usize,
            rng: &mut dyn RngCore,
        ) -> Result<Vec<Vec<f64>>, Error> {
            let n = Normal::new(5.0, 1.0).unwrap();
            Ok((0..count).map(|_| vec![n.sample(rng)]).collect())
        }
    }

    struct Shift;

    impl Likelihood for Shift {
        fn latent_dim(&self) -> usize {
            1
        }
        fn observation_dim(&self) -> usize {
            1
        }
        fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, Error> {
            let n = Normal::new(theta[0], 1.0).unwrap();
            Ok(vec![n.sample(rng)])
        }
    }

    /// Fails on negative observations.
    struct Fragile;

    impl Approximator for Fragile {
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
            _rng: &mut dyn RngCore,
        ) -> Result<Vec<Vec<f64>>, Error> {
            if y[0] < 0.0 {
                return Err(Error::InvalidParameter("negative observation"));
            }
            Ok(vec![vec![-1.0]; count])
        }
    }

    struct NanApprox;

    impl Approximator for NanApprox {
        fn latent_dim(&self) -> usize {
            1
        }
        fn observation_dim(&self) -> usize {
            1
        }
        fn sample(
            &mut self,
            _y: &[f64],
            count: usize,
            _rng: &mut dyn RngCore,
        ) -> Result<Vec<Vec<f64>>, Error> {
            Ok(vec![vec![f64::NAN]; count])
        }
    }

    #[test]
    fn y_independent_approximation_is_stationary_after_one_step() {
        let mut pair = ConditionalPair::new(Shift, Constant).unwrap();
        let cfg = ChainConfig::new(20_000, 3, ChainInit::Fixed(vec![-40.0])).with_burn_in(1);
        let trace = simulate_gibbs_chain(&mut pair, &cfg).unwrap();
        assert_eq!(trace.thetas.len(), trace.ys.len() + 1);
        let xs = trace.gibbs_prior_coordinate(0);
        let m = crate::stats::mean(&xs);
        let v = crate::stats::variance(&xs);
        assert!(
            (m - 5.0).abs() < 4.0 / libm::sqrt(xs.len() as f64),
            "mean {m}"
        );
        assert!((v - 1.0).abs() < 0.05, "variance {v}");
    }

    #[test]
    fn identical_configs_give_identical_traces() {
        let mut pair = ConditionalPair::new(Shift, Constant).unwrap();
        let cfg = ChainConfig::new(500, 99, ChainInit::Fixed(vec![0.0]));
        let a = simulate_gibbs_chain(&mut pair, &cfg).unwrap();
        let b = simulate_gibbs_chain(&mut pair, &cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate_gibbs_chain(&mut pair, &cfg.clone().with_seed(100)).unwrap();
        assert_ne!(a.thetas, c.thetas);
    }

    #[test]
    fn approximation_failure_reports_step_and_observation() {
        let mut pair = ConditionalPair::new(Shift, Fragile).unwrap();
        let cfg = ChainConfig::new(100, 1, ChainInit::Fixed(vec![3.0]));
        let err = simulate_gibbs_chain(&mut pair, &cfg).unwrap_err();
        match err {
            ChainError::Approximation { step, y, .. } => {
                assert!(y[0] < 0.0);
                assert!(step < 100);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_draw_aborts() {
        let mut pair = ConditionalPair::new(Shift, NanApprox).unwrap();
        let cfg = ChainConfig::new(10, 1, ChainInit::Fixed(vec![0.0]));
        let err = simulate_gibbs_chain(&mut pair, &cfg).unwrap_err();
        assert!(matches!(
            err,
            ChainError::NonFinite {
                step: 0,
                stage: Stage::Approximation,
                ..
            }
        ));
        assert_eq!(err.step(), Some(0));
    }

    #[test]
    fn config_validation() {
        let mut pair = ConditionalPair::new(Shift, Constant).unwrap();
        let bad = ChainConfig::new(10, 1, ChainInit::Fixed(vec![0.0])).with_burn_in(10);
        assert!(matches!(
            simulate_gibbs_chain(&mut pair, &bad),
            Err(ChainError::Config(_))
        ));
        let wrong_dim = ChainConfig::new(10, 1, ChainInit::Fixed(vec![0.0, 1.0]));
        assert!(matches!(
            simulate_gibbs_chain(&mut pair, &wrong_dim),
            Err(ChainError::Init(_))
        ));
        let no_prior = ChainConfig::new(10, 1, ChainInit::Prior);
        assert!(matches!(
            simulate_gibbs_chain(&mut pair, &no_prior),
            Err(ChainError::Config(_))
        ));
    }

    #[test]
    fn minimal_segment_yields_one_pair() {
        let mut pair = ConditionalPair::new(Shift, Constant).unwrap();
        let cfg = ChainConfig::new(6, 1, ChainInit::Fixed(vec![0.0])).with_burn_in(5);
        let trace = simulate_gibbs_chain(&mut pair, &cfg).unwrap();
        assert_eq!(trace.thetas.len(), cfg.burn_in + 2);
        let pairs = paired_joint_samples(&trace).unwrap();
        assert_eq!(pairs.gibbs.len(), 1);
        assert_eq!(pairs.evidence.len(), 1);
        assert_eq!(pairs.gibbs[0], vec![trace.thetas[5][0], trace.ys[5][0]]);
        assert_eq!(pairs.evidence[0], vec![trace.thetas[6][0], trace.ys[5][0]]);
    }

    #[test]
    fn empty_segment_is_an_error() {
        let trace = ChainTrace {
            thetas: vec![vec![0.0]],
            ys: vec![],
            config: ChainConfig::new(1, 0, ChainInit::Fixed(vec![0.0])).with_burn_in(0),
        };
        assert_eq!(paired_joint_samples(&trace), Err(ChainError::EmptySegment));
    }

    #[test]
    fn deterministic_chain_scores_zero() {
        let n = 40;
        let trace = ChainTrace {
            thetas: vec![vec![1.0]; n + 1],
            ys: vec![vec![2.0]; n],
            config: ChainConfig::new(n, 0, ChainInit::Fixed(vec![1.0])).with_burn_in(0),
        };
        let s = compatibility_score(&trace, &CompatibilityOptions::default()).unwrap();
        assert!(s.score.abs() < 1e-15);
    }

    #[test]
    fn too_few_pairs_is_an_error() {
        let trace = ChainTrace {
            thetas: vec![vec![1.0]; 10],
            ys: vec![vec![2.0]; 9],
            config: ChainConfig::new(9, 0, ChainInit::Fixed(vec![1.0])).with_burn_in(0),
        };
        assert!(matches!(
            compatibility_score(&trace, &CompatibilityOptions::default()),
            Err(ChainError::TooFewPairs {
                needed: 10,
                found: 9
            })
        ));
    }
}
