//! Simulation-based calibration rank histograms.

use alloc::vec::Vec;

use rand::{Rng, RngCore};

use crate::engine::{Approximator, Likelihood};
use crate::rng::{chain_rng, derive_seed};
use crate::special::{binomial_quantile, chi_square_sf};
use crate::Error;

/// Counts of the rank of the true latent's statistic among `L` approximate
/// posterior draws, with a pointwise 99% band under uniformity.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct RankHistogram {
    pub counts: Vec<u64>,
    /// Number of repetitions.
    pub n: u64,
    /// Posterior draws per repetition; ranks run over `0..=l`.
    pub l: u64,
    /// Number of original ranks merged into each bin.
    pub bin_widths: Vec<u64>,
    /// `(low, high)` binomial 0.5% / 99.5% quantiles of each bin count.
    pub band_99: Vec<(u64, u64)>,
}

impl RankHistogram {
    pub fn from_ranks(ranks: &[u64], l: u64) -> Self {
        let mut counts = alloc::vec![0u64; l as usize + 1];
        for &r in ranks {
            counts[r as usize] += 1;
        }
        let widths = alloc::vec![1u64; counts.len()];
        Self::with_widths(counts, ranks.len() as u64, l, widths)
    }

    fn with_widths(counts: Vec<u64>, n: u64, l: u64, bin_widths: Vec<u64>) -> Self {
        let band_99 = bin_widths
            .iter()
            .map(|&w| {
                let p = w as f64 / (l + 1) as f64;
                (
                    binomial_quantile(n, p, 0.005),
                    binomial_quantile(n, p, 0.995),
                )
            })
            .collect();
        Self {
            counts,
            n,
            l,
            bin_widths,
            band_99,
        }
    }

    /// Merges adjacent pairs of bins once; an odd last bin stays alone.
    /// The band is recomputed for the merged bin probabilities.
    pub fn rebinned(&self) -> Self {
        let counts = self.counts.chunks(2).map(|c| c.iter().sum()).collect();
        let widths = self.bin_widths.chunks(2).map(|c| c.iter().sum()).collect();
        Self::with_widths(counts, self.n, self.l, widths)
    }

    pub fn above_band(&self, bin: usize) -> bool {
        self.counts[bin] > self.band_99[bin].1
    }

    pub fn below_band(&self, bin: usize) -> bool {
        self.counts[bin] < self.band_99[bin].0
    }

    /// Both extreme bins above the band: the ∪ shape of an overly compact
    /// approximation.
    pub fn is_cup_shaped(&self) -> bool {
        self.above_band(0) && self.above_band(self.counts.len() - 1)
    }

    /// Pearson chi-square test of uniformity over the current bins.
    pub fn chi_square(&self) -> ChiSquareTest {
        let mut statistic = 0.0;
        for (c, w) in self.counts.iter().zip(&self.bin_widths) {
            let expected = self.n as f64 * *w as f64 / (self.l + 1) as f64;
            let diff = *c as f64 - expected;
            statistic += diff * diff / expected;
        }
        let dof = (self.counts.len() - 1) as f64;
        ChiSquareTest {
            statistic,
            dof,
            p_value: chi_square_sf(statistic, dof),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiSquareTest {
    pub statistic: f64,
    pub dof: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SbcConfig {
    /// Repetitions `N`.
    pub draws: usize,
    /// Approximate posterior draws per repetition `L`.
    pub posterior_draws: usize,
    /// Repetition `r` uses the stream `derive_seed(seed, r)`.
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SbcError {
    #[error("N and L must be at least 1")]
    Config,
    #[error("repetition {repetition}: {source}")]
    Repetition { repetition: usize, source: Error },
}

/// Rank of `truth` among `draws`, ties broken uniformly at random.
pub fn rank_with_ties(truth: f64, draws: &[f64], rng: &mut dyn RngCore) -> u64 {
    let below = draws.iter().filter(|&&v| v < truth).count() as u64;
    let ties = draws.iter().filter(|&&v| v == truth).count() as u64;
    if ties == 0 {
        below
    } else {
        below + rng.random_range(0..=ties)
    }
}

/// Runs `N` repetitions of θ̃ ~ prior, ỹ ~ f(·|θ̃), θ₁…θ_L ~ q(·|ỹ) and ranks
/// every statistic of θ̃ among its values on the θ_l.
///
/// All statistics share the same draws; one histogram per statistic.
pub fn sbc_ranks<P, L, A>(
    mut prior: P,
    likelihood: &L,
    approximator: &mut A,
    statistics: &[&dyn Fn(&[f64]) -> f64],
    config: &SbcConfig,
) -> Result<Vec<RankHistogram>, SbcError>
where
    P: FnMut(&mut dyn RngCore) -> Vec<f64>,
    L: Likelihood + ?Sized,
    A: Approximator + ?Sized,
{
    if config.draws == 0 || config.posterior_draws == 0 {
        return Err(SbcError::Config);
    }
    let mut ranks: Vec<Vec<u64>> = alloc::vec![Vec::with_capacity(config.draws); statistics.len()];
    for repetition in 0..config.draws {
        let wrap = |source| SbcError::Repetition { repetition, source };
        let mut rng = chain_rng(derive_seed(config.seed, repetition as u64));
        let truth = prior(&mut rng);
        let y = likelihood.sample(&truth, &mut rng).map_err(wrap)?;
        let draws = approximator
            .sample(&y, config.posterior_draws, &mut rng)
            .map_err(wrap)?;
        for (stat, out) in statistics.iter().zip(ranks.iter_mut()) {
            let values: Vec<f64> = draws.iter().map(|d| stat(d)).collect();
            out.push(rank_with_ties(stat(&truth), &values, &mut rng));
        }
    }
    Ok(ranks
        .iter()
        .map(|r| RankHistogram::from_ranks(r, config.posterior_draws as u64))
        .collect())
}
