//! Chain convergence monitors: Gelman-Rubin R̂ and lag-k autocorrelation.

use alloc::vec::Vec;

use crate::engine::ChainTrace;
use crate::stats::{mean, variance};
use crate::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RhatMethod {
    /// Gelman & Rubin (1992) on whole chains.
    #[default]
    Classic,
    /// Each chain split in halves first.
    Split,
}

/// Potential scale reduction of scalar chains.
///
/// `sqrt(((n-1)/n · W + B/n) / W)` with `B = n · var(chain means)` and `W`
/// the mean within-chain variance. Chains are truncated to the shortest.
pub fn gelman_rubin(chains: &[&[f64]], method: RhatMethod) -> Result<f64, Error> {
    if chains.len() < 2 {
        return Err(Error::NotEnoughSamples {
            needed: 2,
            found: chains.len(),
        });
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    let pieces: Vec<&[f64]> = match method {
        RhatMethod::Classic => chains.iter().map(|c| &c[..n]).collect(),
        RhatMethod::Split => chains
            .iter()
            .flat_map(|c| [&c[..n / 2], &c[n / 2..2 * (n / 2)]])
            .collect(),
    };
    let len = pieces[0].len();
    if len < 4 {
        return Err(Error::NotEnoughSamples {
            needed: 4,
            found: len,
        });
    }
    let means: Vec<f64> = pieces.iter().map(|c| mean(c)).collect();
    let within = mean(&pieces.iter().map(|c| variance(c)).collect::<Vec<_>>());
    if !(within > 0.0) {
        return Err(Error::ZeroVariance);
    }
    let nf = len as f64;
    let between = nf * variance(&means);
    let pooled = (nf - 1.0) / nf * within + between / nf;
    Ok(libm::sqrt(pooled / within))
}

/// R̂ for every latent coordinate across the post-burn-in parts of `traces`.
pub fn gelman_rubin_traces(traces: &[ChainTrace], method: RhatMethod) -> Result<Vec<f64>, Error> {
    let d = traces.first().map_or(0, |t| t.thetas[0].len());
    (0..d)
        .map(|k| {
            let coords: Vec<Vec<f64>> =
                traces.iter().map(|t| t.gibbs_prior_coordinate(k)).collect();
            let views: Vec<&[f64]> = coords.iter().map(Vec::as_slice).collect();
            gelman_rubin(&views, method)
        })
        .collect()
}

/// R̂ evaluated on growing prefixes of the chains, one value per length.
pub fn rhat_curve(
    chains: &[&[f64]],
    lengths: &[usize],
    method: RhatMethod,
) -> Result<Vec<f64>, Error> {
    lengths
        .iter()
        .map(|&len| {
            let prefixes: Vec<&[f64]> = chains.iter().map(|c| &c[..len.min(c.len())]).collect();
            gelman_rubin(&prefixes, method)
        })
        .collect()
}

/// Sample correlation between `x_t` and `x_{t+k}`.
pub fn autocorrelation(chain: &[f64], k: usize) -> Result<f64, Error> {
    if chain.len() < k + 2 {
        return Err(Error::NotEnoughSamples {
            needed: k + 2,
            found: chain.len(),
        });
    }
    let head = &chain[..chain.len() - k];
    let tail = &chain[k..];
    let (mh, mt) = (mean(head), mean(tail));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in head.iter().zip(tail) {
        sxy += (x - mh) * (y - mt);
        sxx += (x - mh) * (x - mh);
        syy += (y - mt) * (y - mt);
    }
    if !(sxx > 0.0 && syy > 0.0) {
        return Err(Error::ZeroVariance);
    }
    if k == 0 {
        return Ok(1.0);
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}
