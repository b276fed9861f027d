//! Gaussian-kernel maximum mean discrepancy and its permutation test.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::RngCore;

use crate::linalg::Matrix;
use crate::stats::quantile_sorted;
use crate::Error;

/// Multipliers of the median distance used by [`Bandwidth::MultiScale`].
pub const MULTI_SCALE_FACTORS: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

/// Kernel bandwidth `h` in `k(x, y) = exp(-‖x - y‖² / (2h²))`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bandwidth {
    Fixed(f64),
    /// Median pairwise distance of the pooled sample (first 1000 points).
    MedianHeuristic,
    /// Average of the kernels at the median distance times
    /// [`MULTI_SCALE_FACTORS`].
    MultiScale,
}

impl Bandwidth {
    /// The base bandwidth: `h` itself or the median distance.
    pub fn resolve(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64, Error> {
        match *self {
            Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(h),
            Bandwidth::Fixed(_) => Err(Error::InvalidParameter("bandwidth must be positive")),
            Bandwidth::MedianHeuristic | Bandwidth::MultiScale => {
                let pooled: Vec<&Vec<f64>> = a.iter().chain(b).take(1000).collect();
                let mut dists = Vec::with_capacity(pooled.len() * pooled.len() / 2);
                for i in 0..pooled.len() {
                    for j in (i + 1)..pooled.len() {
                        dists.push(libm::sqrt(squared_distance(pooled[i], pooled[j])));
                    }
                }
                if dists.is_empty() {
                    return Err(Error::NotEnoughSamples {
                        needed: 2,
                        found: pooled.len(),
                    });
                }
                dists.sort_by(f64::total_cmp);
                let h = quantile_sorted(&dists, 0.5);
                if h > 0.0 {
                    Ok(h)
                } else {
                    Ok(1.0)
                }
            }
        }
    }

    /// Every bandwidth entering the (averaged) kernel.
    pub fn resolve_all(&self, a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<Vec<f64>, Error> {
        let base = self.resolve(a, b)?;
        Ok(match self {
            Bandwidth::MultiScale => MULTI_SCALE_FACTORS.iter().map(|f| f * base).collect(),
            _ => alloc::vec![base],
        })
    }
}

fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

pub fn gaussian_kernel(x: &[f64], y: &[f64], bandwidth: f64) -> f64 {
    libm::exp(-squared_distance(x, y) / (2.0 * bandwidth * bandwidth))
}

/// Mean of Gaussian kernels as a function of `‖x - y‖²`; `scales[j] = -1/(2h_j²)`.
fn mixture_kernel(sq_dist: f64, scales: &[f64]) -> f64 {
    scales.iter().map(|s| libm::exp(sq_dist * s)).sum::<f64>() / scales.len() as f64
}

fn kernel_scales(bandwidths: &[f64]) -> Result<Vec<f64>, Error> {
    if bandwidths.is_empty() || bandwidths.iter().any(|h| !(*h > 0.0 && h.is_finite())) {
        return Err(Error::InvalidParameter("bandwidths must be positive"));
    }
    Ok(bandwidths.iter().map(|h| -1.0 / (2.0 * h * h)).collect())
}

fn check_inputs(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize, Error> {
    for set in [a, b] {
        if set.len() < 2 {
            return Err(Error::NotEnoughSamples {
                needed: 2,
                found: set.len(),
            });
        }
    }
    let d = a[0].len();
    if let Some(bad) = a.iter().chain(b).find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch {
            what: "MMD sample",
            expected: d,
            found: bad.len(),
        });
    }
    Ok(d)
}

/// Unbiased U-statistic estimate of MMD² between two samples.
pub fn mmd2(a: &[Vec<f64>], b: &[Vec<f64>], bandwidth: f64) -> Result<f64, Error> {
    mmd2_mixture(a, b, &[bandwidth])
}

/// [`mmd2`] with the kernel averaged over several bandwidths.
pub fn mmd2_mixture(a: &[Vec<f64>], b: &[Vec<f64>], bandwidths: &[f64]) -> Result<f64, Error> {
    check_inputs(a, b)?;
    let scales = kernel_scales(bandwidths)?;
    let k = |x: &[f64], y: &[f64]| mixture_kernel(squared_distance(x, y), &scales);
    let within = |s: &[Vec<f64>]| {
        let mut acc = 0.0;
        for i in 0..s.len() {
            for j in (i + 1)..s.len() {
                acc += k(&s[i], &s[j]);
            }
        }
        2.0 * acc / (s.len() as f64 * (s.len() as f64 - 1.0))
    };
    let mut cross = 0.0;
    for x in a {
        for y in b {
            cross += k(x, y);
        }
    }
    Ok(within(a) + within(b) - 2.0 * cross / (a.len() as f64 * b.len() as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PermutationTest {
    pub statistic: f64,
    /// Statistic under random relabelings of the pooled sample, sorted.
    pub null: Vec<f64>,
    /// `(1 + #{null ≥ statistic}) / (1 + permutations)`.
    pub p_value: f64,
}

impl PermutationTest {
    pub fn null_quantile(&self, q: f64) -> f64 {
        quantile_sorted(&self.null, q)
    }
}

/// Permutation test of "same distribution" with the MMD² U-statistic.
///
/// Every relabeling is evaluated through the quadratic form `sᵀK's` (`K'` the
/// Gram matrix with zero diagonal, `s` the label indicator), so the pooled
/// Gram matrix is streamed once in column blocks and multiplied against all
/// label vectors together.
pub fn permutation_test(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    bandwidth: f64,
    permutations: usize,
    rng: &mut dyn RngCore,
) -> Result<PermutationTest, Error> {
    permutation_test_mixture(a, b, &[bandwidth], permutations, rng)
}

/// [`permutation_test`] with the kernel averaged over several bandwidths.
pub fn permutation_test_mixture(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    bandwidths: &[f64],
    permutations: usize,
    rng: &mut dyn RngCore,
) -> Result<PermutationTest, Error> {
    let d = check_inputs(a, b)?;
    let scales = kernel_scales(bandwidths)?;
    if permutations == 0 {
        return Err(Error::InvalidParameter("need at least one permutation"));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(Vec::as_slice).collect();
    let cols = permutations + 1;

    let mut labels = Matrix::zeros(n, cols);
    let mut order: Vec<usize> = (0..n).collect();
    for p in 0..cols {
        if p > 0 {
            order.shuffle(rng);
        }
        for &idx in &order[..na] {
            labels[(idx, p)] = 1.0;
        }
    }

    let block = (4_000_000 / n).clamp(1, n);
    let mut within_a = alloc::vec![0.0; cols];
    let mut a_rowsum = alloc::vec![0.0; cols];
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let width = block.min(n - start);
        // Columns start..start+width of the Gram matrix, diagonal removed.
        let gram = Matrix::from_fn(n, width, |j, c| {
            let i = start + c;
            if i == j {
                0.0
            } else {
                let mut s = 0.0;
                for k in 0..d {
                    let diff = pooled[i][k] - pooled[j][k];
                    s += diff * diff;
                }
                mixture_kernel(s, &scales)
            }
        });
        let projected = gram.tr_mul(&labels);
        for c in 0..width {
            let i = start + c;
            let rowsum: f64 = gram.column(c).sum();
            total += rowsum;
            for p in 0..cols {
                let l = labels[(i, p)];
                if l != 0.0 {
                    a_rowsum[p] += rowsum;
                    within_a[p] += projected[(c, p)];
                }
            }
        }
        start += width;
    }

    let (fa, fb) = (na as f64, nb as f64);
    let stats: Vec<f64> = (0..cols)
        .map(|p| {
            let saa = within_a[p];
            let sab = a_rowsum[p] - saa;
            let sbb = total - 2.0 * a_rowsum[p] + saa;
            saa / (fa * (fa - 1.0)) + sbb / (fb * (fb - 1.0)) - 2.0 * sab / (fa * fb)
        })
        .collect();
    let statistic = stats[0];
    let mut null = stats[1..].to_vec();
    let exceed = null.iter().filter(|&&v| v >= statistic).count();
    null.sort_by(f64::total_cmp);
    Ok(PermutationTest {
        statistic,
        null,
        p_value: (1 + exceed) as f64 / cols as f64,
    })
}
