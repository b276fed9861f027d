//! Sample moments and quantiles.

use alloc::vec::Vec;

use crate::linalg::Matrix;
use crate::Error;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

pub fn mean_vector(samples: &[Vec<f64>]) -> Vec<f64> {
    let d = samples.first().map_or(0, Vec::len);
    let mut acc = alloc::vec![0.0; d];
    for s in samples {
        for (a, v) in acc.iter_mut().zip(s) {
            *a += v;
        }
    }
    let n = samples.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

/// Unbiased sample covariance of equal-length vectors.
pub fn covariance(samples: &[Vec<f64>]) -> Result<Matrix, Error> {
    if samples.len() < 2 {
        return Err(Error::NotEnoughSamples {
            needed: 2,
            found: samples.len(),
        });
    }
    let d = samples[0].len();
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch {
            what: "sample",
            expected: d,
            found: bad.len(),
        });
    }
    let mu = mean_vector(samples);
    let mut cov = Matrix::zeros(d, d);
    for s in samples {
        for i in 0..d {
            let di = s[i] - mu[i];
            for j in i..d {
                cov[(i, j)] += di * (s[j] - mu[j]);
            }
        }
    }
    let denom = samples.len() as f64 - 1.0;
    for i in 0..d {
        for j in i..d {
            let v = cov[(i, j)] / denom;
            cov[(i, j)] = v;
            cov[(j, i)] = v;
        }
    }
    Ok(cov)
}

/// Linear-interpolation quantile (Hyndman-Fan type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = libm::floor(h) as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(xs: &[f64], q: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Standard error of the mean from non-overlapping batch means, which stays
/// honest under autocorrelation when batches are long compared to the
/// correlation time.
pub fn batch_means_standard_error(xs: &[f64], batches: usize) -> f64 {
    let size = xs.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| mean(&xs[b * size..(b + 1) * size]))
        .collect();
    libm::sqrt(variance(&means) / batches as f64)
}
