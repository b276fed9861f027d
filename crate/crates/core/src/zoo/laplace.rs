//! Laplace approximation: damped Newton to the mode of a log-density, then a
//! Gaussian with the negative inverse Hessian as covariance.

use alloc::vec;
use alloc::vec::Vec;

use rand::RngCore;

use super::lognormal::{fenton_wilkinson, fw_beta2, fw_beta2_derivative, LogNormalSumModel};
use crate::engine::Approximator;
use crate::gaussian::GaussianDist;
use crate::linalg::{ensure_spd, spd_inverse, symmetrize, Matrix, Vector};
use crate::Error;

/// Unnormalized log-density with a gradient.
pub trait LogDensity {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Central differences unless overridden.
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let mut g = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for k in 0..x.len() {
            let h = 1e-6 * x[k].abs().max(1.0);
            probe[k] = x[k] + h;
            let up = self.value(&probe);
            probe[k] = x[k] - h;
            let down = self.value(&probe);
            probe[k] = x[k];
            g[k] = (up - down) / (2.0 * h);
        }
        g
    }
}

/// Hessian by central differences of the gradient, step `1e-5 · max(1, |x_k|)`.
pub fn finite_difference_hessian(target: &dyn LogDensity, x: &[f64]) -> Matrix {
    let d = x.len();
    let mut h = Matrix::zeros(d, d);
    let mut probe = x.to_vec();
    for k in 0..d {
        let step = 1e-5 * x[k].abs().max(1.0);
        probe[k] = x[k] + step;
        let up = target.gradient(&probe);
        probe[k] = x[k] - step;
        let down = target.gradient(&probe);
        probe[k] = x[k];
        for j in 0..d {
            h[(j, k)] = (up[j] - down[j]) / (2.0 * step);
        }
    }
    symmetrize(&h)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub max_iterations: usize,
    pub max_halvings: usize,
    /// Converged once the gradient norm is at or below this.
    pub gradient_tol: f64,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            max_halvings: 30,
            gradient_tol: 1e-9,
        }
    }
}

/// Gradient norm accepted as a mode when the line search stalls.
pub const MODE_GRADIENT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceFit {
    pub mode: Vec<f64>,
    pub gradient_norm: f64,
    pub iterations: usize,
    /// `N(mode, -H⁻¹)`.
    pub dist: GaussianDist,
}

fn norm(v: &[f64]) -> f64 {
    libm::sqrt(v.iter().map(|x| x * x).sum())
}

/// One Newton run; `None` if it does not reach a stationary point with a
/// negative definite Hessian.
fn newton(
    target: &dyn LogDensity,
    start: &[f64],
    opts: &NewtonOptions,
) -> Option<(Vec<f64>, usize)> {
    let mut x = start.to_vec();
    let mut fx = target.value(&x);
    if !fx.is_finite() {
        return None;
    }
    for iteration in 0..opts.max_iterations {
        let g = target.gradient(&x);
        let gn = norm(&g);
        if !gn.is_finite() {
            return None;
        }
        if gn <= opts.gradient_tol {
            return Some((x, iteration));
        }
        let neg_h = -finite_difference_hessian(target, &x);
        let gv = Vector::from_column_slice(&g);
        // Fall back to steepest ascent where the curvature is not concave.
        let step = match neg_h.clone().cholesky() {
            Some(c) => c.solve(&gv),
            None => gv.clone() / gn.max(1.0),
        };
        let mut t = 1.0;
        let mut moved = false;
        for _ in 0..=opts.max_halvings {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let fc = target.value(&cand);
            if fc.is_finite() && fc >= fx {
                moved = fc > fx || cand != x;
                x = cand;
                fx = fc;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            return (gn <= MODE_GRADIENT_TOL).then_some((x, iteration));
        }
    }
    let gn = norm(&target.gradient(&x));
    (gn <= MODE_GRADIENT_TOL).then_some((x, opts.max_iterations))
}

/// Runs Newton from each start in turn and fits the Gaussian at the first
/// mode found.
pub fn laplace_fit(
    target: &dyn LogDensity,
    starts: &[Vec<f64>],
    opts: &NewtonOptions,
) -> Result<LaplaceFit, Error> {
    for start in starts {
        if start.len() != target.dim() {
            return Err(Error::DimensionMismatch {
                what: "Newton start",
                expected: target.dim(),
                found: start.len(),
            });
        }
        let Some((mode, iterations)) = newton(target, start, opts) else {
            continue;
        };
        let neg_h = -finite_difference_hessian(target, &mode);
        if ensure_spd(&neg_h).is_err() {
            continue;
        }
        let covariance = spd_inverse(&neg_h)?;
        let gradient_norm = norm(&target.gradient(&mode));
        let dist = GaussianDist::new(Vector::from_column_slice(&mode), covariance)?;
        return Ok(LaplaceFit {
            mode,
            gradient_norm,
            iterations,
            dist,
        });
    }
    Err(Error::NewtonFailed {
        starts: starts.len(),
    })
}

/// Coordinates the log-normal Laplace fit works in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum LaplaceParam {
    /// `(μ, u = ln σ²)`, with the log-Jacobian `u` added to the target.
    #[default]
    LogVariance,
    /// `(μ, σ²)` as is. The surrogate posterior grows without bound as
    /// `σ² → 0`, so Newton only succeeds where a local interior mode exists.
    Direct,
}

/// `log π(μ, σ²) + log f̃(y | μ, σ²)` in the chosen coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogNormalLaplaceTarget {
    pub y: f64,
    pub terms: usize,
    pub param: LaplaceParam,
}

impl LogNormalLaplaceTarget {
    fn variance(&self, x: &[f64]) -> f64 {
        match self.param {
            LaplaceParam::LogVariance => libm::exp(x[1]),
            LaplaceParam::Direct => x[1],
        }
    }

    /// Value and the two partial derivatives in `(μ, σ²)`.
    fn natural(&self, mu: f64, s: f64) -> (f64, f64, f64) {
        let fw = match fenton_wilkinson(mu, s, self.terms) {
            Ok(p) => p,
            Err(_) => return (f64::NEG_INFINITY, f64::NAN, f64::NAN),
        };
        let b = fw.beta2;
        let db = fw_beta2_derivative(s, self.terms);
        let r = libm::log(self.y) - fw.alpha;
        let value = -0.5 * mu * mu - s + fw.log_density(self.y);
        let d_mu = -mu + r / b;
        let d_s = -1.0 - 0.5 * db / b + r * (1.0 - db) / (2.0 * b) + r * r * db / (2.0 * b * b);
        debug_assert!((b - fw_beta2(s, self.terms)).abs() <= 1e-12 * b.max(1.0));
        (value, d_mu, d_s)
    }
}

impl LogDensity for LogNormalLaplaceTarget {
    fn dim(&self) -> usize {
        2
    }

    fn value(&self, x: &[f64]) -> f64 {
        let s = self.variance(x);
        if !(s > 0.0 && s.is_finite()) {
            return f64::NEG_INFINITY;
        }
        let (v, _, _) = self.natural(x[0], s);
        match self.param {
            LaplaceParam::LogVariance => v + x[1],
            LaplaceParam::Direct => v,
        }
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        let s = self.variance(x);
        if !(s > 0.0 && s.is_finite()) {
            return vec![f64::NAN; 2];
        }
        let (_, d_mu, d_s) = self.natural(x[0], s);
        match self.param {
            LaplaceParam::LogVariance => vec![d_mu, s * d_s + 1.0],
            LaplaceParam::Direct => vec![d_mu, d_s],
        }
    }
}

fn lognormal_starts(y: f64, terms: usize, param: LaplaceParam) -> Vec<Vec<f64>> {
    let centre = libm::log(y) - libm::log(terms as f64);
    let raw = [
        (centre, 1.0),
        (0.0, 1.0),
        (centre - 0.5, 0.3),
        (0.5 * centre, 2.5),
        (0.0, 0.1),
    ];
    raw.iter()
        .map(|&(m, s)| match param {
            LaplaceParam::LogVariance => vec![m, libm::log(s)],
            LaplaceParam::Direct => vec![m, s],
        })
        .collect()
}

/// Laplace fit of the Fenton-Wilkinson posterior at observation `y`, as a
/// Gaussian over the coordinates of `param`.
pub fn laplace_approx(
    y: f64,
    model: &LogNormalSumModel,
    param: LaplaceParam,
) -> Result<LaplaceFit, Error> {
    if !(y > 0.0 && y.is_finite()) {
        return Err(Error::InvalidParameter("observation must be positive"));
    }
    let target = LogNormalLaplaceTarget {
        y,
        terms: model.terms,
        param,
    };
    laplace_fit(
        &target,
        &lognormal_starts(y, model.terms, param),
        &NewtonOptions::default(),
    )
}

/// Rejection sampler for `(μ, σ²)` Gaussians truncated to `σ² > 0`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TruncatedSampler {
    pub attempts: u64,
    pub accepted: u64,
}

pub const MIN_ACCEPTANCE: f64 = 1e-3;
pub const ACCEPTANCE_WINDOW: u64 = 10_000;

impl TruncatedSampler {
    pub fn acceptance_rate(&self) -> f64 {
        if self.attempts == 0 {
            1.0
        } else {
            self.accepted as f64 / self.attempts as f64
        }
    }

    /// Redraws until the second coordinate is positive. Fails once at least
    /// 10⁴ attempts have been made with acceptance below 10⁻³.
    pub fn sample(
        &mut self,
        dist: &GaussianDist,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<f64>, Error> {
        if dist.dim() != 2 {
            return Err(Error::DimensionMismatch {
                what: "(μ, σ²) Gaussian",
                expected: 2,
                found: dist.dim(),
            });
        }
        loop {
            let draw = dist.sample(rng);
            self.attempts += 1;
            if draw[1] > 0.0 {
                self.accepted += 1;
                return Ok(draw);
            }
            if self.attempts >= ACCEPTANCE_WINDOW && self.acceptance_rate() < MIN_ACCEPTANCE {
                return Err(Error::LowAcceptance {
                    rate: self.acceptance_rate(),
                    attempts: self.attempts as usize,
                });
            }
        }
    }
}

/// One draw from `dist` truncated to `σ² > 0`.
pub fn laplace_sample(
    dist: &GaussianDist,
    rng: &mut dyn RngCore,
    counter: &mut TruncatedSampler,
) -> Result<Vec<f64>, Error> {
    counter.sample(dist, rng)
}

/// `q(μ, σ² | y)` from the Laplace fit; draws are returned as `(μ, σ²)`.
#[derive(Debug, Clone, Default)]
pub struct LaplaceApproximator {
    pub model: LogNormalSumModel,
    pub param: LaplaceParam,
    pub truncation: TruncatedSampler,
}

impl LaplaceApproximator {
    pub fn new(model: LogNormalSumModel, param: LaplaceParam) -> Self {
        Self {
            model,
            param,
            truncation: TruncatedSampler::default(),
        }
    }
}

impl Approximator for LaplaceApproximator {
    fn latent_dim(&self) -> usize {
        2
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
        let fit = laplace_approx(y[0], &self.model, self.param)?;
        (0..count)
            .map(|_| match self.param {
                LaplaceParam::LogVariance => {
                    let z = fit.dist.sample(rng);
                    Ok(vec![z[0], libm::exp(z[1])])
                }
                LaplaceParam::Direct => self.truncation.sample(&fit.dist, rng),
            })
            .collect()
    }
}

/// Brute-force maximizer of the log-variance target over the `k × k` grid
/// `μ ∈ [-3, 3]`, `σ² ∈ {5/k, 10/k, …, 5}`, reported in `(μ, σ²)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridMode {
    pub mode: [f64; 2],
    pub cell: [f64; 2],
}

pub fn grid_mode(y: f64, model: &LogNormalSumModel, k: usize) -> GridMode {
    let target = LogNormalLaplaceTarget {
        y,
        terms: model.terms,
        param: LaplaceParam::LogVariance,
    };
    let cell = [6.0 / (k - 1) as f64, 5.0 / k as f64];
    let mut best = (f64::NEG_INFINITY, [0.0; 2]);
    for i in 0..k {
        for j in 1..=k {
            let x = [-3.0 + i as f64 * cell[0], j as f64 * cell[1]];
            let v = target.value(&[x[0], libm::log(x[1])]);
            if v > best.0 {
                best = (v, x);
            }
        }
    }
    GridMode { mode: best.1, cell }
}

/// Observations drawn from the prior predictive, keeping those whose
/// Laplace mode lies inside the grid box of [`grid_mode`].
pub fn prior_predictive_fixtures(model: &LogNormalSumModel, count: usize, seed: u64) -> Vec<f64> {
    let mut rng = crate::rng::chain_rng(seed);
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let [mu, s2] = model.sample_prior(&mut rng);
        let Ok(y) = super::lognormal::lognormal_sum_sample(mu, s2, model.terms, &mut rng) else {
            continue;
        };
        if let Ok(fit) = laplace_approx(y, model, LaplaceParam::LogVariance) {
            let s = libm::exp(fit.mode[1]);
            if fit.mode[0].abs() < 3.0 && s < 5.0 {
                out.push(y);
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::chain_rng;
    use crate::stats::mean;
    use rand::Rng;

    struct Quadratic {
        mean: Vec<f64>,
        precision: Matrix,
    }

    impl LogDensity for Quadratic {
        fn dim(&self) -> usize {
            self.mean.len()
        }

        fn value(&self, x: &[f64]) -> f64 {
            let d = Vector::from_column_slice(x) - Vector::from_column_slice(&self.mean);
            -0.5 * d.dot(&(&self.precision * &d))
        }

        fn gradient(&self, x: &[f64]) -> Vec<f64> {
            let d = Vector::from_column_slice(x) - Vector::from_column_slice(&self.mean);
            (-(&self.precision * d)).iter().copied().collect()
        }
    }

    #[test]
    fn exact_on_gaussians() {
        let cov = Matrix::from_row_slice(3, 3, &[2.0, 0.3, -0.4, 0.3, 1.0, 0.2, -0.4, 0.2, 0.5]);
        let target = Quadratic {
            mean: vec![1.0, -2.0, 0.5],
            precision: spd_inverse(&cov).unwrap(),
        };
        let fit = laplace_fit(&target, &[vec![0.0; 3]], &NewtonOptions::default()).unwrap();
        assert!(fit
            .mode
            .iter()
            .zip(&target.mean)
            .all(|(a, b)| (a - b).abs() < 1e-8));
        assert!((fit.dist.covariance() - &cov).abs().max() < 1e-8);
    }

    #[test]
    fn analytic_gradient_matches_differences() {
        for param in [LaplaceParam::LogVariance, LaplaceParam::Direct] {
            let target = LogNormalLaplaceTarget {
                y: 13.0,
                terms: 10,
                param,
            };
            for x in [[0.3, 0.5], [-1.0, 1.7], [1.2, 0.05]] {
                let analytic = target.gradient(&x);
                let mut g = vec![0.0; 2];
                for k in 0..2 {
                    let h = 1e-6;
                    let mut up = x;
                    let mut down = x;
                    up[k] += h;
                    down[k] -= h;
                    g[k] = (target.value(&up) - target.value(&down)) / (2.0 * h);
                }
                for k in 0..2 {
                    assert!(
                        (analytic[k] - g[k]).abs() < 1e-5 * g[k].abs().max(1.0),
                        "{param:?} {x:?} {k}"
                    );
                }
            }
        }
    }

    #[test]
    fn lognormal_mode_matches_grid() {
        let model = LogNormalSumModel::default();
        for y in prior_predictive_fixtures(&model, 3, 7) {
            let fit = laplace_approx(y, &model, LaplaceParam::LogVariance).unwrap();
            assert!(fit.gradient_norm <= 1e-6);
            let oracle = grid_mode(y, &model, 400);
            let found = [fit.mode[0], libm::exp(fit.mode[1])];
            for k in 0..2 {
                assert!(
                    (found[k] - oracle.mode[k]).abs() <= oracle.cell[k],
                    "y={y} {k}"
                );
            }
        }
    }

    #[test]
    fn direct_coordinates_have_no_interior_mode_for_moderate_y() {
        let model = LogNormalSumModel::default();
        let r = laplace_approx(10.0, &model, LaplaceParam::Direct);
        assert!(matches!(r, Err(Error::NewtonFailed { .. })), "{r:?}");
        assert!(laplace_approx(-1.0, &model, LaplaceParam::LogVariance).is_err());
    }

    #[test]
    fn truncated_sampling() {
        let mut rng = chain_rng(1);
        let far =
            GaussianDist::from_slices(&[0.0, 10.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut counter = TruncatedSampler::default();
        for _ in 0..1000 {
            laplace_sample(&far, &mut rng, &mut counter).unwrap();
        }
        assert_eq!(counter.acceptance_rate(), 1.0);

        let centred =
            GaussianDist::from_slices(&[1.5, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut counter = TruncatedSampler::default();
        let mus: Vec<f64> = (0..20_000)
            .map(|_| laplace_sample(&centred, &mut rng, &mut counter).unwrap()[0])
            .collect();
        assert!((counter.acceptance_rate() - 0.5).abs() < 0.02);
        assert!((mean(&mus) - 1.5).abs() < 3.0 / libm::sqrt(20_000.0));

        let hopeless =
            GaussianDist::from_slices(&[0.0, -10.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let mut counter = TruncatedSampler::default();
        assert!(matches!(
            laplace_sample(&hopeless, &mut rng, &mut counter),
            Err(Error::LowAcceptance { .. })
        ));
    }

    #[test]
    fn approximator_returns_positive_variances() {
        let mut q = LaplaceApproximator::default();
        let mut rng = chain_rng(2);
        for _ in 0..50 {
            let y = rng.random_range(0.5..200.0);
            for d in q.sample(&[y], 3, &mut rng).unwrap() {
                assert!(d[1] > 0.0 && d[0].is_finite());
            }
        }
    }
}
