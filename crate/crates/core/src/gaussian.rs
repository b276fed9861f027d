//! Closed forms for the conjugate Gaussian mean model
//! `θ ~ N(μ_p, Σ_p)`, `y_i | θ ~ N(θ, Σ_l)` for `i = 1..n`, and its mean-field
//! variational approximations.
//!
//! The posterior covariance does not depend on the data, so the Gibbs chain is
//! a Gaussian autoregression `θ' = a + Aθ + ε`, `ε ~ N(0, B)`, whose stationary
//! law is `N(μ_p, X)` with `X` solving `A X Aᵀ - X + B = 0`.

use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{Approximator, Likelihood};
use crate::linalg::{
    cholesky_lower, diag_part, ensure_spd, extreme_eigen, spd_inverse, spectral_radius, symmetrize,
    Matrix, Vector,
};
use crate::Error;

/// Strongly correlated along `(1, 1)ᵀ`; used for the correlated factor of the
/// two canonical settings.
pub const CANONICAL_CORRELATED: [[f64; 2]; 2] = [[1.7, 1.45], [1.45, 1.7]];

/// Multivariate normal with a validated SPD covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianDist {
    mean: Vector,
    covariance: Matrix,
    chol: Matrix,
}

impl GaussianDist {
    pub fn new(mean: Vector, covariance: Matrix) -> Result<Self, Error> {
        if covariance.nrows() != mean.len() {
            return Err(Error::DimensionMismatch {
                what: "covariance",
                expected: mean.len(),
                found: covariance.nrows(),
            });
        }
        ensure_spd(&covariance)?;
        let covariance = symmetrize(&covariance);
        let chol = cholesky_lower(&covariance)?;
        Ok(Self {
            mean,
            covariance,
            chol,
        })
    }

    pub fn from_slices(mean: &[f64], covariance_rows: &[Vec<f64>]) -> Result<Self, Error> {
        Self::new(
            Vector::from_column_slice(mean),
            crate::linalg::from_rows(covariance_rows)?,
        )
    }

    pub fn standard(d: usize) -> Self {
        Self::new(Vector::zeros(d), Matrix::identity(d, d)).expect("identity is SPD")
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &Vector {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix {
        &self.covariance
    }

    pub fn ln_det(&self) -> f64 {
        2.0 * self
            .chol
            .diagonal()
            .iter()
            .map(|v| libm::log(*v))
            .sum::<f64>()
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(self)
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let diff = Vector::from_column_slice(x) - &self.mean;
        let z = self
            .chol
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        -0.5 * (self.dim() as f64 * libm::log(2.0 * PI) + self.ln_det() + z.norm_squared())
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        let z = Vector::from_fn(self.dim(), |_, _| StandardNormal.sample(rng));
        (&self.mean + &self.chol * z).iter().copied().collect()
    }
}

/// `d/2 (1 + ln 2π) + ½ ln det Σ`.
pub fn gaussian_entropy(g: &GaussianDist) -> f64 {
    0.5 * g.dim() as f64 * (1.0 + libm::log(2.0 * PI)) + 0.5 * g.ln_det()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum DivergenceKind {
    /// `argmin KL(q ‖ p(·|Y))`.
    #[cfg_attr(feature = "serde", serde(rename = "reverse_kl"))]
    ReverseKL,
    /// `argmin KL(p(·|Y) ‖ q)`.
    #[cfg_attr(feature = "serde", serde(rename = "forward_kl"))]
    ForwardKL,
}

/// Which approximation the toy model's inference step uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ApproxFamily {
    ExactPosterior,
    MeanField(DivergenceKind),
}

impl From<DivergenceKind> for ApproxFamily {
    fn from(kind: DivergenceKind) -> Self {
        ApproxFamily::MeanField(kind)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianToyModel {
    pub prior: GaussianDist,
    pub likelihood_cov: Matrix,
    pub n_obs: usize,
    likelihood_precision: Matrix,
    likelihood_chol: Matrix,
}

impl GaussianToyModel {
    pub fn new(prior: GaussianDist, likelihood_cov: Matrix, n_obs: usize) -> Result<Self, Error> {
        if likelihood_cov.nrows() != prior.dim() {
            return Err(Error::DimensionMismatch {
                what: "likelihood covariance",
                expected: prior.dim(),
                found: likelihood_cov.nrows(),
            });
        }
        if n_obs == 0 {
            return Err(Error::InvalidParameter("n_obs must be positive"));
        }
        ensure_spd(&likelihood_cov)?;
        let likelihood_cov = symmetrize(&likelihood_cov);
        Ok(Self {
            likelihood_precision: spd_inverse(&likelihood_cov)?,
            likelihood_chol: cholesky_lower(&likelihood_cov)?,
            prior,
            likelihood_cov,
            n_obs,
        })
    }

    /// Correlated prior, isotropic likelihood, zero prior mean, one observation.
    pub fn setting_prior() -> Self {
        let c = Matrix::from_fn(2, 2, |i, j| CANONICAL_CORRELATED[i][j]);
        let prior = GaussianDist::new(Vector::zeros(2), c).expect("canonical matrix is SPD");
        Self::new(prior, Matrix::identity(2, 2), 1).expect("canonical model is valid")
    }

    /// Isotropic prior, correlated likelihood; the two covariances of
    /// [`Self::setting_prior`] interchanged.
    pub fn setting_like() -> Self {
        let c = Matrix::from_fn(2, 2, |i, j| CANONICAL_CORRELATED[i][j]);
        Self::new(GaussianDist::standard(2), c, 1).expect("canonical model is valid")
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// `Σ_n = (Σ_p⁻¹ + nΣ_l⁻¹)⁻¹`, the same for every data set.
    pub fn posterior_covariance(&self) -> Matrix {
        let prior_precision = spd_inverse(self.prior.covariance())
            .expect("prior covariance validated at construction");
        spd_inverse(&(prior_precision + &self.likelihood_precision * self.n_obs as f64))
            .expect("sum of SPD precisions is SPD")
    }

    /// Covariance of the approximation `Σ_q`.
    pub fn approx_covariance(&self, family: ApproxFamily) -> Matrix {
        let sigma_n = self.posterior_covariance();
        match family {
            ApproxFamily::ExactPosterior => sigma_n,
            ApproxFamily::MeanField(kind) => mean_field_covariance(&sigma_n, kind),
        }
    }

    fn check_data(&self, y: &Matrix) -> Result<Vector, Error> {
        if y.nrows() != self.n_obs {
            return Err(Error::DimensionMismatch {
                what: "number of observations",
                expected: self.n_obs,
                found: y.nrows(),
            });
        }
        if y.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "observation dimension",
                expected: self.dim(),
                found: y.ncols(),
            });
        }
        Ok(y.row_mean().transpose())
    }

    fn posterior_mean(&self, sigma_n: &Matrix, y_bar: &Vector) -> Vector {
        let prior_precision = spd_inverse(self.prior.covariance()).expect("validated");
        sigma_n
            * (prior_precision * self.prior.mean()
                + &self.likelihood_precision * y_bar * self.n_obs as f64)
    }
}

fn mean_field_covariance(sigma_n: &Matrix, kind: DivergenceKind) -> Matrix {
    match kind {
        DivergenceKind::ReverseKL => {
            let precision = spd_inverse(sigma_n).expect("posterior covariance is SPD");
            Matrix::from_diagonal(&precision.diagonal().map(|p| 1.0 / p))
        }
        DivergenceKind::ForwardKL => diag_part(sigma_n),
    }
}

/// Exact posterior `N(μ_n, Σ_n)` for the rows of `y`.
pub fn exact_posterior(model: &GaussianToyModel, y: &Matrix) -> Result<GaussianDist, Error> {
    let y_bar = model.check_data(y)?;
    let sigma_n = model.posterior_covariance();
    let mu_n = model.posterior_mean(&sigma_n, &y_bar);
    GaussianDist::new(mu_n, sigma_n)
}

/// Mean-field fit: same mean, covariance `diag(Σ⁻¹)⁻¹` (reverse KL) or
/// `diag(Σ)` (forward KL).
pub fn mean_field_approx(posterior: &GaussianDist, kind: DivergenceKind) -> GaussianDist {
    GaussianDist::new(
        posterior.mean().clone(),
        mean_field_covariance(posterior.covariance(), kind),
    )
    .expect("diagonal of an SPD matrix is SPD")
}

pub fn approximate_posterior(
    model: &GaussianToyModel,
    y: &Matrix,
    family: ApproxFamily,
) -> Result<GaussianDist, Error> {
    let posterior = exact_posterior(model, y)?;
    Ok(match family {
        ApproxFamily::ExactPosterior => posterior,
        ApproxFamily::MeanField(kind) => mean_field_approx(&posterior, kind),
    })
}

/// `π_y(θ) ∝ q(θ|y) / f(y|θ)`: Gaussian when `S = Σ_q⁻¹ - nΣ_l⁻¹` is positive
/// definite, improper otherwise.
#[derive(Debug, Clone, PartialEq)]
pub enum PointwisePrior {
    Proper(GaussianDist),
    Improper {
        /// Smallest eigenvalue of `S`, at or below the tolerance.
        eigenvalue: f64,
        eigenvector: Vec<f64>,
    },
}

impl PointwisePrior {
    pub fn is_proper(&self) -> bool {
        matches!(self, PointwisePrior::Proper(_))
    }
}

pub fn pointwise_prior(
    model: &GaussianToyModel,
    y: &Matrix,
    family: ApproxFamily,
) -> Result<PointwisePrior, Error> {
    let y_bar = model.check_data(y)?;
    let sigma_n = model.posterior_covariance();
    let mu_n = model.posterior_mean(&sigma_n, &y_bar);
    let q_precision = spd_inverse(&model.approx_covariance(family))?;
    let n = model.n_obs as f64;
    let s = symmetrize(&(&q_precision - &model.likelihood_precision * n));
    let (min, vec, largest) = extreme_eigen(&s);
    // Boundary cases count as improper.
    if min <= crate::linalg::SPD_TOL * largest {
        return Ok(PointwisePrior::Improper {
            eigenvalue: min,
            eigenvector: vec.iter().copied().collect(),
        });
    }
    let sigma_y = spd_inverse(&s)?;
    let mu_y = &sigma_y * (q_precision * mu_n - &model.likelihood_precision * y_bar * n);
    Ok(PointwisePrior::Proper(GaussianDist::new(mu_y, sigma_y)?))
}

/// One Gibbs step as `θ' ~ N(offset + gain·θ, noise)`.
#[derive(Debug, Clone, PartialEq)]
pub struct GibbsTransition {
    /// `a = Σ_n Σ_p⁻¹ μ_p`.
    pub offset: Vector,
    /// `A = n Σ_n Σ_l⁻¹`.
    pub gain: Matrix,
    /// `B = Σ_q + n Σ_n Σ_l⁻¹ Σ_n`.
    pub noise: Matrix,
}

pub fn gibbs_transition(
    model: &GaussianToyModel,
    family: ApproxFamily,
) -> Result<GibbsTransition, Error> {
    let sigma_n = model.posterior_covariance();
    let prior_precision = spd_inverse(model.prior.covariance())?;
    let n = model.n_obs as f64;
    let gain = &sigma_n * &model.likelihood_precision * n;
    let noise = symmetrize(&(model.approx_covariance(family) + &gain * &sigma_n));
    ensure_spd(&noise)?;
    Ok(GibbsTransition {
        offset: &sigma_n * prior_precision * model.prior.mean(),
        gain,
        noise,
    })
}

/// Solves `A X Aᵀ - X + B = 0` by Kronecker vectorization,
/// `(I - A⊗A) vec X = vec B`, with two steps of iterative refinement.
///
/// Requires spectral radius of `A` below 1; otherwise no stationary
/// covariance exists and the chain diverges.
pub fn solve_discrete_lyapunov(a: &Matrix, b: &Matrix) -> Result<Matrix, Error> {
    let d = a.nrows();
    if a.ncols() != d || b.nrows() != d || b.ncols() != d {
        return Err(Error::DimensionMismatch {
            what: "Lyapunov operands",
            expected: d,
            found: b.nrows(),
        });
    }
    ensure_spd(b)?;
    let rho = spectral_radius(a);
    if !(rho < 1.0) {
        return Err(Error::Unstable {
            spectral_radius: rho,
        });
    }
    let system = Matrix::identity(d * d, d * d) - a.kronecker(a);
    let lu = system.lu();
    let rhs = Vector::from_column_slice(b.as_slice());
    let mut x = lu.solve(&rhs).ok_or(Error::Singular)?;
    for _ in 0..2 {
        let xm = Matrix::from_column_slice(d, d, x.as_slice());
        let residual = b - (&xm - a * &xm * a.transpose());
        let r = Vector::from_column_slice(residual.as_slice());
        x += lu.solve(&r).ok_or(Error::Singular)?;
    }
    Ok(symmetrize(&Matrix::from_column_slice(d, d, x.as_slice())))
}

/// `‖AXAᵀ - X + B‖_F`.
pub fn lyapunov_residual(a: &Matrix, b: &Matrix, x: &Matrix) -> f64 {
    (a * x * a.transpose() - x + b).norm()
}

/// Stationary law of the toy model's Gibbs chain: `N(μ_p, X)`.
pub fn gibbs_prior_analytic(
    model: &GaussianToyModel,
    family: ApproxFamily,
) -> Result<GaussianDist, Error> {
    let t = gibbs_transition(model, family)?;
    let x = solve_discrete_lyapunov(&t.gain, &t.noise)?;
    GaussianDist::new(model.prior.mean().clone(), x)
}

/// `y_i ~ N(θ, Σ_l)`, `i = 1..n`, flattened row by row into one vector.
#[derive(Debug, Clone)]
pub struct GaussianToyLikelihood {
    pub model: GaussianToyModel,
}

impl Likelihood for GaussianToyLikelihood {
    fn latent_dim(&self) -> usize {
        self.model.dim()
    }

    fn observation_dim(&self) -> usize {
        self.model.dim() * self.model.n_obs
    }

    fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, Error> {
        let d = self.model.dim();
        if theta.len() != d {
            return Err(Error::DimensionMismatch {
                what: "latent",
                expected: d,
                found: theta.len(),
            });
        }
        let mut out = Vec::with_capacity(d * self.model.n_obs);
        for _ in 0..self.model.n_obs {
            let z = Vector::from_fn(d, |_, _| StandardNormal.sample(rng));
            let noise = &self.model.likelihood_chol * z;
            out.extend(theta.iter().zip(noise.iter()).map(|(t, e)| t + e));
        }
        Ok(out)
    }

    fn sample_prior(&self, rng: &mut dyn RngCore) -> Option<Vec<f64>> {
        Some(self.model.prior.sample(rng))
    }
}

/// Draws from the exact posterior or a mean-field approximation of it.
#[derive(Debug, Clone)]
pub struct GaussianToyApproximator {
    model: GaussianToyModel,
    family: ApproxFamily,
    sigma_n: Matrix,
    q_chol: Matrix,
}

impl GaussianToyApproximator {
    pub fn new(model: GaussianToyModel, family: ApproxFamily) -> Result<Self, Error> {
        let sigma_n = model.posterior_covariance();
        let q_chol = cholesky_lower(&model.approx_covariance(family))?;
        Ok(Self {
            model,
            family,
            sigma_n,
            q_chol,
        })
    }

    /// Multiplies the approximation covariance by `factor`; `0.5` gives an
    /// overconfident approximation with the right mean.
    pub fn with_variance_scale(mut self, factor: f64) -> Result<Self, Error> {
        if !(factor > 0.0 && factor.is_finite()) {
            return Err(Error::InvalidParameter("variance scale must be positive"));
        }
        self.q_chol *= libm::sqrt(factor);
        Ok(self)
    }

    pub fn family(&self) -> ApproxFamily {
        self.family
    }

    /// Observation vector back to the `n × d` data matrix.
    pub fn data_matrix(&self, y: &[f64]) -> Result<Matrix, Error> {
        let d = self.model.dim();
        if y.len() != d * self.model.n_obs {
            return Err(Error::DimensionMismatch {
                what: "observation vector",
                expected: d * self.model.n_obs,
                found: y.len(),
            });
        }
        Ok(Matrix::from_row_slice(self.model.n_obs, d, y))
    }
}

impl Approximator for GaussianToyApproximator {
    fn latent_dim(&self) -> usize {
        self.model.dim()
    }

    fn observation_dim(&self) -> usize {
        self.model.dim() * self.model.n_obs
    }

    fn sample(
        &mut self,
        y: &[f64],
        count: usize,
        rng: &mut dyn RngCore,
    ) -> Result<Vec<Vec<f64>>, Error> {
        let data = self.data_matrix(y)?;
        let y_bar = data.row_mean().transpose();
        let mu = self.model.posterior_mean(&self.sigma_n, &y_bar);
        Ok((0..count)
            .map(|_| {
                let z = Vector::from_fn(mu.len(), |_, _| StandardNormal.sample(rng));
                (&mu + &self.q_chol * z).iter().copied().collect()
            })
            .collect())
    }
}

/// Ready-made chain pair for the toy model.
pub fn toy_pair(
    model: &GaussianToyModel,
    family: ApproxFamily,
) -> Result<crate::ConditionalPair<GaussianToyLikelihood, GaussianToyApproximator>, Error> {
    crate::ConditionalPair::new(
        GaussianToyLikelihood {
            model: model.clone(),
        },
        GaussianToyApproximator::new(model.clone(), family)?,
    )
}
