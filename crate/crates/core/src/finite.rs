//! Gibbs chains on finite spaces, where the likelihood and the approximation
//! are stochastic matrices and one chain step is the product `P = FQ`.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, RngCore};
use rand_distr::{Distribution, StandardNormal};

use crate::engine::{Approximator, Likelihood};
use crate::linalg::{null_space, Matrix, Vector};
use crate::rng::chain_rng;
use crate::Error;

/// Row sums must be 1 within this.
pub const ROW_SUM_TOL: f64 = 1e-12;
/// Perturbed approximations keep every entry in `[MARGIN, 1 - MARGIN]`.
pub const MARGIN: f64 = 1e-6;
pub const POWER_ITERATION_CAP: usize = 1_000_000;

/// `F` is `n × m` with `F[θ, y] = f(y|θ)`; `Q` is `m × n` with
/// `Q[y, θ] = q(θ|y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteModel {
    f: Matrix,
    q: Matrix,
}

pub fn check_stochastic(m: &Matrix, what: &'static str) -> Result<(), Error> {
    for (row, r) in m.row_iter().enumerate() {
        let bad_entry = r.iter().any(|v| !(v.is_finite() && *v >= 0.0));
        if bad_entry || (r.sum() - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::NotStochastic { what, row });
        }
    }
    Ok(())
}

impl FiniteModel {
    pub fn new(f: Matrix, q: Matrix) -> Result<Self, Error> {
        if q.nrows() != f.ncols() {
            return Err(Error::DimensionMismatch {
                what: "rows of Q",
                expected: f.ncols(),
                found: q.nrows(),
            });
        }
        if q.ncols() != f.nrows() {
            return Err(Error::DimensionMismatch {
                what: "columns of Q",
                expected: f.nrows(),
                found: q.ncols(),
            });
        }
        if f.nrows() == 0 || f.ncols() == 0 {
            return Err(Error::InvalidParameter("empty state space"));
        }
        check_stochastic(&f, "F")?;
        check_stochastic(&q, "Q")?;
        Ok(Self { f, q })
    }

    pub fn from_rows(f: &[Vec<f64>], q: &[Vec<f64>]) -> Result<Self, Error> {
        Self::new(crate::linalg::from_rows(f)?, crate::linalg::from_rows(q)?)
    }

    /// Both conditionals of a joint `J[θ, y]`, which must have positive
    /// margins.
    pub fn from_joint(joint: &Matrix) -> Result<Self, Error> {
        let (n, m) = joint.shape();
        let theta_marginal: Vec<f64> = joint.row_iter().map(|r| r.sum()).collect();
        let y_marginal: Vec<f64> = joint.column_iter().map(|c| c.sum()).collect();
        if let Some(index) = theta_marginal.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::ZeroMarginal { index });
        }
        if let Some(index) = y_marginal.iter().position(|v| !(*v > 0.0)) {
            return Err(Error::ZeroMarginal { index });
        }
        let f = Matrix::from_fn(n, m, |i, j| joint[(i, j)] / theta_marginal[i]);
        let q = Matrix::from_fn(m, n, |j, i| joint[(i, j)] / y_marginal[j]);
        Self::new(normalize_rows(f), normalize_rows(q))
    }

    /// Two latent states, three outcomes.
    pub fn worked_example() -> Self {
        Self::from_rows(
            &[vec![0.1, 0.4, 0.5], vec![0.3, 0.2, 0.5]],
            &[vec![0.2, 0.8], vec![0.4, 0.6], vec![0.5, 0.5]],
        )
        .expect("fixture is stochastic")
    }

    /// A second approximation for [`Self::worked_example`] with the same
    /// product `FQ`.
    pub fn worked_example_alternative() -> Self {
        Self::from_rows(
            &[vec![0.1, 0.4, 0.5], vec![0.3, 0.2, 0.5]],
            &[vec![0.1, 0.9], vec![0.3, 0.7], vec![0.6, 0.4]],
        )
        .expect("fixture is stochastic")
    }

    pub fn f(&self) -> &Matrix {
        &self.f
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn latent_states(&self) -> usize {
        self.f.nrows()
    }

    pub fn observation_states(&self) -> usize {
        self.f.ncols()
    }

    pub fn with_q(&self, q: Matrix) -> Result<Self, Error> {
        Self::new(self.f.clone(), q)
    }
}

// Absorbs rounding so rows sum to 1 well inside ROW_SUM_TOL.
fn normalize_rows(mut m: Matrix) -> Matrix {
    for mut r in m.row_iter_mut() {
        let s = r.sum();
        r /= s;
    }
    m
}

/// `P = FQ`, the latent-to-latent kernel.
pub fn transition_matrix(model: &FiniteModel) -> Matrix {
    &model.f * &model.q
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct StationaryResult {
    /// Gibbs prior over latent states.
    pub pi_g: Vec<f64>,
    /// Induced marginal over observations, `π_Gᵀ F`.
    pub p_g: Vec<f64>,
    /// `‖πᵀP - πᵀ‖₁`.
    pub residual: f64,
}

fn left_residual(p: &Matrix, pi: &[f64]) -> f64 {
    let v = Vector::from_column_slice(pi);
    (p.tr_mul(&v) - v).iter().map(|x| x.abs()).sum()
}

/// Number of closed communicating classes of the chain with kernel `p`.
pub fn closed_classes(p: &Matrix) -> usize {
    let n = p.nrows();
    let mut reach = vec![vec![false; n]; n];
    for i in 0..n {
        reach[i][i] = true;
        for j in 0..n {
            if p[(i, j)] > 0.0 {
                reach[i][j] = true;
            }
        }
    }
    for k in 0..n {
        for i in 0..n {
            if reach[i][k] {
                for j in 0..n {
                    if reach[k][j] {
                        reach[i][j] = true;
                    }
                }
            }
        }
    }
    let recurrent: Vec<usize> = (0..n)
        .filter(|&i| (0..n).all(|j| !reach[i][j] || reach[j][i]))
        .collect();
    let mut representatives: Vec<usize> = Vec::new();
    for &i in &recurrent {
        if !representatives.iter().any(|&r| reach[r][i]) {
            representatives.push(i);
        }
    }
    representatives.len()
}

/// Unique stationary vector by solving `πᵀ(P - I) = 0`, `Σπ = 1` with the
/// last balance equation replaced by the normalization.
fn direct_stationary(p: &Matrix) -> Option<Vec<f64>> {
    let n = p.nrows();
    let mut system = p.transpose() - Matrix::identity(n, n);
    let mut rhs = Vector::zeros(n);
    for j in 0..n {
        system[(n - 1, j)] = 1.0;
    }
    rhs[n - 1] = 1.0;
    let pi = system.lu().solve(&rhs)?;
    let mut pi: Vec<f64> = pi.iter().map(|v| v.max(0.0)).collect();
    let s: f64 = pi.iter().sum();
    if !(s > 0.0) {
        return None;
    }
    pi.iter_mut().for_each(|v| *v /= s);
    Some(pi)
}

/// Left fixed point of a row-stochastic `p` with `‖πᵀP - πᵀ‖₁ ≤ tol`.
///
/// Power iteration from the uniform vector. Periodic chains never settle
/// under power iteration, so a direct linear solve is tried after every
/// 10⁴ unproductive iterations; past the cap the result is an error.
/// More than one closed class makes the stationary law non-unique.
pub fn stationary_distribution(p: &Matrix, tol: f64) -> Result<Vec<f64>, Error> {
    if p.nrows() != p.ncols() {
        return Err(Error::DimensionMismatch {
            what: "square transition matrix",
            expected: p.nrows(),
            found: p.ncols(),
        });
    }
    check_stochastic(p, "P")?;
    let classes = closed_classes(p);
    if classes > 1 {
        return Err(Error::NonUnique {
            closed_classes: classes,
        });
    }
    let n = p.nrows();
    let mut pi = Vector::from_element(n, 1.0 / n as f64);
    let mut residual = f64::INFINITY;
    for iteration in 1..=POWER_ITERATION_CAP {
        let next = p.tr_mul(&pi);
        residual = (&next - &pi).iter().map(|x| x.abs()).sum();
        pi = next;
        let s = pi.sum();
        pi /= s;
        if residual <= tol * 0.5 {
            let out: Vec<f64> = pi.iter().copied().collect();
            let r = left_residual(p, &out);
            if r <= tol {
                return Ok(out);
            }
        }
        if iteration % 10_000 == 0 {
            if let Some(direct) = direct_stationary(p) {
                if left_residual(p, &direct) <= tol {
                    return Ok(direct);
                }
            }
        }
    }
    Err(Error::NonConvergent {
        iterations: POWER_ITERATION_CAP,
        residual,
    })
}

/// Gibbs prior of the model and the observation marginal it induces.
pub fn gibbs_prior(model: &FiniteModel, tol: f64) -> Result<StationaryResult, Error> {
    let p = transition_matrix(model);
    let pi_g = stationary_distribution(&p, tol)?;
    let residual = left_residual(&p, &pi_g);
    let p_g = model
        .f
        .tr_mul(&Vector::from_column_slice(&pi_g))
        .iter()
        .copied()
        .collect();
    Ok(StationaryResult {
        pi_g,
        p_g,
        residual,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum FinitePointwisePrior {
    Proper(Vec<f64>),
    /// `f(y|θ) = 0` while `q(θ|y) > 0` at this latent state.
    Improper {
        theta: usize,
    },
}

impl FinitePointwisePrior {
    pub fn as_proper(&self) -> Option<&[f64]> {
        match self {
            FinitePointwisePrior::Proper(v) => Some(v),
            FinitePointwisePrior::Improper { .. } => None,
        }
    }
}

/// `π_y(θ) ∝ Q[y, θ] / F[θ, y]`; states with both entries zero get no mass.
pub fn pointwise_prior_exact(
    model: &FiniteModel,
    y_index: usize,
) -> Result<FinitePointwisePrior, Error> {
    if y_index >= model.observation_states() {
        return Err(Error::InvalidParameter("observation index out of range"));
    }
    let n = model.latent_states();
    let mut weights = Vec::with_capacity(n);
    for theta in 0..n {
        let q = model.q[(y_index, theta)];
        let f = model.f[(theta, y_index)];
        if f == 0.0 {
            if q > 0.0 {
                return Ok(FinitePointwisePrior::Improper { theta });
            }
            weights.push(0.0);
        } else {
            weights.push(q / f);
        }
    }
    let total: f64 = weights.iter().sum();
    Ok(FinitePointwisePrior::Proper(
        weights.into_iter().map(|w| w / total).collect(),
    ))
}

/// Largest total-variation distance between the pointwise priors of any two
/// observations; `None` if one of them is improper.
pub fn pointwise_prior_spread(model: &FiniteModel) -> Result<Option<f64>, Error> {
    let mut priors = Vec::new();
    for y in 0..model.observation_states() {
        match pointwise_prior_exact(model, y)? {
            FinitePointwisePrior::Proper(v) => priors.push(v),
            FinitePointwisePrior::Improper { .. } => return Ok(None),
        }
    }
    let mut worst = 0.0f64;
    for a in 0..priors.len() {
        for b in (a + 1)..priors.len() {
            let tv: f64 = priors[a]
                .iter()
                .zip(&priors[b])
                .map(|(x, y)| (x - y).abs())
                .sum::<f64>()
                * 0.5;
            worst = worst.max(tv);
        }
    }
    Ok(Some(worst))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MixtureGaps {
    /// `max_θ |π_G(θ) - Σ_y g(y) q(θ|y)|`.
    pub over_approximations: f64,
    /// `max_θ |π_G(θ) - Σ_y g̃(y) f(y|θ) π_y(θ)|`; `None` when some pointwise
    /// prior is improper.
    pub over_pointwise_priors: Option<f64>,
}

/// Checks both mixture representations of the Gibbs prior: over the
/// approximations with weights `g(y) = Σ_θ π_G(θ) f(y|θ)`, and over the
/// pointwise priors with `g̃(y) = g(y) / Σ_θ π_y(θ) f(y|θ)`.
pub fn verify_mixture_identities(model: &FiniteModel) -> Result<MixtureGaps, Error> {
    let stat = gibbs_prior(model, 1e-13)?;
    let n = model.latent_states();
    let m = model.observation_states();
    let g = &stat.p_g;
    let over_approximations = (0..n)
        .map(|t| {
            let mix: f64 = (0..m).map(|y| g[y] * model.q[(y, t)]).sum();
            (stat.pi_g[t] - mix).abs()
        })
        .fold(0.0, f64::max);

    let mut priors = Vec::with_capacity(m);
    for y in 0..m {
        match pointwise_prior_exact(model, y)? {
            FinitePointwisePrior::Proper(v) => priors.push(v),
            FinitePointwisePrior::Improper { .. } => {
                return Ok(MixtureGaps {
                    over_approximations,
                    over_pointwise_priors: None,
                })
            }
        }
    }
    let g_tilde: Vec<f64> = (0..m)
        .map(|y| {
            let norm: f64 = (0..n).map(|t| priors[y][t] * model.f[(t, y)]).sum();
            g[y] / norm
        })
        .collect();
    let over_pointwise_priors = (0..n)
        .map(|t| {
            let mix: f64 = (0..m)
                .map(|y| g_tilde[y] * model.f[(t, y)] * priors[y][t])
                .sum();
            (stat.pi_g[t] - mix).abs()
        })
        .fold(0.0, f64::max);
    Ok(MixtureGaps {
        over_approximations,
        over_pointwise_priors: Some(over_pointwise_priors),
    })
}

/// A different approximation with the same Gibbs chain:
/// `Q̃ = Q + ε x₀ wᵀ` with `F x₀ = 0` and `w ⊥ 1`.
///
/// `x₀` is a random unit vector of the numerical kernel of `F` (singular
/// values up to `1e-10 σ_max`), `w` a centred Gaussian vector, and `ε` the
/// largest step keeping all entries in `[MARGIN, 1 - MARGIN]`.
pub fn perturb_approximation(model: &FiniteModel, seed: u64) -> Result<FiniteModel, Error> {
    let n = model.latent_states();
    if n < 2 {
        return Err(Error::InvalidParameter("need at least two latent states"));
    }
    if model.q.iter().any(|v| !(*v > MARGIN && *v < 1.0 - MARGIN)) {
        return Err(Error::InvalidParameter(
            "Q entries must lie strictly inside (0, 1)",
        ));
    }
    let kernel = null_space(&model.f, 1e-10);
    if kernel.ncols() == 0 {
        return Err(Error::TrivialKernel);
    }
    let mut rng = chain_rng(seed);
    let mut normal = || -> f64 { StandardNormal.sample(&mut rng) };
    let coeffs = Vector::from_fn(kernel.ncols(), |_, _| normal());
    let mut x0 = &kernel * coeffs;
    x0 /= x0.norm();
    let mut w = Vector::from_fn(n, |_, _| normal());
    w.add_scalar_mut(-w.mean());
    w /= w.norm();

    let mut eps = f64::INFINITY;
    for y in 0..model.observation_states() {
        for t in 0..n {
            let d = x0[y] * w[t];
            let q = model.q[(y, t)];
            if d > 0.0 {
                eps = eps.min((1.0 - MARGIN - q) / d);
            } else if d < 0.0 {
                eps = eps.min((MARGIN - q) / d);
            }
        }
    }
    if !eps.is_finite() || eps <= 0.0 {
        return Err(Error::TrivialKernel);
    }
    let q_tilde = &model.q + (&x0 * w.transpose()) * eps;
    model.with_q(q_tilde)
}

/// `‖FQ - FQ_G‖_max`, with `Q_G` the exact posteriors under the Gibbs prior.
pub fn weak_compatibility_gap(model: &FiniteModel) -> Result<f64, Error> {
    let stat = gibbs_prior(model, 1e-13)?;
    let (n, m) = model.f.shape();
    if let Some(index) = stat.p_g.iter().position(|v| !(*v > 0.0)) {
        return Err(Error::ZeroMarginal { index });
    }
    let q_g = Matrix::from_fn(m, n, |y, t| stat.pi_g[t] * model.f[(t, y)] / stat.p_g[y]);
    Ok(crate::linalg::max_abs(
        &(transition_matrix(model) - &model.f * q_g),
    ))
}

fn categorical(row: impl Iterator<Item = f64>, rng: &mut dyn RngCore) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (k, p) in row.enumerate() {
        if p > 0.0 {
            last = k;
            acc += p;
            if u < acc {
                return k;
            }
        }
    }
    last
}

fn state_index(v: &[f64], states: usize, what: &'static str) -> Result<usize, Error> {
    match v {
        [x] if *x >= 0.0 && libm::trunc(*x) == *x && (*x as usize) < states => Ok(*x as usize),
        [_] => Err(Error::InvalidParameter(what)),
        _ => Err(Error::DimensionMismatch {
            what,
            expected: 1,
            found: v.len(),
        }),
    }
}

/// Rows of `F` as a sampler; states are encoded as one-element vectors.
#[derive(Debug, Clone)]
pub struct FiniteLikelihood {
    pub model: FiniteModel,
}

impl Likelihood for FiniteLikelihood {
    fn latent_dim(&self) -> usize {
        1
    }

    fn observation_dim(&self) -> usize {
        1
    }

    fn sample(&self, theta: &[f64], rng: &mut dyn RngCore) -> Result<Vec<f64>, Error> {
        let t = state_index(theta, self.model.latent_states(), "latent state")?;
        Ok(vec![
            categorical(self.model.f.row(t).iter().copied(), rng) as f64
        ])
    }
}

/// Rows of `Q` as a sampler.
#[derive(Debug, Clone)]
pub struct FiniteApproximator {
    pub model: FiniteModel,
}

impl Approximator for FiniteApproximator {
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
        let j = state_index(y, self.model.observation_states(), "observation state")?;
        Ok((0..count)
            .map(|_| vec![categorical(self.model.q.row(j).iter().copied(), rng) as f64])
            .collect())
    }
}

pub fn finite_pair(
    model: &FiniteModel,
) -> crate::ConditionalPair<FiniteLikelihood, FiniteApproximator> {
    crate::ConditionalPair::new(
        FiniteLikelihood {
            model: model.clone(),
        },
        FiniteApproximator {
            model: model.clone(),
        },
    )
    .expect("both halves are one-dimensional")
}
