//! The experiments behind `run`: validation up front, then simulation and a
//! JSON report.

use std::time::Duration;

use gibbs_diag_core::diagnostics::Bandwidth;
use gibbs_diag_core::diagnostics::{
    autocorrelation, gelman_rubin, permutation_test, rhat_curve, sbc_ranks, RankHistogram,
    RhatMethod, SbcConfig,
};
use gibbs_diag_core::finite::{
    finite_pair, gibbs_prior as finite_gibbs_prior, pointwise_prior_exact, pointwise_prior_spread,
    transition_matrix, verify_mixture_identities, weak_compatibility_gap, FinitePointwisePrior,
    StationaryResult,
};
use gibbs_diag_core::gaussian::{
    gibbs_prior_analytic, gibbs_transition, lyapunov_residual, pointwise_prior, toy_pair,
    ApproxFamily, GaussianToyApproximator, GaussianToyLikelihood, PointwisePrior,
};
use gibbs_diag_core::linalg::{frobenius, spectral_radius, to_rows, Matrix, Vector};
use gibbs_diag_core::rng::{chain_rng, derive_seed};
use gibbs_diag_core::stats::{
    batch_means_standard_error, covariance, mean, mean_vector, quantile, variance,
};
use gibbs_diag_core::zoo::{
    arnold_pair, lognormal_pair, ArnoldVariant, LaplaceParam, LogNormalSumModel,
};
use gibbs_diag_core::zoo::{StochVolLikelihood, StochVolModel};
use gibbs_diag_core::{
    compatibility_score, simulate_gibbs_chain, Approximator, ChainConfig, ChainError, ChainInit,
    ChainTrace, CompatibilityOptions, ConditionalPair, FiniteModel, GaussianDist, GaussianToyModel,
    Likelihood,
};
use serde_json::{json, Value};

use crate::config::{
    CompatParams, ConfigError, ExperimentKind, FiniteParams, LognormalParams, RunConfig, SbcParams,
    Setting, StochvolParams, ToyGaussianParams,
};
use crate::external::ExternalApproximator;
use crate::parallel::map_indexed;
use crate::svg;

/// Stationary-solver tolerance for the finite lab.
const FINITE_TOL: f64 = 1e-13;
const AUTOCORRELATION_LAGS: [usize; 4] = [1, 5, 10, 50];
const RHAT_CURVE_POINTS: usize = 10;
/// Coordinates plotted and summarized one by one.
const PLOTTED_COORDINATES: usize = 4;

/// A failure after validation. Every variant maps to exit code 2.
#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("chain {chain}: {source}")]
    Chain { chain: usize, source: ChainError },
    #[error("{message}")]
    Failure {
        message: String,
        step: Option<usize>,
    },
}

impl RunError {
    fn failure(message: impl Into<String>) -> Self {
        RunError::Failure {
            message: message.into(),
            step: None,
        }
    }

    pub fn step(&self) -> Option<usize> {
        match self {
            RunError::Chain { source, .. } => source.step(),
            RunError::Failure { step, .. } => *step,
        }
    }

    pub fn to_json(&self) -> Value {
        json!({
            "error": self.to_string(),
            "chain": match self {
                RunError::Chain { chain, .. } => Some(*chain),
                RunError::Failure { .. } => None,
            },
            "step": self.step(),
        })
    }
}

/// Everything a successful run writes besides the manifest.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub report: Value,
    /// Chain 0, written as `trace.csv`.
    pub trace: Option<ChainTrace>,
    /// `(file name, contents)` of the figures.
    pub figures: Vec<(String, String)>,
}

/// A validated experiment, ready to run.
#[derive(Debug, Clone)]
pub struct Prepared {
    config: RunConfig,
    kind: PreparedKind,
}

#[derive(Debug, Clone)]
enum PreparedKind {
    Toy {
        params: ToyGaussianParams,
        model: GaussianToyModel,
        analytic: GaussianDist,
    },
    Finite {
        params: FiniteParams,
        model: FiniteModel,
        stationary: StationaryResult,
    },
    Lognormal {
        model: LogNormalSumModel,
        param: LaplaceParam,
    },
    Stochvol {
        params: StochvolParams,
        model: StochVolModel,
    },
    Sbc {
        params: SbcParams,
        model: GaussianToyModel,
    },
    Compat {
        params: CompatParams,
        bandwidth: Bandwidth,
    },
}

fn invalid(what: &str) -> impl Fn(gibbs_diag_core::Error) -> ConfigError + '_ {
    move |e| ConfigError::new(format!("{what}: {e}"))
}

/// Checks the experiment parameters without simulating anything.
pub fn prepare(config: &RunConfig) -> Result<Prepared, ConfigError> {
    config.validate()?;
    let kind = match config.experiment {
        ExperimentKind::ToyGaussian => {
            let params: ToyGaussianParams = config.params()?;
            let model = params.model.build()?;
            let family = params.approximation.family();
            let analytic = gibbs_prior_analytic(&model, family).map_err(invalid("Gibbs prior"))?;
            if let Some(init) = &params.init {
                if init.len() != model.dim() || init.iter().any(|v| !v.is_finite()) {
                    return Err(ConfigError::new(format!(
                        "init must be {} finite numbers",
                        model.dim()
                    )));
                }
            }
            if params.mmd_sample < 2 || params.permutations == 0 {
                return Err(ConfigError::new(
                    "mmd_sample must be at least 2 and permutations positive",
                ));
            }
            Bandwidth::Fixed(params.bandwidth)
                .resolve(&[], &[])
                .map_err(invalid("bandwidth"))?;
            PreparedKind::Toy {
                params,
                model,
                analytic,
            }
        }
        ExperimentKind::Finite => {
            let params: FiniteParams = config.params()?;
            let model = params.fixture()?.model().map_err(invalid("finite model"))?;
            if params.init >= model.latent_states() {
                return Err(ConfigError::new(format!(
                    "init must be a latent state below {}",
                    model.latent_states()
                )));
            }
            let stationary =
                finite_gibbs_prior(&model, FINITE_TOL).map_err(invalid("Gibbs prior"))?;
            PreparedKind::Finite {
                params,
                model,
                stationary,
            }
        }
        ExperimentKind::Lognormal => {
            let params: LognormalParams = config.params()?;
            let model = LogNormalSumModel::new(params.terms).map_err(invalid("terms"))?;
            PreparedKind::Lognormal {
                model,
                param: params.laplace_param,
            }
        }
        ExperimentKind::StochvolExternal => {
            let params: StochvolParams = config.params()?;
            let model = StochVolModel {
                steps: params.t,
                sigma: params.sigma,
                nu: params.nu,
                theta0: 0.0,
            };
            model
                .validate()
                .map_err(invalid("stochastic volatility model"))?;
            if !(params.timeout_secs > 0.0 && params.timeout_secs.is_finite()) {
                return Err(ConfigError::new("timeout_secs must be positive"));
            }
            if params.command.trim().is_empty() {
                return Err(ConfigError::new("command must not be empty"));
            }
            PreparedKind::Stochvol { params, model }
        }
        ExperimentKind::Sbc => {
            let params: SbcParams = config.params()?;
            let model = params.model.build()?;
            GaussianToyApproximator::new(model.clone(), params.approximation.family())
                .and_then(|a| a.with_variance_scale(params.variance_scale))
                .map_err(invalid("approximation"))?;
            if params.draws == 0 || params.posterior_draws == 0 {
                return Err(ConfigError::new(
                    "draws and posterior_draws must be positive",
                ));
            }
            PreparedKind::Sbc { params, model }
        }
        ExperimentKind::Compat => {
            let params: CompatParams = config.params()?;
            let bandwidth = params.bandwidth.bandwidth()?;
            if params.permutations == 0 {
                return Err(ConfigError::new("permutations must be positive"));
            }
            if !params.init.is_finite() {
                return Err(ConfigError::new("init must be finite"));
            }
            PreparedKind::Compat { params, bandwidth }
        }
    };
    Ok(Prepared {
        config: config.clone(),
        kind,
    })
}

impl Prepared {
    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    /// Runs the experiment on at most `threads` worker threads.
    pub fn execute(&self, threads: usize) -> Result<Outcome, RunError> {
        let cfg = &self.config;
        match &self.kind {
            PreparedKind::Toy {
                params,
                model,
                analytic,
            } => toy_gaussian(cfg, params, model, analytic, threads),
            PreparedKind::Finite {
                params,
                model,
                stationary,
            } => finite(cfg, params, model, stationary, threads),
            PreparedKind::Lognormal { model, param } => lognormal(cfg, *model, *param, threads),
            PreparedKind::Stochvol { params, model } => stochvol(cfg, params, *model, threads),
            PreparedKind::Sbc { params, model } => sbc(cfg, params, model),
            PreparedKind::Compat { params, bandwidth } => compat(cfg, params, *bandwidth, threads),
        }
    }
}

fn base_chain(cfg: &RunConfig, init: ChainInit) -> ChainConfig {
    ChainConfig::new(cfg.steps, cfg.seed, init)
        .with_burn_in(cfg.burn_in())
        .with_thinning(cfg.thinning)
}

/// Runs `cfg.chains` chains; chain `i` uses the seed derived from index `i`.
fn run_chains<L, A, F>(
    cfg: &RunConfig,
    init: ChainInit,
    threads: usize,
    make: F,
) -> Result<Vec<ChainTrace>, RunError>
where
    L: Likelihood,
    A: Approximator,
    F: Fn(usize) -> Result<ConditionalPair<L, A>, RunError> + Sync,
{
    let base = base_chain(cfg, init);
    map_indexed(cfg.chains, threads, |i| {
        let mut pair = make(i)?;
        simulate_gibbs_chain(&mut pair, &base.for_chain(i as u64))
            .map_err(|source| RunError::Chain { chain: i, source })
    })
    .into_iter()
    .collect()
}

fn pooled_samples(traces: &[ChainTrace]) -> Vec<Vec<f64>> {
    traces
        .iter()
        .flat_map(ChainTrace::gibbs_prior_samples)
        .collect()
}

fn vector_json(v: &Vector) -> Value {
    json!(v.iter().copied().collect::<Vec<f64>>())
}

fn dist_json(g: &GaussianDist) -> Value {
    json!({"mean": vector_json(g.mean()), "covariance": to_rows(g.covariance())})
}

fn ok_or_null(r: Result<f64, gibbs_diag_core::Error>) -> Value {
    r.ok()
        .filter(|v| v.is_finite())
        .map_or(Value::Null, Value::from)
}

/// R̂ and autocorrelations of the post-burn-in Gibbs-prior draws.
fn chain_diagnostics(traces: &[ChainTrace]) -> Value {
    let d = traces[0].thetas[0].len();
    let coords: Vec<Vec<Vec<f64>>> = traces
        .iter()
        .map(|t| (0..d).map(|k| t.gibbs_prior_coordinate(k)).collect())
        .collect();
    let retained = coords[0][0].len();
    let autocorr: Vec<Value> = (0..d)
        .map(|k| {
            json!(AUTOCORRELATION_LAGS
                .iter()
                .map(|&lag| ok_or_null(autocorrelation(&coords[0][k], lag)))
                .collect::<Vec<_>>())
        })
        .collect();
    let rhat = if traces.len() >= 2 {
        let lengths: Vec<usize> = (1..=RHAT_CURVE_POINTS)
            .map(|i| retained * i / RHAT_CURVE_POINTS)
            .collect();
        let per_coord: Vec<(Value, Value)> = (0..d)
            .map(|k| {
                let views: Vec<&[f64]> = coords.iter().map(|c| c[k].as_slice()).collect();
                let last = ok_or_null(gelman_rubin(&views, RhatMethod::Classic));
                // Point by point, so short prefixes become null instead of
                // sinking the whole curve.
                let curve: Vec<Value> = lengths
                    .iter()
                    .map(|&n| {
                        ok_or_null(rhat_curve(&views, &[n], RhatMethod::Classic).map(|v| v[0]))
                    })
                    .collect();
                (last, json!(curve))
            })
            .collect();
        json!({
            "method": "classic",
            "final": per_coord.iter().map(|p| p.0.clone()).collect::<Vec<_>>(),
            "curve": {
                "lengths": lengths,
                "values": per_coord.iter().map(|p| p.1.clone()).collect::<Vec<_>>(),
            },
        })
    } else {
        Value::Null
    };
    json!({
        "chains": traces.len(),
        "steps": traces[0].steps(),
        "retained_per_chain": retained,
        "autocorrelation": {"lags": AUTOCORRELATION_LAGS, "values": autocorr},
        "rhat": rhat,
    })
}

/// Trace plot of chain 0, R̂ curve when available and per-coordinate
/// histograms.
fn chain_figures(traces: &[ChainTrace], diagnostics: &Value) -> Vec<(String, String)> {
    let d = traces[0].thetas[0].len();
    let shown = d.min(PLOTTED_COORDINATES);
    let mut out = Vec::new();
    let series: Vec<(String, Vec<(f64, f64)>)> = (0..shown)
        .map(|k| {
            let pts = traces[0]
                .thetas
                .iter()
                .enumerate()
                .map(|(t, th)| (t as f64, th[k]))
                .collect();
            (format!("theta_{k}"), pts)
        })
        .collect();
    let refs: Vec<(&str, Vec<(f64, f64)>)> = series
        .iter()
        .map(|(n, p)| (n.as_str(), p.clone()))
        .collect();
    out.push((
        "trace.svg".to_string(),
        svg::line_chart("chain 0 trace", &refs),
    ));
    for k in 0..shown {
        let values: Vec<f64> = traces
            .iter()
            .flat_map(|t| t.gibbs_prior_coordinate(k))
            .collect();
        out.push((
            format!("gibbs_prior_theta_{k}.svg"),
            svg::histogram(&format!("Gibbs prior theta_{k}"), &values, 40),
        ));
    }
    let curve = &diagnostics["rhat"]["curve"];
    if let (Some(lengths), Some(values)) = (curve["lengths"].as_array(), curve["values"].as_array())
    {
        let series: Vec<(String, Vec<(f64, f64)>)> = values
            .iter()
            .take(shown)
            .enumerate()
            .map(|(k, v)| {
                let pts = lengths
                    .iter()
                    .zip(v.as_array().into_iter().flatten())
                    .filter_map(|(n, r)| Some((n.as_f64()?, r.as_f64()?)))
                    .collect();
                (format!("theta_{k}"), pts)
            })
            .collect();
        let refs: Vec<(&str, Vec<(f64, f64)>)> = series
            .iter()
            .map(|(n, p)| (n.as_str(), p.clone()))
            .collect();
        out.push((
            "rhat.svg".to_string(),
            svg::line_chart("R-hat by retained length", &refs),
        ));
    }
    out
}

fn setting_name(s: Setting) -> &'static str {
    match s {
        Setting::Prior => "prior",
        Setting::Like => "like",
        Setting::Custom => "custom",
    }
}

fn entropy_of(cov: &Matrix) -> Result<f64, gibbs_diag_core::Error> {
    Ok(GaussianDist::new(Vector::zeros(cov.nrows()), cov.clone())?.entropy())
}

fn toy_gaussian(
    cfg: &RunConfig,
    params: &ToyGaussianParams,
    model: &GaussianToyModel,
    analytic: &GaussianDist,
    threads: usize,
) -> Result<Outcome, RunError> {
    let family = params.approximation.family();
    let numeric = |what: &str| {
        let what = what.to_string();
        move |e: gibbs_diag_core::Error| RunError::failure(format!("{what}: {e}"))
    };
    let transition = gibbs_transition(model, family).map_err(numeric("transition"))?;
    let posterior_cov = model.posterior_covariance();
    let approx_cov = model.approx_covariance(family);

    // Propriety does not depend on y; evaluate at data equal to the prior mean.
    let mean_row: Vec<f64> = model.prior.mean().iter().copied().collect();
    let y = Matrix::from_fn(model.n_obs, model.dim(), |_, j| mean_row[j]);
    let status = match pointwise_prior(model, &y, family).map_err(numeric("pointwise prior"))? {
        PointwisePrior::Proper(g) => {
            json!({"status": "proper", "at_y": to_rows(&y), "prior": dist_json(&g)})
        }
        PointwisePrior::Improper {
            eigenvalue,
            eigenvector,
        } => {
            json!({"status": "improper", "at_y": to_rows(&y), "eigenvalue": eigenvalue, "eigenvector": eigenvector})
        }
    };

    let init = match &params.init {
        Some(v) => ChainInit::Fixed(v.clone()),
        None => ChainInit::Prior,
    };
    let traces = run_chains(cfg, init, threads, |_| {
        toy_pair(model, family).map_err(|e| RunError::failure(format!("toy pair: {e}")))
    })?;
    let pooled = pooled_samples(&traces);
    let emp_mean = mean_vector(&pooled);
    let emp_cov = covariance(&pooled).map_err(numeric("empirical covariance"))?;
    let rel_frob =
        frobenius(&(&emp_cov - analytic.covariance())) / frobenius(analytic.covariance());
    let mean_err = emp_mean
        .iter()
        .zip(analytic.mean().iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);

    // Chain draws against exact Gibbs-prior draws.
    let chain0 = traces[0].gibbs_prior_samples();
    let stride = (chain0.len() / params.mmd_sample).max(1);
    let from_chain: Vec<Vec<f64>> = chain0
        .into_iter()
        .step_by(stride)
        .take(params.mmd_sample)
        .collect();
    let mut rng = chain_rng(derive_seed(cfg.seed, u64::MAX));
    let exact: Vec<Vec<f64>> = (0..from_chain.len())
        .map(|_| analytic.sample(&mut rng))
        .collect();
    let mmd = permutation_test(
        &from_chain,
        &exact,
        params.bandwidth,
        params.permutations,
        &mut rng,
    )
    .map_err(numeric("MMD"))?;

    let diagnostics = chain_diagnostics(&traces);
    let figures = chain_figures(&traces, &diagnostics);
    let report = json!({
        "experiment": ExperimentKind::ToyGaussian.name(),
        "setting": setting_name(params.model.setting),
        "divergence": params.approximation.name(),
        "n_obs": model.n_obs,
        "prior": dist_json(&model.prior),
        "likelihood_covariance": to_rows(&model.likelihood_cov),
        "gibbs_prior": {
            "mean": vector_json(analytic.mean()),
            "covariance": to_rows(analytic.covariance()),
            "empirical": {
                "mean": emp_mean,
                "covariance": to_rows(&emp_cov),
                "samples": pooled.len(),
            },
            "relative_frobenius_error": rel_frob,
            "mean_max_abs_error": mean_err,
        },
        "posterior": {"covariance": to_rows(&posterior_cov)},
        "approximation": {"covariance": to_rows(&approx_cov)},
        "entropies": {
            "prior": model.prior.entropy(),
            "gibbs_prior": analytic.entropy(),
            "posterior": ok_or_null(entropy_of(&posterior_cov)),
            "approximation": ok_or_null(entropy_of(&approx_cov)),
        },
        "pointwise_prior_status": status,
        "transition": {
            "spectral_radius": spectral_radius(&transition.gain),
            "lyapunov_residual": lyapunov_residual(&transition.gain, &transition.noise, analytic.covariance()),
        },
        "mmd": {
            "statistic": mmd.statistic,
            "p_value": mmd.p_value,
            "null_quantile_99": mmd.null_quantile(0.99),
            "bandwidth": params.bandwidth,
            "samples": from_chain.len(),
        },
        "chain_diagnostics": diagnostics,
    });
    Ok(Outcome {
        report,
        trace: traces.into_iter().next(),
        figures,
    })
}

fn finite(
    cfg: &RunConfig,
    params: &FiniteParams,
    model: &FiniteModel,
    stationary: &StationaryResult,
    threads: usize,
) -> Result<Outcome, RunError> {
    let numeric = |e: gibbs_diag_core::Error| RunError::failure(format!("finite lab: {e}"));
    let p = transition_matrix(model);
    let gaps = verify_mixture_identities(model).map_err(numeric)?;
    let weak = weak_compatibility_gap(model).map_err(numeric)?;
    let pointwise: Vec<Value> = (0..model.observation_states())
        .map(|j| {
            Ok(match pointwise_prior_exact(model, j)? {
                FinitePointwisePrior::Proper(v) => json!({"status": "proper", "prior": v}),
                FinitePointwisePrior::Improper { theta } => {
                    json!({"status": "improper", "theta": theta})
                }
            })
        })
        .collect::<Result<_, gibbs_diag_core::Error>>()
        .map_err(numeric)?;
    let spread = pointwise_prior_spread(model).map_err(numeric)?;

    let init = ChainInit::Fixed(vec![params.init as f64]);
    let traces = run_chains(cfg, init, threads, |_| Ok(finite_pair(model)))?;
    let mut freq = vec![0.0; model.latent_states()];
    let pooled = pooled_samples(&traces);
    for s in &pooled {
        freq[s[0] as usize] += 1.0;
    }
    for f in &mut freq {
        *f /= pooled.len() as f64;
    }
    let tv = 0.5
        * freq
            .iter()
            .zip(&stationary.pi_g)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();

    let diagnostics = chain_diagnostics(&traces);
    let figures = vec![
        (
            "gibbs_prior.svg".to_string(),
            svg::bar_chart("Gibbs prior (exact)", &stationary.pi_g, None),
        ),
        (
            "gibbs_prior_empirical.svg".to_string(),
            svg::bar_chart("Gibbs prior (chain frequencies)", &freq, None),
        ),
    ];
    let report = json!({
        "experiment": ExperimentKind::Finite.name(),
        "F": to_rows(model.f()),
        "Q": to_rows(model.q()),
        "transition_matrix": to_rows(&p),
        "stationary": {
            "pi_g": stationary.pi_g,
            "p_g": stationary.p_g,
            "residual": stationary.residual,
        },
        "mixture_gaps": {"over_approximations": gaps.over_approximations, "over_pointwise_priors": gaps.over_pointwise_priors},
        "weak_compatibility_gap": weak,
        "pointwise_priors": pointwise,
        "pointwise_prior_spread": spread,
        "empirical": {"frequencies": freq, "total_variation": tv, "samples": pooled.len()},
        "chain_diagnostics": diagnostics,
    });
    Ok(Outcome {
        report,
        trace: traces.into_iter().next(),
        figures,
    })
}

/// Batches used for the standard error of the Gibbs-prior mean.
const BATCHES: usize = 20;

fn lognormal(
    cfg: &RunConfig,
    model: LogNormalSumModel,
    param: LaplaceParam,
    threads: usize,
) -> Result<Outcome, RunError> {
    let traces = run_chains(cfg, ChainInit::Prior, threads, |_| {
        Ok(lognormal_pair(model, param))
    })?;
    // Batch means per chain, combined over chains.
    let mu_chains: Vec<Vec<f64>> = traces.iter().map(|t| t.gibbs_prior_coordinate(0)).collect();
    let mu: Vec<f64> = mu_chains.concat();
    let sigma2: Vec<f64> = traces
        .iter()
        .flat_map(|t| t.gibbs_prior_coordinate(1))
        .collect();
    if mu_chains[0].len() < BATCHES {
        return Err(RunError::failure(format!(
            "need at least {BATCHES} retained draws per chain for batch means"
        )));
    }
    let k = mu_chains.len() as f64;
    let se = (mu_chains
        .iter()
        .map(|c| batch_means_standard_error(c, BATCHES).powi(2))
        .sum::<f64>()
        / (k * k))
        .sqrt();
    let mu_mean = mean(&mu);
    let mut rng = chain_rng(derive_seed(cfg.seed, u64::MAX));
    let prior: Vec<[f64; 2]> = (0..sigma2.len())
        .map(|_| model.sample_prior(&mut rng))
        .collect();
    let prior_mu: Vec<f64> = prior.iter().map(|p| p[0]).collect();
    let prior_s2: Vec<f64> = prior.iter().map(|p| p[1]).collect();

    let diagnostics = chain_diagnostics(&traces);
    let mut figures = chain_figures(&traces, &diagnostics);
    figures.retain(|(name, _)| !name.starts_with("gibbs_prior_theta_"));
    figures.push((
        "gibbs_prior_mu.svg".to_string(),
        svg::histogram("Gibbs prior mu", &mu, 40),
    ));
    let log_s2: Vec<f64> = sigma2.iter().map(|v| v.log10()).collect();
    figures.push((
        "gibbs_prior_log10_sigma2.svg".to_string(),
        svg::histogram("Gibbs prior log10 sigma2", &log_s2, 40),
    ));
    let report = json!({
        "experiment": ExperimentKind::Lognormal.name(),
        "terms": model.terms,
        "laplace_param": param,
        "gibbs_prior": {
            "mu_mean": mu_mean,
            "mu_standard_error": se,
            "mu_z": mu_mean / se,
            "mu_variance": variance(&mu),
            "sigma2_median": quantile(&sigma2, 0.5),
            "sigma2_q99": quantile(&sigma2, 0.99),
            "samples": mu.len(),
        },
        "prior": {
            "mu_mean": 0.0,
            "mu_sample_mean": mean(&prior_mu),
            "sigma2_median": quantile(&prior_s2, 0.5),
            "sigma2_q99": quantile(&prior_s2, 0.99),
            "samples": prior_s2.len(),
        },
        "chain_diagnostics": diagnostics,
    });
    Ok(Outcome {
        report,
        trace: traces.into_iter().next(),
        figures,
    })
}

fn stochvol(
    cfg: &RunConfig,
    params: &StochvolParams,
    model: StochVolModel,
    threads: usize,
) -> Result<Outcome, RunError> {
    let timeout = Duration::from_secs_f64(params.timeout_secs);
    let traces = run_chains(cfg, ChainInit::Prior, threads, |i| {
        let approx =
            ExternalApproximator::spawn(&params.command, model.steps, model.steps, timeout)
                .map_err(|e| RunError::failure(format!("chain {i}: {e}")))?;
        ConditionalPair::new(StochVolLikelihood { model }, approx)
            .map_err(|e| RunError::failure(format!("chain {i}: {e}")))
    })?;
    let pooled = pooled_samples(&traces);
    let means = mean_vector(&pooled);
    let variances: Vec<f64> = (0..model.steps)
        .map(|i| variance(&pooled.iter().map(|s| s[i]).collect::<Vec<_>>()))
        .collect();
    let prior_var: Vec<f64> = (1..=model.steps)
        .map(|i| i as f64 * model.sigma * model.sigma)
        .collect();

    let diagnostics = chain_diagnostics(&traces);
    let mut figures = chain_figures(&traces, &diagnostics);
    figures.push((
        "marginal_variance.svg".to_string(),
        svg::line_chart(
            "marginal variance by time",
            &[
                (
                    "Gibbs prior",
                    variances
                        .iter()
                        .enumerate()
                        .map(|(i, v)| ((i + 1) as f64, *v))
                        .collect(),
                ),
                (
                    "prior",
                    prior_var
                        .iter()
                        .enumerate()
                        .map(|(i, v)| ((i + 1) as f64, *v))
                        .collect(),
                ),
            ],
        ),
    ));
    let report = json!({
        "experiment": ExperimentKind::StochvolExternal.name(),
        "command": params.command,
        "model": {"T": model.steps, "sigma": model.sigma, "nu": model.nu},
        "gibbs_prior": {"mean": means, "variance": variances, "samples": pooled.len()},
        "prior": {"mean": vec![0.0; model.steps], "variance": prior_var},
        "chain_diagnostics": diagnostics,
    });
    Ok(Outcome {
        report,
        trace: traces.into_iter().next(),
        figures,
    })
}

/// `{counts, N, L, band_99}` plus derived flags.
pub fn histogram_json(h: &RankHistogram) -> Value {
    let chi = h.chi_square();
    json!({
        "counts": h.counts,
        "N": h.n,
        "L": h.l,
        "band_99": h.band_99.iter().map(|(lo, hi)| [*lo, *hi]).collect::<Vec<_>>(),
        "bin_widths": h.bin_widths,
        "chi_square": {"statistic": chi.statistic, "dof": chi.dof, "p_value": chi.p_value},
        "cup_shaped": h.is_cup_shaped(),
    })
}

fn sbc(cfg: &RunConfig, params: &SbcParams, model: &GaussianToyModel) -> Result<Outcome, RunError> {
    let family: ApproxFamily = params.approximation.family();
    let mut approx = GaussianToyApproximator::new(model.clone(), family)
        .and_then(|a| a.with_variance_scale(params.variance_scale))
        .map_err(|e| RunError::failure(format!("approximation: {e}")))?;
    let likelihood = GaussianToyLikelihood {
        model: model.clone(),
    };
    let d = model.dim();
    let stats: Vec<Box<dyn Fn(&[f64]) -> f64>> = (0..d)
        .map(|k| Box::new(move |t: &[f64]| t[k]) as _)
        .collect();
    let refs: Vec<&dyn Fn(&[f64]) -> f64> = stats.iter().map(|s| s.as_ref()).collect();
    let sbc_cfg = SbcConfig {
        draws: params.draws,
        posterior_draws: params.posterior_draws,
        seed: cfg.seed,
    };
    let prior = |rng: &mut dyn rand::RngCore| model.prior.sample(rng);
    let hists = sbc_ranks(prior, &likelihood, &mut approx, &refs, &sbc_cfg).map_err(|e| {
        RunError::Failure {
            message: format!("SBC: {e}"),
            step: match e {
                gibbs_diag_core::diagnostics::SbcError::Repetition { repetition, .. } => {
                    Some(repetition)
                }
                _ => None,
            },
        }
    })?;
    let mut figures = Vec::new();
    let mut out = Vec::new();
    for (k, h) in hists.iter().enumerate() {
        let merged = h.rebinned();
        for (suffix, hist) in [("", h), ("_rebinned", &merged)] {
            let values: Vec<f64> = hist.counts.iter().map(|&c| c as f64).collect();
            let band: Vec<(f64, f64)> = hist
                .band_99
                .iter()
                .map(|&(lo, hi)| (lo as f64, hi as f64))
                .collect();
            figures.push((
                format!("ranks_theta_{k}{suffix}.svg"),
                svg::bar_chart(
                    &format!("rank histogram theta_{k}{suffix} (pointwise 99% band)"),
                    &values,
                    Some(&band),
                ),
            ));
        }
        out.push(json!({
            "statistic": format!("theta_{k}"),
            "histogram": histogram_json(h),
            "rebinned": histogram_json(&merged),
        }));
    }
    let report = json!({
        "experiment": ExperimentKind::Sbc.name(),
        "setting": setting_name(params.model.setting),
        "divergence": params.approximation.name(),
        "variance_scale": params.variance_scale,
        "band": "pointwise binomial 99%",
        "histograms": out,
    });
    Ok(Outcome {
        report,
        trace: None,
        figures,
    })
}

fn compat(
    cfg: &RunConfig,
    params: &CompatParams,
    bandwidth: Bandwidth,
    threads: usize,
) -> Result<Outcome, RunError> {
    let variant: ArnoldVariant = params.variant;
    let traces = run_chains(cfg, ChainInit::Fixed(vec![params.init]), threads, |_| {
        Ok(arnold_pair(variant))
    })?;
    let options = CompatibilityOptions {
        bandwidth,
        permutations: params.permutations,
        seed: derive_seed(cfg.seed, u64::MAX),
    };
    let scores: Vec<Value> = traces
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let s = compatibility_score(t, &options)
                .map_err(|source| RunError::Chain { chain: i, source })?;
            Ok(json!({
                "score": s.score,
                "bandwidth": s.bandwidth,
                "bandwidths": s.bandwidths,
                "null_quantiles": {
                    "levels": gibbs_diag_core::CompatibilityScore::QUANTILE_LEVELS,
                    "values": s.null_quantiles,
                },
                "quantile_99": s.quantile_99(),
                "p_value": s.p_value,
                "pairs": s.pairs,
                "consistent_at_1pct": s.consistent_at_1pct(),
            }))
        })
        .collect::<Result<_, RunError>>()?;
    let diagnostics = chain_diagnostics(&traces);
    let figures = chain_figures(&traces, &diagnostics);
    let report = json!({
        "experiment": ExperimentKind::Compat.name(),
        "variant": variant,
        "permutations": params.permutations,
        "compatibility": scores[0].clone(),
        "per_chain": scores,
        "chain_diagnostics": diagnostics,
    });
    Ok(Outcome {
        report,
        trace: traces.into_iter().next(),
        figures,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Approximation;

    fn config(text: &str) -> RunConfig {
        RunConfig::from_json(text).unwrap()
    }

    #[test]
    fn finite_report_values() {
        let c = config(
            r#"{"experiment": "finite", "seed": 1, "steps": 4000, "model": {"fixture": "arnold_b_example"}}"#,
        );
        let out = prepare(&c).unwrap().execute(1).unwrap();
        let p = &out.report["transition_matrix"];
        assert!((p[0][0].as_f64().unwrap() - 0.43).abs() < 1e-12);
        let pi = out.report["stationary"]["pi_g"][0].as_f64().unwrap();
        assert!((pi - 0.40625).abs() < 1e-10);
        assert!(out.report["empirical"]["total_variation"].as_f64().unwrap() < 0.05);
        assert_eq!(out.trace.unwrap().steps(), 4000);
    }

    #[test]
    fn exact_toy_gibbs_prior_is_prior() {
        let c = config(
            r#"{"experiment": "toy-gaussian", "seed": 2, "steps": 2000, "chains": 2,
                "model": {"setting": "like", "approximation": "exact", "mmd_sample": 200, "permutations": 20}}"#,
        );
        let out = prepare(&c).unwrap().execute(2).unwrap();
        let r = &out.report;
        for i in 0..2 {
            for j in 0..2 {
                let a = r["gibbs_prior"]["covariance"][i][j].as_f64().unwrap();
                let b = r["prior"]["covariance"][i][j].as_f64().unwrap();
                assert!((a - b).abs() < 1e-8);
            }
        }
        assert!(r["chain_diagnostics"]["rhat"]["final"][0]
            .as_f64()
            .is_some());
        assert_eq!(r["pointwise_prior_status"]["status"], "proper");
        assert!(out.figures.iter().any(|(n, _)| n == "rhat.svg"));
    }

    #[test]
    fn config_errors_surface_before_running() {
        let bad_init = config(
            r#"{"experiment": "finite", "seed": 1, "model": {"fixture": "arnold_b_example", "init": 5}}"#,
        );
        assert!(prepare(&bad_init).is_err());
        let unknown =
            config(r#"{"experiment": "finite", "seed": 1, "model": {"fixture": "missing.json"}}"#);
        assert!(prepare(&unknown).is_err());
        let bad_sv = config(
            r#"{"experiment": "stochvol-external", "seed": 1, "model": {"command": "x", "nu": 0}}"#,
        );
        assert!(prepare(&bad_sv).is_err());
        let bad_scale =
            config(r#"{"experiment": "sbc", "seed": 1, "model": {"variance_scale": -1}}"#);
        assert!(prepare(&bad_scale).is_err());
    }

    #[test]
    fn sbc_report_layout() {
        let c = config(
            r#"{"experiment": "sbc", "seed": 4, "model": {"draws": 50, "posterior_draws": 9}}"#,
        );
        let out = prepare(&c).unwrap().execute(1).unwrap();
        let h = &out.report["histograms"][0]["histogram"];
        assert_eq!(h["N"], 50);
        assert_eq!(h["L"], 9);
        assert_eq!(h["counts"].as_array().unwrap().len(), 10);
        assert_eq!(h["band_99"][0].as_array().unwrap().len(), 2);
        assert!(out.trace.is_none());
        assert_eq!(out.figures.len(), 4);
    }

    #[test]
    fn compat_reports_a_score() {
        let c = config(
            r#"{"experiment": "compat", "seed": 5, "steps": 3000, "thinning": 5, "model": {"variant": "incompatible", "permutations": 50}}"#,
        );
        let out = prepare(&c).unwrap().execute(1).unwrap();
        assert!(out.report["compatibility"]["score"].as_f64().is_some());
        assert_eq!(out.report["variant"], "incompatible");
    }

    #[test]
    fn approximation_names_round_trip() {
        for a in [
            Approximation::Exact,
            Approximation::ReverseKl,
            Approximation::ForwardKl,
        ] {
            let v = serde_json::to_value(a).unwrap();
            assert_eq!(v, a.name());
        }
    }
}
