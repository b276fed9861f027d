//! JSON run configuration. Unknown keys are rejected at every level.

use std::path::PathBuf;

use gibbs_diag_core::diagnostics::Bandwidth;
use gibbs_diag_core::gaussian::ApproxFamily;
use gibbs_diag_core::linalg::{from_rows, Matrix};
use gibbs_diag_core::zoo::{ArnoldVariant, LaplaceParam};
use gibbs_diag_core::{DivergenceKind, GaussianDist, GaussianToyModel};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::io::FiniteFixture;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    ToyGaussian,
    Finite,
    Lognormal,
    StochvolExternal,
    Sbc,
    Compat,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::ToyGaussian => "toy-gaussian",
            ExperimentKind::Finite => "finite",
            ExperimentKind::Lognormal => "lognormal",
            ExperimentKind::StochvolExternal => "stochvol-external",
            ExperimentKind::Sbc => "sbc",
            ExperimentKind::Compat => "compat",
        }
    }
}

fn one() -> usize {
    1
}

fn default_steps() -> usize {
    10_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub seed: u64,
    /// Chain transitions `T`.
    #[serde(default = "default_steps")]
    pub steps: usize,
    /// Defaults to `steps / 10`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(default = "one")]
    pub thinning: usize,
    /// Independent chains, seeded from `seed` by chain index.
    #[serde(default = "one")]
    pub chains: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Experiment-specific parameters; see the `*Params` types.
    #[serde(default = "empty_object")]
    pub model: Value,
}

fn empty_object() -> Value {
    Value::Object(Default::default())
}

#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl ConfigError {
    pub fn new(msg: impl Into<String>) -> Self {
        Self(msg.into())
    }
}

impl RunConfig {
    /// Accepts a config or a `manifest.json`, whose `config` field is used.
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let value: Value = serde_json::from_str(text)
            .map_err(|e| ConfigError::new(format!("invalid JSON: {e}")))?;
        let value = match value {
            Value::Object(ref map)
                if map.get("tool").and_then(Value::as_str) == Some(crate::TOOL_NAME) =>
            {
                map.get("config")
                    .cloned()
                    .ok_or_else(|| ConfigError::new("manifest has no config"))?
            }
            other => other,
        };
        let config: RunConfig =
            serde_json::from_value(value).map_err(|e| ConfigError::new(format!("config: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.steps == 0 {
            return Err(ConfigError::new("steps must be positive"));
        }
        if self.thinning == 0 {
            return Err(ConfigError::new("thinning must be at least 1"));
        }
        if self.chains == 0 {
            return Err(ConfigError::new("chains must be at least 1"));
        }
        if self.burn_in() + 1 > self.steps {
            return Err(ConfigError::new("burn_in must be smaller than steps"));
        }
        if !self.model.is_object() {
            return Err(ConfigError::new("model must be a JSON object"));
        }
        Ok(())
    }

    pub fn burn_in(&self) -> usize {
        self.burn_in.unwrap_or(self.steps / 10)
    }

    pub fn params<T: DeserializeOwned>(&self) -> Result<T, ConfigError> {
        serde_json::from_value(self.model.clone()).map_err(|e| {
            ConfigError::new(format!(
                "model parameters for {}: {e}",
                self.experiment.name()
            ))
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Setting {
    /// Correlated prior, isotropic likelihood.
    #[default]
    Prior,
    /// Isotropic prior, correlated likelihood.
    Like,
    /// Matrices given explicitly.
    Custom,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Approximation {
    Exact,
    #[default]
    ReverseKl,
    ForwardKl,
}

impl Approximation {
    pub fn family(self) -> ApproxFamily {
        match self {
            Approximation::Exact => ApproxFamily::ExactPosterior,
            Approximation::ReverseKl => ApproxFamily::MeanField(DivergenceKind::ReverseKL),
            Approximation::ForwardKl => ApproxFamily::MeanField(DivergenceKind::ForwardKL),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Approximation::Exact => "exact",
            Approximation::ReverseKl => "reverse_kl",
            Approximation::ForwardKl => "forward_kl",
        }
    }
}

/// The toy Gaussian model, shared by `toy-gaussian` and `sbc`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct GaussianModelSpec {
    #[serde(default)]
    pub setting: Setting,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_mean: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub likelihood_cov: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_obs: Option<usize>,
}

impl GaussianModelSpec {
    pub fn build(&self) -> Result<GaussianToyModel, ConfigError> {
        let bad = |e: gibbs_diag_core::Error| ConfigError::new(format!("toy model: {e}"));
        let explicit =
            self.prior_mean.is_some() || self.prior_cov.is_some() || self.likelihood_cov.is_some();
        match self.setting {
            Setting::Prior | Setting::Like if explicit => Err(ConfigError::new(
                "matrices may only be given with setting \"custom\"",
            )),
            Setting::Prior | Setting::Like => {
                let base = if self.setting == Setting::Prior {
                    GaussianToyModel::setting_prior()
                } else {
                    GaussianToyModel::setting_like()
                };
                let n = self.n_obs.unwrap_or(1);
                GaussianToyModel::new(base.prior.clone(), base.likelihood_cov.clone(), n)
                    .map_err(bad)
            }
            Setting::Custom => {
                let (Some(mean), Some(prior_cov), Some(lik)) =
                    (&self.prior_mean, &self.prior_cov, &self.likelihood_cov)
                else {
                    return Err(ConfigError::new(
                        "setting \"custom\" needs prior_mean, prior_cov and likelihood_cov",
                    ));
                };
                let prior = GaussianDist::from_slices(mean, prior_cov).map_err(bad)?;
                let lik: Matrix = from_rows(lik).map_err(bad)?;
                GaussianToyModel::new(prior, lik, self.n_obs.unwrap_or(1)).map_err(bad)
            }
        }
    }
}

fn default_bandwidth() -> f64 {
    1.0
}

fn default_permutations() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyGaussianParams {
    #[serde(flatten)]
    pub model: GaussianModelSpec,
    #[serde(default)]
    pub approximation: Approximation,
    /// θ₀; drawn from the prior when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<Vec<f64>>,
    /// Chain draws compared with analytic Gibbs-prior draws by MMD.
    #[serde(default = "default_mmd_sample")]
    pub mmd_sample: usize,
    #[serde(default = "default_bandwidth")]
    pub bandwidth: f64,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
}

fn default_mmd_sample() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct FiniteParams {
    /// Bundled fixture name or path to a `{"F", "Q"}` file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fixture: Option<String>,
    #[serde(rename = "F", default, skip_serializing_if = "Option::is_none")]
    pub f: Option<Vec<Vec<f64>>>,
    #[serde(rename = "Q", default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<Vec<f64>>>,
    /// Initial latent state index.
    #[serde(default)]
    pub init: usize,
}

impl FiniteParams {
    pub fn fixture(&self) -> Result<FiniteFixture, ConfigError> {
        match (&self.fixture, &self.f, &self.q) {
            (Some(name), None, None) => {
                if let Some(f) = crate::io::named_finite_fixture(name) {
                    return Ok(f);
                }
                let text = std::fs::read_to_string(name)
                    .map_err(|e| ConfigError::new(format!("fixture {name}: {e}")))?;
                serde_json::from_str(&text)
                    .map_err(|e| ConfigError::new(format!("fixture {name}: {e}")))
            }
            (None, Some(f), Some(q)) => Ok(FiniteFixture {
                f: f.clone(),
                q: q.clone(),
            }),
            _ => Err(ConfigError::new("give either fixture or both F and Q")),
        }
    }
}

fn default_terms() -> usize {
    10
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LognormalParams {
    #[serde(default = "default_terms")]
    pub terms: usize,
    #[serde(default)]
    pub laplace_param: LaplaceParam,
}

impl Default for LognormalParams {
    fn default() -> Self {
        Self {
            terms: default_terms(),
            laplace_param: LaplaceParam::default(),
        }
    }
}

fn default_sv_steps() -> usize {
    100
}

fn default_sigma() -> f64 {
    0.09
}

fn default_nu() -> f64 {
    12.0
}

fn default_timeout() -> f64 {
    60.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochvolParams {
    /// Shell command starting the approximator backend.
    pub command: String,
    #[serde(rename = "T", default = "default_sv_steps")]
    pub t: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_nu")]
    pub nu: f64,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
}

fn default_draws() -> usize {
    323
}

fn default_posterior_draws() -> usize {
    31
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SbcParams {
    #[serde(flatten)]
    pub model: GaussianModelSpec,
    #[serde(default = "exact")]
    pub approximation: Approximation,
    /// Multiplies the approximation covariance.
    #[serde(default = "default_scale")]
    pub variance_scale: f64,
    #[serde(default = "default_draws")]
    pub draws: usize,
    #[serde(default = "default_posterior_draws")]
    pub posterior_draws: usize,
}

fn exact() -> Approximation {
    Approximation::Exact
}

/// A positive number, `"median"` or `"multi_scale"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandwidthSpec {
    Fixed(f64),
    Rule(BandwidthRule),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BandwidthRule {
    Median,
    MultiScale,
}

impl BandwidthSpec {
    pub fn bandwidth(self) -> Result<Bandwidth, ConfigError> {
        match self {
            BandwidthSpec::Fixed(h) if h > 0.0 && h.is_finite() => Ok(Bandwidth::Fixed(h)),
            BandwidthSpec::Fixed(_) => Err(ConfigError::new("bandwidth must be positive")),
            BandwidthSpec::Rule(BandwidthRule::Median) => Ok(Bandwidth::MedianHeuristic),
            BandwidthSpec::Rule(BandwidthRule::MultiScale) => Ok(Bandwidth::MultiScale),
        }
    }
}

impl Default for BandwidthSpec {
    fn default() -> Self {
        BandwidthSpec::Rule(BandwidthRule::MultiScale)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompatParams {
    pub variant: ArnoldVariant,
    #[serde(default)]
    pub bandwidth: BandwidthSpec,
    #[serde(default = "default_permutations")]
    pub permutations: usize,
    /// θ₀; these pairs have no prior to draw it from.
    #[serde(default)]
    pub init: f64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config() {
        let c = RunConfig::from_json(
            r#"{"experiment": "finite", "seed": 3, "model": {"fixture": "arnold_b_example"}}"#,
        )
        .unwrap();
        assert_eq!(c.steps, 10_000);
        assert_eq!(c.burn_in(), 1000);
        assert_eq!(c.thinning, 1);
        let p: FiniteParams = c.params().unwrap();
        assert!(p.fixture().unwrap().model().is_ok());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(
            RunConfig::from_json(r#"{"experiment": "finite", "seed": 3, "colour": 1}"#).is_err()
        );
        let c = RunConfig::from_json(r#"{"experiment": "toy-gaussian", "seed": 3, "model": {"setting": "like", "divergence": "x"}}"#)
            .unwrap();
        assert!(c.params::<ToyGaussianParams>().is_err());
        assert!(RunConfig::from_json(r#"{"experiment": "toy", "seed": 3}"#).is_err());
    }

    #[test]
    fn invalid_values() {
        assert!(RunConfig::from_json(
            r#"{"experiment": "finite", "seed": 1, "steps": 10, "burn_in": 10}"#
        )
        .is_err());
        assert!(
            RunConfig::from_json(r#"{"experiment": "finite", "seed": 1, "thinning": 0}"#).is_err()
        );
        assert!(RunConfig::from_json(r#"{"experiment": "finite", "seed": -1}"#).is_err());
        assert!(RunConfig::from_json("not json").is_err());
    }

    #[test]
    fn gaussian_specs() {
        let spec = GaussianModelSpec::default();
        assert_eq!(spec.build().unwrap(), GaussianToyModel::setting_prior());
        let custom = GaussianModelSpec {
            setting: Setting::Custom,
            prior_mean: Some(vec![0.0]),
            prior_cov: Some(vec![vec![2.0]]),
            likelihood_cov: Some(vec![vec![-1.0]]),
            n_obs: None,
        };
        assert!(custom.build().is_err());
        let mixed = GaussianModelSpec {
            prior_mean: Some(vec![0.0, 0.0]),
            ..Default::default()
        };
        assert!(mixed.build().is_err());
    }

    #[test]
    fn bandwidth_specs() {
        let parse = |v: &str| {
            serde_json::from_str::<BandwidthSpec>(v)
                .map_err(|e| e.to_string())
                .and_then(|b| b.bandwidth().map_err(|e| e.0))
        };
        assert_eq!(parse("0.5").unwrap(), Bandwidth::Fixed(0.5));
        assert_eq!(parse("\"median\"").unwrap(), Bandwidth::MedianHeuristic);
        assert_eq!(parse("\"multi_scale\"").unwrap(), Bandwidth::MultiScale);
        assert!(parse("-1").is_err());
        assert!(parse("\"wide\"").is_err());
    }

    #[test]
    fn manifest_is_accepted_as_config() {
        let c = RunConfig::from_json(
            r#"{"experiment": "compat", "seed": 9, "model": {"variant": "compatible"}}"#,
        )
        .unwrap();
        let manifest =
            serde_json::json!({"tool": crate::TOOL_NAME, "version": "x", "seed": 9, "config": c});
        assert_eq!(RunConfig::from_json(&manifest.to_string()).unwrap(), c);
    }
}
