//! Models without closed-form Gibbs priors.

pub mod arnold;
pub mod laplace;
pub mod lognormal;
pub mod stochvol;

pub use arnold::{arnold_pair, compatible_log_joint, ArnoldVariant};
pub use laplace::{laplace_approx, laplace_sample, LaplaceApproximator, LaplaceFit, LaplaceParam};
pub use lognormal::{
    fenton_wilkinson, lognormal_sum_sample, FWParams, LogNormalSumLikelihood, LogNormalSumModel,
};
pub use stochvol::{stochvol_sample_obs, stochvol_sample_prior, StochVolLikelihood, StochVolModel};

use crate::ConditionalPair;

/// Log-normal sum likelihood with the Fenton-Wilkinson Laplace approximation.
pub fn lognormal_pair(
    model: LogNormalSumModel,
    param: LaplaceParam,
) -> ConditionalPair<LogNormalSumLikelihood, LaplaceApproximator> {
    ConditionalPair::new(
        LogNormalSumLikelihood { model },
        LaplaceApproximator::new(model, param),
    )
    .expect("dimensions agree")
}
