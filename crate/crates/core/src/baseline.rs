//! The traditional latent class choice model: membership from socio
//! covariates only, no latent variables, no indicators. It runs through the
//! same EM code as the full model.

use alloc::vec;

use crate::choice::ChoiceParams;
use crate::data::{Dataset, ModelSpec};
use crate::em::{em_fit, FitResult, ParameterSet, PosteriorTable};
use crate::error::{bail, Result};
use crate::em::FitTrace;
use crate::latent_net::{LatentNetWeights, OmegaWeights};
use crate::membership::MembershipParams;

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct BaselineParams {
    /// Intercepts and covariate coefficients only.
    pub membership: MembershipParams,
    pub choice: ChoiceParams,
    pub spec_hash: u64,
}

impl BaselineParams {
    pub fn to_parameter_set(&self) -> ParameterSet {
        ParameterSet {
            latent: LatentNetWeights::zeros(0, 0, 0),
            membership: self.membership.clone(),
            choice: self.choice.clone(),
            network_columns: None,
            omega: OmegaWeights::empty(),
            measurement: None,
            spec_hash: self.spec_hash,
        }
    }
}

/// Fits the baseline with `spec.k` classes. Latent variables and individual
/// effects are switched off regardless of `spec`.
pub fn baseline_fit(dataset: &Dataset, spec: &ModelSpec) -> Result<(BaselineParams, PosteriorTable, FitTrace)> {
    if spec.k < 2 {
        bail!(Config, "the baseline needs at least two classes, got {}", spec.k);
    }
    let spec = ModelSpec { z: 0, use_omega: false, ..spec.clone() };
    let FitResult { params, posteriors, trace } = em_fit(dataset, &spec)?;
    let base = BaselineParams { membership: params.membership, choice: params.choice, spec_hash: params.spec_hash };
    Ok((base, posteriors, trace))
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InformationCriteria {
    pub aic: f64,
    pub bic: f64,
    pub rho_squared: f64,
}

/// AIC, BIC and McFadden's rho-squared against `ll_null`.
pub fn information_criteria(ll: f64, n_params: usize, n_obs: usize, ll_null: f64) -> InformationCriteria {
    let p = n_params as f64;
    InformationCriteria {
        aic: 2.0 * p - 2.0 * ll,
        bic: p * libm::log(n_obs as f64) - 2.0 * ll,
        rho_squared: 1.0 - ll / ll_null,
    }
}

/// Reference model for rho-squared and the "null LL" columns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum NullModel {
    /// Every alternative equally likely.
    #[default]
    Uniform,
    /// Each alternative position predicted with its sample choice share.
    MarketShare,
}

/// Log-likelihood of `null` on `dataset`. Market shares are computed on
/// `dataset` itself.
pub fn null_ll(dataset: &Dataset, null: NullModel) -> f64 {
    let tasks = dataset.individuals.iter().flat_map(|i| &i.tasks);
    match null {
        NullModel::Uniform => tasks.map(|t| -libm::log(t.n_alternatives() as f64)).sum(),
        NullModel::MarketShare => {
            let j = dataset.n_alternatives();
            let mut counts = vec![0usize; j];
            let mut total = 0usize;
            for t in tasks {
                counts[t.chosen] += 1;
                total += 1;
            }
            counts.iter().filter(|&&c| c > 0).map(|&c| c as f64 * libm::log(c as f64 / total as f64)).sum()
        }
    }
}
