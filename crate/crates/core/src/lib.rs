//! Latent class choice models whose class membership is driven by latent
//! variables built from socio-characteristics by a small dense network, with
//! ordinal (Likert) indicators tying those latent variables to observed
//! attitudes. Estimation runs end-to-end through an EM loop.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, reporting and
//! the command-line front end live in the `latclass` companion crate.
//!
//! Module map:
//!
//! * [`numerics`]: softmax, logistic, ordinal interval probabilities, BFGS,
//!   finite-difference gradient checks.
//! * [`data`]: dataset and model-specification types, validation, splits.
//! * [`latent_net`]: the two-layer ReLU network and the per-individual
//!   effect layer.
//! * [`membership`], [`choice`], [`measurement`]: the three sub-models and
//!   their M-step objectives.
//! * [`em`]: parameter sets, E-step, EM orchestration, multi-start.
//! * [`baseline`]: the classic LCCM benchmark and information criteria.
//! * [`inference`]: standard errors, class profiles, latent-space export,
//!   holdout evaluation.
//! * [`synth`]: synthetic data from a fully specified generating model.

#![no_std]
#![forbid(unsafe_code)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod baseline;
pub mod choice;
pub mod data;
pub mod em;
mod error;
pub mod inference;
pub mod latent_net;
pub mod measurement;
pub mod membership;
pub mod numerics;
pub mod synth;

#[cfg(test)]
pub(crate) mod testutil;

pub use error::{Error, Result};

/// Crate version, recorded in run manifests.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub use baseline::{baseline_fit, information_criteria, BaselineParams, InformationCriteria, NullModel};
pub use data::{split_train_test, ChoiceTask, Dataset, Individual, ModelSpec};
pub use em::{
    e_step, em_fit, multi_start, unconditional_ll, FitResult, FitTrace, MultiStartReport, ParameterSet,
    PosteriorTable,
};
