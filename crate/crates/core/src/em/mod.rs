//! EM estimation.
//!
//! One cycle is: E-step (class posteriors from the current parameters),
//! class-by-class BFGS on the choice coefficients, then a gradient M-step on
//! the membership, network, individual-effect and measurement parameters
//! together. The stopping rule is a fixed number of cycles, optionally cut
//! short by a plateau rule.
//!
//! The measurement log-likelihood does not depend on the class, so it simply
//! adds to the expected complete-data log-likelihood; the E-step is
//! unaffected. The quantity that EM increases monotonically is therefore the
//! observed choice log-likelihood plus the measurement log-likelihood, and
//! that sum is what [`IterationRecord::total_objective`] holds.

pub(crate) mod joint;
mod params;

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::choice::{choice_mstep, task_log_prob};
use crate::data::{Dataset, ModelSpec};
use crate::error::{bail, Error, Result};
use crate::numerics::{log_sum_exp, softmax_into, BfgsOptions};

pub use joint::JointStep;
pub use params::{JointLayout, ParameterSet, Parts};

/// Class posteriors, one row per individual.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorTable {
    k: usize,
    gamma: Vec<f64>,
    /// Parameter-state version the table was computed from.
    pub source_version: u64,
    /// Individuals whose individual effect came from the fallback.
    pub omega_fallbacks: usize,
}

impl PosteriorTable {
    pub fn uniform(n: usize, k: usize) -> Self {
        Self { k, gamma: vec![1.0 / k as f64; n * k], source_version: 0, omega_fallbacks: 0 }
    }

    /// Builds a table from explicit rows; each row must be a probability
    /// vector (sum 1 within 1e-10).
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let k = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != k) {
            bail!(Contract, "posterior rows have different lengths");
        }
        let t = Self { k, gamma: rows.concat(), source_version: 0, omega_fallbacks: 0 };
        t.validate()?;
        Ok(t)
    }

    pub fn n_rows(&self) -> usize {
        if self.k == 0 {
            0
        } else {
            self.gamma.len() / self.k
        }
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn row(&self, n: usize) -> &[f64] {
        &self.gamma[n * self.k..(n + 1) * self.k]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        self.gamma.iter().skip(k).step_by(self.k).copied().collect()
    }

    /// Mean posterior per class.
    pub fn class_shares(&self) -> Vec<f64> {
        let n = self.n_rows().max(1) as f64;
        (0..self.k).map(|k| self.column(k).iter().sum::<f64>() / n).collect()
    }

    /// Most probable class per individual (ties to the lower index).
    pub fn modal_classes(&self) -> Vec<usize> {
        (0..self.n_rows()).map(|n| crate::numerics::argmax(self.row(n))).collect()
    }

    pub fn validate(&self) -> Result<()> {
        for n in 0..self.n_rows() {
            let row = self.row(n);
            if row.iter().any(|&g| !(0.0..=1.0).contains(&g)) {
                bail!(NumericDomain, "posterior row {n} has entries outside [0, 1]");
            }
            let s: f64 = row.iter().sum();
            if libm::fabs(s - 1.0) > 1e-10 {
                bail!(NumericDomain, "posterior row {n} sums to {s}");
            }
        }
        Ok(())
    }
}

/// Per-individual `log pi_nk + sum_t log P(chosen_t | k)`, row-major `N x K`.
pub(crate) struct LogJoint {
    pub k: usize,
    pub values: Vec<f64>,
    pub omega_fallbacks: usize,
}

impl LogJoint {
    fn row(&self, n: usize) -> &[f64] {
        &self.values[n * self.k..(n + 1) * self.k]
    }

    fn n_rows(&self) -> usize {
        self.values.len() / self.k
    }

    pub fn observed_ll(&self) -> f64 {
        (0..self.n_rows()).map(|n| log_sum_exp(self.row(n))).sum()
    }

    fn posteriors(&self, version: u64) -> PosteriorTable {
        let mut gamma = vec![0.0; self.values.len()];
        for n in 0..self.n_rows() {
            softmax_into(self.row(n), &mut gamma[n * self.k..(n + 1) * self.k]);
        }
        PosteriorTable { k: self.k, gamma, source_version: version, omega_fallbacks: self.omega_fallbacks }
    }

    fn expected_complete_ll(&self, post: &PosteriorTable) -> f64 {
        self.values.iter().zip(&post.gamma).filter(|(_, &g)| g > 0.0).map(|(v, g)| g * v).sum()
    }
}

pub(crate) fn log_joint(dataset: &Dataset, params: &ParameterSet) -> Result<LogJoint> {
    let k = params.n_classes();
    if params.choice.n_attributes() != dataset.n_attributes() {
        bail!(Contract, "parameters expect {} attributes, dataset has {}", params.choice.n_attributes(), dataset.n_attributes());
    }
    let mut values = vec![0.0; dataset.len() * k];
    let mut util = vec![0.0; k];
    let mut scratch = vec![0.0; dataset.n_alternatives()];
    let mut fallbacks = 0;
    for (n, ind) in dataset.individuals.iter().enumerate() {
        let r = params.latent_for(&ind.socio);
        let omega = if params.membership.uses_omega() {
            let o = params.omega_for(ind.id);
            fallbacks += usize::from(o.fallback);
            o.value
        } else {
            0.0
        };
        let q = params.membership.covariates(&ind.socio);
        params.membership.check_shapes(&q, &r)?;
        params.membership.utilities_into(&q, &r, omega, &mut util);
        let lse = log_sum_exp(&util);
        for c in 0..k {
            let beta = params.choice.class(c);
            let choice_ll: f64 = ind.tasks.iter().map(|t| task_log_prob(t, beta, &mut scratch)).sum();
            values[n * k + c] = util[c] - lse + choice_ll;
        }
    }
    Ok(LogJoint { k, values, omega_fallbacks: fallbacks })
}

/// Posterior class probabilities by Bayes' rule, in log space.
pub fn e_step(dataset: &Dataset, params: &ParameterSet) -> Result<PosteriorTable> {
    params.membership.check_pins()?;
    let lj = log_joint(dataset, params)?;
    let post = lj.posteriors(0);
    post.validate()?;
    Ok(post)
}

/// Observed-data log-likelihood `sum_n log sum_k pi_nk prod_t P(chosen_t | k)`.
/// Individuals outside the training set use the individual-effect fallback.
pub fn unconditional_ll(dataset: &Dataset, params: &ParameterSet) -> Result<f64> {
    params.membership.check_pins()?;
    Ok(log_joint(dataset, params)?.observed_ll())
}

/// Measurement log-likelihood over the individuals of `dataset` (0 when the
/// model has no measurement component).
pub fn measurement_ll(dataset: &Dataset, params: &ParameterSet) -> Result<f64> {
    let Some(m) = &params.measurement else { return Ok(0.0) };
    let e = joint::evaluate(
        dataset,
        None,
        &params.membership,
        &params.latent,
        params.network_columns.as_deref(),
        &params.omega,
        Some(m),
        Parts::MEASUREMENT,
    )?;
    Ok(e.measurement_value)
}

/// Supplies wall-clock readings to the EM loop.
pub trait Clock {
    fn elapsed_secs(&self) -> f64;
}

/// A clock that always reads zero, keeping traces bit-reproducible.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoClock;

impl Clock for NoClock {
    fn elapsed_secs(&self) -> f64 {
        0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    /// 0 is the random starting point; `t` is the state after `t` cycles.
    pub iteration: usize,
    /// Observed choice log-likelihood on the training data.
    pub observed_ll: f64,
    pub measurement_ll: f64,
    /// `observed_ll + measurement_ll`.
    pub total_objective: f64,
    /// Expected complete-data log-likelihood (plus measurement) under the
    /// posteriors that drove this cycle's M-steps. `None` at iteration 0.
    pub expected_complete_ll: Option<f64>,
    /// Non-converged class fits in this cycle's choice M-step.
    pub choice_nonconverged: usize,
    pub joint_steps: usize,
    pub joint_grad_norm: f64,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceStatus {
    Completed,
    EarlyStopped { after: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitTrace {
    pub restart: usize,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
    pub status: TraceStatus,
    /// Whether every class fit converged in the final choice M-step.
    pub choice_converged: bool,
    /// Whether the final gradient M-step reached its tolerance.
    pub joint_converged: bool,
}

impl FitTrace {
    pub fn final_record(&self) -> &IterationRecord {
        self.records.last().expect("trace always holds the starting record")
    }

    pub fn final_ll(&self) -> f64 {
        self.final_record().observed_ll
    }

    /// EM cycles actually run.
    pub fn cycles(&self) -> usize {
        self.records.len() - 1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: ParameterSet,
    pub posteriors: PosteriorTable,
    pub trace: FitTrace,
}

/// One EM run with seed `spec.seed`.
pub fn em_fit(dataset: &Dataset, spec: &ModelSpec) -> Result<FitResult> {
    fit_restart(dataset, spec, 0, &NoClock)
}

/// One EM run with seed `spec.seed + restart`.
pub fn fit_restart(dataset: &Dataset, spec: &ModelSpec, restart: usize, clock: &dyn Clock) -> Result<FitResult> {
    spec.validate()?;
    dataset.validate()?;
    if spec.uses_latent_structure() && !dataset.has_all_indicators() {
        bail!(Contract, "every training individual needs indicator responses when latent variables or individual effects are estimated");
    }
    let seed = spec.seed.wrapping_add(restart as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = ParameterSet::initialize(dataset, spec, &mut rng)?;
    let choice_opts = BfgsOptions::new(spec.choice_tol, spec.choice_max_iter);
    let parts = Parts { membership: spec.k > 1, measurement: params.measurement.is_some() };
    let run_joint = parts.membership || parts.measurement;

    let mut version: u64 = 0;
    let mut lj = log_joint(dataset, &params)?;
    let mut meas_ll = measurement_ll(dataset, &params)?;
    let ll0 = lj.observed_ll();
    if !ll0.is_finite() || !meas_ll.is_finite() {
        bail!(Estimation, "log-likelihood is not finite at the starting values");
    }
    let mut records = vec![IterationRecord {
        iteration: 0,
        observed_ll: ll0,
        measurement_ll: meas_ll,
        total_objective: ll0 + meas_ll,
        expected_complete_ll: None,
        choice_nonconverged: 0,
        joint_steps: 0,
        joint_grad_norm: 0.0,
        elapsed_secs: clock.elapsed_secs(),
    }];
    let mut status = TraceStatus::Completed;
    let mut choice_converged = true;
    let mut joint_converged = true;
    let mut plateau = 0usize;

    for it in 1..=spec.em_iterations {
        // E-step
        let post = lj.posteriors(version);

        // choice M-step
        assert_eq!(post.source_version, version, "posteriors are stale");
        let choice = choice_mstep(dataset, &post, &params.choice, &choice_opts)
            .map_err(|e| Error::Estimation(format!("iteration {it}: {e}")))?;
        let nonconv = choice.classes.iter().filter(|c| !c.converged).count();
        choice_converged = nonconv == 0;
        params.choice = choice.params;

        // membership + network + measurement M-step
        assert_eq!(post.source_version, version, "posteriors are stale");
        let mut step = JointStep { value_before: 0.0, value_after: 0.0, steps: 0, grad_norm: 0.0, converged: true };
        if run_joint {
            let (p, s) = joint::joint_mstep(dataset, &post, &params, parts, spec)
                .map_err(|e| Error::Estimation(format!("iteration {it}: {e}")))?;
            params = p;
            step = s;
        }
        joint_converged = step.converged;
        version += 1;

        lj = log_joint(dataset, &params)?;
        meas_ll = measurement_ll(dataset, &params)?;
        let ll = lj.observed_ll();
        if !ll.is_finite() || !meas_ll.is_finite() {
            bail!(Estimation, "iteration {it}: log-likelihood became non-finite");
        }
        let prev = records.last().map_or(ll, |r| r.observed_ll);
        records.push(IterationRecord {
            iteration: it,
            observed_ll: ll,
            measurement_ll: meas_ll,
            total_objective: ll + meas_ll,
            expected_complete_ll: Some(lj.expected_complete_ll(&post) + meas_ll),
            choice_nonconverged: nonconv,
            joint_steps: step.steps,
            joint_grad_norm: step.grad_norm,
            elapsed_secs: clock.elapsed_secs(),
        });

        if spec.early_stop {
            plateau = if libm::fabs(ll - prev) < spec.early_stop_tol { plateau + 1 } else { 0 };
            if plateau >= spec.early_stop_window && it < spec.em_iterations {
                status = TraceStatus::EarlyStopped { after: it };
                break;
            }
        }
    }

    params.validate().map_err(|e| Error::Estimation(format!("fitted parameters failed validation: {e}")))?;
    let posteriors = lj.posteriors(version);
    posteriors.validate()?;
    Ok(FitResult {
        params,
        posteriors,
        trace: FitTrace { restart, seed, records, status, choice_converged, joint_converged },
    })
}

/// Outcome of one restart.
#[derive(Debug, Clone, PartialEq)]
pub struct RestartRun {
    pub restart: usize,
    pub seed: u64,
    pub outcome: core::result::Result<FitResult, Error>,
}

/// Results of a multi-start estimation.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiStartReport {
    pub runs: Vec<RestartRun>,
    /// Index into `runs` of the restart with the highest final training
    /// log-likelihood.
    pub best: usize,
    /// Population variance of the final training log-likelihoods of the
    /// successful restarts.
    pub ll_variance: f64,
}

impl MultiStartReport {
    /// Selects the best restart. Fails when every restart failed.
    pub fn from_runs(runs: Vec<RestartRun>) -> Result<Self> {
        let lls: Vec<(usize, f64)> =
            runs.iter().enumerate().filter_map(|(i, r)| r.outcome.as_ref().ok().map(|f| (i, f.trace.final_ll()))).collect();
        if lls.is_empty() {
            let reasons: Vec<String> = runs
                .iter()
                .filter_map(|r| r.outcome.as_ref().err().map(|e| format!("restart {}: {e}", r.restart)))
                .collect();
            bail!(Estimation, "all {} restarts failed ({})", runs.len(), reasons.join("; "));
        }
        let mut best = lls[0];
        for &(i, ll) in &lls[1..] {
            if ll > best.1 {
                best = (i, ll);
            }
        }
        Ok(Self { best: best.0, ll_variance: population_variance(lls.iter().map(|p| p.1)), runs })
    }

    pub fn best_fit(&self) -> &FitResult {
        self.runs[self.best].outcome.as_ref().expect("best restart succeeded")
    }

    pub fn into_best(mut self) -> FitResult {
        self.runs.swap_remove(self.best).outcome.expect("best restart succeeded")
    }

    pub fn best_ll(&self) -> f64 {
        self.best_fit().trace.final_ll()
    }

    pub fn successful(&self) -> impl Iterator<Item = &FitResult> {
        self.runs.iter().filter_map(|r| r.outcome.as_ref().ok())
    }

    pub fn failures(&self) -> usize {
        self.runs.iter().filter(|r| r.outcome.is_err()).count()
    }
}

/// Population variance (divides by the count).
pub fn population_variance(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count();
    if n == 0 {
        return 0.0;
    }
    let mean = values.clone().sum::<f64>() / n as f64;
    values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64
}

/// Runs `spec.restarts` restarts sequentially with seeds `seed + i`.
pub fn multi_start(dataset: &Dataset, spec: &ModelSpec) -> Result<MultiStartReport> {
    multi_start_with_clock(dataset, spec, &NoClock)
}

pub fn multi_start_with_clock(dataset: &Dataset, spec: &ModelSpec, clock: &dyn Clock) -> Result<MultiStartReport> {
    spec.validate()?;
    let runs = (0..spec.restarts)
        .map(|i| RestartRun {
            restart: i,
            seed: spec.seed.wrapping_add(i as u64),
            outcome: fit_restart(dataset, spec, i, clock),
        })
        .collect();
    MultiStartReport::from_runs(runs)
}

#[cfg(test)]
mod tests;
