//! Class-specific multinomial logit over the alternatives of each task.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::{ChoiceTask, Dataset, Individual};
use crate::em::PosteriorTable;
use crate::error::{bail, Result};
use crate::numerics::{bfgs_maximize, dot, log_sum_exp, softmax_into, BfgsOptions, Objective};

/// Class-specific taste coefficients, `K x A` row-major.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChoiceParams {
    k: usize,
    a: usize,
    pub beta: Vec<f64>,
}

impl ChoiceParams {
    pub fn zeros(k: usize, a: usize) -> Self {
        Self { k, a, beta: vec![0.0; k * a] }
    }

    pub fn random<R: Rng + ?Sized>(k: usize, a: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(k, a);
        p.beta.iter_mut().for_each(|v| *v = rng.gen_range(-scale..=scale));
        p
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let a = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != a) {
            bail!(Contract, "ragged beta rows");
        }
        Ok(Self { k: rows.len(), a, beta: rows.concat() })
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn n_attributes(&self) -> usize {
        self.a
    }

    pub fn class(&self, k: usize) -> &[f64] {
        &self.beta[k * self.a..(k + 1) * self.a]
    }

    pub fn class_mut(&mut self, k: usize) -> &mut [f64] {
        &mut self.beta[k * self.a..(k + 1) * self.a]
    }
}

/// Log-probability of the chosen alternative. `scratch` must have length `J`.
#[inline]
pub(crate) fn task_log_prob(task: &ChoiceTask, beta: &[f64], scratch: &mut [f64]) -> f64 {
    for (v, x) in scratch.iter_mut().zip(&task.alternatives) {
        *v = dot(x, beta);
    }
    scratch[task.chosen] - log_sum_exp(scratch)
}

/// Choice probabilities over the alternatives of `task` for one class.
pub fn alt_probs(task: &ChoiceTask, beta_k: &[f64]) -> Result<Vec<f64>> {
    if let Some(j) = task.alternatives.iter().position(|x| x.len() != beta_k.len()) {
        bail!(Contract, "alternative {j} has {} attributes, beta has {}", task.alternatives[j].len(), beta_k.len());
    }
    let v: Vec<f64> = task.alternatives.iter().map(|x| dot(x, beta_k)).collect();
    let mut p = vec![0.0; v.len()];
    softmax_into(&v, &mut p);
    Ok(p)
}

/// `sum_t log P(chosen_t | class)`: tasks are independent given the class.
pub fn conditional_choice_ll(individual: &Individual, beta_k: &[f64]) -> Result<f64> {
    if individual.tasks.is_empty() {
        bail!(Contract, "individual {} has no tasks", individual.id);
    }
    let mut scratch = Vec::new();
    let mut ll = 0.0;
    for task in &individual.tasks {
        if task.alternatives.iter().any(|x| x.len() != beta_k.len()) {
            bail!(Contract, "attribute count does not match beta length {}", beta_k.len());
        }
        scratch.resize(task.n_alternatives(), 0.0);
        ll += task_log_prob(task, beta_k, &mut scratch);
    }
    Ok(ll)
}

/// Weighted multinomial-logit log-likelihood for one class:
/// `sum_n w_n sum_t log P(chosen_nt | beta)`.
pub struct WeightedChoiceObjective<'a> {
    data: &'a Dataset,
    weights: Vec<f64>,
    dim: usize,
}

impl<'a> WeightedChoiceObjective<'a> {
    pub fn new(data: &'a Dataset, weights: Vec<f64>) -> Self {
        assert_eq!(weights.len(), data.len());
        Self { data, weights, dim: data.n_attributes() }
    }
}

impl Objective for WeightedChoiceObjective<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, beta: &[f64]) -> f64 {
        let mut scratch = vec![0.0; self.data.n_alternatives()];
        let mut total = 0.0;
        for (ind, &w) in self.data.individuals.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            let ll: f64 = ind.tasks.iter().map(|t| task_log_prob(t, beta, &mut scratch)).sum();
            total += w * ll;
        }
        total
    }

    fn value_and_gradient(&self, beta: &[f64], grad: &mut [f64]) -> f64 {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let j = self.data.n_alternatives();
        let mut v = vec![0.0; j];
        let mut p = vec![0.0; j];
        let mut total = 0.0;
        for (ind, &w) in self.data.individuals.iter().zip(&self.weights) {
            if w == 0.0 {
                continue;
            }
            for task in &ind.tasks {
                for (vj, x) in v.iter_mut().zip(&task.alternatives) {
                    *vj = dot(x, beta);
                }
                total += w * (v[task.chosen] - log_sum_exp(&v));
                softmax_into(&v, &mut p);
                for (jj, x) in task.alternatives.iter().enumerate() {
                    let e = w * (if jj == task.chosen { 1.0 } else { 0.0 } - p[jj]);
                    if e != 0.0 {
                        for (g, xa) in grad.iter_mut().zip(x) {
                            *g += e * xa;
                        }
                    }
                }
            }
        }
        total
    }
}

/// Per-class optimizer report from one choice M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassFit {
    pub converged: bool,
    pub iterations: usize,
    pub grad_norm: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChoiceMStep {
    pub params: ChoiceParams,
    pub classes: Vec<ClassFit>,
}

impl ChoiceMStep {
    pub fn all_converged(&self) -> bool {
        self.classes.iter().all(|c| c.converged)
    }
}

/// Maximizes each class's posterior-weighted logit log-likelihood with BFGS,
/// starting from `init`. Classes are independent.
pub fn choice_mstep(
    dataset: &Dataset,
    posteriors: &PosteriorTable,
    init: &ChoiceParams,
    opts: &BfgsOptions,
) -> Result<ChoiceMStep> {
    if posteriors.n_rows() != dataset.len() || posteriors.n_classes() != init.k {
        bail!(Contract, "posterior table shape does not match dataset and choice parameters");
    }
    if init.a != dataset.n_attributes() {
        bail!(Contract, "beta has {} attributes, dataset has {}", init.a, dataset.n_attributes());
    }
    let mut params = init.clone();
    let mut classes = Vec::with_capacity(init.k);
    for k in 0..init.k {
        let obj = WeightedChoiceObjective::new(dataset, posteriors.column(k));
        let out = bfgs_maximize(&obj, init.class(k), opts);
        if !out.value.is_finite() || out.x.iter().any(|v| !v.is_finite()) {
            bail!(Estimation, "choice M-step for class {k} produced non-finite values");
        }
        params.class_mut(k).copy_from_slice(&out.x);
        classes.push(ClassFit {
            converged: out.converged,
            iterations: out.iterations,
            grad_norm: out.grad_norm,
            value: out.value,
        });
    }
    Ok(ChoiceMStep { params, classes })
}
