//! Dataset and model-specification types.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{bail, Result};
use crate::latent_net::OmegaFallback;

/// One stated-preference choice situation.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ChoiceTask {
    /// `J` attribute vectors of length `A`. An outside option is encoded as
    /// an all-zero row, which pins its utility at zero.
    pub alternatives: Vec<Vec<f64>>,
    /// Index of the chosen alternative.
    pub chosen: usize,
}

impl ChoiceTask {
    pub fn n_alternatives(&self) -> usize {
        self.alternatives.len()
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Individual {
    pub id: usize,
    /// Pre-encoded socio-characteristics.
    pub socio: Vec<f64>,
    /// Likert responses, 1-based, one per indicator. `None` for individuals
    /// whose attitudes were not observed.
    pub indicators: Option<Vec<u8>>,
    pub tasks: Vec<ChoiceTask>,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Dataset {
    pub individuals: Vec<Individual>,
    /// Number of response levels `L_p` per indicator.
    pub indicator_levels: Vec<usize>,
    pub attribute_names: Vec<String>,
    pub socio_names: Vec<String>,
    pub indicator_texts: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    pub fn n_socio(&self) -> usize {
        self.individuals.first().map_or(self.socio_names.len(), |i| i.socio.len())
    }

    pub fn n_attributes(&self) -> usize {
        self.individuals
            .iter()
            .flat_map(|i| i.tasks.first())
            .flat_map(|t| t.alternatives.first())
            .map(|a| a.len())
            .next()
            .unwrap_or(self.attribute_names.len())
    }

    pub fn n_alternatives(&self) -> usize {
        self.individuals.iter().flat_map(|i| i.tasks.first()).map(|t| t.n_alternatives()).next().unwrap_or(0)
    }

    pub fn n_indicators(&self) -> usize {
        self.indicator_levels.len()
    }

    /// Number of choice observations (sum of tasks over individuals).
    pub fn n_observations(&self) -> usize {
        self.individuals.iter().map(|i| i.tasks.len()).sum()
    }

    pub fn has_all_indicators(&self) -> bool {
        self.individuals.iter().all(|i| i.indicators.is_some())
    }

    pub fn position_of(&self, id: usize) -> Option<usize> {
        self.individuals.iter().position(|i| i.id == id)
    }

    /// Copy restricted to the given individual ids (in dataset order).
    pub fn subset(&self, keep: impl Fn(&Individual) -> bool) -> Dataset {
        Dataset {
            individuals: self.individuals.iter().filter(|i| keep(i)).cloned().collect(),
            indicator_levels: self.indicator_levels.clone(),
            attribute_names: self.attribute_names.clone(),
            socio_names: self.socio_names.clone(),
            indicator_texts: self.indicator_texts.clone(),
        }
    }

    /// Checks every structural invariant.
    pub fn validate(&self) -> Result<()> {
        if self.individuals.is_empty() {
            bail!(Schema, "dataset has no individuals");
        }
        let m = self.individuals[0].socio.len();
        let p = self.indicator_levels.len();
        if let Some(l) = self.indicator_levels.iter().position(|&l| l < 2 || l > u8::MAX as usize) {
            bail!(Schema, "indicator {l} must have between 2 and 255 levels");
        }
        let mut shape: Option<(usize, usize)> = None;
        let mut seen = alloc::collections::BTreeSet::new();
        for ind in &self.individuals {
            if !seen.insert(ind.id) {
                bail!(Schema, "duplicate individual id {}", ind.id);
            }
            if ind.socio.len() != m {
                bail!(Schema, "individual {} has {} socio columns, expected {m}", ind.id, ind.socio.len());
            }
            if let Some(c) = ind.socio.iter().position(|v| !v.is_finite()) {
                bail!(Schema, "individual {} socio column {c} is not finite", ind.id);
            }
            if let Some(resp) = &ind.indicators {
                if resp.len() != p {
                    bail!(Schema, "individual {} has {} indicator responses, expected {p}", ind.id, resp.len());
                }
                for (q, (&r, &levels)) in resp.iter().zip(&self.indicator_levels).enumerate() {
                    if r == 0 || r as usize > levels {
                        bail!(Range, "individual {} indicator {q}: response {r} outside 1..={levels}", ind.id);
                    }
                }
            }
            if ind.tasks.is_empty() {
                bail!(Schema, "individual {} has no choice tasks", ind.id);
            }
            for (t, task) in ind.tasks.iter().enumerate() {
                let j = task.alternatives.len();
                if j < 2 {
                    bail!(Schema, "individual {} task {t} has fewer than two alternatives", ind.id);
                }
                let a = task.alternatives[0].len();
                match shape {
                    None => shape = Some((j, a)),
                    Some((j0, a0)) if j0 != j || a0 != a => bail!(
                        Schema,
                        "individual {} task {t} is {j}x{a}, expected {j0}x{a0} (alternatives x attributes)",
                        ind.id
                    ),
                    _ => {}
                }
                if task.alternatives.iter().any(|alt| alt.len() != a) {
                    bail!(Schema, "individual {} task {t} has ragged attribute rows", ind.id);
                }
                if task.alternatives.iter().flatten().any(|v| !v.is_finite()) {
                    bail!(Schema, "individual {} task {t} has a non-finite attribute", ind.id);
                }
                if task.chosen >= j {
                    bail!(Range, "individual {} task {t} chose alternative {} of {j}", ind.id, task.chosen);
                }
            }
        }
        Ok(())
    }
}

/// Disjoint random partition by individual.
///
/// The training part holds `floor((1 - test_fraction) * N)` individuals and
/// the test part takes the remainder, so 542 individuals at a 0.2 fraction
/// split 433 / 109. Both parts keep the original individual order.
pub fn split_train_test(d: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let n = d.len();
    if n < 2 {
        bail!(Argument, "need at least two individuals to split, got {n}");
    }
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        bail!(Argument, "test fraction must lie in (0, 1), got {test_fraction}");
    }
    let n_train = libm::floor((1.0 - test_fraction) * n as f64 + 1e-9) as usize;
    if n_train == 0 || n_train >= n {
        bail!(Argument, "test fraction {test_fraction} leaves an empty partition for N = {n}");
    }
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut in_test = alloc::vec![false; n];
    for &i in &order[n_train..] {
        in_test[i] = true;
    }
    let pick = |test: bool| Dataset {
        individuals: d.individuals.iter().zip(&in_test).filter(|(_, &t)| t == test).map(|(i, _)| i.clone()).collect(),
        ..d.subset(|_| false)
    };
    Ok((pick(false), pick(true)))
}

/// Per-column z-score transform fitted on one dataset and applied to others.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
}

impl Standardizer {
    /// Fits column means and population standard deviations. Constant
    /// columns keep unit scale.
    pub fn fit(d: &Dataset) -> Self {
        let m = d.n_socio();
        let n = d.len().max(1) as f64;
        let mut mean = alloc::vec![0.0; m];
        for ind in &d.individuals {
            for (s, v) in mean.iter_mut().zip(&ind.socio) {
                *s += v / n;
            }
        }
        let mut sd = alloc::vec![0.0; m];
        for ind in &d.individuals {
            for ((s, v), mu) in sd.iter_mut().zip(&ind.socio).zip(&mean) {
                *s += (v - mu) * (v - mu) / n;
            }
        }
        for s in &mut sd {
            *s = libm::sqrt(*s);
            if *s < 1e-12 {
                *s = 1.0;
            }
        }
        Self { mean, sd }
    }

    pub fn apply(&self, d: &mut Dataset) {
        for ind in &mut d.individuals {
            for ((v, mu), s) in ind.socio.iter_mut().zip(&self.mean).zip(&self.sd) {
                *v = (*v - mu) / s;
            }
        }
    }
}

/// Which solver runs the gradient M-step for the membership, network,
/// individual-effect and measurement parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum JointSolver {
    /// Full-batch gradient ascent with a fixed base step.
    #[default]
    GradientAscent,
    /// BFGS on the same objective.
    Bfgs,
}

/// Model hyperparameters and estimation controls.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct ModelSpec {
    /// Number of latent classes.
    pub k: usize,
    /// Number of latent variables produced by the network.
    pub z: usize,
    /// Hidden-layer width.
    pub h: usize,
    /// Include the per-individual effect term.
    pub use_omega: bool,
    pub em_iterations: usize,
    pub restarts: usize,
    pub seed: u64,

    /// BFGS controls for the class-specific choice M-step.
    pub choice_tol: f64,
    pub choice_max_iter: usize,

    /// Gradient M-step controls (membership, network, individual effect,
    /// measurement).
    pub joint_solver: JointSolver,
    pub gradient_step: f64,
    pub gradient_max_steps: usize,
    pub gradient_tol: f64,

    /// Optional secondary stopping rule: stop when the observed train
    /// log-likelihood changes by less than `early_stop_tol` for
    /// `early_stop_window` consecutive iterations.
    pub early_stop: bool,
    pub early_stop_tol: f64,
    pub early_stop_window: usize,

    /// Value used for the individual effect of individuals not seen during
    /// training.
    pub omega_fallback: OmegaFallback,

    /// Socio columns entering the class-membership utility (`None`: all).
    pub membership_columns: Option<Vec<usize>>,
    /// Socio columns feeding the latent-variable network (`None`: all).
    pub network_columns: Option<Vec<usize>>,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            k: 2,
            z: 2,
            h: 8,
            use_omega: true,
            em_iterations: 15,
            restarts: 1,
            seed: 0,
            choice_tol: 1e-6,
            choice_max_iter: 200,
            joint_solver: JointSolver::GradientAscent,
            gradient_step: 0.05,
            gradient_max_steps: 50,
            gradient_tol: 1e-6,
            early_stop: false,
            early_stop_tol: 1e-5,
            early_stop_window: 3,
            omega_fallback: OmegaFallback::Zero,
            membership_columns: None,
            network_columns: None,
        }
    }
}

impl ModelSpec {
    /// The classic LCCM: no latent variables, no individual effect.
    pub fn baseline(k: usize) -> Self {
        Self { k, z: 0, use_omega: false, ..Self::default() }
    }

    /// True when the measurement model and network take part in estimation.
    pub fn uses_latent_structure(&self) -> bool {
        self.z > 0 || self.use_omega
    }

    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            bail!(Config, "k must be at least 1");
        }
        if self.k < 2 && self.uses_latent_structure() {
            bail!(Config, "latent variables or individual effects require k >= 2 latent classes (got k = {})", self.k);
        }
        if self.h == 0 {
            bail!(Config, "hidden width h must be at least 1");
        }
        if self.em_iterations == 0 {
            bail!(Config, "em_iterations must be positive");
        }
        if self.restarts == 0 {
            bail!(Config, "restarts must be positive");
        }
        if !(self.gradient_step > 0.0 && self.gradient_step.is_finite()) {
            bail!(Config, "gradient_step must be a positive number");
        }
        if !(self.choice_tol > 0.0 && self.gradient_tol > 0.0) {
            bail!(Config, "tolerances must be positive");
        }
        if self.early_stop && self.early_stop_window == 0 {
            bail!(Config, "early_stop_window must be positive");
        }
        Ok(())
    }

    /// Checks column selections against a dataset's socio width.
    pub(crate) fn check_columns(&self, m: usize) -> Result<()> {
        for (name, cols) in [("membership_columns", &self.membership_columns), ("network_columns", &self.network_columns)] {
            if let Some(cols) = cols {
                if let Some(c) = cols.iter().find(|&&c| c >= m) {
                    bail!(Config, "{name} references column {c} but individuals have {m} socio columns");
                }
            }
        }
        Ok(())
    }

    /// Stable fingerprint of every field that shapes a parameter set or the
    /// estimation path.
    pub fn fingerprint(&self) -> u64 {
        let canonical = format!(
            "k={};z={};h={};omega={};mem={:?};net={:?}",
            self.k, self.z, self.h, self.use_omega, self.membership_columns, self.network_columns
        );
        fnv1a64(canonical.as_bytes())
    }
}

pub(crate) fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
