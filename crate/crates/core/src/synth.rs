//! Synthetic populations drawn from a fully specified generating model.
//!
//! Each individual gets its own ChaCha stream (`seed`, stream = index), so
//! output is identical no matter how the work is split.

use alloc::vec;
use alloc::vec::Vec;

use rand::distributions::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::choice::{alt_probs, ChoiceParams};
use crate::data::{ChoiceTask, Dataset, Individual, ModelSpec};
use crate::em::ParameterSet;
use crate::error::{bail, Error, Result};
use crate::latent_net::{LatentNetWeights, OmegaWeights};
use crate::measurement::{indicator_probs, MeasurementParams};
use crate::membership::{class_probs, MembershipParams};

/// Marginal distribution of one socio column.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum SocioMarginal {
    Categorical { values: Vec<f64>, probs: Vec<f64> },
    Uniform { low: f64, high: f64 },
}

impl SocioMarginal {
    pub fn binary(p: f64) -> Self {
        SocioMarginal::Categorical { values: vec![0.0, 1.0], probs: vec![1.0 - p, p] }
    }
}

/// Population and survey design.
///
/// Attributes per alternative are `J - 1` alternative-specific constant
/// columns followed by `generic_attributes` columns drawn uniformly on
/// `attribute_range`. With `outside_option` the last alternative is an
/// all-zero row; otherwise the last alternative only lacks a constant.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(default, deny_unknown_fields))]
pub struct PopulationConfig {
    pub individuals: usize,
    pub socio: Vec<SocioMarginal>,
    pub tasks: usize,
    pub alternatives: usize,
    pub generic_attributes: usize,
    pub attribute_range: (f64, f64),
    pub outside_option: bool,
    pub indicator_levels: Vec<usize>,
    /// Standard deviation of the individual effect.
    pub omega_sd: f64,
}

impl Default for PopulationConfig {
    fn default() -> Self {
        Self {
            individuals: 500,
            socio: vec![SocioMarginal::Uniform { low: 0.0, high: 1.0 }, SocioMarginal::binary(0.5)],
            tasks: 3,
            alternatives: 3,
            generic_attributes: 2,
            attribute_range: (0.0, 1.0),
            outside_option: true,
            indicator_levels: vec![5; 4],
            omega_sd: 1.0,
        }
    }
}

impl PopulationConfig {
    pub fn n_attributes(&self) -> usize {
        self.alternatives.saturating_sub(1) + self.generic_attributes
    }

    pub fn validate(&self) -> Result<()> {
        if self.individuals == 0 || self.tasks == 0 {
            bail!(Config, "population needs at least one individual and one task");
        }
        if self.alternatives < 2 {
            bail!(Config, "tasks need at least two alternatives");
        }
        let (lo, hi) = self.attribute_range;
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            bail!(Config, "attribute range must be a finite, non-empty interval");
        }
        if !(self.omega_sd.is_finite() && self.omega_sd >= 0.0) {
            bail!(Config, "omega_sd must be finite and non-negative");
        }
        if let Some(l) = self.indicator_levels.iter().find(|&&l| !(2..=255).contains(&l)) {
            bail!(Config, "indicator levels must lie in 2..=255, got {l}");
        }
        for (i, s) in self.socio.iter().enumerate() {
            match s {
                SocioMarginal::Categorical { values, probs } => {
                    if values.is_empty() || values.len() != probs.len() || probs.iter().any(|p| !(*p >= 0.0)) {
                        bail!(Config, "socio column {i}: categorical values and probabilities must be non-empty, aligned and non-negative");
                    }
                    if libm::fabs(probs.iter().sum::<f64>() - 1.0) > 1e-9 {
                        bail!(Config, "socio column {i}: probabilities must sum to 1");
                    }
                }
                SocioMarginal::Uniform { low, high } => {
                    if !(low.is_finite() && high.is_finite() && low < high) {
                        bail!(Config, "socio column {i}: uniform bounds must satisfy low < high");
                    }
                }
            }
        }
        Ok(())
    }
}

/// Generating-model values behind every synthetic individual. Estimators
/// never read these.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Truth {
    pub class: Vec<usize>,
    pub r: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
}

impl Truth {
    /// Share of individuals per true class.
    pub fn class_shares(&self, k: usize) -> Vec<f64> {
        let mut s = vec![0.0; k];
        for &c in &self.class {
            s[c] += 1.0;
        }
        let n = self.class.len().max(1) as f64;
        s.iter_mut().for_each(|v| *v /= n);
        s
    }
}

/// Draws a dataset from `params`. `params.omega` is ignored: individual
/// effects come from Normal(0, `omega_sd`) when the membership uses them.
pub fn generate(cfg: &PopulationConfig, params: &ParameterSet, seed: u64) -> Result<(Dataset, Truth)> {
    cfg.validate()?;
    check_generator(cfg, params)?;
    let omega_dist = Normal::new(0.0, cfg.omega_sd).map_err(|e| Error::Config(alloc::format!("omega_sd: {e}")))?;
    let a = cfg.n_attributes();
    let j = cfg.alternatives;
    let uses_omega = params.membership.uses_omega();

    let mut individuals = Vec::with_capacity(cfg.individuals);
    let mut truth = Truth::default();
    for n in 0..cfg.individuals {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(n as u64);

        let socio: Vec<f64> = cfg.socio.iter().map(|m| draw_socio(m, &mut rng)).collect::<Result<_>>()?;
        let r = params.latent_for(&socio);
        let omega = if uses_omega || cfg.omega_sd > 0.0 { omega_dist.sample(&mut rng) } else { 0.0 };
        let omega_used = if uses_omega { omega } else { 0.0 };

        let q = params.membership.covariates(&socio);
        let pi = class_probs(&q, &r, omega_used, &params.membership)?;
        let class = draw_index(&pi, &mut rng)?;

        let indicators = match &params.measurement {
            Some(m) => {
                let resp = (0..m.n_indicators())
                    .map(|p| {
                        let probs = indicator_probs(&r, if m.uses_omega() { omega } else { 0.0 }, p, m)?;
                        Ok(draw_index(&probs, &mut rng)? as u8 + 1)
                    })
                    .collect::<Result<Vec<u8>>>()?;
                Some(resp)
            }
            None if !cfg.indicator_levels.is_empty() => {
                // No measurement model: responses carry no signal.
                Some(cfg.indicator_levels.iter().map(|&l| rng.gen_range(1..=l as u8)).collect())
            }
            None => None,
        };

        let tasks = (0..cfg.tasks)
            .map(|_| {
                let alternatives: Vec<Vec<f64>> = (0..j).map(|alt| attribute_row(cfg, alt, a, &mut rng)).collect();
                let mut task = ChoiceTask { alternatives, chosen: 0 };
                let probs = alt_probs(&task, params.choice.class(class))?;
                task.chosen = draw_index(&probs, &mut rng)?;
                Ok(task)
            })
            .collect::<Result<Vec<_>>>()?;

        individuals.push(Individual { id: n, socio, indicators, tasks });
        truth.class.push(class);
        truth.r.push(r);
        truth.omega.push(omega_used);
    }

    let mut attribute_names: Vec<alloc::string::String> = (0..j - 1).map(|i| alloc::format!("asc_{i}")).collect();
    attribute_names.extend((0..cfg.generic_attributes).map(|i| alloc::format!("x{i}")));
    let dataset = Dataset {
        individuals,
        indicator_levels: cfg.indicator_levels.clone(),
        attribute_names,
        socio_names: (0..cfg.socio.len()).map(|i| alloc::format!("s{i}")).collect(),
        indicator_texts: (0..cfg.indicator_levels.len()).map(|i| alloc::format!("indicator {i}")).collect(),
    };
    dataset.validate()?;
    Ok((dataset, truth))
}

fn check_generator(cfg: &PopulationConfig, params: &ParameterSet) -> Result<()> {
    params.membership.check_pins().map_err(|e| Error::Config(alloc::format!("generating parameters: {e}")))?;
    if params.choice.n_attributes() != cfg.n_attributes() {
        bail!(Config, "generating betas have {} attributes, design has {}", params.choice.n_attributes(), cfg.n_attributes());
    }
    if params.membership.n_classes() != params.choice.n_classes() {
        bail!(Config, "membership and choice disagree on the number of classes");
    }
    let m = cfg.socio.len();
    let m_net = params.network_columns.as_ref().map_or(m, Vec::len);
    if params.latent.is_active() && params.latent.inputs() != m_net {
        bail!(Config, "network expects {} inputs, design has {m_net}", params.latent.inputs());
    }
    if params.membership.n_latent() != params.latent.outputs() {
        bail!(Config, "membership and network disagree on the number of latent variables");
    }
    let m_mem = params.membership.columns.as_ref().map_or(m, Vec::len);
    if params.membership.n_covariates() != m_mem {
        bail!(Config, "membership expects {} covariates, design has {m_mem}", params.membership.n_covariates());
    }
    for cols in [&params.membership.columns, &params.network_columns].into_iter().flatten() {
        if cols.iter().any(|&c| c >= m) {
            bail!(Config, "column selection refers past the {m} socio columns");
        }
    }
    if let Some(meas) = &params.measurement {
        let levels: Vec<usize> = (0..meas.n_indicators()).map(|p| meas.levels(p)).collect();
        if levels != cfg.indicator_levels {
            bail!(Config, "measurement levels {levels:?} differ from the design's {:?}", cfg.indicator_levels);
        }
        if meas.n_latent() != params.latent.outputs() {
            bail!(Config, "measurement loadings do not match the number of latent variables");
        }
    }
    let finite = params.choice.beta.iter().chain(&params.latent.w1).chain(&params.latent.w2).all(|v| v.is_finite());
    if !finite {
        bail!(Config, "generating parameters contain non-finite values");
    }
    Ok(())
}

fn draw_socio(m: &SocioMarginal, rng: &mut ChaCha8Rng) -> Result<f64> {
    Ok(match m {
        SocioMarginal::Categorical { values, probs } => values[draw_index(probs, rng)?],
        SocioMarginal::Uniform { low, high } => rng.gen_range(*low..*high),
    })
}

fn draw_index(probs: &[f64], rng: &mut ChaCha8Rng) -> Result<usize> {
    let w = WeightedIndex::new(probs).map_err(|e| Error::NumericDomain(alloc::format!("categorical draw: {e}")))?;
    Ok(w.sample(rng))
}

fn attribute_row(cfg: &PopulationConfig, alt: usize, a: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let j = cfg.alternatives;
    let mut row = vec![0.0; a];
    let last = alt == j - 1;
    if last && cfg.outside_option {
        return row;
    }
    if !last {
        row[alt] = 1.0;
    }
    let (lo, hi) = cfg.attribute_range;
    for v in &mut row[j - 1..] {
        *v = rng.gen_range(lo..hi);
    }
    row
}

/// Random generating parameters for `spec` on the design `cfg`.
///
/// `separation` scales the choice coefficients (uniform on
/// `[-separation, separation]`) and the class intercepts; the network and
/// loadings get unit-scale weights so the latent variables carry signal.
pub fn random_generator(cfg: &PopulationConfig, spec: &ModelSpec, separation: f64, seed: u64) -> Result<ParameterSet> {
    cfg.validate()?;
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = cfg.socio.len();
    let choice = ChoiceParams::random(spec.k, cfg.n_attributes(), separation, &mut rng);
    let m_mem = spec.membership_columns.as_ref().map_or(m, Vec::len);
    let m_net = spec.network_columns.as_ref().map_or(m, Vec::len);
    let mut membership = MembershipParams::random(spec.k, m_mem, spec.z, spec.use_omega, 1.0, &mut rng)
        .with_columns(spec.membership_columns.clone());
    for k in 0..spec.k - 1 {
        membership.asc[k] = rng.gen_range(-0.5..0.5);
    }
    let mut latent = LatentNetWeights::zeros(m_net, spec.h, spec.z);
    latent.w1.iter_mut().chain(latent.w2.iter_mut()).for_each(|w| *w = rng.gen_range(-1.0..1.0));
    let measurement = spec.uses_latent_structure().then(|| {
        let mut meas = MeasurementParams::new(&cfg.indicator_levels, spec.z, spec.use_omega);
        meas.alpha.iter_mut().for_each(|a| *a = rng.gen_range(1.0..2.0) * if rng.gen::<bool>() { 1.0 } else { -1.0 });
        if spec.use_omega {
            meas.c.iter_mut().for_each(|c| *c = rng.gen_range(0.5..1.5));
        }
        meas
    });
    let params = ParameterSet {
        membership,
        choice,
        latent,
        network_columns: spec.network_columns.clone(),
        omega: OmegaWeights::empty(),
        measurement,
        spec_hash: spec.fingerprint(),
    };
    check_generator(cfg, &params)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::ordinal_probs;

    fn single_class(beta: Vec<f64>) -> ParameterSet {
        ParameterSet {
            membership: MembershipParams::zeros(1, 0, 0, false).with_columns(Some(Vec::new())),
            choice: ChoiceParams::from_rows(&[beta]).unwrap(),
            latent: LatentNetWeights::zeros(0, 1, 0),
            network_columns: None,
            omega: OmegaWeights::empty(),
            measurement: None,
            spec_hash: 0,
        }
    }

    fn plain_cfg(n: usize, j: usize) -> PopulationConfig {
        PopulationConfig {
            individuals: n,
            socio: Vec::new(),
            tasks: 1,
            alternatives: j,
            generic_attributes: 0,
            outside_option: false,
            indicator_levels: Vec::new(),
            omega_sd: 0.0,
            ..PopulationConfig::default()
        }
    }

    #[test]
    fn dominant_alternative_is_almost_always_chosen() {
        let (d, _) = generate(&plain_cfg(20_000, 2), &single_class(vec![50.0]), 1).unwrap();
        let hits = d.individuals.iter().filter(|i| i.tasks[0].chosen == 0).count();
        assert!(hits as f64 / 20_000.0 > 0.9999);
    }

    #[test]
    fn choice_frequencies_match_probabilities() {
        // ASCs relative to the last alternative reproduce [0.2, 0.3, 0.5].
        let beta = vec![libm::log(0.2 / 0.5), libm::log(0.3 / 0.5)];
        let (d, _) = generate(&plain_cfg(100_000, 3), &single_class(beta), 2).unwrap();
        let mut counts = [0usize; 3];
        d.individuals.iter().for_each(|i| counts[i.tasks[0].chosen] += 1);
        for (c, p) in counts.iter().zip([0.2, 0.3, 0.5]) {
            assert!((*c as f64 / 1e5 - p).abs() < 0.005, "{counts:?}");
        }
    }

    #[test]
    fn indicator_frequencies_match_probabilities() {
        let mut ps = single_class(vec![0.0]);
        let thresholds = [vec![0.0, 0.7, 1.5, 2.2]];
        ps.measurement = Some(MeasurementParams::from_thresholds(vec![], vec![0.0], &thresholds, 0, false).unwrap());
        let cfg = PopulationConfig { indicator_levels: vec![5], ..plain_cfg(50_000, 2) };
        let (d, _) = generate(&cfg, &ps, 3).unwrap();
        let mut counts = [0usize; 5];
        d.individuals.iter().for_each(|i| counts[i.indicators.as_ref().unwrap()[0] as usize - 1] += 1);
        let want = ordinal_probs(0.0, &thresholds[0]).unwrap();
        let mut chi2 = 0.0;
        for (c, p) in counts.iter().zip(&want) {
            assert!((*c as f64 / 5e4 - p).abs() < 0.01);
            let e = p * 5e4;
            chi2 += (*c as f64 - e).powi(2) / e;
        }
        // 0.999 quantile of chi-square with 4 degrees of freedom.
        assert!(chi2 < 18.467, "chi2 = {chi2}");
    }

    #[test]
    fn seeds_are_deterministic() {
        let cfg = PopulationConfig { individuals: 50, ..PopulationConfig::default() };
        let spec = ModelSpec { k: 2, z: 2, h: 3, ..ModelSpec::default() };
        let gen = random_generator(&cfg, &spec, 1.5, 9).unwrap();
        let a = generate(&cfg, &gen, 4).unwrap();
        let b = generate(&cfg, &gen, 4).unwrap();
        assert_eq!(a, b);
        let c = generate(&cfg, &gen, 5).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn per_individual_streams_do_not_depend_on_population_size() {
        let spec = ModelSpec { k: 2, z: 1, h: 2, ..ModelSpec::default() };
        let small = PopulationConfig { individuals: 10, ..PopulationConfig::default() };
        let large = PopulationConfig { individuals: 30, ..PopulationConfig::default() };
        let gen = random_generator(&small, &spec, 1.0, 1).unwrap();
        let (a, _) = generate(&small, &gen, 7).unwrap();
        let (b, _) = generate(&large, &gen, 7).unwrap();
        assert_eq!(a.individuals[..], b.individuals[..10]);
    }

    #[test]
    fn outside_option_rows_are_zero() {
        let cfg = PopulationConfig { individuals: 20, ..PopulationConfig::default() };
        let spec = ModelSpec { k: 2, z: 0, use_omega: false, ..ModelSpec::default() };
        let gen = random_generator(&cfg, &spec, 1.0, 1).unwrap();
        let (d, _) = generate(&cfg, &gen, 1).unwrap();
        for t in d.individuals.iter().flat_map(|i| &i.tasks) {
            assert!(t.alternatives[cfg.alternatives - 1].iter().all(|&v| v == 0.0));
            assert_eq!(t.alternatives[0][0], 1.0);
        }
    }

    #[test]
    fn invalid_generator_is_config_error() {
        let cfg = PopulationConfig::default();
        let mut ps = single_class(vec![0.0; 2]);
        ps.membership = MembershipParams::zeros(2, 2, 0, false);
        ps.membership.asc[1] = 1.0;
        assert!(matches!(generate(&cfg, &ps, 0), Err(Error::Config(_))));
    }
}
