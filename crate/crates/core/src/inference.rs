//! Post-estimation: standard errors, class profiles, latent-space export and
//! holdout metrics.
//!
//! Standard errors are block-wise. The full parameter vector carries one
//! individual effect per training individual, which makes a joint Hessian
//! ill-posed, so each block's errors are conditional on the other blocks
//! staying at their estimates.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use crate::baseline::{null_ll, NullModel};
use crate::choice::alt_probs;
use crate::data::Dataset;
use crate::em::{e_step, joint, unconditional_ll, ParameterSet, Parts, PosteriorTable};
use crate::error::{bail, Result};
use crate::measurement::MeasurementParams;
use crate::numerics::linalg::symmetric_pseudo_inverse;
use crate::numerics::{argmax, normal_two_sided_p};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum Block {
    /// Class-specific choice coefficients, from the observed choice
    /// log-likelihood.
    Choice,
    /// Class intercepts and covariate, latent-variable and individual-effect
    /// coefficients, from the observed choice log-likelihood.
    Membership,
    /// Loadings, individual-effect loadings and free thresholds, from the
    /// indicator log-likelihood.
    Measurement,
}

/// Addresses one scalar of the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRef {
    Beta { class: usize, attribute: usize },
    Asc { class: usize },
    Gamma { class: usize, covariate: usize },
    Delta { class: usize, latent: usize },
    B { class: usize },
    Alpha { indicator: usize, latent: usize },
    C { indicator: usize },
    /// Cut point `level` (0-based) of an indicator; level 0 is pinned.
    Tau { indicator: usize, level: usize },
}

impl ParamRef {
    pub fn block(&self) -> Block {
        match self {
            ParamRef::Beta { .. } => Block::Choice,
            ParamRef::Asc { .. } | ParamRef::Gamma { .. } | ParamRef::Delta { .. } | ParamRef::B { .. } => {
                Block::Membership
            }
            ParamRef::Alpha { .. } | ParamRef::C { .. } | ParamRef::Tau { .. } => Block::Measurement,
        }
    }

    pub fn label(&self) -> String {
        match *self {
            ParamRef::Beta { class, attribute } => format!("beta[{class},{attribute}]"),
            ParamRef::Asc { class } => format!("asc[{class}]"),
            ParamRef::Gamma { class, covariate } => format!("gamma[{class},{covariate}]"),
            ParamRef::Delta { class, latent } => format!("delta[{class},{latent}]"),
            ParamRef::B { class } => format!("b[{class}]"),
            ParamRef::Alpha { indicator, latent } => format!("alpha[{indicator},{latent}]"),
            ParamRef::C { indicator } => format!("c[{indicator}]"),
            ParamRef::Tau { indicator, level } => format!("tau[{indicator},{level}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub param: ParamRef,
    pub value: f64,
    pub std_error: f64,
    pub z: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockErrors {
    pub block: Block,
    pub estimates: Vec<Estimate>,
    /// Ratio of the largest to smallest absolute Hessian eigenvalue.
    pub condition_number: f64,
    /// True when some eigenvalues were dropped and the pseudo-inverse used.
    pub pseudo_inverse: bool,
    /// True when the negated Hessian has a non-positive eigenvalue, so the
    /// point is not a strict local maximum of this block.
    pub not_negative_definite: bool,
    /// Largest `|H_ij - H_ji| / max(1, |H_ij|)` of the raw estimate.
    pub asymmetry: f64,
}

impl BlockErrors {
    /// Whether the numbers deserve a warning in reports.
    pub fn ill_conditioned(&self) -> bool {
        self.pseudo_inverse || self.not_negative_definite || self.condition_number > 1e10
    }

    pub fn get(&self, param: ParamRef) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.param == param)
    }
}

/// Relative finite-difference step for the Hessian.
pub const HESSIAN_STEP: f64 = 1e-4;
/// Eigenvalues below this fraction of the largest are treated as zero.
pub const PINV_TOLERANCE: f64 = 1e-12;

/// Standard errors for every free scalar of `block`.
pub fn standard_errors(dataset: &Dataset, params: &ParameterSet, block: Block) -> Result<BlockErrors> {
    params.validate()?;
    let (x0, refs, gradient): (Vec<f64>, Vec<ParamRef>, GradFn<'_>) = match block {
        Block::Choice => choice_block(dataset, params),
        Block::Membership => membership_block(dataset, params),
        Block::Measurement => measurement_block(dataset, params)?,
    };
    let d = x0.len();
    if d == 0 {
        return Ok(BlockErrors {
            block,
            estimates: Vec::new(),
            condition_number: 1.0,
            pseudo_inverse: false,
            not_negative_definite: false,
            asymmetry: 0.0,
        });
    }
    let mut h = DMatrix::zeros(d, d);
    let mut x = x0.clone();
    for i in 0..d {
        let step = HESSIAN_STEP * libm::fmax(1.0, libm::fabs(x0[i]));
        x[i] = x0[i] + step;
        let gp = gradient(&x)?;
        x[i] = x0[i] - step;
        let gm = gradient(&x)?;
        x[i] = x0[i];
        for j in 0..d {
            h[(j, i)] = (gp[j] - gm[j]) / (2.0 * step);
        }
    }
    let mut asymmetry = 0.0f64;
    for i in 0..d {
        for j in 0..i {
            let a = libm::fabs(h[(i, j)] - h[(j, i)]) / libm::fmax(1.0, libm::fmax(libm::fabs(h[(i, j)]), libm::fabs(h[(j, i)])));
            asymmetry = asymmetry.max(a);
        }
    }
    if !(asymmetry <= 1e-6) {
        bail!(NumericDomain, "Hessian estimate is not symmetric (relative asymmetry {asymmetry:.3e})");
    }
    let info = (&h + h.transpose()) * -0.5;
    let inv = symmetric_pseudo_inverse(&info, PINV_TOLERANCE);
    let cov_eta = inv.inverse;

    // Thresholds are reported on their own scale; map the log-gap covariance
    // through the Jacobian of the cumulative-exponential transform.
    let (values, cov) = match block {
        Block::Measurement => threshold_transform(params, &refs, &x0, &cov_eta),
        _ => (x0.clone(), cov_eta),
    };
    let estimates = refs
        .iter()
        .enumerate()
        .map(|(i, &param)| {
            let var = cov[(i, i)];
            let se = if var > 0.0 { libm::sqrt(var) } else { f64::NAN };
            let z = values[i] / se;
            Estimate { param, value: values[i], std_error: se, z, p_value: normal_two_sided_p(z) }
        })
        .collect();
    Ok(BlockErrors {
        block,
        estimates,
        condition_number: inv.condition_number,
        pseudo_inverse: inv.dropped > 0,
        not_negative_definite: inv.min_eigenvalue <= 0.0,
        asymmetry,
    })
}

/// Standard error of a single scalar. Pinned identification entries are
/// rejected.
pub fn standard_error_of(dataset: &Dataset, params: &ParameterSet, param: ParamRef) -> Result<Estimate> {
    check_not_pinned(params, param)?;
    let errs = standard_errors(dataset, params, param.block())?;
    match errs.get(param) {
        Some(e) => Ok(e.clone()),
        None => bail!(Contract, "{} is not a parameter of this model", param.label()),
    }
}

fn check_not_pinned(params: &ParameterSet, param: ParamRef) -> Result<()> {
    let reference = params.n_classes() - 1;
    let pinned = match param {
        ParamRef::Asc { class } | ParamRef::B { class } => class == reference,
        ParamRef::Gamma { class, .. } | ParamRef::Delta { class, .. } => class == reference,
        ParamRef::Tau { level, .. } => level == 0,
        ParamRef::C { .. } => !params.membership.uses_omega(),
        _ => false,
    };
    if pinned {
        bail!(Contract, "{} is fixed for identification and has no standard error", param.label());
    }
    Ok(())
}

/// Current value of one scalar; cut points on their own scale.
pub fn value_of(params: &ParameterSet, param: ParamRef) -> Option<f64> {
    let mp = &params.membership;
    let k = mp.n_classes();
    let meas = params.measurement.as_ref();
    match param {
        ParamRef::Beta { class, attribute } => {
            (class < k && attribute < params.choice.n_attributes()).then(|| params.choice.class(class)[attribute])
        }
        ParamRef::Asc { class } => mp.asc.get(class).copied(),
        ParamRef::Gamma { class, covariate } => (class < k && covariate < mp.n_covariates()).then(|| mp.gamma_at(class, covariate)),
        ParamRef::Delta { class, latent } => (class < k && latent < mp.n_latent()).then(|| mp.delta_at(class, latent)),
        ParamRef::B { class } => mp.b.get(class).copied(),
        ParamRef::Alpha { indicator, latent } => {
            meas.filter(|m| indicator < m.n_indicators()).and_then(|m| m.loading(indicator).get(latent).copied())
        }
        ParamRef::C { indicator } => meas.and_then(|m| m.c.get(indicator).copied()),
        ParamRef::Tau { indicator, level } => {
            meas.filter(|m| indicator < m.n_indicators()).and_then(|m| m.thresholds(indicator).get(level).copied())
        }
    }
}

/// Free scalars of `block` with their values, in the order used by
/// [`standard_errors`].
pub fn free_parameters(params: &ParameterSet, block: Block) -> Vec<(ParamRef, f64)> {
    let refs = match block {
        Block::Choice => {
            let a = params.choice.n_attributes();
            (0..params.n_classes()).flat_map(|class| (0..a).map(move |attribute| ParamRef::Beta { class, attribute })).collect()
        }
        Block::Membership => membership_refs(params),
        Block::Measurement => params.measurement.as_ref().map_or_else(Vec::new, measurement_refs),
    };
    refs.into_iter().map(|r| (r, value_of(params, r).expect("reference built from this parameter set"))).collect()
}

fn measurement_refs(m: &MeasurementParams) -> Vec<ParamRef> {
    let mut refs = Vec::new();
    for indicator in 0..m.n_indicators() {
        refs.extend((0..m.n_latent()).map(|latent| ParamRef::Alpha { indicator, latent }));
    }
    if m.uses_omega() {
        refs.extend((0..m.n_indicators()).map(|indicator| ParamRef::C { indicator }));
    }
    for (indicator, gaps) in m.log_gaps.iter().enumerate() {
        refs.extend((1..=gaps.len()).map(|level| ParamRef::Tau { indicator, level }));
    }
    refs
}

type GradFn<'a> = alloc::boxed::Box<dyn Fn(&[f64]) -> Result<Vec<f64>> + 'a>;

fn choice_block<'a>(dataset: &'a Dataset, params: &'a ParameterSet) -> (Vec<f64>, Vec<ParamRef>, GradFn<'a>) {
    let k = params.n_classes();
    let a = params.choice.n_attributes();
    let refs = (0..k).flat_map(|class| (0..a).map(move |attribute| ParamRef::Beta { class, attribute })).collect();
    let grad = move |x: &[f64]| -> Result<Vec<f64>> {
        let mut p = params.clone();
        p.choice.beta.copy_from_slice(x);
        let post = e_step(dataset, &p)?;
        let mut g = vec![0.0; x.len()];
        for (n, ind) in dataset.individuals.iter().enumerate() {
            for c in 0..k {
                let w = post.row(n)[c];
                let beta = p.choice.class(c);
                for t in &ind.tasks {
                    let probs = alt_probs(t, beta)?;
                    for (j, alt) in t.alternatives.iter().enumerate() {
                        let e = w * (f64::from(u8::from(j == t.chosen)) - probs[j]);
                        for (i, xa) in alt.iter().enumerate() {
                            g[c * a + i] += e * xa;
                        }
                    }
                }
            }
        }
        Ok(g)
    };
    (params.choice.beta.clone(), refs, alloc::boxed::Box::new(grad))
}

fn membership_refs(params: &ParameterSet) -> Vec<ParamRef> {
    let mp = &params.membership;
    let mut refs = Vec::new();
    for class in 0..mp.n_classes() - 1 {
        refs.push(ParamRef::Asc { class });
        refs.extend((0..mp.n_covariates()).map(|covariate| ParamRef::Gamma { class, covariate }));
        refs.extend((0..mp.n_latent()).map(|latent| ParamRef::Delta { class, latent }));
        if mp.uses_omega() {
            refs.push(ParamRef::B { class });
        }
    }
    refs
}

fn membership_block<'a>(dataset: &'a Dataset, params: &'a ParameterSet) -> (Vec<f64>, Vec<ParamRef>, GradFn<'a>) {
    let mut x0 = Vec::new();
    params.membership.pack_free(&mut x0);
    let refs = membership_refs(params);
    let grad = move |x: &[f64]| -> Result<Vec<f64>> {
        let mut p = params.clone();
        p.membership.unpack_free(x);
        // Fisher's identity: the observed-likelihood gradient equals the
        // complete-data gradient weighted by the current posteriors.
        let post = e_step(dataset, &p)?;
        let e = joint::evaluate(
            dataset,
            Some(&post),
            &p.membership,
            &p.latent,
            p.network_columns.as_deref(),
            &p.omega,
            None,
            Parts::MEMBERSHIP,
        )?;
        let mut g = Vec::with_capacity(x.len());
        e.membership.pack_free(&mut g);
        Ok(g)
    };
    (x0, refs, alloc::boxed::Box::new(grad))
}

fn measurement_block<'a>(dataset: &'a Dataset, params: &'a ParameterSet) -> Result<(Vec<f64>, Vec<ParamRef>, GradFn<'a>)> {
    let Some(m) = params.measurement.as_ref() else {
        bail!(Contract, "model has no measurement component");
    };
    let mut x0 = Vec::new();
    m.pack_free(&mut x0);
    let refs = measurement_refs(m);
    let grad = move |x: &[f64]| -> Result<Vec<f64>> {
        let mut mp = params.measurement.clone().expect("checked above");
        mp.unpack_free(x);
        let e = joint::evaluate(
            dataset,
            None,
            &params.membership,
            &params.latent,
            params.network_columns.as_deref(),
            &params.omega,
            Some(&mp),
            Parts::MEASUREMENT,
        )?;
        let g = e.measurement.expect("measurement part requested");
        let mut out = Vec::with_capacity(x.len());
        out.extend_from_slice(&g.alpha);
        if mp.uses_omega() {
            out.extend_from_slice(&g.c);
        }
        for lg in &g.log_gaps {
            out.extend_from_slice(lg);
        }
        Ok(out)
    };
    Ok((x0, refs, alloc::boxed::Box::new(grad)))
}

/// Replaces log-gap coordinates by cut points (delta method).
fn threshold_transform(params: &ParameterSet, refs: &[ParamRef], x: &[f64], cov: &DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let d = x.len();
    let mut jac = DMatrix::<f64>::identity(d, d);
    let mut values = x.to_vec();
    let m = params.measurement.as_ref().expect("measurement block");
    let gap_start = refs.iter().position(|r| matches!(r, ParamRef::Tau { .. })).unwrap_or(d);
    let mut i = gap_start;
    for (p, gaps) in m.log_gaps.iter().enumerate() {
        let tau = m.thresholds(p);
        for l in 0..gaps.len() {
            values[i + l] = tau[l + 1];
            jac[(i + l, i + l)] = 0.0;
            for j in 0..=l {
                jac[(i + l, i + j)] = libm::exp(gaps[j]);
            }
        }
        i += gaps.len();
    }
    let cov_tau = &jac * cov * jac.transpose();
    (values, cov_tau)
}

/// Distribution of one socio column within each class.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProfile {
    pub column: usize,
    /// Distinct observed values, ascending.
    pub values: Vec<f64>,
    /// `rows[k][v]` = P(column = values[v] | class k).
    pub rows: Vec<Vec<f64>>,
    /// Classes whose total posterior mass is below 1e-8.
    pub degenerate: Vec<bool>,
    pub class_mass: Vec<f64>,
}

/// P(socio column = v | class k) by Bayes' rule over the posteriors, for
/// each requested categorical column.
pub fn class_profiles(dataset: &Dataset, posteriors: &PosteriorTable, columns: &[usize]) -> Result<Vec<ClassProfile>> {
    if posteriors.n_rows() != dataset.len() {
        bail!(Contract, "posterior table has {} rows, dataset {}", posteriors.n_rows(), dataset.len());
    }
    let k = posteriors.n_classes();
    let mass: Vec<f64> = (0..k).map(|c| posteriors.column(c).iter().sum()).collect();
    let mut out = Vec::with_capacity(columns.len());
    for &col in columns {
        if col >= dataset.n_socio() {
            bail!(Argument, "profile column {col} out of range ({} socio columns)", dataset.n_socio());
        }
        let mut values: Vec<f64> = dataset.individuals.iter().map(|i| i.socio[col]).collect();
        values.sort_by(f64::total_cmp);
        values.dedup();
        let mut rows = vec![vec![0.0; values.len()]; k];
        for (n, ind) in dataset.individuals.iter().enumerate() {
            let v = values.binary_search_by(|x| x.total_cmp(&ind.socio[col])).expect("value collected above");
            for c in 0..k {
                rows[c][v] += posteriors.row(n)[c];
            }
        }
        let degenerate: Vec<bool> = mass.iter().map(|&m| m < 1e-8).collect();
        for c in 0..k {
            if degenerate[c] {
                rows[c].iter_mut().for_each(|r| *r = f64::NAN);
            } else {
                rows[c].iter_mut().for_each(|r| *r /= mass[c]);
            }
        }
        out.push(ClassProfile { column: col, values, rows, degenerate, class_mass: mass.clone() });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRow {
    pub id: usize,
    pub r: Vec<f64>,
    pub omega: f64,
    /// The individual has no estimated effect and got the fallback.
    pub omega_fallback: bool,
    pub socio: Vec<f64>,
    pub indicators: Option<Vec<u8>>,
}

/// Latent variables and individual effects of every individual, with their
/// socio columns and responses, for external plotting.
pub fn export_latent_space(dataset: &Dataset, params: &ParameterSet) -> Result<Vec<LatentRow>> {
    dataset
        .individuals
        .iter()
        .map(|ind| {
            let q = crate::membership::select_columns(&ind.socio, params.network_columns.as_deref());
            let r = if params.latent.is_active() { crate::latent_net::forward_latent(&q, &params.latent)? } else { Vec::new() };
            let (omega, omega_fallback) = if params.omega.is_empty() {
                (0.0, false)
            } else {
                let o = params.omega.forward(ind.id);
                (o.value, o.fallback)
            };
            Ok(LatentRow { id: ind.id, r, omega, omega_fallback, socio: ind.socio.clone(), indicators: ind.indicators.clone() })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HoldoutMetrics {
    pub ll: f64,
    pub null_ll: f64,
    /// Share of tasks whose most probable alternative (class-mixed with the
    /// prior membership probabilities) was the chosen one.
    pub hit_rate: f64,
    pub n_tasks: usize,
    /// Individuals that used the individual-effect fallback.
    pub omega_fallbacks: usize,
}

/// Out-of-sample log-likelihood, null log-likelihood and hit rate.
pub fn evaluate_holdout(test: &Dataset, params: &ParameterSet, null: NullModel) -> Result<HoldoutMetrics> {
    let ll = unconditional_ll(test, params)?;
    let k = params.n_classes();
    let mut hits = 0usize;
    let mut n_tasks = 0usize;
    let mut fallbacks = 0usize;
    let mut util = vec![0.0; k];
    let mut pi = vec![0.0; k];
    for ind in &test.individuals {
        let r = params.latent_for(&ind.socio);
        let omega = if params.membership.uses_omega() {
            let o = params.omega_for(ind.id);
            fallbacks += usize::from(o.fallback);
            o.value
        } else {
            0.0
        };
        let q = params.membership.covariates(&ind.socio);
        params.membership.utilities_into(&q, &r, omega, &mut util);
        crate::numerics::softmax_into(&util, &mut pi);
        for t in &ind.tasks {
            let mut mix = vec![0.0; t.n_alternatives()];
            for c in 0..k {
                let probs = alt_probs(t, params.choice.class(c))?;
                for (m, p) in mix.iter_mut().zip(&probs) {
                    *m += pi[c] * p;
                }
            }
            hits += usize::from(argmax(&mix) == t.chosen);
            n_tasks += 1;
        }
    }
    Ok(HoldoutMetrics {
        ll,
        null_ll: null_ll(test, null),
        hit_rate: if n_tasks == 0 { 0.0 } else { hits as f64 / n_tasks as f64 },
        n_tasks,
        omega_fallbacks: fallbacks,
    })
}

#[cfg(test)]
mod tests;
