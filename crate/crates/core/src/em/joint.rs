//! Joint evaluation of the membership and measurement objectives, which
//! share the network and individual-effect weights, and the gradient M-step
//! that maximizes their sum.

use alloc::vec;
use alloc::vec::Vec;

use super::params::{JointLayout, ParameterSet, Parts};
use super::PosteriorTable;
use crate::data::{JointSolver, ModelSpec};
use crate::data::Dataset;
use crate::error::{bail, Result};
use crate::latent_net::{LatentNetWeights, OmegaWeights};
use crate::measurement::{MeasurementGradient, MeasurementParams};
use crate::membership::{select_columns, MembershipParams};
use crate::numerics::{bfgs_maximize, inf_norm, softmax_into, BfgsOptions, Objective};

pub(crate) struct JointEval {
    pub value: f64,
    pub measurement_value: f64,
    pub membership: MembershipParams,
    pub latent: LatentNetWeights,
    pub omega: Vec<f64>,
    pub measurement: Option<MeasurementGradient>,
}

/// Value and gradient of `parts` summed over `dataset`. Posterior rows align
/// with `dataset.individuals`; gradient slots for the individual effects
/// follow `omega`'s slot order, and individuals without a slot contribute
/// no omega gradient.
#[allow(clippy::too_many_arguments)]
pub(crate) fn evaluate(
    dataset: &Dataset,
    posteriors: Option<&PosteriorTable>,
    membership: &MembershipParams,
    latent: &LatentNetWeights,
    network_columns: Option<&[usize]>,
    omega: &OmegaWeights,
    measurement: Option<&MeasurementParams>,
    parts: Parts,
) -> Result<JointEval> {
    let k = membership.n_classes();
    let post = if parts.membership {
        let Some(post) = posteriors else {
            bail!(Contract, "membership objective needs posteriors");
        };
        if post.n_rows() != dataset.len() || post.n_classes() != k {
            bail!(Contract, "posterior table is {}x{}, expected {}x{k}", post.n_rows(), post.n_classes(), dataset.len());
        }
        Some(post)
    } else {
        None
    };
    let meas = if parts.measurement {
        let Some(m) = measurement else {
            bail!(Contract, "measurement objective needs measurement parameters");
        };
        Some(m)
    } else {
        None
    };

    let mut g_mem = MembershipParams::zeros(k, membership.n_covariates(), membership.n_latent(), membership.uses_omega());
    let mut g_lat = latent.zeros_like();
    let mut g_omega = vec![0.0; omega.len()];
    let mut g_meas = meas.map(MeasurementParams::zero_gradient);
    let mut tau_scratch = Vec::new();
    let mut util = vec![0.0; k];
    let mut probs = vec![0.0; k];
    let mut upstream = vec![0.0; latent.outputs()];
    let (mut v_mem, mut v_meas) = (0.0, 0.0);

    for (n, ind) in dataset.individuals.iter().enumerate() {
        let q_net = select_columns(&ind.socio, network_columns);
        if latent.is_active() && q_net.len() != latent.inputs() {
            bail!(Contract, "network expects {} inputs, individual {} provides {}", latent.inputs(), ind.id, q_net.len());
        }
        let cache = latent.forward_cached(&q_net);
        let slot = omega.slot_of(ind.id);
        let w = omega.forward(ind.id).value;
        upstream.iter_mut().for_each(|u| *u = 0.0);
        let mut up_omega = 0.0;

        if let Some(post) = post {
            let q_mem = membership.covariates(&ind.socio);
            membership.check_shapes(&q_mem, &cache.r)?;
            membership.utilities_into(&q_mem, &cache.r, w, &mut util);
            softmax_into(&util, &mut probs);
            let (v, u) = membership.accumulate(&q_mem, &cache.r, w, post.row(n), &probs, &mut g_mem, &mut upstream);
            v_mem += v;
            up_omega += u;
        }
        if let (Some(m), Some(g)) = (meas, g_meas.as_mut()) {
            let Some(resp) = &ind.indicators else {
                bail!(Contract, "individual {} has no indicator responses", ind.id);
            };
            if resp.len() != m.n_indicators() {
                bail!(Contract, "individual {} has {} responses, model has {} indicators", ind.id, resp.len(), m.n_indicators());
            }
            if let Some(p) = resp.iter().enumerate().position(|(p, &l)| l == 0 || l as usize > m.levels(p)) {
                bail!(Range, "individual {} indicator {p} response outside its levels", ind.id);
            }
            let (v, u) = m.accumulate(&cache.r, w, resp, g, &mut upstream, &mut tau_scratch);
            v_meas += v;
            up_omega += u;
        }
        latent.backward_accumulate(&q_net, &cache, &upstream, &mut g_lat);
        if let Some(s) = slot {
            g_omega[s] += up_omega;
        }
    }
    if let (Some(m), Some(g)) = (meas, g_meas.as_mut()) {
        m.finish_gradient(g);
    }
    Ok(JointEval {
        value: v_mem + v_meas,
        measurement_value: v_meas,
        membership: g_mem,
        latent: g_lat,
        omega: g_omega,
        measurement: g_meas,
    })
}

/// The gradient-M-step objective over the flat joint layout.
pub(crate) struct JointObjective<'a> {
    pub dataset: &'a Dataset,
    pub posteriors: Option<&'a PosteriorTable>,
    pub base: &'a ParameterSet,
    pub layout: JointLayout,
}

impl JointObjective<'_> {
    fn eval(&self, x: &[f64]) -> Result<(ParameterSet, JointEval)> {
        let p = self.base.with_joint(&self.layout, x);
        let e = evaluate(
            self.dataset,
            self.posteriors,
            &p.membership,
            &p.latent,
            p.network_columns.as_deref(),
            &p.omega,
            p.measurement.as_ref(),
            self.layout.parts,
        )?;
        Ok((p, e))
    }
}

impl Objective for JointObjective<'_> {
    fn dim(&self) -> usize {
        self.layout.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.eval(x).map_or(f64::NAN, |(_, e)| e.value)
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        match self.eval(x) {
            Ok((_, e)) => {
                let g = self.layout.pack_gradient(&e.membership, &e.latent, &e.omega, e.measurement.as_ref());
                grad.copy_from_slice(&g);
                e.value
            }
            Err(_) => {
                grad.iter_mut().for_each(|g| *g = 0.0);
                f64::NAN
            }
        }
    }
}

/// Outcome of one gradient M-step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointStep {
    pub value_before: f64,
    pub value_after: f64,
    pub steps: usize,
    pub grad_norm: f64,
    pub converged: bool,
}

/// Maximizes the membership + measurement objective over the joint layout.
///
/// Gradient ascent takes steps of `spec.gradient_step` along the
/// preconditioned gradient (see [`JointLayout::ascent_scale`]), halving the
/// step until the objective does not decrease. The BFGS solver uses the same
/// tolerance and step cap.
pub(crate) fn joint_mstep(
    dataset: &Dataset,
    posteriors: &PosteriorTable,
    params: &ParameterSet,
    parts: Parts,
    spec: &ModelSpec,
) -> Result<(ParameterSet, JointStep)> {
    let layout = params.joint_layout(parts);
    let obj = JointObjective { dataset, posteriors: Some(posteriors), base: params, layout };
    let x0 = params.pack_joint(&layout);
    let mut g = vec![0.0; x0.len()];
    let f0 = obj.value_and_gradient(&x0, &mut g);
    if !f0.is_finite() {
        bail!(Estimation, "joint M-step objective is not finite at the current parameters");
    }
    if layout.is_empty() {
        return Ok((params.clone(), JointStep { value_before: f0, value_after: f0, steps: 0, grad_norm: 0.0, converged: true }));
    }

    let (x, f, steps, gnorm) = match spec.joint_solver {
        JointSolver::Bfgs => {
            let out = bfgs_maximize(&obj, &x0, &BfgsOptions::new(spec.gradient_tol, spec.gradient_max_steps));
            (out.x, out.value, out.iterations, out.grad_norm)
        }
        JointSolver::GradientAscent => {
            let scale = layout.ascent_scale(dataset.len());
            let mut x = x0;
            let mut f = f0;
            let mut g_new = vec![0.0; x.len()];
            let mut x_new = vec![0.0; x.len()];
            let mut steps = 0;
            'outer: while steps < spec.gradient_max_steps {
                if inf_norm(&g) < spec.gradient_tol {
                    break;
                }
                let mut eta = spec.gradient_step;
                loop {
                    for i in 0..x.len() {
                        x_new[i] = x[i] + eta * scale[i] * g[i];
                    }
                    let f_new = obj.value_and_gradient(&x_new, &mut g_new);
                    if f_new.is_finite() && f_new >= f {
                        core::mem::swap(&mut x, &mut x_new);
                        core::mem::swap(&mut g, &mut g_new);
                        f = f_new;
                        break;
                    }
                    eta *= 0.5;
                    if eta < 1e-16 {
                        break 'outer;
                    }
                }
                steps += 1;
            }
            (x, f, steps, inf_norm(&g))
        }
    };
    if !f.is_finite() || x.iter().any(|v| !v.is_finite()) {
        bail!(Estimation, "joint M-step produced non-finite parameters");
    }
    let updated = params.with_joint(&layout, &x);
    Ok((updated, JointStep { value_before: f0, value_after: f, steps, grad_norm: gnorm, converged: gnorm < spec.gradient_tol }))
}
