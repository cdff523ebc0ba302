//! Ordinal measurement model for Likert indicators.
//!
//! Indicator `p` has index `V_pn = r_n . alpha_p + c_p omega_n` and response
//! probabilities from an ordered logit with cut points `tau^p`. The first
//! cut point of every indicator is pinned at zero and the rest are kept
//! strictly increasing by storing log-gaps:
//! `tau_l = sum_{j < l} exp(eta_j)`.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::Dataset;
use crate::em::{joint, ParameterSet, Parts};
use crate::error::{bail, Result};
use crate::latent_net::{LatentNetWeights, OmegaWeights};
use crate::numerics::{
    argmax, dot, logistic, logistic_density, ordinal_bounds, ordinal_level_log_prob, ordinal_level_prob, ordinal_probs,
};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MeasurementParams {
    z: usize,
    use_omega: bool,
    /// `P x Z` loadings, row-major.
    pub alpha: Vec<f64>,
    /// Individual-effect loading per indicator (zero when the effect is off).
    pub c: Vec<f64>,
    /// Per-indicator threshold log-gaps (length `L_p - 2`).
    pub log_gaps: Vec<Vec<f64>>,
}

/// Gradient of a measurement objective.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementGradient {
    pub alpha: Vec<f64>,
    pub c: Vec<f64>,
    /// With respect to the log-gaps.
    pub log_gaps: Vec<Vec<f64>>,
    /// With respect to the thresholds themselves (entry 0 belongs to the
    /// pinned first cut point).
    pub thresholds: Vec<Vec<f64>>,
}

impl MeasurementParams {
    /// Zero loadings with unit-spaced thresholds `0, 1, 2, ...`.
    pub fn new(levels: &[usize], z: usize, use_omega: bool) -> Self {
        Self {
            z,
            use_omega,
            alpha: vec![0.0; levels.len() * z],
            c: vec![0.0; levels.len()],
            log_gaps: levels.iter().map(|&l| vec![0.0; l.saturating_sub(2)]).collect(),
        }
    }

    pub fn random<R: Rng + ?Sized>(levels: &[usize], z: usize, use_omega: bool, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::new(levels, z, use_omega);
        p.alpha.iter_mut().for_each(|v| *v = rng.gen_range(-scale..=scale));
        if use_omega {
            p.c.iter_mut().for_each(|v| *v = rng.gen_range(-scale..=scale));
        }
        p
    }

    /// Builds parameters from explicit cut points. Each vector must start at
    /// exactly zero and increase strictly.
    pub fn from_thresholds(alpha: Vec<f64>, c: Vec<f64>, thresholds: &[Vec<f64>], z: usize, use_omega: bool) -> Result<Self> {
        let p = thresholds.len();
        if alpha.len() != p * z || c.len() != p {
            bail!(Contract, "measurement shapes do not match {p} indicators and {z} latent variables");
        }
        if !use_omega && c.iter().any(|&v| v != 0.0) {
            bail!(Contract, "indicator omega loadings set while the individual effect is off");
        }
        let mut log_gaps = Vec::with_capacity(p);
        for (i, t) in thresholds.iter().enumerate() {
            if t.is_empty() || t[0] != 0.0 {
                bail!(Contract, "indicator {i}: first threshold must be exactly 0");
            }
            let mut gaps = Vec::with_capacity(t.len() - 1);
            for w in t.windows(2) {
                if !(w[1] > w[0]) {
                    bail!(NumericDomain, "indicator {i}: thresholds must be strictly increasing");
                }
                gaps.push(libm::log(w[1] - w[0]));
            }
            log_gaps.push(gaps);
        }
        Ok(Self { z, use_omega, alpha, c, log_gaps })
    }

    pub fn n_indicators(&self) -> usize {
        self.c.len()
    }

    pub fn n_latent(&self) -> usize {
        self.z
    }

    pub fn uses_omega(&self) -> bool {
        self.use_omega
    }

    pub fn levels(&self, p: usize) -> usize {
        self.log_gaps[p].len() + 2
    }

    pub fn loading(&self, p: usize) -> &[f64] {
        &self.alpha[p * self.z..(p + 1) * self.z]
    }

    /// Cut points `tau^p` (length `L_p - 1`, first entry exactly 0).
    pub fn thresholds(&self, p: usize) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.log_gaps[p].len() + 1);
        let mut acc = 0.0;
        t.push(acc);
        for e in &self.log_gaps[p] {
            acc += libm::exp(*e);
            t.push(acc);
        }
        t
    }

    #[inline]
    pub fn index(&self, p: usize, r: &[f64], omega: f64) -> f64 {
        dot(self.loading(p), r) + self.c[p] * omega
    }

    pub fn n_free(&self) -> usize {
        self.alpha.len() + if self.use_omega { self.c.len() } else { 0 } + self.log_gaps.iter().map(Vec::len).sum::<usize>()
    }

    /// Appends alpha, then `c` (when the effect is on), then all log-gaps.
    pub fn pack_free(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.alpha);
        if self.use_omega {
            out.extend_from_slice(&self.c);
        }
        for g in &self.log_gaps {
            out.extend_from_slice(g);
        }
    }

    pub fn unpack_free(&mut self, x: &[f64]) -> usize {
        let mut i = self.alpha.len();
        self.alpha.copy_from_slice(&x[..i]);
        if self.use_omega {
            let n = self.c.len();
            self.c.copy_from_slice(&x[i..i + n]);
            i += n;
        }
        for g in &mut self.log_gaps {
            let n = g.len();
            g.copy_from_slice(&x[i..i + n]);
            i += n;
        }
        i
    }

    pub(crate) fn zero_gradient(&self) -> MeasurementGradient {
        MeasurementGradient {
            alpha: vec![0.0; self.alpha.len()],
            c: vec![0.0; self.c.len()],
            log_gaps: self.log_gaps.iter().map(|g| vec![0.0; g.len()]).collect(),
            thresholds: self.log_gaps.iter().map(|g| vec![0.0; g.len() + 1]).collect(),
        }
    }

    /// Adds the gradient of `sum_p log P(response_p)` for one individual and
    /// returns `(value, d/domega)`; `d/dr` is added into `upstream_r`.
    /// Threshold gradients land in `grad.thresholds`; call
    /// [`finish_gradient`](Self::finish_gradient) once all individuals are in.
    pub(crate) fn accumulate(
        &self,
        r: &[f64],
        omega: f64,
        responses: &[u8],
        grad: &mut MeasurementGradient,
        upstream_r: &mut [f64],
        tau_scratch: &mut Vec<Vec<f64>>,
    ) -> (f64, f64) {
        if tau_scratch.len() != self.n_indicators() {
            *tau_scratch = (0..self.n_indicators()).map(|p| self.thresholds(p)).collect();
        }
        let mut value = 0.0;
        let mut upstream_omega = 0.0;
        for (p, &resp) in responses.iter().enumerate() {
            let tau = &tau_scratch[p];
            let level = resp as usize - 1;
            let v = self.index(p, r, omega);
            let (lo, hi) = ordinal_bounds(v, tau, level);
            value += ordinal_level_log_prob(v, tau, level);
            // d log P / d hi and d log P / d lo
            let (d_hi, d_lo) = match (lo.is_infinite(), hi.is_infinite()) {
                (true, true) => (0.0, 0.0),
                (true, false) => (logistic(-hi), 0.0),
                (false, true) => (0.0, -logistic(lo)),
                (false, false) => {
                    let prob = ordinal_level_prob(v, tau, level);
                    (logistic_density(hi) / prob, -logistic_density(lo) / prob)
                }
            };
            let g_v = -(d_hi + d_lo);
            for (g, x) in grad.alpha[p * self.z..(p + 1) * self.z].iter_mut().zip(r) {
                *g += g_v * x;
            }
            for (u, a) in upstream_r.iter_mut().zip(self.loading(p)) {
                *u += g_v * a;
            }
            if self.use_omega {
                grad.c[p] += g_v * omega;
            }
            upstream_omega += g_v * self.c[p];
            if !hi.is_infinite() {
                grad.thresholds[p][level] += d_hi;
            }
            if !lo.is_infinite() {
                grad.thresholds[p][level - 1] += d_lo;
            }
        }
        (value, upstream_omega)
    }

    /// Chains the accumulated threshold gradients to the log-gaps.
    pub(crate) fn finish_gradient(&self, grad: &mut MeasurementGradient) {
        for (p, gaps) in self.log_gaps.iter().enumerate() {
            let dt = &grad.thresholds[p];
            let mut tail = 0.0;
            for j in (0..gaps.len()).rev() {
                tail += dt[j + 1];
                grad.log_gaps[p][j] = libm::exp(gaps[j]) * tail;
            }
        }
    }
}

/// Response probabilities for indicator `p`.
pub fn indicator_probs(r: &[f64], omega: f64, p: usize, params: &MeasurementParams) -> Result<Vec<f64>> {
    if p >= params.n_indicators() {
        bail!(Contract, "indicator {p} out of range");
    }
    if r.len() != params.z {
        bail!(Contract, "expected {} latent variables, got {}", params.z, r.len());
    }
    ordinal_probs(params.index(p, r, omega), &params.thresholds(p))
}

/// Gradients of the measurement objective.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementObjectiveGradient {
    pub measurement: MeasurementGradient,
    pub latent: LatentNetWeights,
    pub omega: Vec<f64>,
}

/// `sum_n sum_p log P(I_pn = observed)` with exact gradients for the
/// loadings, free thresholds, and (by the chain rule) the network and
/// individual-effect weights. Every individual must carry responses.
pub fn measurement_mstep_objective(
    dataset: &Dataset,
    latent: &LatentNetWeights,
    network_columns: Option<&[usize]>,
    omega: &OmegaWeights,
    params: &MeasurementParams,
) -> Result<(f64, MeasurementObjectiveGradient)> {
    let k = 1;
    let membership = crate::membership::MembershipParams::zeros(k, 0, 0, false);
    let eval =
        joint::evaluate(dataset, None, &membership, latent, network_columns, omega, Some(params), Parts::MEASUREMENT)?;
    Ok((
        eval.value,
        MeasurementObjectiveGradient {
            measurement: eval.measurement.expect("measurement part requested"),
            latent: eval.latent,
            omega: eval.omega,
        },
    ))
}

/// Accuracy of the modal predicted level, averaged over every
/// (individual, indicator) pair with a response. Ties go to the lower level.
pub fn indicator_accuracy(dataset: &Dataset, params: &ParameterSet) -> Result<f64> {
    let Some(meas) = &params.measurement else {
        bail!(Contract, "model has no measurement component");
    };
    let mut hits = 0usize;
    let mut total = 0usize;
    let taus: Vec<Vec<f64>> = (0..meas.n_indicators()).map(|p| meas.thresholds(p)).collect();
    for ind in &dataset.individuals {
        let Some(resp) = &ind.indicators else { continue };
        let r = params.latent_for(&ind.socio);
        let omega = params.omega.forward(ind.id).value;
        for (p, &obs) in resp.iter().enumerate() {
            let v = meas.index(p, &r, omega);
            let probs: Vec<f64> = (0..taus[p].len() + 1).map(|l| ordinal_level_prob(v, &taus[p], l)).collect();
            if argmax(&probs) + 1 == obs as usize {
                hits += 1;
            }
            total += 1;
        }
    }
    if total == 0 {
        bail!(Contract, "no indicator responses to score");
    }
    Ok(hits as f64 / total as f64)
}
