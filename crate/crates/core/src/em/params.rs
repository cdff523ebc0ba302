use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::choice::ChoiceParams;
use crate::data::{Dataset, ModelSpec};
use crate::error::{bail, Result};
use crate::latent_net::{LatentNetWeights, OmegaValue, OmegaWeights};
use crate::measurement::{MeasurementGradient, MeasurementParams};
use crate::membership::{select_columns, MembershipParams};

/// Every unknown of the model.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ParameterSet {
    pub membership: MembershipParams,
    pub choice: ChoiceParams,
    pub latent: LatentNetWeights,
    /// Socio columns feeding the network; `None` means all of them.
    pub network_columns: Option<Vec<usize>>,
    pub omega: OmegaWeights,
    /// Present only when the model has latent variables or individual
    /// effects.
    pub measurement: Option<MeasurementParams>,
    /// [`ModelSpec::fingerprint`] of the estimating specification.
    pub spec_hash: u64,
}

/// Which sub-objectives take part in a joint evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Parts {
    pub membership: bool,
    pub measurement: bool,
}

impl Parts {
    pub const MEMBERSHIP: Parts = Parts { membership: true, measurement: false };
    pub const MEASUREMENT: Parts = Parts { membership: false, measurement: true };
    pub const BOTH: Parts = Parts { membership: true, measurement: true };
}

impl ParameterSet {
    /// Random starting values for `spec` on `dataset`.
    ///
    /// Choice coefficients are uniform on `[-1, 1]`; membership coefficients,
    /// individual effects and indicator loadings on `[-0.1, 0.1]`; network
    /// weights follow [`LatentNetWeights::random`]; thresholds start unit
    /// spaced.
    pub fn initialize<R: Rng + ?Sized>(dataset: &Dataset, spec: &ModelSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let m_total = dataset.n_socio();
        spec.check_columns(m_total)?;
        let m_mem = spec.membership_columns.as_ref().map_or(m_total, Vec::len);
        let m_net = spec.network_columns.as_ref().map_or(m_total, Vec::len);
        let a = dataset.n_attributes();

        let choice = ChoiceParams::random(spec.k, a, 1.0, rng);
        let membership = MembershipParams::random(spec.k, m_mem, spec.z, spec.use_omega, 0.1, rng)
            .with_columns(spec.membership_columns.clone());
        let latent = LatentNetWeights::random(m_net, spec.h, spec.z, rng);
        let omega = if spec.use_omega {
            let ids = dataset.individuals.iter().map(|i| i.id).collect();
            let w = (0..dataset.len()).map(|_| rng.gen_range(-0.1..=0.1)).collect();
            OmegaWeights::new(ids, w, spec.omega_fallback)?
        } else {
            OmegaWeights::empty()
        };
        let measurement = spec
            .uses_latent_structure()
            .then(|| MeasurementParams::random(&dataset.indicator_levels, spec.z, spec.use_omega, 0.1, rng));
        Ok(Self {
            membership,
            choice,
            latent,
            network_columns: spec.network_columns.clone(),
            omega,
            measurement,
            spec_hash: spec.fingerprint(),
        })
    }

    pub fn n_classes(&self) -> usize {
        self.choice.n_classes()
    }

    /// Latent variables for a full socio vector.
    pub fn latent_for(&self, socio: &[f64]) -> Vec<f64> {
        let q = select_columns(socio, self.network_columns.as_deref());
        self.latent.forward_cached(&q).r
    }

    pub fn omega_for(&self, id: usize) -> OmegaValue {
        self.omega.forward(id)
    }

    /// Count of free (unpinned) scalars.
    pub fn free_parameter_count(&self) -> usize {
        self.membership.n_free()
            + self.choice.beta.len()
            + self.latent.n_params()
            + self.omega.len()
            + self.measurement.as_ref().map_or(0, MeasurementParams::n_free)
    }

    /// Checks identification pins, finiteness and cross-block shapes.
    pub fn validate(&self) -> Result<()> {
        self.membership.check_pins()?;
        if self.membership.n_classes() != self.choice.n_classes() {
            bail!(Contract, "membership and choice disagree on the number of classes");
        }
        if self.membership.n_latent() != self.latent.outputs() {
            bail!(Contract, "membership expects {} latent variables, network produces {}", self.membership.n_latent(), self.latent.outputs());
        }
        // An empty lookup with the effect on is fine: a generator draws
        // effects per person, and unseen people take the fallback.
        if !self.membership.uses_omega() && !self.omega.is_empty() {
            bail!(Contract, "individual-effect weights given but the membership model has no individual effect");
        }
        if let Some(m) = &self.measurement {
            if m.n_latent() != self.latent.outputs() {
                bail!(Contract, "measurement loadings do not match the network output width");
            }
            for p in 0..m.n_indicators() {
                let t = m.thresholds(p);
                if t[0] != 0.0 || t.windows(2).any(|w| !(w[1] > w[0])) {
                    bail!(Contract, "indicator {p} thresholds lost their pin or ordering");
                }
            }
        }
        let all_finite = self.membership.asc.iter()
            .chain(&self.membership.gamma)
            .chain(&self.membership.delta)
            .chain(&self.membership.b)
            .chain(&self.choice.beta)
            .chain(&self.latent.w1)
            .chain(&self.latent.w2)
            .chain(&self.omega.w)
            .all(|v| v.is_finite())
            && self.measurement.as_ref().is_none_or(|m| {
                m.alpha.iter().chain(&m.c).chain(m.log_gaps.iter().flatten()).all(|v| v.is_finite())
            });
        if !all_finite {
            bail!(NumericDomain, "parameter set contains non-finite values");
        }
        Ok(())
    }

    /// Layout of the free parameters touched by the gradient M-step.
    pub fn joint_layout(&self, parts: Parts) -> JointLayout {
        let meas = if parts.measurement { self.measurement.as_ref() } else { None };
        let uses_omega = (parts.membership && self.membership.uses_omega()) || meas.is_some_and(|m| m.uses_omega());
        JointLayout {
            parts,
            n_membership: if parts.membership { self.membership.n_free() } else { 0 },
            n_w1: self.latent.w1.len(),
            n_w2: self.latent.w2.len(),
            n_omega: if uses_omega { self.omega.len() } else { 0 },
            n_measurement: meas.map_or(0, MeasurementParams::n_free),
            measurement_alpha: meas.map_or(0, |m| m.alpha.len()),
            measurement_c: meas.filter(|m| m.uses_omega()).map_or(0, |m| m.n_indicators()),
        }
    }

    pub fn pack_joint(&self, layout: &JointLayout) -> Vec<f64> {
        let mut x = Vec::with_capacity(layout.len());
        if layout.parts.membership {
            self.membership.pack_free(&mut x);
        }
        x.extend_from_slice(&self.latent.w1);
        x.extend_from_slice(&self.latent.w2);
        if layout.n_omega > 0 {
            x.extend_from_slice(&self.omega.w);
        }
        if layout.n_measurement > 0 {
            self.measurement.as_ref().expect("layout has measurement").pack_free(&mut x);
        }
        debug_assert_eq!(x.len(), layout.len());
        x
    }

    pub fn unpack_joint(&mut self, layout: &JointLayout, x: &[f64]) {
        debug_assert_eq!(x.len(), layout.len());
        let mut i = 0;
        if layout.parts.membership {
            i += self.membership.unpack_free(&x[i..]);
        }
        self.latent.w1.copy_from_slice(&x[i..i + layout.n_w1]);
        i += layout.n_w1;
        self.latent.w2.copy_from_slice(&x[i..i + layout.n_w2]);
        i += layout.n_w2;
        if layout.n_omega > 0 {
            self.omega.w.copy_from_slice(&x[i..i + layout.n_omega]);
            i += layout.n_omega;
        }
        if layout.n_measurement > 0 {
            self.measurement.as_mut().expect("layout has measurement").unpack_free(&x[i..]);
        }
    }

    /// Copy with the joint block replaced by `x`.
    pub fn with_joint(&self, layout: &JointLayout, x: &[f64]) -> Self {
        let mut p = self.clone();
        p.unpack_joint(layout, x);
        p
    }
}

/// Flat ordering of the gradient-M-step parameters: free membership
/// coefficients, first-layer weights, second-layer weights, individual
/// effects, then measurement loadings and threshold log-gaps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct JointLayout {
    pub parts: Parts,
    pub n_membership: usize,
    pub n_w1: usize,
    pub n_w2: usize,
    pub n_omega: usize,
    pub n_measurement: usize,
    measurement_alpha: usize,
    measurement_c: usize,
}

impl JointLayout {
    pub fn len(&self) -> usize {
        self.n_membership + self.n_w1 + self.n_w2 + self.n_omega + self.n_measurement
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn omega_range(&self) -> core::ops::Range<usize> {
        let start = self.n_membership + self.n_w1 + self.n_w2;
        start..start + self.n_omega
    }

    /// Packs structured gradients in layout order.
    pub fn pack_gradient(
        &self,
        membership: &MembershipParams,
        latent: &LatentNetWeights,
        omega: &[f64],
        measurement: Option<&MeasurementGradient>,
    ) -> Vec<f64> {
        let mut g = Vec::with_capacity(self.len());
        if self.parts.membership {
            membership.pack_free(&mut g);
        }
        g.extend_from_slice(&latent.w1);
        g.extend_from_slice(&latent.w2);
        if self.n_omega > 0 {
            g.extend_from_slice(omega);
        }
        if self.n_measurement > 0 {
            let m = measurement.expect("layout has measurement");
            g.extend_from_slice(&m.alpha[..self.measurement_alpha]);
            if self.measurement_c > 0 {
                g.extend_from_slice(&m.c);
            }
            for gaps in &m.log_gaps {
                g.extend_from_slice(gaps);
            }
        }
        debug_assert_eq!(g.len(), self.len());
        g
    }

    /// Diagonal preconditioner for gradient ascent: parameters shared by
    /// all `n` individuals move with the mean gradient, while each
    /// individual effect (touched by one individual only) keeps its own.
    pub fn ascent_scale(&self, n: usize) -> Vec<f64> {
        let shared = 1.0 / n.max(1) as f64;
        let mut s = vec![shared; self.len()];
        for i in self.omega_range() {
            s[i] = 1.0;
        }
        s
    }
}
