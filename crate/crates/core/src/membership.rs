//! Class-membership logit: `V_nk = ASC_k + Q_n gamma_k + r_n delta_k + omega_n b_k`,
//! with the last class as the zero-utility reference.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::Dataset;
use crate::em::{joint, Parts, PosteriorTable};
use crate::error::{bail, Result};
use crate::latent_net::{LatentNetWeights, OmegaWeights};
use crate::numerics::{dot, softmax_into};

/// Membership coefficients. Row `K - 1` of every block is the reference
/// class and stays exactly zero.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MembershipParams {
    k: usize,
    m: usize,
    z: usize,
    use_omega: bool,
    /// Socio columns entering the utility; `None` means all of them.
    pub columns: Option<Vec<usize>>,
    pub asc: Vec<f64>,
    /// `K x M`, row-major.
    pub gamma: Vec<f64>,
    /// `K x Z`, row-major.
    pub delta: Vec<f64>,
    pub b: Vec<f64>,
}

impl MembershipParams {
    pub fn zeros(k: usize, m: usize, z: usize, use_omega: bool) -> Self {
        Self {
            k,
            m,
            z,
            use_omega,
            columns: None,
            asc: vec![0.0; k],
            gamma: vec![0.0; k * m],
            delta: vec![0.0; k * z],
            b: vec![0.0; k],
        }
    }

    pub fn with_columns(mut self, columns: Option<Vec<usize>>) -> Self {
        self.columns = columns;
        self
    }

    /// Free entries drawn uniformly from `[-scale, scale]`.
    pub fn random<R: Rng + ?Sized>(k: usize, m: usize, z: usize, use_omega: bool, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(k, m, z, use_omega);
        let mut x = vec![0.0; p.n_free()];
        x.iter_mut().for_each(|v| *v = rng.gen_range(-scale..=scale));
        p.unpack_free(&x);
        p
    }

    pub fn n_classes(&self) -> usize {
        self.k
    }

    pub fn n_covariates(&self) -> usize {
        self.m
    }

    pub fn n_latent(&self) -> usize {
        self.z
    }

    pub fn uses_omega(&self) -> bool {
        self.use_omega
    }

    #[inline]
    pub fn gamma_at(&self, k: usize, m: usize) -> f64 {
        self.gamma[k * self.m + m]
    }

    #[inline]
    pub fn delta_at(&self, k: usize, z: usize) -> f64 {
        self.delta[k * self.z + z]
    }

    /// Free scalars per non-reference class.
    fn per_class(&self) -> usize {
        1 + self.m + self.z + usize::from(self.use_omega)
    }

    pub fn n_free(&self) -> usize {
        self.k.saturating_sub(1) * self.per_class()
    }

    /// Appends the free entries, class by class: ASC, gamma row, delta row,
    /// then `b` when the individual effect is on.
    pub fn pack_free(&self, out: &mut Vec<f64>) {
        for k in 0..self.k.saturating_sub(1) {
            out.push(self.asc[k]);
            out.extend_from_slice(&self.gamma[k * self.m..(k + 1) * self.m]);
            out.extend_from_slice(&self.delta[k * self.z..(k + 1) * self.z]);
            if self.use_omega {
                out.push(self.b[k]);
            }
        }
    }

    /// Inverse of [`pack_free`](Self::pack_free); returns the number of
    /// values consumed. Pinned entries are left untouched.
    pub fn unpack_free(&mut self, x: &[f64]) -> usize {
        let mut i = 0;
        for k in 0..self.k.saturating_sub(1) {
            self.asc[k] = x[i];
            i += 1;
            self.gamma[k * self.m..(k + 1) * self.m].copy_from_slice(&x[i..i + self.m]);
            i += self.m;
            self.delta[k * self.z..(k + 1) * self.z].copy_from_slice(&x[i..i + self.z]);
            i += self.z;
            if self.use_omega {
                self.b[k] = x[i];
                i += 1;
            }
        }
        i
    }

    /// Every reference-class entry (and `b` when the effect is off) is
    /// exactly zero.
    pub fn check_pins(&self) -> Result<()> {
        let r = self.k - 1;
        let pinned_ok = self.asc[r] == 0.0
            && self.b[r] == 0.0
            && self.gamma[r * self.m..].iter().all(|&v| v == 0.0)
            && self.delta[r * self.z..].iter().all(|&v| v == 0.0);
        if !pinned_ok {
            bail!(Contract, "reference class {r} membership coefficients must be exactly zero");
        }
        if !self.use_omega && self.b.iter().any(|&v| v != 0.0) {
            bail!(Contract, "individual-effect coefficients set while the effect is disabled");
        }
        Ok(())
    }

    pub(crate) fn check_shapes(&self, q: &[f64], r: &[f64]) -> Result<()> {
        if q.len() != self.m || r.len() != self.z {
            bail!(
                Contract,
                "membership expects {} covariates and {} latent variables, got {} and {}",
                self.m,
                self.z,
                q.len(),
                r.len()
            );
        }
        Ok(())
    }

    /// Selects this model's covariates from a full socio vector.
    pub fn covariates<'a>(&self, socio: &'a [f64]) -> alloc::borrow::Cow<'a, [f64]> {
        select_columns(socio, self.columns.as_deref())
    }

    /// Class utilities into `out` (length `K`).
    pub fn utilities_into(&self, q: &[f64], r: &[f64], omega: f64, out: &mut [f64]) {
        for k in 0..self.k {
            out[k] = self.asc[k]
                + dot(&self.gamma[k * self.m..(k + 1) * self.m], q)
                + dot(&self.delta[k * self.z..(k + 1) * self.z], r)
                + omega * self.b[k];
        }
    }

    /// Adds the gradient of `sum_k post_k log pi_k` for one individual into
    /// `grad` and returns `(value, d/dr, d/domega)`. `probs` must hold the
    /// class probabilities for this individual.
    pub(crate) fn accumulate(
        &self,
        q: &[f64],
        r: &[f64],
        omega: f64,
        post: &[f64],
        probs: &[f64],
        grad: &mut MembershipParams,
        upstream_r: &mut [f64],
    ) -> (f64, f64) {
        let mut value = 0.0;
        let mut upstream_omega = 0.0;
        for k in 0..self.k {
            if post[k] > 0.0 {
                value += post[k] * libm::log(probs[k]);
            }
            let e = post[k] - probs[k];
            for (u, d) in upstream_r.iter_mut().zip(&self.delta[k * self.z..(k + 1) * self.z]) {
                *u += e * d;
            }
            upstream_omega += e * self.b[k];
            if k + 1 == self.k {
                continue;
            }
            grad.asc[k] += e;
            for (g, x) in grad.gamma[k * self.m..(k + 1) * self.m].iter_mut().zip(q) {
                *g += e * x;
            }
            for (g, x) in grad.delta[k * self.z..(k + 1) * self.z].iter_mut().zip(r) {
                *g += e * x;
            }
            if self.use_omega {
                grad.b[k] += e * omega;
            }
        }
        (value, upstream_omega)
    }
}

pub(crate) fn select_columns<'a>(socio: &'a [f64], cols: Option<&[usize]>) -> alloc::borrow::Cow<'a, [f64]> {
    match cols {
        None => alloc::borrow::Cow::Borrowed(socio),
        Some(cols) => alloc::borrow::Cow::Owned(cols.iter().map(|&c| socio[c]).collect()),
    }
}

/// Class-membership probabilities for one individual.
pub fn class_probs(q: &[f64], r: &[f64], omega: f64, params: &MembershipParams) -> Result<Vec<f64>> {
    params.check_pins()?;
    params.check_shapes(q, r)?;
    if !omega.is_finite() || q.iter().chain(r).any(|v| !v.is_finite()) {
        bail!(NumericDomain, "class_probs inputs must be finite");
    }
    let mut v = vec![0.0; params.k];
    params.utilities_into(q, r, omega, &mut v);
    let mut p = vec![0.0; params.k];
    softmax_into(&v, &mut p);
    Ok(p)
}

/// Gradients of the membership M-step objective.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipGradient {
    pub params: MembershipParams,
    pub latent: LatentNetWeights,
    /// One entry per omega slot.
    pub omega: Vec<f64>,
}

/// Posterior-weighted class log-likelihood
/// `sum_n sum_k post_nk log pi_nk` with exact gradients for the membership
/// coefficients and, through `r_n` and `omega_n`, the network and
/// individual-effect weights.
///
/// `posteriors` rows align with `dataset.individuals`.
pub fn membership_mstep_objective(
    dataset: &Dataset,
    posteriors: &PosteriorTable,
    params: &MembershipParams,
    latent: &LatentNetWeights,
    network_columns: Option<&[usize]>,
    omega: &OmegaWeights,
) -> Result<(f64, MembershipGradient)> {
    params.check_pins()?;
    let eval = joint::evaluate(dataset, Some(posteriors), params, latent, network_columns, omega, None, Parts::MEMBERSHIP)?;
    Ok((eval.value, MembershipGradient { params: eval.membership, latent: eval.latent, omega: eval.omega }))
}
