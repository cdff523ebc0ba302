//! Latent variables from socio-characteristics: a dense ReLU layer followed
//! by a linear output layer, plus the individual-effect layer that maps a
//! training individual's identity to a scalar weight.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{bail, Result};

/// Weights of the two dense layers.
///
/// `w1` is `H x (M + 1)` and `w2` is `Z x (H + 1)`, both row-major. Column 0
/// of each holds the intercept: the network input is augmented with a
/// leading constant 1 and the hidden layer with a leading always-on unit.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct LatentNetWeights {
    inputs: usize,
    hidden: usize,
    outputs: usize,
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
}

/// Intermediate values of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardCache {
    /// Hidden pre-activations (length `H`).
    pub pre: Vec<f64>,
    /// Latent variables (length `Z`).
    pub r: Vec<f64>,
}

#[inline]
fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

impl LatentNetWeights {
    /// All-zero weights. With `outputs == 0` the network is absent: it holds
    /// no weights and records no widths, so every absent network compares
    /// equal.
    pub fn zeros(inputs: usize, hidden: usize, outputs: usize) -> Self {
        if outputs == 0 {
            return Self { inputs: 0, hidden: 0, outputs: 0, w1: Vec::new(), w2: Vec::new() };
        }
        Self { inputs, hidden, outputs, w1: vec![0.0; hidden * (inputs + 1)], w2: vec![0.0; outputs * (hidden + 1)] }
    }

    /// Uniform on `[-0.1, 0.1]` scaled by `1 / sqrt(fan_in)`.
    pub fn random<R: Rng + ?Sized>(inputs: usize, hidden: usize, outputs: usize, rng: &mut R) -> Self {
        let mut w = Self::zeros(inputs, hidden, outputs);
        let s1 = 0.1 / libm::sqrt((inputs + 1) as f64);
        let s2 = 0.1 / libm::sqrt((hidden + 1) as f64);
        w.w1.iter_mut().for_each(|v| *v = rng.gen_range(-s1..=s1));
        w.w2.iter_mut().for_each(|v| *v = rng.gen_range(-s2..=s2));
        w
    }

    pub fn inputs(&self) -> usize {
        self.inputs
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn outputs(&self) -> usize {
        self.outputs
    }

    pub fn n_params(&self) -> usize {
        self.w1.len() + self.w2.len()
    }

    pub fn is_active(&self) -> bool {
        self.outputs > 0
    }

    #[inline]
    pub fn w1_at(&self, h: usize, m: usize) -> f64 {
        self.w1[h * (self.inputs + 1) + m]
    }

    #[inline]
    pub fn w2_at(&self, z: usize, h: usize) -> f64 {
        self.w2[z * (self.hidden + 1) + h]
    }

    fn check_input(&self, q: &[f64]) -> Result<()> {
        if q.len() != self.inputs {
            bail!(Contract, "network expects {} inputs, got {}", self.inputs, q.len());
        }
        Ok(())
    }

    /// Forward pass keeping the hidden pre-activations for backprop.
    /// Callers guarantee `q.len() == inputs`.
    pub fn forward_cached(&self, q: &[f64]) -> ForwardCache {
        if !self.is_active() {
            return ForwardCache { pre: Vec::new(), r: Vec::new() };
        }
        let stride1 = self.inputs + 1;
        let pre: Vec<f64> = (0..self.hidden)
            .map(|h| {
                let row = &self.w1[h * stride1..(h + 1) * stride1];
                row[0] + row[1..].iter().zip(q).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect();
        let stride2 = self.hidden + 1;
        let r = (0..self.outputs)
            .map(|z| {
                let row = &self.w2[z * stride2..(z + 1) * stride2];
                row[0] + row[1..].iter().zip(&pre).map(|(w, a)| w * relu(*a)).sum::<f64>()
            })
            .collect();
        ForwardCache { pre, r }
    }

    /// Accumulates `d objective / d weights` for one individual into `grad`
    /// given `upstream = d objective / d r`. The ReLU derivative at exactly
    /// zero is taken as zero.
    pub fn backward_accumulate(&self, q: &[f64], cache: &ForwardCache, upstream: &[f64], grad: &mut LatentNetWeights) {
        if !self.is_active() {
            return;
        }
        debug_assert_eq!(upstream.len(), self.outputs);
        let stride1 = self.inputs + 1;
        let stride2 = self.hidden + 1;
        for (z, &u) in upstream.iter().enumerate() {
            if u == 0.0 {
                continue;
            }
            let g = &mut grad.w2[z * stride2..(z + 1) * stride2];
            g[0] += u;
            for (gh, a) in g[1..].iter_mut().zip(&cache.pre) {
                *gh += u * relu(*a);
            }
        }
        for h in 0..self.hidden {
            if cache.pre[h] <= 0.0 {
                continue;
            }
            let delta: f64 = upstream.iter().enumerate().map(|(z, u)| u * self.w2_at(z, h + 1)).sum();
            if delta == 0.0 {
                continue;
            }
            let g = &mut grad.w1[h * stride1..(h + 1) * stride1];
            g[0] += delta;
            for (gm, x) in g[1..].iter_mut().zip(q) {
                *gm += delta * x;
            }
        }
    }

    /// Zeroed gradient container with the same shape.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.inputs, self.hidden, self.outputs)
    }
}

/// Latent variables `r_n` for one socio vector.
pub fn forward_latent(q: &[f64], weights: &LatentNetWeights) -> Result<Vec<f64>> {
    if !weights.is_active() {
        return Ok(Vec::new());
    }
    weights.check_input(q)?;
    Ok(weights.forward_cached(q).r)
}

/// Gradient of `upstream . r(q)` with respect to both weight matrices.
pub fn backward_latent(q: &[f64], weights: &LatentNetWeights, upstream: &[f64]) -> Result<LatentNetWeights> {
    if upstream.len() != weights.outputs() {
        bail!(Contract, "upstream has length {}, network has {} outputs", upstream.len(), weights.outputs());
    }
    let mut grad = weights.zeros_like();
    if !weights.is_active() {
        return Ok(grad);
    }
    weights.check_input(q)?;
    let cache = weights.forward_cached(q);
    weights.backward_accumulate(q, &cache, upstream, &mut grad);
    Ok(grad)
}

/// Value substituted for the individual effect of someone not in the
/// training set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize), serde(rename_all = "snake_case"))]
pub enum OmegaFallback {
    /// Prior mean.
    #[default]
    Zero,
    /// Mean of the fitted training weights.
    TrainMean,
}

/// One weight per training individual, looked up by individual id.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OmegaWeights {
    /// Individual ids in slot order.
    pub ids: Vec<usize>,
    pub w: Vec<f64>,
    pub fallback: OmegaFallback,
    #[cfg_attr(feature = "serde", serde(skip))]
    sorted: Vec<(usize, usize)>,
}

/// Result of an individual-effect lookup.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaValue {
    pub value: f64,
    /// True when the id was unknown and the fallback was used.
    pub fallback: bool,
}

impl OmegaWeights {
    pub fn new(ids: Vec<usize>, w: Vec<f64>, fallback: OmegaFallback) -> Result<Self> {
        if ids.len() != w.len() {
            bail!(Contract, "omega has {} ids but {} weights", ids.len(), w.len());
        }
        let mut sorted: Vec<(usize, usize)> = ids.iter().copied().enumerate().map(|(slot, id)| (id, slot)).collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|p| p[0].0 == p[1].0) {
            bail!(Contract, "omega ids must be unique");
        }
        Ok(Self { ids, w, fallback, sorted })
    }

    /// An inactive layer: no slots, every lookup returns 0.
    pub fn empty() -> Self {
        Self { ids: Vec::new(), w: Vec::new(), fallback: OmegaFallback::Zero, sorted: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.w.len()
    }

    pub fn is_empty(&self) -> bool {
        self.w.is_empty()
    }

    pub fn slot_of(&self, id: usize) -> Option<usize> {
        if self.sorted.len() != self.ids.len() {
            // deserialized without the index
            return self.ids.iter().position(|&i| i == id);
        }
        self.sorted.binary_search_by_key(&id, |&(i, _)| i).ok().map(|k| self.sorted[k].1)
    }

    /// Rebuilds the lookup index (needed after deserialization).
    pub fn reindex(&mut self) {
        self.sorted = self.ids.iter().copied().enumerate().map(|(slot, id)| (id, slot)).collect();
        self.sorted.sort_unstable();
    }

    fn fallback_value(&self) -> f64 {
        match self.fallback {
            OmegaFallback::Zero => 0.0,
            OmegaFallback::TrainMean if self.w.is_empty() => 0.0,
            OmegaFallback::TrainMean => self.w.iter().sum::<f64>() / self.w.len() as f64,
        }
    }

    /// `omega_n` for individual `id`.
    pub fn forward(&self, id: usize) -> OmegaValue {
        match self.slot_of(id) {
            Some(slot) => OmegaValue { value: self.w[slot], fallback: false },
            None => OmegaValue { value: self.fallback_value(), fallback: true },
        }
    }
}

/// Individual effect for `id`; unknown ids get the configured fallback.
pub fn forward_omega(id: usize, weights: &OmegaWeights) -> OmegaValue {
    weights.forward(id)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{check_gradient, FnObjective};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar-loop transcription of the network formula.
    fn oracle(q: &[f64], w: &LatentNetWeights) -> Vec<f64> {
        let (m, h, z) = (w.inputs(), w.hidden(), w.outputs());
        let mut qt = vec![1.0];
        qt.extend_from_slice(q);
        let mut out = vec![0.0; z];
        for zi in 0..z {
            let mut acc = w.w2_at(zi, 0);
            for hi in 0..h {
                let mut a = 0.0;
                for mi in 0..=m {
                    a += w.w1_at(hi, mi) * qt[mi];
                }
                acc += w.w2_at(zi, hi + 1) * if a > 0.0 { a } else { 0.0 };
            }
            out[zi] = acc;
        }
        out
    }

    fn random_weights(rng: &mut ChaCha8Rng, m: usize, h: usize, z: usize) -> LatentNetWeights {
        let mut w = LatentNetWeights::zeros(m, h, z);
        w.w1.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        w.w2.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        w
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let w = LatentNetWeights::zeros(3, 4, 2);
        assert_eq!(forward_latent(&[1.0, -2.0, 5.0], &w).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn nonnegative_weights_bypass_relu() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut w = random_weights(&mut rng, 3, 4, 2);
        w.w1.iter_mut().for_each(|v| *v = v.abs());
        w.w2.iter_mut().for_each(|v| *v = v.abs());
        let q = [0.5, 2.0, 1.0];
        let got = forward_latent(&q, &w).unwrap();
        for z in 0..2 {
            let mut lin = w.w2_at(z, 0);
            for h in 0..4 {
                let a = w.w1_at(h, 0) + (0..3).map(|m| w.w1_at(h, m + 1) * q[m]).sum::<f64>();
                lin += w.w2_at(z, h + 1) * a;
            }
            assert!((got[z] - lin).abs() < 1e-12);
        }
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let w = random_weights(&mut rng, 3, 4, 2);
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let got = forward_latent(&q, &w).unwrap();
            let want = oracle(&q, &w);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
            // bitwise determinism
            assert_eq!(got, forward_latent(&q, &w).unwrap());
        }
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let w = LatentNetWeights::zeros(3, 4, 2);
        assert!(matches!(forward_latent(&[1.0], &w), Err(crate::Error::Contract(_))));
        assert!(backward_latent(&[1.0, 2.0, 3.0], &w, &[1.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let w = random_weights(&mut rng, 3, 4, 2);
        let g = backward_latent(&[1.0, 2.0, 3.0], &w, &[0.0, 0.0]).unwrap();
        assert!(g.w1.iter().chain(&g.w2).all(|&v| v == 0.0));
    }

    #[test]
    fn single_unit_closed_form() {
        // H = 1, M = 1, Z = 1, positive pre-activation
        let mut w = LatentNetWeights::zeros(1, 1, 1);
        w.w1 = vec![0.3, 0.7];
        w.w2 = vec![-0.2, 1.5];
        let q = [2.0];
        let u = 0.8;
        let g = backward_latent(&q, &w, &[u]).unwrap();
        let a = 0.3 + 0.7 * 2.0;
        assert!((g.w1[0] - u * 1.5 * 1.0).abs() < 1e-15);
        assert!((g.w1[1] - u * 1.5 * 2.0).abs() < 1e-15);
        assert!((g.w2[0] - u).abs() < 1e-15);
        assert!((g.w2[1] - u * a).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..20 {
            let w = random_weights(&mut rng, 3, 4, 2);
            let q: Vec<f64> = (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let up: Vec<f64> = (0..2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n1 = w.w1.len();
            let unpack = |x: &[f64]| {
                let mut v = w.clone();
                v.w1.copy_from_slice(&x[..n1]);
                v.w2.copy_from_slice(&x[n1..]);
                v
            };
            let obj = FnObjective::new(
                w.n_params(),
                |x: &[f64]| forward_latent(&q, &unpack(x)).unwrap().iter().zip(&up).map(|(r, u)| r * u).sum(),
                |x: &[f64], g: &mut [f64]| {
                    let gr = backward_latent(&q, &unpack(x), &up).unwrap();
                    g[..n1].copy_from_slice(&gr.w1);
                    g[n1..].copy_from_slice(&gr.w2);
                },
            );
            let mut x = w.w1.clone();
            x.extend_from_slice(&w.w2);
            assert!(check_gradient(&obj, &x, 1e-6) < 1e-5);
        }
    }

    #[test]
    fn duplicated_hidden_units_aggregate() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut w = random_weights(&mut rng, 2, 3, 1);
        // make hidden rows 0 and 1 identical
        for m in 0..3 {
            w.w1[3 + m] = w.w1[m];
        }
        let q = [0.4, -1.1];
        let base = forward_latent(&q, &w).unwrap()[0];
        let total = w.w2[1] + w.w2[2];
        let mut moved = w.clone();
        moved.w2[1] = total * 0.25;
        moved.w2[2] = total * 0.75;
        assert!((forward_latent(&q, &moved).unwrap()[0] - base).abs() < 1e-12);
    }

    #[test]
    fn random_init_is_bounded_and_seeded() {
        let a = LatentNetWeights::random(3, 8, 2, &mut ChaCha8Rng::seed_from_u64(9));
        let b = LatentNetWeights::random(3, 8, 2, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
        assert!(a.w1.iter().all(|v| v.abs() <= 0.1 / 2.0));
        assert!(a.w2.iter().all(|v| v.abs() <= 0.1 / 3.0));
    }

    #[test]
    fn omega_lookup_and_fallback() {
        let zero = OmegaWeights::new(vec![3, 7, 11], vec![0.0; 3], OmegaFallback::Zero).unwrap();
        assert!([3, 7, 11].iter().all(|&n| forward_omega(n, &zero).value == 0.0));
        let w = OmegaWeights::new(vec![3, 7, 11], vec![1.0, 2.5, -0.5], OmegaFallback::Zero).unwrap();
        assert_eq!(forward_omega(7, &w), OmegaValue { value: 2.5, fallback: false });
        let unseen = forward_omega(99, &w);
        assert_eq!(unseen, OmegaValue { value: 0.0, fallback: true });
        let mean = OmegaWeights { fallback: OmegaFallback::TrainMean, ..w.clone() };
        assert!((forward_omega(99, &mean).value - 1.0).abs() < 1e-15);
        assert!(OmegaWeights::new(vec![1, 1], vec![0.0, 0.0], OmegaFallback::Zero).is_err());
    }
}
