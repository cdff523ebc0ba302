//! Shared numerical kernels.
//!
//! Everything here is pure and reentrant. The extreme-value error terms of
//! the random-utility sub-models never appear explicitly: they only enter
//! through the closed-form logit and ordinal-logit probabilities below.

mod bfgs;
mod gradcheck;
pub(crate) mod linalg;

use alloc::vec::Vec;

use crate::error::{bail, Result};

pub use bfgs::{bfgs_maximize, BfgsOptions, BfgsOutcome};
pub use gradcheck::{check_gradient, central_difference};

/// A smooth scalar objective with an analytic gradient.
pub trait Objective {
    /// Number of free coordinates.
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// Writes the gradient at `x` into `grad` and returns the value.
    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64;
}

/// Adapts a pair of closures to [`Objective`].
pub struct FnObjective<F, G> {
    dim: usize,
    eval: F,
    grad: G,
}

impl<F, G> FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    pub fn new(dim: usize, eval: F, grad: G) -> Self {
        Self { dim, eval, grad }
    }
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64,
    G: Fn(&[f64], &mut [f64]),
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        (self.eval)(x)
    }

    fn value_and_gradient(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.grad)(x, grad);
        (self.eval)(x)
    }
}

/// `log(sum(exp(v)))` with max subtraction. Returns `-inf` for an empty slice.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let sum: f64 = v.iter().map(|&x| libm::exp(x - max)).sum();
    max + libm::log(sum)
}

/// Softmax into a caller-provided buffer. Inputs are assumed finite.
pub(crate) fn softmax_into(v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(v.len(), out.len());
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &x) in out.iter_mut().zip(v) {
        *o = libm::exp(x - max);
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        bail!(NumericDomain, "softmax of an empty vector");
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        bail!(NumericDomain, "softmax input {i} is not finite ({})", v[i]);
    }
    let mut out = alloc::vec![0.0; v.len()];
    softmax_into(v, &mut out);
    Ok(out)
}

/// Logistic CDF `1 / (1 + e^-x)`, evaluated with the two-branch form so that
/// neither tail overflows.
#[inline]
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

/// Logistic density `F(x)(1 - F(x))`.
#[inline]
pub fn logistic_density(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    let e = libm::exp(-libm::fabs(x));
    e / ((1.0 + e) * (1.0 + e))
}

/// `F(b) - F(a)` for `a < b`, using the upper-tail form when both points sit
/// in the right tail so the difference keeps its precision.
#[inline]
pub(crate) fn logistic_interval(a: f64, b: f64) -> f64 {
    if a > 0.0 {
        logistic(-a) - logistic(-b)
    } else {
        logistic(b) - logistic(a)
    }
}

fn check_thresholds(thresholds: &[f64]) -> Result<()> {
    if let Some(i) = thresholds.iter().position(|t| !t.is_finite()) {
        bail!(NumericDomain, "threshold {i} is not finite");
    }
    if let Some(i) = thresholds.windows(2).position(|w| w[1] <= w[0]) {
        bail!(
            NumericDomain,
            "thresholds must be strictly increasing (tau[{}] = {} >= tau[{}] = {})",
            i,
            thresholds[i],
            i + 1,
            thresholds[i + 1]
        );
    }
    Ok(())
}

/// Probability of each ordinal level given the latent index `v` and the
/// interior cut points `thresholds` (length `L - 1`; the outer cut points are
/// `-inf` and `+inf`).
///
/// `P(l) = F(tau_l - v) - F(tau_{l-1} - v)`.
pub fn ordinal_probs(v: f64, thresholds: &[f64]) -> Result<Vec<f64>> {
    if !v.is_finite() {
        bail!(NumericDomain, "ordinal index is not finite ({v})");
    }
    check_thresholds(thresholds)?;
    let levels = thresholds.len() + 1;
    Ok((0..levels).map(|l| ordinal_level_prob(v, thresholds, l)).collect())
}

/// Interval bounds `(tau_{l-1} - v, tau_l - v)` for zero-based level `l`.
#[inline]
pub(crate) fn ordinal_bounds(v: f64, thresholds: &[f64], level: usize) -> (f64, f64) {
    let lo = if level == 0 { f64::NEG_INFINITY } else { thresholds[level - 1] - v };
    let hi = if level == thresholds.len() { f64::INFINITY } else { thresholds[level] - v };
    (lo, hi)
}

#[inline]
pub(crate) fn ordinal_level_prob(v: f64, thresholds: &[f64], level: usize) -> f64 {
    let (lo, hi) = ordinal_bounds(v, thresholds, level);
    logistic_interval(lo, hi)
}

/// `log P(level)` with the open-ended levels evaluated through softplus so
/// they stay finite far into the tails.
pub(crate) fn ordinal_level_log_prob(v: f64, thresholds: &[f64], level: usize) -> f64 {
    let (lo, hi) = ordinal_bounds(v, thresholds, level);
    match (lo.is_infinite(), hi.is_infinite()) {
        (true, true) => 0.0,
        (true, false) => -softplus(-hi),
        (false, true) => -softplus(lo),
        (false, false) => libm::log(logistic_interval(lo, hi)),
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + libm::log1p(libm::exp(-x))
    } else {
        libm::log1p(libm::exp(x))
    }
}

/// Infinity norm; `0` for empty input.
pub fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| f64::max(m, libm::fabs(*x)))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Index of the first maximum (ties resolve toward the lower index).
pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Two-sided p-value of a standard normal statistic.
pub fn normal_two_sided_p(z: f64) -> f64 {
    libm::erfc(libm::fabs(z) / core::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use proptest::prelude::*;

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
        for c in [-700.0, -3.5, 0.0, 12.0, 900.0] {
            let p = softmax(&[c, c, c]).unwrap();
            for x in p {
                assert!((x - 1.0 / 3.0).abs() < 1e-15);
            }
        }
        // extended precision: [1, 5.0759588975494567e-435]
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert_eq!(p[0], 1.0);
        assert!(p[1] >= 0.0 && p[1] < 1e-300);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(softmax(&[0.0, f64::NAN]), Err(crate::Error::NumericDomain(_))));
        assert!(softmax(&[f64::INFINITY]).is_err());
        assert!(softmax(&[]).is_err());
    }

    #[test]
    fn logistic_values() {
        assert_eq!(logistic(0.0), 0.5);
        // 0.7310585786300048792511592418...
        assert!((logistic(1.0) - 0.731_058_578_630_004_9).abs() < 1e-16);
        let tiny = logistic(-745.0);
        assert!((0.0..=1e-300).contains(&tiny));
        assert_eq!(logistic(1e6), 1.0);
        assert_eq!(logistic(-1e6), 0.0);
    }

    #[test]
    fn ordinal_probs_examples() {
        let p = ordinal_probs(0.0, &[0.0, 1.0]).unwrap();
        let want = [0.5, 0.231_058_578_630_004_88, 0.268_941_421_369_995_12];
        for (a, b) in p.iter().zip(want) {
            assert!((a - b).abs() < 1e-15, "{a} vs {b}");
        }
        // mass moves to the top level
        let p = ordinal_probs(50.0, &[0.0, 1.0]).unwrap();
        assert!(p[0] + p[1] < 1e-20);
        assert!(p.iter().all(|&x| x > 0.0));
    }

    #[test]
    fn ordinal_probs_rejects_bad_thresholds() {
        assert!(ordinal_probs(0.0, &[1.0, 1.0]).is_err());
        assert!(ordinal_probs(0.0, &[1.0, 0.5]).is_err());
        assert!(ordinal_probs(f64::NAN, &[0.0]).is_err());
    }

    #[test]
    fn ordinal_log_prob_tails() {
        let t = [0.0, 1.0, 2.5];
        for v in [-800.0, -3.0, 0.2, 4.0, 800.0] {
            for l in 0..4 {
                let lp = ordinal_level_log_prob(v, &t, l);
                let p = ordinal_level_prob(v, &t, l);
                if p > 1e-300 {
                    assert!((lp - libm::log(p)).abs() < 1e-9 * lp.abs().max(1.0));
                }
            }
        }
        assert!(ordinal_level_log_prob(800.0, &t, 0).is_finite());
        assert!(ordinal_level_log_prob(-800.0, &t, 3).is_finite());
    }

    #[test]
    fn normal_p_values() {
        assert!((normal_two_sided_p(0.0) - 1.0).abs() < 1e-15);
        assert!((normal_two_sided_p(1.959_963_984_540_054) - 0.05).abs() < 1e-12);
    }

    fn increasing_thresholds() -> impl Strategy<Value = Vec<f64>> {
        (proptest::collection::vec(0.01f64..3.0, 1..6), -5.0f64..5.0).prop_map(|(gaps, start)| {
            let mut t = vec![start];
            for g in gaps {
                let last = *t.last().unwrap();
                t.push(last + g);
            }
            t
        })
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(v in proptest::collection::vec(-1e3f64..1e3, 1..12)) {
            let p = softmax(&v).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }

        #[test]
        fn softmax_shift_invariant(v in proptest::collection::vec(-50f64..50.0, 1..8), c in -100f64..100.0) {
            let p = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let q = softmax(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn logistic_symmetry(x in -800f64..800.0) {
            prop_assert!((logistic(-x) - (1.0 - logistic(x))).abs() <= 1e-15);
        }

        #[test]
        fn ordinal_sums_and_cdf_identity(v in -20f64..20.0, t in increasing_thresholds()) {
            let p = ordinal_probs(v, &t).unwrap();
            let s: f64 = p.iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
            let mut cdf = 0.0;
            for (l, tau) in t.iter().enumerate() {
                cdf += p[l];
                prop_assert!((cdf - logistic(tau - v)).abs() < 1e-12);
            }
        }

        #[test]
        fn ordinal_translation_invariant(v in -10f64..10.0, t in increasing_thresholds(), c in -5f64..5.0) {
            let p = ordinal_probs(v, &t).unwrap();
            let shifted: Vec<f64> = t.iter().map(|x| x + c).collect();
            let q = ordinal_probs(v + c, &shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn ordinal_stochastic_dominance(v in -10f64..10.0, dv in 0.01f64..5.0, t in increasing_thresholds()) {
            let lo = ordinal_probs(v, &t).unwrap();
            let hi = ordinal_probs(v + dv, &t).unwrap();
            let (mut a, mut b) = (0.0, 0.0);
            for l in 0..t.len() {
                a += lo[l];
                b += hi[l];
                prop_assert!(b < a);
            }
        }
    }
}
