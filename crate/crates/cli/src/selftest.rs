//! Self-tests behind `latclass check`: analytic gradients against central
//! differences, and the E-step and likelihood against brute-force
//! enumeration of class assignments on a tiny synthetic instance.

use latclass_core::choice::{alt_probs, WeightedChoiceObjective};
use latclass_core::em::{e_step, unconditional_ll, Parts};
use latclass_core::measurement::{indicator_probs, measurement_mstep_objective};
use latclass_core::membership::{class_probs, membership_mstep_objective};
use latclass_core::numerics::{check_gradient, logistic, FnObjective};
use latclass_core::synth::{generate, random_generator, PopulationConfig};
use latclass_core::{information_criteria, Dataset, ModelSpec, ParameterSet, PosteriorTable};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Largest tolerated relative gradient discrepancy.
pub const GRADIENT_TOLERANCE: f64 = 1e-5;
/// Largest tolerated gap to the brute-force oracles.
pub const ORACLE_TOLERANCE: f64 = 1e-10;
const FD_STEP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Runs every check; `points` random evaluation points per gradient check.
pub fn run_all(points: usize) -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut record = |name, r: Result<String, String>| {
        let (passed, detail) = match r {
            Ok(d) => (true, d),
            Err(d) => (false, d),
        };
        out.push(CheckResult { name, passed, detail });
    };
    let fixture = Fixture::new(3);
    record("gradient: choice", fixture.as_ref().map_err(Clone::clone).and_then(|f| f.choice_gradient(points)));
    record("gradient: membership, network, omega", fixture.as_ref().map_err(Clone::clone).and_then(|f| f.membership_gradient(points)));
    record("gradient: measurement, network, omega", fixture.as_ref().map_err(Clone::clone).and_then(|f| f.measurement_gradient(points)));
    record("oracle: e-step and log-likelihood", oracle_likelihood());
    record("oracle: ordinal indicator probabilities", oracle_indicator());
    record("formula: information criteria", formula_ic());
    out
}

struct Fixture {
    data: Dataset,
    params: ParameterSet,
    post: PosteriorTable,
}

impl Fixture {
    fn new(seed: u64) -> Result<Self, String> {
        let cfg = PopulationConfig { individuals: 30, indicator_levels: vec![5, 4, 3], ..PopulationConfig::default() };
        let spec = ModelSpec { k: 3, z: 2, h: 4, ..ModelSpec::default() };
        let gen = random_generator(&cfg, &spec, 1.0, seed).map_err(|e| e.to_string())?;
        let (data, _) = generate(&cfg, &gen, seed + 1).map_err(|e| e.to_string())?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 2);
        let params = ParameterSet::initialize(&data, &spec, &mut rng).map_err(|e| e.to_string())?;
        let post = e_step(&data, &params).map_err(|e| e.to_string())?;
        Ok(Self { data, params, post })
    }

    fn choice_gradient(&self, points: usize) -> Result<String, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut worst = 0.0f64;
        for _ in 0..points {
            let k = rng.gen_range(0..self.post.n_classes());
            let obj = WeightedChoiceObjective::new(&self.data, self.post.column(k));
            let x: Vec<f64> = (0..self.data.n_attributes()).map(|_| rng.gen_range(-2.0..2.0)).collect();
            worst = worst.max(check_gradient(&obj, &x, FD_STEP));
        }
        verdict(worst, points)
    }

    fn membership_gradient(&self, points: usize) -> Result<String, String> {
        self.joint_gradient(points, Parts::MEMBERSHIP, 12)
    }

    fn measurement_gradient(&self, points: usize) -> Result<String, String> {
        self.joint_gradient(points, Parts::MEASUREMENT, 13)
    }

    fn joint_gradient(&self, points: usize, parts: Parts, seed: u64) -> Result<String, String> {
        let layout = self.params.joint_layout(parts);
        let value = |x: &[f64]| -> Result<(f64, Vec<f64>), String> {
            let p = self.params.with_joint(&layout, x);
            let cols = p.network_columns.as_deref();
            if parts.membership {
                let (v, g) = membership_mstep_objective(&self.data, &self.post, &p.membership, &p.latent, cols, &p.omega)
                    .map_err(|e| e.to_string())?;
                Ok((v, layout.pack_gradient(&g.params, &g.latent, &g.omega, None)))
            } else {
                let m = p.measurement.as_ref().ok_or("no measurement model")?;
                let (v, g) = measurement_mstep_objective(&self.data, &p.latent, cols, &p.omega, m).map_err(|e| e.to_string())?;
                Ok((v, layout.pack_gradient(&p.membership, &g.latent, &g.omega, Some(&g.measurement))))
            }
        };
        let obj = FnObjective::new(
            layout.len(),
            |x: &[f64]| value(x).map_or(f64::NAN, |v| v.0),
            |x: &[f64], g: &mut [f64]| match value(x) {
                Ok((_, grad)) => g.copy_from_slice(&grad),
                Err(_) => g.iter_mut().for_each(|v| *v = f64::NAN),
            },
        );
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut worst = 0.0f64;
        for _ in 0..points {
            let x: Vec<f64> = (0..layout.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            value(&x)?;
            worst = worst.max(check_gradient(&obj, &x, FD_STEP));
        }
        verdict(worst, points)
    }
}

fn verdict(worst: f64, points: usize) -> Result<String, String> {
    let msg = format!("max relative error {worst:.2e} over {points} points (tolerance {GRADIENT_TOLERANCE:.0e})");
    if worst < GRADIENT_TOLERANCE {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Enumerates all `K^N` class assignments of a five-person instance and
/// compares the marginal likelihood and posteriors.
fn oracle_likelihood() -> Result<String, String> {
    let cfg = PopulationConfig { individuals: 5, tasks: 1, alternatives: 2, generic_attributes: 1, indicator_levels: vec![3, 3], ..PopulationConfig::default() };
    let spec = ModelSpec { k: 2, z: 1, h: 2, ..ModelSpec::default() };
    let gen = random_generator(&cfg, &spec, 1.5, 21).map_err(|e| e.to_string())?;
    let (data, _) = generate(&cfg, &gen, 22).map_err(|e| e.to_string())?;
    let params = ParameterSet::initialize(&data, &spec, &mut ChaCha8Rng::seed_from_u64(23)).map_err(|e| e.to_string())?;
    let params = params.with_joint(&params.joint_layout(Parts::BOTH), &{
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        (0..params.joint_layout(Parts::BOTH).len()).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>()
    });

    let k = 2usize;
    let n = data.len();
    // joint[n][c] = P(class c) * prod_t P(chosen | c)
    let joint: Vec<Vec<f64>> = data
        .individuals
        .iter()
        .map(|ind| {
            let r = params.latent_for(&ind.socio);
            let w = params.omega.forward(ind.id).value;
            let pi = class_probs(&params.membership.covariates(&ind.socio), &r, w, &params.membership).expect("valid");
            (0..k)
                .map(|c| pi[c] * ind.tasks.iter().map(|t| alt_probs(t, params.choice.class(c)).expect("valid")[t.chosen]).product::<f64>())
                .collect()
        })
        .collect();
    let mut total = 0.0;
    let mut marg = vec![vec![0.0; k]; n];
    for assign in 0..k.pow(n as u32) {
        let classes: Vec<usize> = (0..n).map(|i| (assign / k.pow(i as u32)) % k).collect();
        let p: f64 = classes.iter().enumerate().map(|(i, &c)| joint[i][c]).product();
        total += p;
        for (i, &c) in classes.iter().enumerate() {
            marg[i][c] += p;
        }
    }
    let ll = unconditional_ll(&data, &params).map_err(|e| e.to_string())?;
    let post = e_step(&data, &params).map_err(|e| e.to_string())?;
    let mut worst = (ll - total.ln()).abs();
    for i in 0..n {
        for c in 0..k {
            worst = worst.max((post.row(i)[c] - marg[i][c] / total).abs());
        }
    }
    let msg = format!("max deviation {worst:.2e} over {} assignments", k.pow(n as u32));
    if worst < ORACLE_TOLERANCE {
        Ok(msg)
    } else {
        Err(msg)
    }
}

/// Ordinal probabilities as differences of logistic CDFs at the cut points.
fn oracle_indicator() -> Result<String, String> {
    let m = latclass_core::measurement::MeasurementParams::from_thresholds(vec![0.7, -0.4], vec![0.3], &[vec![0.0, 0.5, 1.75, 2.0]], 2, true)
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for (r, w) in [([0.1, 0.2], 0.0), ([-1.5, 2.0], 0.4), ([3.0, -3.0], -1.0)] {
        let v = 0.7 * r[0] - 0.4 * r[1] + 0.3 * w;
        let cuts = [f64::NEG_INFINITY, 0.0, 0.5, 1.75, 2.0, f64::INFINITY];
        let probs = indicator_probs(&r, w, 0, &m).map_err(|e| e.to_string())?;
        for l in 0..5 {
            let want = cdf(cuts[l + 1] - v) - cdf(cuts[l] - v);
            worst = worst.max((probs[l] - want).abs());
        }
    }
    let msg = format!("max deviation {worst:.2e}");
    if worst < ORACLE_TOLERANCE {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        logistic(x)
    }
}

/// AIC = 2p - 2 LL on a published two-class benchmark row.
fn formula_ic() -> Result<String, String> {
    let ic = information_criteria(-1599.41, 30, 1299, -2047.21);
    if (ic.aic - 3258.82).abs() < 1e-9 {
        Ok(format!("AIC {:.2}", ic.aic))
    } else {
        Err(format!("AIC {} != 3258.82", ic.aic))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn all_checks_pass() {
        for r in run_all(3) {
            assert!(r.passed, "{}: {}", r.name, r.detail);
        }
    }
}
