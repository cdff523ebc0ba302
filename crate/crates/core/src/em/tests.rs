use super::*;
use crate::choice::{alt_probs, conditional_choice_ll, ChoiceParams};
use crate::data::JointSolver;
use crate::latent_net::OmegaWeights;
use crate::membership::{class_probs, MembershipParams};
use crate::testutil::{random_dataset, random_parameter_set, TestShape};
use alloc::vec::Vec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_spec() -> ModelSpec {
    ModelSpec { k: 2, z: 1, h: 2, em_iterations: 4, gradient_max_steps: 10, ..ModelSpec::default() }
}

/// Scalar Bayes-rule posteriors and observed LL, written out term by term.
fn oracle(d: &Dataset, ps: &ParameterSet) -> (Vec<Vec<f64>>, f64) {
    let mut post = Vec::new();
    let mut ll = 0.0;
    for ind in &d.individuals {
        let r = ps.latent_for(&ind.socio);
        let w = if ps.membership.uses_omega() { ps.omega.forward(ind.id).value } else { 0.0 };
        let pi = class_probs(&ps.membership.covariates(&ind.socio), &r, w, &ps.membership).unwrap();
        let joint: Vec<f64> = (0..pi.len())
            .map(|k| {
                let mut p = pi[k];
                for t in &ind.tasks {
                    p *= alt_probs(t, ps.choice.class(k)).unwrap()[t.chosen];
                }
                p
            })
            .collect();
        let s: f64 = joint.iter().sum();
        ll += s.ln();
        post.push(joint.iter().map(|j| j / s).collect());
    }
    (post, ll)
}

#[test]
fn single_class_posteriors_are_one() {
    let shape = TestShape { k: 1, ..TestShape::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(60);
    let d = random_dataset(&shape, &mut rng);
    let ps = random_parameter_set(&shape, &d, &mut rng);
    let post = e_step(&d, &ps).unwrap();
    assert!((0..d.len()).all(|n| post.row(n) == [1.0]));
    let want: f64 = d.individuals.iter().map(|i| conditional_choice_ll(i, ps.choice.class(0)).unwrap()).sum();
    assert!((unconditional_ll(&d, &ps).unwrap() - want).abs() < 1e-10);
}

#[test]
fn identical_classes_split_evenly() {
    let shape = TestShape { k: 2, ..TestShape::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    let d = random_dataset(&shape, &mut rng);
    let mut ps = random_parameter_set(&shape, &d, &mut rng);
    ps.membership = MembershipParams::zeros(2, shape.m, shape.z, true);
    let row = ps.choice.class(0).to_vec();
    ps.choice = ChoiceParams::from_rows(&[row.clone(), row]).unwrap();
    let post = e_step(&d, &ps).unwrap();
    for n in 0..d.len() {
        assert!((post.row(n)[0] - 0.5).abs() < 1e-15);
    }
}

#[test]
fn e_step_and_ll_match_oracle() {
    for seed in 0..5 {
        let shape = TestShape { n: 3, k: 2, j: 2, t: 1, ..TestShape::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(62 + seed);
        let d = random_dataset(&shape, &mut rng);
        let ps = random_parameter_set(&shape, &d, &mut rng);
        let (want_post, want_ll) = oracle(&d, &ps);
        let post = e_step(&d, &ps).unwrap();
        for n in 0..3 {
            for k in 0..2 {
                assert!((post.row(n)[k] - want_post[n][k]).abs() < 1e-10);
            }
        }
        assert!((unconditional_ll(&d, &ps).unwrap() - want_ll).abs() < 1e-10);
    }
}

#[test]
fn uniform_model_ll() {
    let shape = TestShape { n: 9, k: 3, j: 4, t: 3, ..TestShape::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    let d = random_dataset(&shape, &mut rng);
    let mut ps = random_parameter_set(&shape, &d, &mut rng);
    ps.choice = ChoiceParams::zeros(3, shape.a);
    let want = -(9.0 * 3.0) * 4f64.ln();
    assert!((unconditional_ll(&d, &ps).unwrap() - want).abs() < 1e-10);
}

#[test]
fn unseen_individuals_use_fallback() {
    let shape = TestShape { n: 4, ..TestShape::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(64);
    let d = random_dataset(&shape, &mut rng);
    let mut ps = random_parameter_set(&shape, &d, &mut rng);
    ps.omega = OmegaWeights::new(vec![d.individuals[0].id], vec![0.3], ps.omega.fallback).unwrap();
    let post = e_step(&d, &ps).unwrap();
    assert_eq!(post.omega_fallbacks, 3);
}

#[test]
fn posterior_table_validation() {
    assert!(PosteriorTable::from_rows(&[vec![0.5, 0.6]]).is_err());
    assert!(PosteriorTable::from_rows(&[vec![1.2, -0.2]]).is_err());
    let t = PosteriorTable::from_rows(&[vec![0.25, 0.75], vec![1.0, 0.0]]).unwrap();
    assert_eq!(t.column(1), vec![0.75, 0.0]);
    assert_eq!(t.class_shares(), vec![0.625, 0.375]);
    assert_eq!(t.modal_classes(), vec![1, 0]);
}

#[test]
fn fit_is_deterministic_and_improves() {
    let shape = TestShape { n: 30, m: 2, ..TestShape::default() };
    let d = random_dataset(&shape, &mut ChaCha8Rng::seed_from_u64(65));
    let a = em_fit(&d, &small_spec()).unwrap();
    let b = em_fit(&d, &small_spec()).unwrap();
    assert_eq!(a, b);
    let r = &a.trace.records;
    assert_eq!(r.len(), 5);
    assert!(r.iter().enumerate().all(|(i, rec)| rec.iteration == i));
    assert!(a.trace.final_record().total_objective >= r[0].total_objective);
    a.params.validate().unwrap();
}

#[test]
fn total_objective_is_monotone_with_converged_inner_steps() {
    let shape = TestShape { n: 25, m: 2, ..TestShape::default() };
    let d = random_dataset(&shape, &mut ChaCha8Rng::seed_from_u64(66));
    let spec = ModelSpec {
        joint_solver: JointSolver::Bfgs,
        gradient_tol: 1e-7,
        gradient_max_steps: 2000,
        choice_tol: 1e-8,
        choice_max_iter: 1000,
        em_iterations: 6,
        ..small_spec()
    };
    let fit = em_fit(&d, &spec).unwrap();
    for w in fit.trace.records.windows(2) {
        assert!(w[1].total_objective >= w[0].total_objective - 1e-6, "{} -> {}", w[0].total_objective, w[1].total_objective);
    }
}

#[test]
fn missing_indicators_are_rejected_for_latent_models() {
    let shape = TestShape { n: 6, ..TestShape::default() };
    let mut d = random_dataset(&shape, &mut ChaCha8Rng::seed_from_u64(67));
    d.individuals[2].indicators = None;
    assert!(matches!(em_fit(&d, &small_spec()), Err(Error::Contract(_))));
    // The baseline never reads indicators.
    let spec = ModelSpec { z: 0, use_omega: false, ..small_spec() };
    em_fit(&d, &spec).unwrap();
}

#[test]
fn early_stop_ends_on_plateau() {
    let shape = TestShape { n: 20, ..TestShape::default() };
    let d = random_dataset(&shape, &mut ChaCha8Rng::seed_from_u64(68));
    let spec = ModelSpec { em_iterations: 200, early_stop: true, early_stop_tol: 1e-2, z: 0, use_omega: false, ..small_spec() };
    let fit = em_fit(&d, &spec).unwrap();
    match fit.trace.status {
        TraceStatus::EarlyStopped { after } => assert_eq!(after, fit.trace.cycles()),
        TraceStatus::Completed => panic!("expected a plateau within 200 cycles: {:?}", fit.trace.records.iter().map(|r| r.observed_ll).collect::<Vec<_>>()),
    }
}

#[test]
fn multi_start_selects_max_and_reports_variance() {
    let shape = TestShape { n: 20, m: 2, ..TestShape::default() };
    let d = random_dataset(&shape, &mut ChaCha8Rng::seed_from_u64(69));
    let one = multi_start(&d, &ModelSpec { restarts: 1, ..small_spec() }).unwrap();
    assert_eq!(one.ll_variance, 0.0);
    assert_eq!(one.best, 0);

    let rep = multi_start(&d, &ModelSpec { restarts: 3, ..small_spec() }).unwrap();
    assert!(rep.ll_variance.is_finite());
    assert!(rep.successful().all(|f| f.trace.final_ll() <= rep.best_ll()));
    let seeds: Vec<u64> = rep.runs.iter().map(|r| r.seed).collect();
    assert_eq!(seeds, vec![0, 1, 2]);
}

#[test]
fn all_failed_restarts_are_an_error() {
    let runs = vec![RestartRun { restart: 0, seed: 0, outcome: Err(Error::Estimation("boom".into())) }];
    assert!(matches!(MultiStartReport::from_runs(runs), Err(Error::Estimation(_))));
}

#[test]
fn population_variance_divides_by_count() {
    let v = [1.0, 2.0, 3.0, 4.0];
    assert!((population_variance(v.iter().copied()) - 1.25).abs() < 1e-15);
}
