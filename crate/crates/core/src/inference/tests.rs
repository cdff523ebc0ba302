use super::*;
use crate::choice::{choice_mstep, ChoiceParams};
use crate::data::{ChoiceTask, Individual};
use crate::em::PosteriorTable;
use crate::latent_net::{forward_latent, LatentNetWeights, OmegaWeights};
use crate::measurement::MeasurementParams;
use crate::membership::MembershipParams;
use crate::numerics::BfgsOptions;
use crate::testutil::{random_dataset, random_parameter_set, random_posteriors, TestShape};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn single_class_set(d: &Dataset, beta: Vec<f64>) -> ParameterSet {
    ParameterSet {
        membership: MembershipParams::zeros(1, d.n_socio(), 0, false),
        choice: ChoiceParams::from_rows(&[beta]).unwrap(),
        latent: LatentNetWeights::zeros(d.n_socio(), 1, 0),
        network_columns: None,
        omega: OmegaWeights::empty(),
        measurement: None,
        spec_hash: 0,
    }
}

/// Binary logit with two attributes: one generic, one constant.
fn mnl_dataset(n: usize, beta: [f64; 2], seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let individuals = (0..n)
        .map(|id| {
            let x: f64 = rng.gen_range(-2.0..2.0);
            let v = beta[0] * x + beta[1];
            let p = 1.0 / (1.0 + (-v).exp());
            let chosen = usize::from(rng.gen::<f64>() >= p);
            Individual {
                id,
                socio: Vec::new(),
                indicators: None,
                tasks: vec![ChoiceTask { alternatives: vec![vec![x, 1.0], vec![0.0, 0.0]], chosen }],
            }
        })
        .collect();
    Dataset { individuals, ..Default::default() }
}

fn fit_mnl(d: &Dataset) -> ParameterSet {
    let post = PosteriorTable::uniform(d.len(), 1);
    let fit = choice_mstep(d, &post, &ChoiceParams::zeros(1, 2), &BfgsOptions::new(1e-10, 500)).unwrap();
    single_class_set(d, fit.params.beta)
}

#[test]
fn mnl_errors_match_analytic_information() {
    let d = mnl_dataset(20_000, [0.8, -0.4], 70);
    let ps = fit_mnl(&d);
    let errs = standard_errors(&d, &ps, Block::Choice).unwrap();
    // Analytic information: sum_n p(1-p) x x'.
    let b = ps.choice.class(0);
    let mut info = [[0.0; 2]; 2];
    for ind in &d.individuals {
        let x = &ind.tasks[0].alternatives[0];
        let p = 1.0 / (1.0 + (-(b[0] * x[0] + b[1] * x[1])).exp());
        for i in 0..2 {
            for j in 0..2 {
                info[i][j] += p * (1.0 - p) * x[i] * x[j];
            }
        }
    }
    let det = info[0][0] * info[1][1] - info[0][1] * info[1][0];
    let want = [(info[1][1] / det).sqrt(), (info[0][0] / det).sqrt()];
    for (e, w) in errs.estimates.iter().zip(want) {
        assert!((e.std_error / w - 1.0).abs() < 0.10, "{} vs {w}", e.std_error);
        assert!((e.std_error / w - 1.0).abs() < 1e-3, "finite differences should be much tighter than 10%");
    }
    assert!(!errs.ill_conditioned());
}

#[test]
fn zero_coefficient_is_rarely_significant() {
    let mut significant = 0;
    for rep in 0..100 {
        let d = mnl_dataset(2_000, [0.0, 0.3], 1000 + rep);
        let ps = fit_mnl(&d);
        let e = standard_errors(&d, &ps, Block::Choice).unwrap();
        if e.estimates[0].p_value <= 0.01 {
            significant += 1;
        }
    }
    // At most 5 of 100 may fall below 0.01.
    assert!(significant <= 5, "{significant} rejections");
}

#[test]
fn pinned_entries_have_no_error() {
    let shape = TestShape { n: 10, ..TestShape::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    let d = random_dataset(&shape, &mut rng);
    let ps = random_parameter_set(&shape, &d, &mut rng);
    for r in [ParamRef::Asc { class: 1 }, ParamRef::Gamma { class: 1, covariate: 0 }, ParamRef::Tau { indicator: 0, level: 0 }] {
        assert!(matches!(standard_error_of(&d, &ps, r), Err(crate::Error::Contract(_))));
    }
    standard_error_of(&d, &ps, ParamRef::Asc { class: 0 }).unwrap();
}

#[test]
fn block_shapes_and_symmetry() {
    let shape = TestShape { n: 40, k: 3, z: 2, h: 3, p: 3, ..TestShape::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    let d = random_dataset(&shape, &mut rng);
    let ps = random_parameter_set(&shape, &d, &mut rng);
    let mem = standard_errors(&d, &ps, Block::Membership).unwrap();
    assert_eq!(mem.estimates.len(), ps.membership.n_free());
    assert!(mem.asymmetry < 1e-6);
    let meas = standard_errors(&d, &ps, Block::Measurement).unwrap();
    assert_eq!(meas.estimates.len(), ps.measurement.as_ref().unwrap().n_free());
    let m = ps.measurement.as_ref().unwrap();
    let tau = meas.get(ParamRef::Tau { indicator: 1, level: 2 }).unwrap();
    assert_eq!(tau.value, m.thresholds(1)[2]);
    for (errs, block) in [(&mem, Block::Membership), (&meas, Block::Measurement)] {
        let free = free_parameters(&ps, block);
        assert_eq!(free.len(), errs.estimates.len());
        for ((r, v), e) in free.iter().zip(&errs.estimates) {
            assert_eq!(*r, e.param);
            assert!((v - e.value).abs() < 1e-12);
        }
    }
}

#[test]
fn threshold_errors_follow_delta_method() {
    // One indicator, no latent variables: the ordinal model reduces to
    // cut points only, whose information matrix is easy to form directly.
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    let n = 3000;
    let individuals: Vec<Individual> = (0..n)
        .map(|id| Individual {
            id,
            socio: Vec::new(),
            indicators: Some(vec![rng.gen_range(1..=3u8)]),
            tasks: vec![ChoiceTask { alternatives: vec![vec![0.0], vec![1.0]], chosen: 0 }],
        })
        .collect();
    let d = Dataset { individuals, indicator_levels: vec![3], ..Default::default() };
    let counts: Vec<f64> =
        (1..=3).map(|l| d.individuals.iter().filter(|i| i.indicators.as_ref().unwrap()[0] == l).count() as f64).collect();
    // With the index pinned at 0 and the first cut at 0, the MLE of the
    // second cut solves n2 / (F - 1/2) = n3 / (1 - F).
    let u = (counts[1] + counts[2] / 2.0) / (counts[1] + counts[2]);
    let tau = (u / (1.0 - u)).ln();
    let mut ps = single_class_set(&d, vec![0.0]);
    ps.measurement = Some(MeasurementParams::from_thresholds(Vec::new(), vec![0.0], &[vec![0.0, tau]], 0, false).unwrap());
    let e = standard_errors(&d, &ps, Block::Measurement).unwrap();
    let est = e.get(ParamRef::Tau { indicator: 0, level: 1 }).unwrap();
    assert!((est.value - tau).abs() < 1e-12);
    // Observed information for tau computed by hand from the two level
    // probabilities that depend on it.
    let f = |x: f64| 1.0 / (1.0 + (-x).exp());
    let (a, b) = (f(0.0), f(tau));
    let dens = b * (1.0 - b);
    let ddens = dens * (1.0 - 2.0 * b);
    let l2 = b - a;
    let l3 = 1.0 - b;
    let h = counts[1] * (ddens / l2 - (dens / l2).powi(2)) + counts[2] * (-ddens / l3 - (dens / l3).powi(2));
    let want = (-1.0 / h).sqrt();
    assert!((est.std_error / want - 1.0).abs() < 1e-4, "{} vs {want}", est.std_error);
}

#[test]
fn profiles_from_hard_and_uniform_posteriors() {
    let mut rng = ChaCha8Rng::seed_from_u64(74);
    let mut d = random_dataset(&TestShape { n: 30, m: 2, ..TestShape::default() }, &mut rng);
    for ind in &mut d.individuals {
        ind.socio[0] = f64::from(rng.gen_range(0..3u8));
    }
    let labels: Vec<usize> = (0..30).map(|_| rng.gen_range(0..2)).collect();
    let hard = PosteriorTable::from_rows(&labels.iter().map(|&l| if l == 0 { vec![1.0, 0.0] } else { vec![0.0, 1.0] }).collect::<Vec<_>>()).unwrap();
    let prof = &class_profiles(&d, &hard, &[0]).unwrap()[0];
    for k in 0..2 {
        let members: Vec<f64> = d.individuals.iter().zip(&labels).filter(|(_, &l)| l == k).map(|(i, _)| i.socio[0]).collect();
        for (v, value) in prof.values.iter().enumerate() {
            let freq = members.iter().filter(|&&s| s == *value).count() as f64 / members.len() as f64;
            assert!((prof.rows[k][v] - freq).abs() < 1e-12);
        }
        assert!((prof.rows[k].iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }
    let uni = &class_profiles(&d, &PosteriorTable::uniform(30, 2), &[0]).unwrap()[0];
    for (v, value) in uni.values.iter().enumerate() {
        let freq = d.individuals.iter().filter(|i| i.socio[0] == *value).count() as f64 / 30.0;
        assert!((uni.rows[0][v] - freq).abs() < 1e-12 && (uni.rows[1][v] - freq).abs() < 1e-12);
    }
}

#[test]
fn profiles_match_scalar_oracle_and_flag_empty_classes() {
    let mut rng = ChaCha8Rng::seed_from_u64(75);
    let mut d = random_dataset(&TestShape { n: 12, m: 1, ..TestShape::default() }, &mut rng);
    for ind in &mut d.individuals {
        ind.socio[0] = f64::from(rng.gen_range(0..2u8));
    }
    let post = random_posteriors(12, 3, &mut rng);
    let prof = &class_profiles(&d, &post, &[0]).unwrap()[0];
    for k in 0..3 {
        for (v, value) in prof.values.iter().enumerate() {
            let mut num = 0.0;
            let mut den = 0.0;
            for n in 0..12 {
                den += post.row(n)[k];
                if d.individuals[n].socio[0] == *value {
                    num += post.row(n)[k];
                }
            }
            assert!((prof.rows[k][v] - num / den).abs() < 1e-10);
        }
    }
    let empty = PosteriorTable::from_rows(&vec![vec![1.0, 0.0]; 12]).unwrap();
    let prof = &class_profiles(&d, &empty, &[0]).unwrap()[0];
    assert_eq!(prof.degenerate, vec![false, true]);
}

#[test]
fn latent_export_round_trips() {
    let shape = TestShape { n: 5, z: 2, h: 3, ..TestShape::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(76);
    let d = random_dataset(&shape, &mut rng);
    let mut ps = random_parameter_set(&shape, &d, &mut rng);
    let rows = export_latent_space(&d, &ps).unwrap();
    assert_eq!(rows.len(), 5);
    for (row, ind) in rows.iter().zip(&d.individuals) {
        assert_eq!(row.r.len(), 2);
        assert_eq!(row.r, forward_latent(&ind.socio, &ps.latent).unwrap());
        assert_eq!(row.omega, ps.omega.forward(ind.id).value);
    }
    ps.latent = ps.latent.zeros_like();
    assert!(export_latent_space(&d, &ps).unwrap().iter().all(|r| r.r == [0.0, 0.0]));
}

#[test]
fn uniform_model_holdout() {
    let shape = TestShape { n: 7, k: 2, j: 3, t: 2, ..TestShape::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let d = random_dataset(&shape, &mut rng);
    let mut ps = random_parameter_set(&shape, &d, &mut rng);
    ps.choice = ChoiceParams::zeros(2, shape.a);
    ps.omega = OmegaWeights::empty();
    ps.membership = MembershipParams::random(2, shape.m, shape.z, false, 0.5, &mut rng);
    let m = evaluate_holdout(&d, &ps, NullModel::Uniform).unwrap();
    assert!((m.ll + 14.0 * 3f64.ln()).abs() < 1e-12);
    assert!((m.ll - m.null_ll).abs() < 1e-12);
    assert_eq!(m.n_tasks, 14);
}

#[test]
fn generating_model_beats_perturbations_on_holdout() {
    use crate::synth::{generate, random_generator, PopulationConfig};
    let cfg = PopulationConfig { individuals: 2000, ..PopulationConfig::default() };
    let spec = crate::ModelSpec { k: 2, z: 0, use_omega: false, ..crate::ModelSpec::default() };
    let truth = random_generator(&cfg, &spec, 2.0, 78).unwrap();
    let (test, _) = generate(&cfg, &truth, 79).unwrap();
    let base = evaluate_holdout(&test, &truth, NullModel::Uniform).unwrap().ll;
    let mut rng = ChaCha8Rng::seed_from_u64(80);
    let mut worse = 0;
    for _ in 0..20 {
        let mut p = truth.clone();
        p.choice.beta.iter_mut().for_each(|b| *b += rng.gen_range(-0.5..0.5));
        if evaluate_holdout(&test, &p, NullModel::Uniform).unwrap().ll < base {
            worse += 1;
        }
    }
    assert_eq!(worse, 20);
}
