//! Random fixtures shared by unit tests.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::choice::ChoiceParams;
use crate::data::{ChoiceTask, Dataset, Individual};
use crate::em::{ParameterSet, PosteriorTable};
use crate::latent_net::{LatentNetWeights, OmegaFallback, OmegaWeights};
use crate::measurement::MeasurementParams;
use crate::membership::MembershipParams;

#[derive(Debug, Clone, Copy)]
pub(crate) struct TestShape {
    pub n: usize,
    pub k: usize,
    pub z: usize,
    pub h: usize,
    pub m: usize,
    pub p: usize,
    pub j: usize,
    pub a: usize,
    pub t: usize,
    pub levels: usize,
}

impl Default for TestShape {
    fn default() -> Self {
        Self { n: 8, k: 2, z: 1, h: 2, m: 3, p: 2, j: 3, a: 3, t: 2, levels: 4 }
    }
}

pub(crate) fn random_dataset<R: Rng>(s: &TestShape, rng: &mut R) -> Dataset {
    let individuals = (0..s.n)
        .map(|id| Individual {
            id: 3 * id + 1,
            socio: (0..s.m).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            indicators: Some((0..s.p).map(|_| rng.gen_range(1..=s.levels as u8)).collect()),
            tasks: (0..s.t)
                .map(|_| ChoiceTask {
                    alternatives: (0..s.j).map(|_| (0..s.a).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect(),
                    chosen: rng.gen_range(0..s.j),
                })
                .collect(),
        })
        .collect();
    Dataset { individuals, indicator_levels: vec![s.levels; s.p], ..Default::default() }
}

/// Random parameters with individual effects enabled and a measurement block.
pub(crate) fn random_parameter_set<R: Rng>(s: &TestShape, d: &Dataset, rng: &mut R) -> ParameterSet {
    let mut measurement = MeasurementParams::random(&d.indicator_levels, s.z, true, 0.7, rng);
    for gaps in &mut measurement.log_gaps {
        gaps.iter_mut().for_each(|g| *g = rng.gen_range(-0.5..0.5));
    }
    let mut latent = LatentNetWeights::random(s.m, s.h, s.z, rng);
    latent.w1.iter_mut().chain(latent.w2.iter_mut()).for_each(|w| *w = rng.gen_range(-1.0..1.0));
    ParameterSet {
        membership: MembershipParams::random(s.k, s.m, s.z, true, 0.7, rng),
        choice: ChoiceParams::random(s.k, s.a, 1.0, rng),
        latent,
        network_columns: None,
        omega: OmegaWeights::new(
            d.individuals.iter().map(|i| i.id).collect(),
            (0..d.len()).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            OmegaFallback::Zero,
        )
        .unwrap(),
        measurement: Some(measurement),
        spec_hash: 0,
    }
}

pub(crate) fn random_posteriors<R: Rng>(n: usize, k: usize, rng: &mut R) -> PosteriorTable {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.05..1.0)).collect();
            let s: f64 = w.iter().sum();
            w.iter().map(|x| x / s).collect()
        })
        .collect();
    PosteriorTable::from_rows(&rows).unwrap()
}

/// `n` individuals with no socio columns, two 5-level indicators and one
/// binary task each.
pub(crate) fn tiny_dataset(n: usize) -> Dataset {
    Dataset {
        individuals: (0..n)
            .map(|id| Individual {
                id,
                socio: Vec::new(),
                indicators: Some(vec![(id % 5) as u8 + 1, 3]),
                tasks: vec![ChoiceTask { alternatives: vec![vec![1.0, 0.5], vec![0.0, 0.0]], chosen: id % 2 }],
            })
            .collect(),
        indicator_levels: vec![5, 5],
        ..Default::default()
    }
}
