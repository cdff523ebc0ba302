//! Restarts and standard-error blocks on a bounded rayon pool. Results are
//! collected in index order, so output does not depend on the worker count.

use latclass_core::em::{fit_restart, MultiStartReport, NoClock, RestartRun};
use latclass_core::inference::{standard_errors, Block, BlockErrors};
use latclass_core::{Dataset, ModelSpec, ParameterSet};
use rayon::prelude::*;

use crate::error::{Error, Result};

/// A pool with `workers` threads; zero means one per core.
pub fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(workers).build().map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Runs every restart of `spec` and picks the best.
pub fn multi_start(pool: &rayon::ThreadPool, dataset: &Dataset, spec: &ModelSpec) -> Result<MultiStartReport> {
    spec.validate()?;
    let runs: Vec<RestartRun> = pool.install(|| {
        (0..spec.restarts)
            .into_par_iter()
            .map(|i| RestartRun {
                restart: i,
                seed: spec.seed.wrapping_add(i as u64),
                outcome: fit_restart(dataset, spec, i, &NoClock),
            })
            .collect()
    });
    Ok(MultiStartReport::from_runs(runs)?)
}

/// Standard errors for each requested block.
pub fn block_errors(
    pool: &rayon::ThreadPool,
    dataset: &Dataset,
    params: &ParameterSet,
    blocks: &[Block],
) -> Vec<(Block, latclass_core::Result<BlockErrors>)> {
    pool.install(|| blocks.par_iter().map(|&b| (b, standard_errors(dataset, params, b))).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use latclass_core::synth::{generate, random_generator, PopulationConfig};

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = PopulationConfig { individuals: 40, ..PopulationConfig::default() };
        let spec = ModelSpec { k: 2, z: 1, h: 3, em_iterations: 3, restarts: 3, ..ModelSpec::default() };
        let gen = random_generator(&cfg, &spec, 1.0, 1).unwrap();
        let (d, _) = generate(&cfg, &gen, 2).unwrap();
        let one = multi_start(&pool(1).unwrap(), &d, &spec).unwrap();
        let many = multi_start(&pool(3).unwrap(), &d, &spec).unwrap();
        assert_eq!(one, many);
        assert_eq!(one, latclass_core::multi_start(&d, &spec).unwrap());
    }
}
