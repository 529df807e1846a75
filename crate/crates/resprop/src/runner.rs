//! Parallel execution. Trials and repeats run on a rayon pool; results are
//! collected by index and merged in that order, so outputs do not depend on
//! the worker count.

use std::num::NonZeroUsize;

use rayon::prelude::*;
use resprop_core::montecarlo::{
    check_convergence_inputs, convergence_row, measure_trial, merge_in_order, ConvergenceRow, LayerStats,
};
use resprop_core::sampling::SeedPlan;
use resprop_core::trainer::{datasets, train_repeat, TrainConfig, TrainResult};
use resprop_core::{Error, NetworkConfig, Result};

pub const WORKERS_ENV: &str = "RESPROP_WORKERS";

/// Worker count from the flag, then the config, then `RESPROP_WORKERS`, then
/// the available parallelism.
pub fn resolve_workers(flag: Option<usize>, config: Option<usize>) -> std::result::Result<usize, String> {
    if let Some(w) = flag.or(config) {
        return if w == 0 { Err("worker count must be at least 1".into()) } else { Ok(w) };
    }
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        return match v.trim().parse::<usize>() {
            Ok(w) if w > 0 => Ok(w),
            _ => Err(format!("{WORKERS_ENV}={v} is not a positive integer")),
        };
    }
    Ok(std::thread::available_parallelism().map(NonZeroUsize::get).unwrap_or(1))
}

fn with_pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// First error by index, so failures are reported the same way on any pool.
fn first_error<T>(results: Vec<Result<T>>) -> Result<Vec<T>> {
    results.into_iter().collect()
}

pub fn run_experiment(cfg: &NetworkConfig, trials: u64, seed: u64, workers: usize) -> Result<LayerStats> {
    cfg.validate()?;
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be at least 1".into()));
    }
    let parts = with_pool(workers, || {
        (0..trials).into_par_iter().map(|t| measure_trial(cfg, SeedPlan::new(seed, t))).collect::<Vec<_>>()
    });
    merge_in_order(cfg.depth, &first_error(parts)?)
}

pub fn bn_convergence(
    cfg: &NetworkConfig,
    batch_sizes: &[usize],
    trials: u64,
    seed: u64,
    workers: usize,
) -> Result<Vec<ConvergenceRow>> {
    check_convergence_inputs(cfg, batch_sizes)?;
    batch_sizes
        .iter()
        .map(|&n| {
            let c = cfg.clone().with_batch_size(n);
            run_experiment(&c, trials, seed, workers).map(|s| convergence_row(&c, &s))
        })
        .collect()
}

pub fn train(tc: &TrainConfig, seed: u64, workers: usize) -> Result<TrainResult> {
    tc.validate()?;
    let (train_set, eval_set) = datasets(tc, seed);
    let repeats = with_pool(workers, || {
        (0..tc.repeats)
            .into_par_iter()
            .map(|r| train_repeat(tc, seed, r, &train_set, &eval_set))
            .collect::<Vec<_>>()
    });
    Ok(TrainResult { repeats: first_error(repeats)? })
}

#[cfg(test)]
mod tests {
    use super::*;
    use resprop_core::{Activation, BlockKind};

    #[test]
    fn worker_count_does_not_change_results() {
        let cfg = NetworkConfig::new(3, 6, Activation::Relu, BlockKind::BnPreAct).with_batch_size(9);
        let one = run_experiment(&cfg, 7, 3, 1).unwrap();
        let four = run_experiment(&cfg, 7, 3, 4).unwrap();
        assert_eq!(one, four);
        assert_eq!(one, resprop_core::montecarlo::run_experiment(&cfg, 7, 3).unwrap());
    }

    #[test]
    fn parallel_training_matches_sequential() {
        let net = NetworkConfig::new(3, 4, Activation::Relu, BlockKind::Plain);
        let tc = TrainConfig { steps: 4, repeats: 3, ..TrainConfig::new(net) };
        assert_eq!(train(&tc, 9, 3).unwrap(), resprop_core::trainer::train(&tc, 9).unwrap());
    }

    #[test]
    fn explicit_workers_win() {
        assert_eq!(resolve_workers(Some(3), Some(5)), Ok(3));
        assert_eq!(resolve_workers(None, Some(5)), Ok(5));
        assert!(resolve_workers(Some(0), None).is_err());
    }
}
