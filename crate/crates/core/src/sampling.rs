//! Deterministic sampling of weights, inputs and injected output deltas.
//!
//! Every trial owns independent ChaCha streams keyed by
//! `(master_seed, trial_index, purpose)`, so trials can run on any number of
//! threads and still reproduce bit for bit.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::matrix::Matrix;
use crate::model::{Distribution, NetworkConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedPlan {
    pub master_seed: u64,
    pub trial_index: u64,
}

/// What a random stream is used for. Distinct purposes never share a stream.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u64)]
pub enum StreamPurpose {
    Weights = 1,
    Inputs = 2,
    OutputDelta = 3,
    Dataset = 4,
}

impl SeedPlan {
    pub fn new(master_seed: u64, trial_index: u64) -> Self {
        SeedPlan { master_seed, trial_index }
    }

    pub fn rng(&self, purpose: StreamPurpose) -> ChaCha8Rng {
        let mut seed = [0u8; 32];
        seed[..8].copy_from_slice(&self.master_seed.to_le_bytes());
        seed[8..16].copy_from_slice(&self.trial_index.to_le_bytes());
        seed[16..24].copy_from_slice(&(purpose as u64).to_le_bytes());
        seed[24..].copy_from_slice(b"resprop\0");
        ChaCha8Rng::from_seed(seed)
    }
}

/// Weight matrices `W^1..W^L`, each `n x n`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkWeights {
    pub matrices: Vec<Matrix>,
}

impl NetworkWeights {
    pub fn zeros(depth: usize, width: usize) -> Self {
        NetworkWeights { matrices: (0..depth).map(|_| Matrix::zeros(width, width)).collect() }
    }

    pub fn depth(&self) -> usize {
        self.matrices.len()
    }
}

/// One draw with variance `variance` from a symmetric distribution.
pub fn draw_symmetric<R: Rng + ?Sized>(rng: &mut R, dist: Distribution, variance: f64) -> f64 {
    let std = libm::sqrt(variance);
    match dist {
        Distribution::Gaussian => {
            let z: f64 = rng.sample(StandardNormal);
            std * z
        }
        Distribution::UniformSymmetric => {
            // magnitude and sign drawn separately so the law is exactly symmetric
            let half_width = std * libm::sqrt(3.0);
            let magnitude = half_width * rng.random::<f64>();
            if rng.random::<bool>() {
                magnitude
            } else {
                -magnitude
            }
        }
        Distribution::Rademacher => {
            if rng.random::<bool>() {
                std
            } else {
                -std
            }
        }
    }
}

pub fn sample_weights(cfg: &NetworkConfig, plan: SeedPlan) -> Result<NetworkWeights> {
    cfg.validate()?;
    let variance = cfg.weight_variance()?;
    let mut rng = plan.rng(StreamPurpose::Weights);
    let n = cfg.width;
    let matrices = (0..cfg.depth)
        .map(|_| Matrix::from_fn(n, n, |_, _| draw_symmetric(&mut rng, cfg.init.distribution, variance)))
        .collect();
    Ok(NetworkWeights { matrices })
}

fn gaussian_matrix(rows: usize, cols: usize, variance: f64, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| draw_symmetric(rng, Distribution::Gaussian, variance))
}

/// `N x n` Gaussian inputs with variance `cfg.input_variance`.
pub fn sample_inputs(cfg: &NetworkConfig, plan: SeedPlan) -> Result<Matrix> {
    cfg.validate()?;
    let mut rng = plan.rng(StreamPurpose::Inputs);
    Ok(gaussian_matrix(cfg.batch_size, cfg.width, cfg.input_variance, &mut rng))
}

/// `N x n` zero-mean Gaussian output deltas with variance `cfg.output_delta_variance`.
pub fn sample_output_delta(cfg: &NetworkConfig, plan: SeedPlan) -> Result<Matrix> {
    cfg.validate()?;
    let mut rng = plan.rng(StreamPurpose::OutputDelta);
    Ok(gaussian_matrix(cfg.batch_size, cfg.width, cfg.output_delta_variance, &mut rng))
}
