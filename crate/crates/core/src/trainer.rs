//! Short full-batch gradient-descent runs on a synthetic two-class task.
//!
//! Each sample is `t * s * 1/sqrt(n) + noise` with label `t = +-1` and
//! standard normal noise. The readout is the mean of the `z^L` row and the
//! loss is the mean squared error against `t`. A run stops at the first
//! non-finite value and records where it appeared.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::NetworkConfig;
use crate::propagation::{backward, forward, weight_gradients, ForwardTrace};
use crate::sampling::{draw_symmetric, sample_weights, NetworkWeights, SeedPlan, StreamPurpose};

/// Steps in a plateau window.
pub const PLATEAU_WINDOW: usize = 20;
/// Relative loss decrease below which a window counts as a plateau.
pub const PLATEAU_DECREASE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DatasetConfig {
    /// Training samples; the same number is drawn again for evaluation.
    pub samples: usize,
    /// Distance of each class mean from the origin.
    pub separation: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig { samples: 128, separation: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub net: NetworkConfig,
    pub steps: usize,
    pub learning_rate: f64,
    pub dataset: DatasetConfig,
    pub repeats: usize,
}

impl TrainConfig {
    pub fn new(net: NetworkConfig) -> Self {
        TrainConfig { net, steps: 100, learning_rate: 0.05, dataset: DatasetConfig::default(), repeats: 1 }
    }

    pub fn validate(&self) -> Result<()> {
        self.net.validate()?;
        if self.steps == 0 {
            return Err(Error::invalid("steps must be at least 1"));
        }
        if self.repeats == 0 {
            return Err(Error::invalid("repeats must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::invalid(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.dataset.samples < 2 {
            return Err(Error::invalid("the dataset needs at least 2 samples"));
        }
        if !(self.dataset.separation.is_finite() && self.dataset.separation >= 0.0) {
            return Err(Error::invalid("separation must be finite and non-negative"));
        }
        Ok(())
    }

    /// The network as trained: full batch over the training samples.
    pub fn training_network(&self) -> NetworkConfig {
        self.net.clone().with_batch_size(self.dataset.samples)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub targets: Vec<f64>,
}

/// Balanced labels, alternating `+1, -1`.
pub fn synthetic_dataset<R: Rng + ?Sized>(rng: &mut R, samples: usize, width: usize, separation: f64) -> Dataset {
    let shift = separation / libm::sqrt(width as f64);
    let targets: Vec<f64> = (0..samples).map(|r| if r % 2 == 0 { 1.0 } else { -1.0 }).collect();
    let inputs = Matrix::from_fn(samples, width, |r, _| {
        targets[r] * shift + draw_symmetric(rng, crate::model::Distribution::Gaussian, 1.0)
    });
    Dataset { inputs, targets }
}

/// Training and evaluation sets for `seed`, shared by every repeat.
pub fn datasets(tc: &TrainConfig, seed: u64) -> (Dataset, Dataset) {
    let mut rng = SeedPlan::new(seed, 0).rng(StreamPurpose::Dataset);
    let d = &tc.dataset;
    let train = synthetic_dataset(&mut rng, d.samples, tc.net.width, d.separation);
    let eval = synthetic_dataset(&mut rng, d.samples, tc.net.width, d.separation);
    (train, eval)
}

pub fn readout(z: &Matrix) -> Vec<f64> {
    (0..z.rows()).map(|r| z.row(r).iter().sum::<f64>() / z.cols() as f64).collect()
}

pub fn squared_error(pred: &[f64], targets: &[f64]) -> f64 {
    pred.iter().zip(targets).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64
}

/// Per-sample `d(loss)/d(z^L)`: `2 (y - t) / n` in every column.
pub fn output_delta(z: &Matrix, targets: &[f64]) -> Matrix {
    let pred = readout(z);
    let scale = 2.0 / z.cols() as f64;
    Matrix::from_fn(z.rows(), z.cols(), |r, _| scale * (pred[r] - targets[r]))
}

/// Fraction of samples on the correct side of the mean prediction. The
/// classes are balanced, and without biases a ReLU branch can only shift the
/// readout upward, so the threshold is centered.
pub fn accuracy(pred: &[f64], targets: &[f64]) -> f64 {
    let center = pred.iter().sum::<f64>() / pred.len() as f64;
    let hits = pred.iter().zip(targets).filter(|(p, t)| (**p - center) * **t > 0.0).count();
    hits as f64 / pred.len() as f64
}

/// Where a run first produced a non-finite value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DivergenceSite {
    Output { layer: usize },
    Loss,
    Gradient { layer: usize },
    Weights { layer: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Divergence {
    pub step: usize,
    pub site: DivergenceSite,
}

impl Divergence {
    pub fn layer(&self) -> Option<usize> {
        match self.site {
            DivergenceSite::Loss => None,
            DivergenceSite::Output { layer } | DivergenceSite::Gradient { layer } | DivergenceSite::Weights { layer } => {
                Some(layer)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormSummary {
    pub min: f64,
    pub max: f64,
    pub mean: f64,
}

impl NormSummary {
    pub fn of(norms: &[f64]) -> Self {
        let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
        let max = norms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mean = norms.iter().sum::<f64>() / norms.len() as f64;
        NormSummary { min, max, mean }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub loss: f64,
    pub grad_norms: NormSummary,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RepeatResult {
    pub repeat: usize,
    /// One record per step whose loss and gradients were finite.
    pub steps: Vec<StepRecord>,
    /// `||G^l||` for `l = 1..=L` before the first update.
    pub initial_grad_norms: Vec<f64>,
    pub divergence: Option<Divergence>,
    /// Evaluation accuracy of the last finite parameters.
    pub final_accuracy: f64,
}

impl RepeatResult {
    pub fn losses(&self) -> impl Iterator<Item = f64> + '_ {
        self.steps.iter().map(|s| s.loss)
    }

    /// Steps `s` where the loss fell by less than 1% between `s` and `s + 20`.
    pub fn plateau_starts(&self) -> Vec<usize> {
        let losses: Vec<f64> = self.losses().collect();
        if losses.len() <= PLATEAU_WINDOW {
            return Vec::new();
        }
        (0..losses.len() - PLATEAU_WINDOW)
            .filter(|&s| losses[s] - losses[s + PLATEAU_WINDOW] < PLATEAU_DECREASE * losses[s])
            .collect()
    }

    pub fn has_plateau(&self) -> bool {
        !self.plateau_starts().is_empty()
    }

    pub fn initial_mean_grad_norm(&self) -> f64 {
        NormSummary::of(&self.initial_grad_norms).mean
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainResult {
    pub repeats: Vec<RepeatResult>,
}

impl TrainResult {
    pub fn divergences(&self) -> usize {
        self.repeats.iter().filter(|r| r.divergence.is_some()).count()
    }

    pub fn plateaus(&self) -> usize {
        self.repeats.iter().filter(|r| r.has_plateau()).count()
    }

    pub fn accuracy_std(&self) -> f64 {
        let acc: Vec<f64> = self.repeats.iter().map(|r| r.final_accuracy).collect();
        let mean = acc.iter().sum::<f64>() / acc.len() as f64;
        let ss = acc.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>();
        if acc.len() < 2 {
            0.0
        } else {
            libm::sqrt(ss / (acc.len() - 1) as f64)
        }
    }

    /// Mean over repeats of the step-0 mean gradient norm.
    pub fn initial_mean_grad_norm(&self) -> f64 {
        self.repeats.iter().map(|r| r.initial_mean_grad_norm()).sum::<f64>() / self.repeats.len() as f64
    }
}

fn first_non_finite_layer(trace: &ForwardTrace) -> Option<usize> {
    trace.layers.iter().position(|l| !l.output.is_finite()).map(|i| i + 1)
}

fn evaluate(net: &NetworkConfig, w: &NetworkWeights, data: &Dataset) -> f64 {
    let cfg = net.clone().with_batch_size(data.inputs.rows());
    match forward(&cfg, w, &data.inputs) {
        Ok(t) => accuracy(&readout(t.final_output()), &data.targets),
        Err(_) => 0.0,
    }
}

/// One independently initialized run on the shared datasets.
pub fn train_repeat(tc: &TrainConfig, seed: u64, repeat: usize, train: &Dataset, eval: &Dataset) -> Result<RepeatResult> {
    tc.validate()?;
    let net = tc.training_network();
    let mut weights = sample_weights(&net, SeedPlan::new(seed, repeat as u64))?;
    let mut steps = Vec::with_capacity(tc.steps);
    let mut initial_grad_norms = Vec::new();
    let mut divergence = None;
    // parameters of the most recent step with a finite loss
    let mut last_finite = weights.clone();
    for step in 0..tc.steps {
        let halt = |site| Some(Divergence { step, site });
        let trace = match forward(&net, &weights, &train.inputs) {
            Ok(t) => t,
            Err(Error::DegenerateBatch { layer, .. }) => {
                divergence = halt(DivergenceSite::Output { layer });
                break;
            }
            Err(e) => return Err(e),
        };
        if let Some(layer) = first_non_finite_layer(&trace) {
            divergence = halt(DivergenceSite::Output { layer });
            break;
        }
        let loss = squared_error(&readout(trace.final_output()), &train.targets);
        if !loss.is_finite() {
            divergence = halt(DivergenceSite::Loss);
            break;
        }
        last_finite.clone_from(&weights);
        let delta = output_delta(trace.final_output(), &train.targets);
        let back = backward(&net, &weights, &trace, &delta)?;
        let grads = weight_gradients(&trace, &back);
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            divergence = halt(DivergenceSite::Gradient { layer: i + 1 });
            break;
        }
        let norms: Vec<f64> = grads.iter().map(|g| libm::sqrt(g.frobenius_norm_sq())).collect();
        if step == 0 {
            initial_grad_norms = norms.clone();
        }
        steps.push(StepRecord { step, loss, grad_norms: NormSummary::of(&norms) });
        let mut next = weights.clone();
        for (w, g) in next.matrices.iter_mut().zip(&grads) {
            w.axpy(-tc.learning_rate, g);
        }
        if let Some(i) = next.matrices.iter().position(|w| !w.is_finite()) {
            divergence = halt(DivergenceSite::Weights { layer: i + 1 });
            break;
        }
        weights = next;
    }
    let final_weights = if divergence.is_some() { &last_finite } else { &weights };
    let final_accuracy = evaluate(&tc.net, final_weights, eval);
    Ok(RepeatResult { repeat, steps, initial_grad_norms, divergence, final_accuracy })
}

/// All repeats in order.
pub fn train(tc: &TrainConfig, seed: u64) -> Result<TrainResult> {
    tc.validate()?;
    let (tr, ev) = datasets(tc, seed);
    let repeats = (0..tc.repeats).map(|r| train_repeat(tc, seed, r, &tr, &ev)).collect::<Result<_>>()?;
    Ok(TrainResult { repeats })
}

fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = alloc::vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

/// Spearman rank correlation with average ranks for ties. `NaN` when either
/// side is constant.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let ma = ra.iter().sum::<f64>() / n;
    let mb = rb.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / libm::sqrt(saa * sbb)
}
