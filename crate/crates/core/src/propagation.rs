//! Exact forward and backward propagation through a stack of residual blocks.
//!
//! Per block `l` (1-based), with `z^0 = x`:
//!
//! | block        | branch input `b`        | branch                 | output              |
//! |--------------|-------------------------|------------------------|---------------------|
//! | `Plain`      | `z^{l-1}`               | `u = W b`              | `z^l = f(u) + z^{l-1}` |
//! | `BnPreAdd`   | `bn(z^{l-1})`           | `u = W b`              | `z^l = f(u) + z^{l-1}` |
//! | `BnPreAct`   | `f(bn(z^{l-1}))`        | `u = W b`              | `z^l = u + z^{l-1}`    |
//!
//! Batch normalization uses the per-unit batch mean and the biased (`1/N`)
//! batch standard deviation, with no epsilon and no learnable scale or shift.
//!
//! Deltas are per-sample loss derivatives: row `r` of `delta_z^l` is
//! `dE_r / dz^l_r`, the batch loss is the mean of the per-sample losses and
//! weight gradients are batch means of `delta (x) b`. Batch normalization
//! couples the rows, and the backward pass applies its full finite-`N`
//! Jacobian.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Activation, BlockKind, NetworkConfig};
use crate::sampling::NetworkWeights;

/// Per-unit batch statistics of a block input.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardLayer {
    /// Statistics of `z^{l-1}` (batch-normalized kinds only).
    pub batch_stats: Option<BatchStats>,
    /// `bn(z^{l-1})` (batch-normalized kinds only).
    pub normalized_input: Option<Matrix>,
    /// What `W^l` multiplies.
    pub branch_input: Matrix,
    /// `u^l = W^l b`.
    pub pre_activation: Matrix,
    /// `z^l`.
    pub output: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub block: BlockKind,
    pub activation: Activation,
    pub input: Matrix,
    pub layers: Vec<ForwardLayer>,
}

impl ForwardTrace {
    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn batch_size(&self) -> usize {
        self.input.rows()
    }

    /// `z^l` for `l` in `0..=L`.
    pub fn output(&self, l: usize) -> &Matrix {
        if l == 0 {
            &self.input
        } else {
            &self.layers[l - 1].output
        }
    }

    pub fn final_output(&self) -> &Matrix {
        self.output(self.depth())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardLayer {
    /// `delta_z^l = dE/dz^l`.
    pub delta_z: Matrix,
    /// `delta^l = dE/du^l`; equal to `delta_z^l` for `BnPreAct`.
    pub delta: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BackwardTrace {
    pub layers: Vec<BackwardLayer>,
    /// `dE/dx`.
    pub input_delta: Matrix,
}

fn check_shapes(cfg: &NetworkConfig, weights: &NetworkWeights, x: &Matrix) -> Result<()> {
    if weights.depth() != cfg.depth {
        return Err(Error::contract(format!(
            "expected {} weight matrices, got {}",
            cfg.depth,
            weights.depth()
        )));
    }
    for (l, w) in weights.matrices.iter().enumerate() {
        if w.shape() != (cfg.width, cfg.width) {
            return Err(Error::contract(format!(
                "W^{} has shape {:?}, expected {}x{}",
                l + 1,
                w.shape(),
                cfg.width,
                cfg.width
            )));
        }
    }
    if x.cols() != cfg.width {
        return Err(Error::contract(format!(
            "input has {} columns, expected {}",
            x.cols(),
            cfg.width
        )));
    }
    if x.rows() == 0 || (cfg.block.is_batch_normalized() && x.rows() < 2) {
        return Err(Error::contract(format!(
            "batch of {} rows is too small for {} blocks",
            x.rows(),
            cfg.block
        )));
    }
    Ok(())
}

/// Normalizes every column of `z` by its batch mean and biased batch std.
///
/// `layer` only labels a degenerate-batch error.
pub fn batch_normalize(z: &Matrix, layer: usize) -> Result<(BatchStats, Matrix)> {
    let (rows, cols) = z.shape();
    let inv_n = 1.0 / rows as f64;
    let mut mean = alloc::vec![0.0; cols];
    for r in 0..rows {
        for (m, &v) in mean.iter_mut().zip(z.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m *= inv_n;
    }
    let mut var = alloc::vec![0.0; cols];
    for r in 0..rows {
        for ((s, &v), &m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
            let d = v - m;
            *s += d * d;
        }
    }
    let mut std = Vec::with_capacity(cols);
    for (unit, s) in var.iter().enumerate() {
        let sd = libm::sqrt(s * inv_n);
        if sd == 0.0 || !sd.is_finite() {
            return Err(Error::DegenerateBatch { layer, unit });
        }
        std.push(sd);
    }
    let mut normalized = z.clone();
    for r in 0..rows {
        for ((v, &m), &s) in normalized.row_mut(r).iter_mut().zip(&mean).zip(&std) {
            *v = (*v - m) / s;
        }
    }
    Ok((BatchStats { mean, std }, normalized))
}

/// Pulls a gradient with respect to `bn(z)` back to `z`, column by column:
/// `g_z = (g - mean(g) - zhat * mean(g * zhat)) / sigma`.
pub fn batch_norm_backward(normalized: &Matrix, std: &[f64], grad_normalized: &Matrix) -> Matrix {
    let (rows, cols) = normalized.shape();
    let inv_n = 1.0 / rows as f64;
    let mut mean_g = alloc::vec![0.0; cols];
    let mut mean_gz = alloc::vec![0.0; cols];
    for r in 0..rows {
        let zr = normalized.row(r);
        let gr = grad_normalized.row(r);
        for j in 0..cols {
            mean_g[j] += gr[j];
            mean_gz[j] += gr[j] * zr[j];
        }
    }
    for j in 0..cols {
        mean_g[j] *= inv_n;
        mean_gz[j] *= inv_n;
    }
    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        let zr = normalized.row(r);
        let gr = grad_normalized.row(r);
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = (gr[j] - mean_g[j] - zr[j] * mean_gz[j]) / std[j];
        }
    }
    out
}

/// Jacobian `d zhat_i / d z_j` of normalizing one unit over a batch:
/// `(delta_ij - 1/N) / sigma - zhat_i zhat_j / (N sigma)`.
pub fn batchnorm_jacobian(column: &[f64]) -> Result<Matrix> {
    let n = column.len();
    if n < 2 {
        return Err(Error::contract("batch normalization needs at least two rows"));
    }
    let z = Matrix::from_vec(n, 1, column.to_vec());
    let (stats, zhat) = batch_normalize(&z, 0)?;
    let sigma = stats.std[0];
    let inv_n = 1.0 / n as f64;
    Ok(Matrix::from_fn(n, n, |i, j| {
        let kron = if i == j { 1.0 } else { 0.0 };
        (kron - inv_n) / sigma - zhat.as_slice()[i] * zhat.as_slice()[j] * inv_n / sigma
    }))
}

pub fn forward(cfg: &NetworkConfig, weights: &NetworkWeights, x: &Matrix) -> Result<ForwardTrace> {
    check_shapes(cfg, weights, x)?;
    let f = cfg.activation;
    let mut layers: Vec<ForwardLayer> = Vec::with_capacity(cfg.depth);
    for (idx, w) in weights.matrices.iter().enumerate() {
        let layer = idx + 1;
        let prev = layers.last().map_or(x, |l| &l.output);
        let (batch_stats, normalized_input, branch_input) = match cfg.block {
            BlockKind::Plain => (None, None, prev.clone()),
            BlockKind::BnPreAdd => {
                let (stats, zhat) = batch_normalize(prev, layer)?;
                let b = zhat.clone();
                (Some(stats), Some(zhat), b)
            }
            BlockKind::BnPreAct => {
                let (stats, zhat) = batch_normalize(prev, layer)?;
                let b = zhat.map(|v| f.apply(v));
                (Some(stats), Some(zhat), b)
            }
        };
        let pre_activation = branch_input.matmul_transposed(w);
        let mut output = match cfg.block {
            BlockKind::BnPreAct => pre_activation.clone(),
            _ => pre_activation.map(|v| f.apply(v)),
        };
        output.add_assign(prev);
        layers.push(ForwardLayer { batch_stats, normalized_input, branch_input, pre_activation, output });
    }
    Ok(ForwardTrace { block: cfg.block, activation: f, input: x.clone(), layers })
}

pub fn backward(
    cfg: &NetworkConfig,
    weights: &NetworkWeights,
    trace: &ForwardTrace,
    delta_out: &Matrix,
) -> Result<BackwardTrace> {
    if trace.depth() != weights.depth() || trace.block != cfg.block {
        return Err(Error::contract("trace does not match the network"));
    }
    if delta_out.shape() != trace.final_output().shape() {
        return Err(Error::contract(format!(
            "output delta has shape {:?}, expected {:?}",
            delta_out.shape(),
            trace.final_output().shape()
        )));
    }
    let f = cfg.activation;
    let depth = trace.depth();
    let mut delta_z = delta_out.clone();
    let mut reversed: Vec<BackwardLayer> = Vec::with_capacity(depth);
    for idx in (0..depth).rev() {
        let fwd = &trace.layers[idx];
        let delta = match cfg.block {
            BlockKind::BnPreAct => delta_z.clone(),
            _ => fwd.pre_activation.zip_map(&delta_z, |u, d| f.derivative(u) * d),
        };
        // d/d(branch input) of u = W b, row by row: delta * W
        let grad_branch = delta.matmul(&weights.matrices[idx]);
        let grad_prev = match cfg.block {
            BlockKind::Plain => grad_branch,
            BlockKind::BnPreAdd | BlockKind::BnPreAct => {
                let zhat = fwd.normalized_input.as_ref().expect("normalized input recorded");
                let stats = fwd.batch_stats.as_ref().expect("batch stats recorded");
                let grad_hat = if cfg.block == BlockKind::BnPreAct {
                    zhat.zip_map(&grad_branch, |v, g| f.derivative(v) * g)
                } else {
                    grad_branch
                };
                batch_norm_backward(zhat, &stats.std, &grad_hat)
            }
        };
        let mut next = delta_z.clone();
        next.add_assign(&grad_prev);
        reversed.push(BackwardLayer { delta_z, delta });
        delta_z = next;
    }
    reversed.reverse();
    Ok(BackwardTrace { layers: reversed, input_delta: delta_z })
}

/// `dE/dW^l` for every layer: batch mean of `delta^l (x) b^l`.
pub fn weight_gradients(trace: &ForwardTrace, back: &BackwardTrace) -> Vec<Matrix> {
    let inv_n = 1.0 / trace.batch_size() as f64;
    trace
        .layers
        .iter()
        .zip(&back.layers)
        .map(|(fwd, bwd)| {
            let mut g = bwd.delta.transposed_matmul(&fwd.branch_input);
            g.scale(inv_n);
            g
        })
        .collect()
}

/// Quadratic probe loss `E = ||z^L||^2 / (2N)`.
pub fn probe_loss(trace: &ForwardTrace) -> f64 {
    let z = trace.final_output();
    0.5 * z.frobenius_norm_sq() / z.rows() as f64
}

/// Per-sample output delta of [`probe_loss`], which is `z^L` itself.
pub fn probe_delta(trace: &ForwardTrace) -> Matrix {
    trace.final_output().clone()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitScheme;
    use crate::sampling::{sample_inputs, sample_weights, SeedPlan};

    fn cfg(block: BlockKind, act: Activation, depth: usize, width: usize) -> NetworkConfig {
        NetworkConfig::new(depth, width, act, block)
    }

    #[test]
    fn zero_weights_keep_the_input() {
        let c = cfg(BlockKind::Plain, Activation::Identity, 4, 3);
        let x = Matrix::from_fn(2, 3, |r, k| (r * 3 + k) as f64 - 2.0);
        let w = NetworkWeights::zeros(4, 3);
        let t = forward(&c, &w, &x).unwrap();
        for l in 0..=4 {
            assert_eq!(t.output(l), &x);
        }
        let d = Matrix::from_fn(2, 3, |r, k| (r + k) as f64 * 0.5);
        let b = backward(&c, &w, &t, &d).unwrap();
        for (l, layer) in b.layers.iter().enumerate() {
            assert_eq!(layer.delta_z, d);
            let g = weight_gradients(&t, &b);
            let mut expected = d.transposed_matmul(t.output(l));
            expected.scale(0.5);
            assert_eq!(g[l], expected);
        }
    }

    #[test]
    fn relu_kills_negative_branch() {
        let c = cfg(BlockKind::Plain, Activation::Relu, 1, 1).with_batch_size(1);
        let w = NetworkWeights { matrices: alloc::vec![Matrix::identity(1)] };
        let x = Matrix::from_vec(1, 1, alloc::vec![-3.0]);
        let t = forward(&c, &w, &x).unwrap();
        assert_eq!(t.layers[0].pre_activation.as_slice(), &[-3.0]);
        assert_eq!(t.final_output().as_slice(), &[-3.0]);
    }

    #[test]
    fn identity_weights_double_each_layer() {
        let c = cfg(BlockKind::Plain, Activation::Identity, 2, 2).with_batch_size(1);
        let w = NetworkWeights { matrices: alloc::vec![Matrix::identity(2), Matrix::identity(2)] };
        let x = Matrix::from_vec(1, 2, alloc::vec![1.0, 2.0]);
        let t = forward(&c, &w, &x).unwrap();
        assert_eq!(t.final_output().as_slice(), &[4.0, 8.0]);
    }

    #[test]
    fn scalar_delta_doubles_per_layer() {
        let c = cfg(BlockKind::Plain, Activation::Identity, 2, 1).with_batch_size(1);
        let w = NetworkWeights { matrices: alloc::vec![Matrix::identity(1), Matrix::identity(1)] };
        let x = Matrix::from_vec(1, 1, alloc::vec![0.7]);
        let t = forward(&c, &w, &x).unwrap();
        let d = Matrix::from_vec(1, 1, alloc::vec![1.5]);
        let b = backward(&c, &w, &t, &d).unwrap();
        assert_eq!(b.layers[1].delta_z.as_slice(), &[1.5]);
        assert_eq!(b.layers[0].delta_z.as_slice(), &[3.0]);
        assert_eq!(b.input_delta.as_slice(), &[6.0]);
    }

    #[test]
    fn n2_batchnorm_jacobian_vanishes() {
        let j = batchnorm_jacobian(&[-1.0, 1.0]).unwrap();
        for &v in j.as_slice() {
            assert!(v.abs() < 1e-15, "{v}");
        }
        let j = batchnorm_jacobian(&[3.5, -10.25]).unwrap();
        assert!(j.max_abs() < 1e-15);
    }

    #[test]
    fn jacobian_rows_sum_to_zero() {
        let col = [0.3, -1.2, 2.5, 0.0, 0.9, -0.4];
        let j = batchnorm_jacobian(&col).unwrap();
        for i in 0..col.len() {
            let s: f64 = j.row(i).iter().sum();
            assert!(s.abs() < 1e-14, "{s}");
        }
    }

    #[test]
    fn degenerate_batch_is_an_error() {
        let c = cfg(BlockKind::BnPreAdd, Activation::Identity, 2, 2).with_batch_size(3);
        let w = NetworkWeights::zeros(2, 2);
        let x = Matrix::from_vec(3, 2, alloc::vec![1.0, 0.5, 2.0, 0.5, 3.0, 0.5]);
        assert_eq!(forward(&c, &w, &x), Err(Error::DegenerateBatch { layer: 1, unit: 1 }));
        assert!(batchnorm_jacobian(&[2.0, 2.0, 2.0]).is_err());
    }

    #[test]
    fn shape_mismatch_is_a_contract_error() {
        let c = cfg(BlockKind::Plain, Activation::Identity, 2, 2).with_batch_size(3);
        let w = NetworkWeights::zeros(2, 2);
        assert!(matches!(forward(&c, &w, &Matrix::zeros(3, 3)), Err(Error::Contract(_))));
        let x = Matrix::from_fn(3, 2, |r, k| (r + k) as f64);
        let t = forward(&c, &w, &x).unwrap();
        assert!(matches!(backward(&c, &w, &t, &Matrix::zeros(2, 2)), Err(Error::Contract(_))));
        let short = NetworkWeights::zeros(1, 2);
        assert!(forward(&c, &short, &x).is_err());
    }

    #[test]
    fn normalized_outputs_are_standardized() {
        for block in [BlockKind::BnPreAdd, BlockKind::BnPreAct] {
            let c = cfg(block, Activation::Relu, 5, 6)
                .with_batch_size(9)
                .with_init(InitScheme::glorot());
            let plan = SeedPlan::new(77, 1);
            let w = sample_weights(&c, plan).unwrap();
            let x = sample_inputs(&c, plan).unwrap();
            let t = forward(&c, &w, &x).unwrap();
            for layer in &t.layers {
                let zhat = layer.normalized_input.as_ref().unwrap();
                for j in 0..zhat.cols() {
                    let col = zhat.column(j);
                    let m = col.iter().sum::<f64>() / col.len() as f64;
                    let v = col.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / col.len() as f64;
                    assert!(m.abs() <= 1e-10, "{m}");
                    assert!((v - 1.0).abs() <= 1e-10, "{v}");
                }
            }
        }
    }
}
