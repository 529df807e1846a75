//! Seeded Monte-Carlo estimation of per-layer statistics and comparison with
//! the closed-form predictions.
//!
//! Values are pooled across units, batch rows and trials, which are
//! exchangeable under the i.i.d. weight model. Each trial is summarized on
//! its own ([`measure_trial`]) and summaries are merged in trial-index order,
//! so the result does not depend on how trials were scheduled.

use alloc::boxed::Box;
use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::analytic::{Prediction, PredictionKind, PredictionRow, PredictionTable};
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{Activation, BlockKind, NetworkConfig};
use crate::propagation::{backward, forward, BackwardTrace, ForwardTrace};
use crate::sampling::{sample_inputs, sample_output_delta, sample_weights, SeedPlan};
use crate::stats::{Moments, Welford};

/// A measured per-layer quantity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Quantity {
    /// Layer output `z^l`.
    Z,
    /// Branch pre-activation `u^l`.
    U,
    /// `delta_z^l = dE/dz^l`.
    DeltaZ,
    /// `delta^l = dE/du^l`.
    Delta,
    /// Per-sample weight gradient entries `delta^l_j b^l_i`.
    Grad,
    /// Per-unit biased batch variance of `z^l`.
    SigmaSq,
    /// Indicator that the activation derivative is 1 (ReLU only).
    Active,
}

/// Which statistic of a quantity is compared with predictions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Statistic {
    Variance,
    Mean,
}

impl Quantity {
    pub const ALL: [Quantity; 7] = [
        Quantity::Z,
        Quantity::U,
        Quantity::DeltaZ,
        Quantity::Delta,
        Quantity::Grad,
        Quantity::SigmaSq,
        Quantity::Active,
    ];
    pub const COUNT: usize = Self::ALL.len();

    pub fn name(self) -> &'static str {
        match self {
            Quantity::Z => "z",
            Quantity::U => "u",
            Quantity::DeltaZ => "delta_z",
            Quantity::Delta => "delta",
            Quantity::Grad => "grad",
            Quantity::SigmaSq => "sigma_sq",
            Quantity::Active => "active_fraction",
        }
    }

    pub fn statistic(self) -> Statistic {
        match self {
            Quantity::SigmaSq | Quantity::Active => Statistic::Mean,
            _ => Statistic::Variance,
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Quantity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pooled moments of one quantity at one layer plus per-trial summaries for
/// between-trial standard errors.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuantityStats {
    pub pooled: Moments,
    pub trial_means: Welford,
    pub trial_variances: Welford,
}

impl QuantityStats {
    fn from_moments(m: Moments) -> Self {
        QuantityStats {
            pooled: m,
            trial_means: Welford::single(m.mean),
            trial_variances: Welford::single(m.variance()),
        }
    }

    pub fn merge(&mut self, other: &QuantityStats) {
        self.pooled.merge(&other.pooled);
        self.trial_means.merge(&other.trial_means);
        self.trial_variances.merge(&other.trial_variances);
    }

    pub fn is_measured(&self) -> bool {
        self.pooled.count > 0
    }

    pub fn variance(&self) -> f64 {
        self.pooled.variance()
    }

    pub fn mean(&self) -> f64 {
        self.pooled.mean
    }

    /// Larger of the normal-theory and between-trial standard errors of the
    /// pooled variance.
    pub fn variance_stderr(&self) -> f64 {
        max_defined(self.pooled.stderr_of_variance(), self.trial_variances.stderr())
    }

    /// Larger of the i.i.d. and between-trial standard errors of the pooled mean.
    pub fn mean_stderr(&self) -> f64 {
        max_defined(self.pooled.stderr_of_mean(), self.trial_means.stderr())
    }

    pub fn estimate(&self, statistic: Statistic) -> (f64, f64) {
        match statistic {
            Statistic::Variance => (self.variance(), self.variance_stderr()),
            Statistic::Mean => (self.mean(), self.mean_stderr()),
        }
    }
}

fn max_defined(a: f64, b: f64) -> f64 {
    match (a.is_nan(), b.is_nan()) {
        (true, true) => f64::NAN,
        (true, false) => b,
        (false, true) => a,
        (false, false) => a.max(b),
    }
}

/// Per-layer statistics for `l = 1..=L`.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerStats {
    pub depth: usize,
    pub trials: u64,
    /// Inclusive range of merged trial indices, in merge order.
    pub trial_range: Option<(u64, u64)>,
    layers: Vec<[QuantityStats; Quantity::COUNT]>,
}

impl LayerStats {
    pub fn empty(depth: usize) -> Self {
        LayerStats {
            depth,
            trials: 0,
            trial_range: None,
            layers: alloc::vec![[QuantityStats::default(); Quantity::COUNT]; depth],
        }
    }

    /// Statistics of `q` at layer `l` (1-based).
    pub fn get(&self, layer: usize, q: Quantity) -> &QuantityStats {
        &self.layers[layer - 1][q.index()]
    }

    fn set(&mut self, layer: usize, q: Quantity, m: Moments) {
        self.layers[layer - 1][q.index()] = QuantityStats::from_moments(m);
    }

    /// Appends `other`, which must cover later trials.
    pub fn merge(&mut self, other: &LayerStats) -> Result<()> {
        if other.depth != self.depth {
            return Err(Error::contract(format!(
                "cannot merge statistics of depth {} into depth {}",
                other.depth, self.depth
            )));
        }
        for (mine, theirs) in self.layers.iter_mut().zip(&other.layers) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.merge(b);
            }
        }
        self.trials += other.trials;
        self.trial_range = match (self.trial_range, other.trial_range) {
            (None, r) | (r, None) => r,
            (Some((lo, _)), Some((_, hi))) => Some((lo, hi)),
        };
        Ok(())
    }

    /// `Var[q^l] / Var[delta_z^L]` with a first-order standard error that
    /// treats numerator and denominator as independent.
    pub fn ratio_to_output_delta(&self, layer: usize, q: Quantity) -> RatioEstimate {
        let num = self.get(layer, q);
        let den = self.get(self.depth, Quantity::DeltaZ);
        ratio_estimate(num.variance(), num.variance_stderr(), den.variance(), den.variance_stderr())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RatioEstimate {
    pub ratio: f64,
    pub stderr: f64,
}

fn sq(x: f64) -> f64 {
    x * x
}

pub fn ratio_estimate(num: f64, num_se: f64, den: f64, den_se: f64) -> RatioEstimate {
    let ratio = num / den;
    let rel = |se: f64, v: f64| if se.is_nan() { 0.0 } else { se / v };
    let stderr = libm::fabs(ratio) * libm::sqrt(sq(rel(num_se, num)) + sq(rel(den_se, den)));
    RatioEstimate { ratio, stderr }
}

fn batch_variances(z: &Matrix) -> Vec<f64> {
    let (rows, cols) = z.shape();
    let mut mean = alloc::vec![0.0; cols];
    for r in 0..rows {
        for (m, &v) in mean.iter_mut().zip(z.row(r)) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows as f64;
    }
    let mut var = alloc::vec![0.0; cols];
    for r in 0..rows {
        for ((s, &v), &m) in var.iter_mut().zip(z.row(r)).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    for s in &mut var {
        *s /= rows as f64;
    }
    var
}

/// Moments of every per-sample gradient entry `delta_{r,j} b_{r,i}` without
/// materializing the `N x n x n` tensor: `sum_{r,i,j} (d b)^p =
/// sum_r (sum_j d^p)(sum_i b^p)`.
fn gradient_moments(delta: &Matrix, branch_input: &Matrix) -> Moments {
    let mut s = [0.0f64; 4];
    for r in 0..delta.rows() {
        let mut d = [0.0f64; 4];
        for &x in delta.row(r) {
            let x2 = x * x;
            d[0] += x;
            d[1] += x2;
            d[2] += x2 * x;
            d[3] += x2 * x2;
        }
        let mut b = [0.0f64; 4];
        for &x in branch_input.row(r) {
            let x2 = x * x;
            b[0] += x;
            b[1] += x2;
            b[2] += x2 * x;
            b[3] += x2 * x2;
        }
        for p in 0..4 {
            s[p] += d[p] * b[p];
        }
    }
    let count = (delta.rows() * delta.cols() * branch_input.cols()) as u64;
    Moments::from_power_sums(count, s)
}

/// Summarizes one propagated trial.
pub fn summarize_trial(cfg: &NetworkConfig, fwd: &ForwardTrace, back: &BackwardTrace) -> LayerStats {
    let mut stats = LayerStats::empty(cfg.depth);
    for l in 1..=cfg.depth {
        let f = &fwd.layers[l - 1];
        let b = &back.layers[l - 1];
        stats.set(l, Quantity::Z, Moments::from_slice(f.output.as_slice()));
        stats.set(l, Quantity::U, Moments::from_slice(f.pre_activation.as_slice()));
        stats.set(l, Quantity::DeltaZ, Moments::from_slice(b.delta_z.as_slice()));
        stats.set(l, Quantity::Delta, Moments::from_slice(b.delta.as_slice()));
        stats.set(l, Quantity::Grad, gradient_moments(&b.delta, &f.branch_input));
        if f.output.rows() >= 2 {
            stats.set(l, Quantity::SigmaSq, Moments::from_slice(&batch_variances(&f.output)));
        }
        if cfg.activation == Activation::Relu {
            let gate = match cfg.block {
                BlockKind::BnPreAct => f.normalized_input.as_ref().unwrap_or(&f.pre_activation),
                _ => &f.pre_activation,
            };
            let active: Vec<f64> = gate.as_slice().iter().map(|&v| cfg.activation.derivative(v)).collect();
            stats.set(l, Quantity::Active, Moments::from_slice(&active));
        }
    }
    stats
}

/// Samples, propagates and summarizes trial `plan.trial_index`.
pub fn measure_trial(cfg: &NetworkConfig, plan: SeedPlan) -> Result<LayerStats> {
    let wrap = |e: Error| Error::Trial { trial: plan.trial_index, source: Box::new(e) };
    let weights = sample_weights(cfg, plan).map_err(wrap)?;
    let x = sample_inputs(cfg, plan).map_err(wrap)?;
    let delta_out = sample_output_delta(cfg, plan).map_err(wrap)?;
    let fwd = forward(cfg, &weights, &x).map_err(wrap)?;
    let back = backward(cfg, &weights, &fwd, &delta_out).map_err(wrap)?;
    let mut stats = summarize_trial(cfg, &fwd, &back);
    stats.trials = 1;
    stats.trial_range = Some((plan.trial_index, plan.trial_index));
    Ok(stats)
}

/// Merges per-trial summaries in the given order.
pub fn merge_in_order<'a>(depth: usize, parts: impl IntoIterator<Item = &'a LayerStats>) -> Result<LayerStats> {
    let mut total = LayerStats::empty(depth);
    for p in parts {
        total.merge(p)?;
    }
    Ok(total)
}

/// Runs `trials` trials sequentially and merges them in index order.
pub fn run_experiment(cfg: &NetworkConfig, trials: u64, master_seed: u64) -> Result<LayerStats> {
    if trials == 0 {
        return Err(Error::invalid("trials must be at least 1"));
    }
    cfg.validate()?;
    let mut total = LayerStats::empty(cfg.depth);
    for t in 0..trials {
        total.merge(&measure_trial(cfg, SeedPlan::new(master_seed, t))?)?;
    }
    Ok(total)
}

/// Comparison tolerances.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ToleranceConfig {
    /// Relative tolerance for exact predictions (and lower-bound slack).
    pub exact_rel: f64,
    /// Standard errors allowed for exact predictions.
    pub z_crit: f64,
    /// Relative threshold for approximations in plain networks.
    pub approx_rel: f64,
    /// Relative threshold for batch-norm approximations.
    pub bn_rel: f64,
}

impl Default for ToleranceConfig {
    fn default() -> Self {
        ToleranceConfig { exact_rel: 0.05, z_crit: 4.0, approx_rel: 0.15, bn_rel: 0.10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub layer: usize,
    pub quantity: Quantity,
    pub empirical: f64,
    pub stderr: f64,
    pub predicted: f64,
    pub kind: PredictionKind,
    pub formula: &'static str,
    pub rel_err: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
}

impl ComparisonReport {
    /// True when every exact and lower-bound row passes; approximations are
    /// reported but do not gate.
    pub fn passed(&self) -> bool {
        self.failures().next().is_none()
    }

    pub fn failures(&self) -> impl Iterator<Item = &ComparisonRow> {
        self.rows.iter().filter(|r| r.kind != PredictionKind::Approximation && !r.pass)
    }
}

/// Applies the pass rule for `kind`.
pub fn judge(kind: PredictionKind, empirical: f64, stderr: f64, predicted: f64, rel_tol: f64, z_crit: f64) -> bool {
    let se = if stderr.is_nan() { 0.0 } else { stderr };
    match kind {
        PredictionKind::Exact => libm::fabs(empirical - predicted) <= (rel_tol * predicted).max(z_crit * se),
        PredictionKind::LowerBound => empirical >= predicted * (1.0 - rel_tol),
        PredictionKind::Approximation => libm::fabs(empirical - predicted) <= rel_tol * libm::fabs(predicted),
    }
}

fn slots(row: &PredictionRow) -> [(Quantity, Option<Prediction>); 6] {
    [
        (Quantity::Z, row.var_z),
        (Quantity::U, row.var_u),
        (Quantity::DeltaZ, row.var_delta_z),
        (Quantity::Delta, row.var_delta),
        (Quantity::Grad, row.var_grad),
        (Quantity::SigmaSq, row.sigma_sq),
    ]
}

const ACTIVE_FORMULA: &str = "P(f'(u)=1) = 1/2";

/// Compares measured statistics with `table`, layer by layer.
pub fn compare(stats: &LayerStats, table: &PredictionTable, tol: &ToleranceConfig) -> Result<ComparisonReport> {
    if table.rows.len() != stats.depth {
        return Err(Error::contract(format!(
            "prediction table has {} layers, statistics have {}",
            table.rows.len(),
            stats.depth
        )));
    }
    let bn = table.block.is_batch_normalized();
    let mut rows = Vec::new();
    for row in &table.rows {
        let mut push = |quantity: Quantity, p: Prediction| {
            let s = stats.get(row.layer, quantity);
            if !s.is_measured() {
                return;
            }
            let (empirical, stderr) = s.estimate(quantity.statistic());
            let predicted = p.value.value();
            let rel_tol = match p.kind {
                PredictionKind::Approximation if bn => tol.bn_rel,
                PredictionKind::Approximation => tol.approx_rel,
                _ => tol.exact_rel,
            };
            let rel_err = libm::fabs(empirical - predicted) / libm::fabs(predicted);
            let pass = judge(p.kind, empirical, stderr, predicted, rel_tol, tol.z_crit);
            rows.push(ComparisonRow {
                layer: row.layer,
                quantity,
                empirical,
                stderr,
                predicted,
                kind: p.kind,
                formula: p.formula,
                rel_err,
                pass,
            });
        };
        for (q, p) in slots(row) {
            if let Some(p) = p {
                push(q, p);
            }
        }
        if table.activation == Activation::Relu {
            push(
                Quantity::Active,
                Prediction {
                    value: crate::analytic::LogReal::from_value(0.5),
                    kind: PredictionKind::Exact,
                    formula: ACTIVE_FORMULA,
                },
            );
        }
    }
    // the active fraction is judged on standard errors alone
    for r in rows.iter_mut().filter(|r| r.quantity == Quantity::Active) {
        r.pass = judge(PredictionKind::Exact, r.empirical, r.stderr, r.predicted, 0.0, tol.z_crit);
    }
    Ok(ComparisonReport { rows })
}

/// Zero-mean check: `|mean| <= z_crit * stderr`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanCheck {
    pub layer: usize,
    pub quantity: Quantity,
    pub mean: f64,
    pub stderr: f64,
    pub pass: bool,
}

/// Zero-mean checks for the deltas and, where the branch is odd, for `z`.
/// ReLU branches have positive mean, so `z` is not checked there.
pub fn mean_checks(cfg: &NetworkConfig, stats: &LayerStats, z_crit: f64) -> Vec<MeanCheck> {
    let mut qs = alloc::vec![Quantity::DeltaZ, Quantity::Delta];
    if cfg.activation == Activation::Identity {
        qs.push(Quantity::Z);
    }
    let mut out = Vec::new();
    for l in 1..=stats.depth {
        for &q in &qs {
            let s = stats.get(l, q);
            let (mean, stderr) = (s.mean(), s.mean_stderr());
            out.push(MeanCheck { layer: l, quantity: q, mean, stderr, pass: libm::fabs(mean) <= z_crit * stderr });
        }
    }
    out
}

/// One batch size of a finite-batch convergence study.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvergenceRow {
    pub batch_size: usize,
    /// Measured `Var[delta_z^1] / Var[delta_z^L]`.
    pub ratio: f64,
    pub stderr: f64,
    /// Large-batch prediction `L / 1`.
    pub reference: f64,
    /// `|ratio - reference|`.
    pub deviation: f64,
}

pub fn convergence_row(cfg: &NetworkConfig, stats: &LayerStats) -> ConvergenceRow {
    let est = stats.ratio_to_output_delta(1, Quantity::DeltaZ);
    let reference = cfg.depth as f64;
    ConvergenceRow {
        batch_size: cfg.batch_size,
        ratio: est.ratio,
        stderr: est.stderr,
        reference,
        deviation: libm::fabs(est.ratio - reference),
    }
}

pub fn check_convergence_inputs(cfg: &NetworkConfig, batch_sizes: &[usize]) -> Result<()> {
    if !cfg.block.is_batch_normalized() {
        return Err(Error::contract("finite-batch convergence needs a batch-normalized block"));
    }
    if let Some(&n) = batch_sizes.iter().find(|&&n| n < 2) {
        return Err(Error::invalid(format!("batch size {n} is below 2")));
    }
    Ok(())
}

/// Measures the first-layer delta ratio for each batch size.
pub fn bn_finite_n_convergence(
    cfg: &NetworkConfig,
    batch_sizes: &[usize],
    trials: u64,
    master_seed: u64,
) -> Result<Vec<ConvergenceRow>> {
    check_convergence_inputs(cfg, batch_sizes)?;
    batch_sizes
        .iter()
        .map(|&n| {
            let c = cfg.clone().with_batch_size(n);
            run_experiment(&c, trials, master_seed).map(|s| convergence_row(&c, &s))
        })
        .collect()
}

/// True when deviations never grow by more than `z` combined standard errors
/// from one batch size to the next.
pub fn deviations_shrink(rows: &[ConvergenceRow], z: f64) -> bool {
    rows.windows(2).all(|w| {
        let slack = z * libm::sqrt(sq(w[0].stderr) + sq(w[1].stderr));
        w[1].deviation <= w[0].deviation + slack
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{predict, LogReal};
    use crate::model::InitScheme;

    #[test]
    fn zero_weights_reproduce_input_variance() {
        let cfg = NetworkConfig::new(3, 4, Activation::Identity, BlockKind::Plain)
            .with_init(InitScheme::fixed(0.0))
            .with_batch_size(6);
        let stats = run_experiment(&cfg, 1, 8).unwrap();
        let x = sample_inputs(&cfg, SeedPlan::new(8, 0)).unwrap();
        let expected = Moments::from_slice(x.as_slice()).variance();
        for l in 1..=3 {
            assert!((stats.get(l, Quantity::Z).variance() - expected).abs() < 1e-12);
        }
    }

    #[test]
    fn trial_summaries_merge_like_a_sequential_run() {
        let cfg = NetworkConfig::new(3, 5, Activation::Relu, BlockKind::BnPreAdd).with_batch_size(7);
        let seq = run_experiment(&cfg, 4, 1).unwrap();
        let parts: Vec<LayerStats> = (0..4).map(|t| measure_trial(&cfg, SeedPlan::new(1, t)).unwrap()).collect();
        let merged = merge_in_order(3, &parts).unwrap();
        assert_eq!(seq, merged);
        assert_eq!(seq.trials, 4);
        assert_eq!(seq.trial_range, Some((0, 3)));
    }

    #[test]
    fn gradient_moments_match_explicit_entries() {
        let d = Matrix::from_fn(3, 2, |r, c| r as f64 - 0.5 * c as f64 + 0.1);
        let b = Matrix::from_fn(3, 4, |r, c| (r * c) as f64 * 0.3 - 0.7);
        let mut entries = Vec::new();
        for r in 0..3 {
            for j in 0..2 {
                for i in 0..4 {
                    entries.push(d[(r, j)] * b[(r, i)]);
                }
            }
        }
        let direct = Moments::from_slice(&entries);
        let fast = gradient_moments(&d, &b);
        assert_eq!(direct.count, fast.count);
        assert!((direct.mean - fast.mean).abs() < 1e-12);
        assert!((direct.m2 - fast.m2).abs() < 1e-10);
        assert!((direct.m4 - fast.m4).abs() < 1e-9);
    }

    #[test]
    fn judge_rules() {
        assert!(judge(PredictionKind::LowerBound, 1.3, 0.01, 1.0, 0.05, 4.0));
        assert!(!judge(PredictionKind::Exact, 2.5, 0.01, 2.0, 0.05, 4.0));
        assert!(judge(PredictionKind::Exact, 2.05, 0.01, 2.0, 0.05, 4.0));
        assert!(judge(PredictionKind::Exact, 2.3, 0.1, 2.0, 0.05, 4.0));
        assert!(!judge(PredictionKind::LowerBound, 0.9, 0.0, 1.0, 0.05, 4.0));
    }

    #[test]
    fn compare_rejects_layer_mismatch() {
        let cfg = NetworkConfig::new(3, 2, Activation::Identity, BlockKind::Plain);
        let stats = LayerStats::empty(4);
        assert!(matches!(
            compare(&stats, &predict(&cfg).unwrap(), &ToleranceConfig::default()),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn compare_lower_bound_and_exact_rows() {
        let mut stats = LayerStats::empty(1);
        stats.set(1, Quantity::Z, Moments { count: 1000, mean: 0.0, m2: 1.3 * 999.0, m3: 0.0, m4: 5000.0 });
        stats.set(1, Quantity::DeltaZ, Moments { count: 1000, mean: 0.0, m2: 2.5 * 999.0, m3: 0.0, m4: 19000.0 });
        let bound = Prediction { value: LogReal::ONE, kind: PredictionKind::LowerBound, formula: "" };
        let exact = Prediction { value: LogReal::from_value(2.0), kind: PredictionKind::Exact, formula: "" };
        let table = PredictionTable {
            block: BlockKind::Plain,
            activation: Activation::Identity,
            rows: alloc::vec![PredictionRow { layer: 1, var_z: Some(bound), var_delta_z: Some(exact), ..Default::default() }],
        };
        let report = compare(&stats, &table, &ToleranceConfig::default()).unwrap();
        assert!(report.rows[0].pass);
        assert!(!report.rows[1].pass);
        assert!(!report.passed());
    }

    #[test]
    fn n2_convergence_ratio_is_one() {
        let cfg = NetworkConfig::new(8, 6, Activation::Identity, BlockKind::BnPreAdd)
            .with_init(InitScheme::glorot());
        let rows = bn_finite_n_convergence(&cfg, &[2], 5, 3).unwrap();
        assert!((rows[0].ratio - 1.0).abs() < 1e-12, "{}", rows[0].ratio);
        assert_eq!(rows[0].reference, 8.0);
        assert!(bn_finite_n_convergence(&cfg, &[1], 1, 0).is_err());
        let plain = NetworkConfig { block: BlockKind::Plain, ..cfg };
        assert!(bn_finite_n_convergence(&plain, &[8], 1, 0).is_err());
    }

    #[test]
    fn degenerate_batches_report_the_trial() {
        let cfg = NetworkConfig::new(2, 2, Activation::Identity, BlockKind::BnPreAdd)
            .with_input_variance(0.0)
            .with_batch_size(4);
        match run_experiment(&cfg, 3, 0) {
            Err(Error::Trial { trial: 0, source }) => {
                assert!(matches!(*source, Error::DegenerateBatch { layer: 1, .. }))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_trials_rejected() {
        let cfg = NetworkConfig::new(2, 2, Activation::Identity, BlockKind::Plain);
        assert!(run_experiment(&cfg, 0, 0).is_err());
    }
}
