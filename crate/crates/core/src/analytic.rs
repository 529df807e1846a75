//! Closed-form variance predictions for residual networks at initialization.
//!
//! All multiplicative laws are evaluated in log space, so deep or strongly
//! exploding configurations never overflow; [`LogReal::value`] converts back
//! when the magnitude is representable.
//!
//! Notation: `k = n Var[w]` is the per-layer growth increment, `L` the number
//! of residual blocks and `a = E[f'(u)]` the activation coefficient.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};
use crate::model::{Activation, BlockKind, FloatFormat, NetworkConfig};

/// A real number stored as `sign * exp(ln_abs)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogReal {
    pub ln_abs: f64,
    pub negative: bool,
}

impl LogReal {
    pub const ZERO: LogReal = LogReal { ln_abs: f64::NEG_INFINITY, negative: false };
    pub const ONE: LogReal = LogReal { ln_abs: 0.0, negative: false };

    pub fn from_ln(ln_abs: f64) -> Self {
        LogReal { ln_abs, negative: false }
    }

    pub fn from_value(x: f64) -> Self {
        LogReal { ln_abs: libm::log(libm::fabs(x)), negative: x < 0.0 }
    }

    /// The plain value; `inf` when it does not fit in an `f64`.
    pub fn value(self) -> f64 {
        let m = libm::exp(self.ln_abs);
        if self.negative {
            -m
        } else {
            m
        }
    }

    pub fn log10_abs(self) -> f64 {
        self.ln_abs / core::f64::consts::LN_10
    }

    pub fn mul(self, other: LogReal) -> LogReal {
        LogReal { ln_abs: self.ln_abs + other.ln_abs, negative: self.negative != other.negative }
    }

    pub fn scale(self, factor: f64) -> LogReal {
        self.mul(LogReal::from_value(factor))
    }

    pub fn is_representable(self) -> bool {
        self.value().is_finite()
    }
}

/// How a prediction may be compared with a measurement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub enum PredictionKind {
    Exact,
    /// Only `measured >= predicted` is asserted.
    LowerBound,
    Approximation,
}

impl PredictionKind {
    pub fn name(self) -> &'static str {
        match self {
            PredictionKind::Exact => "exact",
            PredictionKind::LowerBound => "lower_bound",
            PredictionKind::Approximation => "approximation",
        }
    }
}

impl fmt::Display for PredictionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub value: LogReal,
    pub kind: PredictionKind,
    /// Short human-readable formula the value came from.
    pub formula: &'static str,
}

/// Per-layer predictions `l = 1..=L`; `None` where no closed form applies.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PredictionRow {
    pub layer: usize,
    pub var_z: Option<Prediction>,
    pub var_u: Option<Prediction>,
    pub var_delta_z: Option<Prediction>,
    pub var_delta: Option<Prediction>,
    pub var_grad: Option<Prediction>,
    pub sigma_sq: Option<Prediction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionTable {
    pub block: BlockKind,
    pub activation: Activation,
    pub rows: Vec<PredictionRow>,
}

const F_IDENTITY_FORWARD: &str = "Var[x]*(1+n*Var[w])^l";
const F_IDENTITY_PRE_ACT: &str = "n*Var[w]*Var[z^(l-1)]";
const F_RELU_FORWARD_BOUND: &str = "Var[x]*(1+n*Var[w]/4)^l";
const F_IDENTITY_BACKWARD: &str = "Var[dz^L]*(1+n*Var[w])^(L-l)";
const F_RELU_BACKWARD: &str = "Var[dz^L]*(1+n*Var[w]/2)^(L-l)/2";
const F_RELU_BACKWARD_Z: &str = "Var[dz^L]*(1+n*Var[w]/2)^(L-l)";
const F_IDENTITY_GRAD: &str =
    "Var[dz^L]*Var[x]*(1+n*Var[w])^(L-1) (forward x backward factors; printed source form uses 1+n*Var[w]/2)";
const F_RELU_GRAD_BOUND: &str = "Var[dz^L]*Var[x]*(1+n*Var[w]/4)^(L-1)/4";
const F_BN_SIGMA: &str = "a*l*n*Var[w]+Var[x]";
const F_BN_DELTA_PRE_ADD: &str = "Var[dz^L]*prod_{k=l}^{L-1}(1+a/k)";
const F_BN_DELTA_PRE_ACT: &str = "Var[dz^L]*prod_{k=l}^{L-1}(1+1/k) = (L/l)*Var[dz^L]";
const F_BN_GRAD: &str = "a*Var[dz^l] ~ a*(L/l)*Var[dz^L]";

fn require(cfg: &NetworkConfig, block: Option<BlockKind>, activation: Option<Activation>, op: &str) -> Result<()> {
    cfg.validate()?;
    if let Some(b) = block {
        if cfg.block != b {
            return Err(Error::contract(format!("{op} applies to {b} blocks, got {}", cfg.block)));
        }
    }
    if let Some(a) = activation {
        if cfg.activation != a {
            return Err(Error::contract(format!(
                "{op} applies to {a} activation, got {}",
                cfg.activation
            )));
        }
    }
    Ok(())
}

fn require_bn(cfg: &NetworkConfig, op: &str) -> Result<()> {
    cfg.validate()?;
    if !cfg.block.is_batch_normalized() {
        return Err(Error::contract(format!("{op} applies to batch-normalized blocks")));
    }
    Ok(())
}

/// `base * growth^e` for `e = first..first+count`, in log space.
fn geometric(base: f64, growth_increment: f64, exponents: impl Iterator<Item = usize>) -> Vec<LogReal> {
    let ln_base = libm::log(base);
    let ln_growth = libm::log1p(growth_increment);
    exponents.map(|e| LogReal::from_ln(ln_base + e as f64 * ln_growth)).collect()
}

/// `Var[z^l] = Var[x] (1 + n Var[w])^l` for plain identity networks.
pub fn forward_variance_identity(cfg: &NetworkConfig) -> Result<Vec<LogReal>> {
    require(cfg, Some(BlockKind::Plain), Some(Activation::Identity), "forward_variance_identity")?;
    Ok(geometric(cfg.input_variance, cfg.growth_increment()?, 1..=cfg.depth))
}

/// Lower bound `Var[z^l] >= Var[x] (1 + n Var[w] / 4)^l` for plain ReLU networks.
pub fn forward_variance_relu_lower_bound(cfg: &NetworkConfig) -> Result<Vec<LogReal>> {
    require(cfg, Some(BlockKind::Plain), Some(Activation::Relu), "forward_variance_relu_lower_bound")?;
    Ok(geometric(cfg.input_variance, cfg.growth_increment()? / 4.0, 1..=cfg.depth))
}

/// Shape of a symmetric pre-activation law, for the first ReLU moment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetricLaw {
    Gaussian,
    /// `u = +-sqrt(var)` with equal probability.
    TwoPoint,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReluMoments {
    /// `E[f(u)^2] = Var[u] / 2`, exact for any symmetric `u`.
    pub second_moment: f64,
    /// `E[f(u)] = E|u| / 2 <= sqrt(Var[u]) / 2`.
    pub mean_upper_bound: f64,
}

impl ReluMoments {
    /// `E[f(u)]` for a specific symmetric law.
    pub fn mean_for(&self, law: SymmetricLaw) -> f64 {
        match law {
            SymmetricLaw::Gaussian => self.mean_upper_bound / libm::sqrt(0.5 * core::f64::consts::PI),
            SymmetricLaw::TwoPoint => self.mean_upper_bound,
        }
    }
}

pub fn relu_moments(var_u: f64) -> Result<ReluMoments> {
    if !(var_u >= 0.0 && var_u.is_finite()) {
        return Err(Error::contract(format!("variance must be finite and non-negative, got {var_u}")));
    }
    Ok(ReluMoments { second_moment: 0.5 * var_u, mean_upper_bound: 0.5 * libm::sqrt(var_u) })
}

fn require_plain(cfg: &NetworkConfig, op: &str) -> Result<()> {
    cfg.validate()?;
    if cfg.block != BlockKind::Plain {
        return Err(Error::contract(format!(
            "{op} applies to plain blocks; use the batch-norm predictors for {}",
            cfg.block
        )));
    }
    Ok(())
}

/// `Var[delta^l]` for plain networks.
pub fn backward_delta_variance(cfg: &NetworkConfig) -> Result<Vec<LogReal>> {
    require_plain(cfg, "backward_delta_variance")?;
    let k = cfg.growth_increment()?;
    let depth = cfg.depth;
    Ok(match cfg.activation {
        Activation::Identity => geometric(cfg.output_delta_variance, k, (1..=depth).map(|l| depth - l)),
        Activation::Relu => geometric(0.5 * cfg.output_delta_variance, k / 2.0, (1..=depth).map(|l| depth - l)),
    })
}

/// `Var[delta_z^l]` for plain networks.
pub fn backward_delta_z_variance(cfg: &NetworkConfig) -> Result<Vec<LogReal>> {
    require_plain(cfg, "backward_delta_z_variance")?;
    let k = cfg.growth_increment()?;
    let depth = cfg.depth;
    let k_eff = match cfg.activation {
        Activation::Identity => k,
        Activation::Relu => k / 2.0,
    };
    Ok(geometric(cfg.output_delta_variance, k_eff, (1..=depth).map(|l| depth - l)))
}

/// Gradient variance for plain networks, with the kind of statement it is.
///
/// Identity uses the product of the forward and backward factors,
/// `Var[dz^L] Var[x] (1 + n Var[w])^(L-1)` at every layer. ReLU gives the lower
/// bound `Var[dz^L] Var[x] (1 + n Var[w]/4)^(L-1) / 4`.
pub fn gradient_variance_plain(cfg: &NetworkConfig) -> Result<(Vec<LogReal>, PredictionKind)> {
    require_plain(cfg, "gradient_variance_plain")?;
    let k = cfg.growth_increment()?;
    let base = cfg.output_delta_variance * cfg.input_variance;
    let depth = cfg.depth;
    Ok(match cfg.activation {
        Activation::Identity => (
            geometric(base, k, (1..=depth).map(|_| depth - 1)),
            PredictionKind::Approximation,
        ),
        Activation::Relu => (
            geometric(0.25 * base, k / 4.0, (1..=depth).map(|_| depth - 1)),
            PredictionKind::LowerBound,
        ),
    })
}

/// Coefficient multiplying `l n Var[w]` in the batch variance.
fn bn_forward_coefficient(cfg: &NetworkConfig) -> Result<f64> {
    match (cfg.block, cfg.activation) {
        (BlockKind::BnPreAdd, Activation::Identity) => Ok(1.0),
        (BlockKind::BnPreAct, a) => Ok(a.derivative_coefficient()),
        (BlockKind::BnPreAdd, Activation::Relu) => Err(Error::contract(
            "no closed-form batch variance for ReLU before the residual add (the branch mean drifts)",
        )),
        (BlockKind::Plain, _) => Err(Error::contract("batch variance needs a batch-normalized block")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SigmaSquared {
    /// `a l n Var[w] + Var[x]`.
    pub full: f64,
    /// `a l n Var[w]`.
    pub leading: f64,
}

/// Batch variance `(sigma^l)^2` of `z^l`, `l = 1..=L`.
pub fn bn_sigma_squared(cfg: &NetworkConfig) -> Result<Vec<SigmaSquared>> {
    require_bn(cfg, "bn_sigma_squared")?;
    let a = bn_forward_coefficient(cfg)?;
    let k = cfg.growth_increment()?;
    Ok((1..=cfg.depth)
        .map(|l| {
            let leading = a * l as f64 * k;
            SigmaSquared { full: leading + cfg.input_variance, leading }
        })
        .collect())
}

/// Compensated suffix sums of `ln(1 + num_k / den_k)` for `k = l..L-1`,
/// returned for every `l = 1..=L`.
fn log_suffix_products(depth: usize, term: impl Fn(usize) -> f64) -> Vec<LogReal> {
    let mut out = alloc::vec![LogReal::ONE; depth];
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for l in (1..depth).rev() {
        let t = term(l);
        let s = sum + t;
        if libm::fabs(sum) >= libm::fabs(t) {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
        out[l - 1] = LogReal::from_ln(sum + comp);
    }
    out
}

/// `Var[delta_z^l] / Var[dz^L]` in the large-batch limit, with the batch
/// variance approximated by its leading term.
///
/// `BnPreAdd` gives `prod_{k=l}^{L-1}(1 + a/k)`; `a = 1` telescopes to `L/l`.
/// `BnPreAct` gives `prod(1 + 1/k) = L/l` for both activations because `a`
/// appears in both the numerator and the batch variance.
pub fn bn_delta_ratio(cfg: &NetworkConfig) -> Result<Vec<LogReal>> {
    require_bn(cfg, "bn_delta_variance")?;
    let a = match cfg.block {
        BlockKind::BnPreAdd => cfg.activation.derivative_coefficient(),
        _ => 1.0,
    };
    Ok(log_suffix_products(cfg.depth, |k| libm::log1p(a / k as f64)))
}

/// As [`bn_delta_ratio`] but keeping `Var[x]` in the batch variance:
/// `prod(1 + a_b k / (a_f k l' + Var[x]))`.
pub fn bn_delta_ratio_full(cfg: &NetworkConfig) -> Result<Vec<LogReal>> {
    require_bn(cfg, "bn_delta_variance")?;
    let a_back = cfg.activation.derivative_coefficient();
    let a_fwd = match cfg.block {
        BlockKind::BnPreAdd => 1.0,
        _ => a_back,
    };
    let k = cfg.growth_increment()?;
    let vx = cfg.input_variance;
    Ok(log_suffix_products(cfg.depth, |l| libm::log1p(a_back * k / (a_fwd * k * l as f64 + vx))))
}

/// `Var[delta_z^l]` for batch-normalized blocks.
pub fn bn_delta_variance(cfg: &NetworkConfig) -> Result<Vec<LogReal>> {
    let v = cfg.output_delta_variance;
    Ok(bn_delta_ratio(cfg)?.into_iter().map(|r| r.scale(v)).collect())
}

/// Per-sample gradient variance for batch-normalized blocks,
/// `a Var[delta_z^l]`: `(L/l) Var[dz^L]` before the add with identity,
/// `a (L/l) Var[dz^L]` for activation before the weights.
pub fn bn_gradient_variance(cfg: &NetworkConfig) -> Result<Vec<LogReal>> {
    let a = cfg.activation.derivative_coefficient();
    Ok(bn_delta_variance(cfg)?.into_iter().map(|r| r.scale(a)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessFactors {
    /// `(1 + m/L)^L`, tends to `e^m`.
    pub resnet: LogReal,
    /// `m^L`.
    pub plain: LogReal,
}

/// Growth of the output variance when the per-layer increment is `multiplier`
/// times its recommended value, for residual and plain stacks of depth `depth`.
pub fn robustness_factors(depth: usize, multiplier: f64) -> Result<RobustnessFactors> {
    if depth == 0 || !(multiplier > 0.0 && multiplier.is_finite()) {
        return Err(Error::invalid("depth must be >= 1 and multiplier positive"));
    }
    let l = depth as f64;
    Ok(RobustnessFactors {
        resnet: LogReal::from_ln(l * libm::log1p(multiplier / l)),
        plain: LogReal::from_ln(l * libm::log(multiplier)),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DepthBound {
    Finite(u64),
    /// Larger than any `u64` depth.
    Saturated,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthLimit {
    pub max_depth: DepthBound,
    /// `sqrt(c / (n L_max))`; `None` when saturated.
    pub weight_std_at_max: Option<f64>,
}

/// Largest depth whose proposed weight variance `c / (n L)` is still a
/// normal number of `format`.
pub fn depth_limit(format: &FloatFormat, n: usize, c: f64) -> Result<DepthLimit> {
    if n == 0 {
        return Err(Error::invalid("fan-in must be at least 1"));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::invalid(format!("c must be positive and finite, got {c}")));
    }
    let m = format.min_positive_normal;
    let bound = c / (n as f64 * m);
    if !(bound < 18_446_744_073_709_551_615.0) {
        return Ok(DepthLimit { max_depth: DepthBound::Saturated, weight_std_at_max: None });
    }
    let fits = |l: u64| l > 0 && c / (n as f64 * l as f64) >= m;
    let mut l = libm::floor(bound) as u64;
    while l > 0 && !fits(l) {
        l -= 1;
    }
    while fits(l + 1) {
        l += 1;
    }
    let std = if l == 0 { None } else { Some(libm::sqrt(c / (n as f64 * l as f64))) };
    Ok(DepthLimit { max_depth: DepthBound::Finite(l), weight_std_at_max: std })
}

fn rows_with(depth: usize) -> Vec<PredictionRow> {
    (1..=depth).map(|layer| PredictionRow { layer, ..Default::default() }).collect()
}

fn fill(
    rows: &mut [PredictionRow],
    values: Vec<LogReal>,
    kind: PredictionKind,
    formula: &'static str,
    slot: impl Fn(&mut PredictionRow) -> &mut Option<Prediction>,
) {
    for (row, value) in rows.iter_mut().zip(values) {
        *slot(row) = Some(Prediction { value, kind, formula });
    }
}

/// Every prediction available for `cfg`.
pub fn predict(cfg: &NetworkConfig) -> Result<PredictionTable> {
    cfg.validate()?;
    use PredictionKind::*;
    let mut rows = rows_with(cfg.depth);
    match (cfg.block, cfg.activation) {
        (BlockKind::Plain, Activation::Identity) => {
            let fwd = forward_variance_identity(cfg)?;
            let k = cfg.growth_increment()?;
            let pre: Vec<LogReal> = core::iter::once(LogReal::from_value(cfg.input_variance))
                .chain(fwd.iter().copied())
                .take(cfg.depth)
                .map(|v| v.scale(k))
                .collect();
            fill(&mut rows, fwd, Exact, F_IDENTITY_FORWARD, |r| &mut r.var_z);
            fill(&mut rows, pre, Exact, F_IDENTITY_PRE_ACT, |r| &mut r.var_u);
            let back = backward_delta_variance(cfg)?;
            fill(&mut rows, back.clone(), Exact, F_IDENTITY_BACKWARD, |r| &mut r.var_delta);
            fill(&mut rows, back, Exact, F_IDENTITY_BACKWARD, |r| &mut r.var_delta_z);
            let (grad, kind) = gradient_variance_plain(cfg)?;
            fill(&mut rows, grad, kind, F_IDENTITY_GRAD, |r| &mut r.var_grad);
        }
        (BlockKind::Plain, Activation::Relu) => {
            fill(&mut rows, forward_variance_relu_lower_bound(cfg)?, LowerBound, F_RELU_FORWARD_BOUND, |r| {
                &mut r.var_z
            });
            fill(&mut rows, backward_delta_variance(cfg)?, Exact, F_RELU_BACKWARD, |r| &mut r.var_delta);
            fill(&mut rows, backward_delta_z_variance(cfg)?, Exact, F_RELU_BACKWARD_Z, |r| {
                &mut r.var_delta_z
            });
            let (grad, kind) = gradient_variance_plain(cfg)?;
            fill(&mut rows, grad, kind, F_RELU_GRAD_BOUND, |r| &mut r.var_grad);
        }
        (block, _) => {
            if let Ok(sigma) = bn_sigma_squared(cfg) {
                let full: Vec<LogReal> = sigma.iter().map(|s| LogReal::from_value(s.full)).collect();
                fill(&mut rows, full.clone(), Approximation, F_BN_SIGMA, |r| &mut r.sigma_sq);
                fill(&mut rows, full, Approximation, F_BN_SIGMA, |r| &mut r.var_z);
            }
            let formula = if block == BlockKind::BnPreAdd { F_BN_DELTA_PRE_ADD } else { F_BN_DELTA_PRE_ACT };
            let delta_z = bn_delta_variance(cfg)?;
            fill(&mut rows, delta_z.clone(), Approximation, formula, |r| &mut r.var_delta_z);
            let delta: Vec<LogReal> = match block {
                BlockKind::BnPreAdd => {
                    delta_z.iter().map(|v| v.scale(cfg.activation.derivative_coefficient())).collect()
                }
                _ => delta_z,
            };
            fill(&mut rows, delta, Approximation, formula, |r| &mut r.var_delta);
            fill(&mut rows, bn_gradient_variance(cfg)?, Approximation, F_BN_GRAD, |r| &mut r.var_grad);
        }
    }
    Ok(PredictionTable { block: cfg.block, activation: cfg.activation, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::InitScheme;

    fn plain(act: Activation, depth: usize, width: usize, var_w: f64) -> NetworkConfig {
        NetworkConfig::new(depth, width, act, BlockKind::Plain).with_init(InitScheme::fixed(var_w))
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    // Oracles below are direct loops over the defining products, independent
    // of the log-space evaluation.
    fn product(terms: impl Iterator<Item = f64>) -> f64 {
        terms.product()
    }

    #[test]
    fn identity_forward_without_weights_is_flat() {
        let cfg = plain(Activation::Identity, 5, 4, 0.0).with_input_variance(2.5);
        for v in forward_variance_identity(&cfg).unwrap() {
            assert!(close(v.value(), 2.5, 1e-12));
        }
    }

    #[test]
    fn identity_forward_small_increment() {
        let cfg = plain(Activation::Identity, 20, 20, 1.0 / 400.0);
        let v = forward_variance_identity(&cfg).unwrap();
        let oracle = product((0..20).map(|_| 1.05));
        assert!(close(v[19].value(), oracle, 1e-12));
        assert!(close(v[19].value(), 2.6533, 1e-4));
    }

    #[test]
    fn glorot_identity_doubles_per_layer() {
        let cfg = NetworkConfig::new(20, 64, Activation::Identity, BlockKind::Plain)
            .with_init(InitScheme::glorot());
        let v = forward_variance_identity(&cfg).unwrap();
        assert_eq!(libm::round(v[19].value()), 1_048_576.0);
        assert!(close(v[19].value(), 1_048_576.0, 1e-12));
    }

    #[test]
    fn relu_bound_matches_limit() {
        let cfg = NetworkConfig::new(100, 64, Activation::Relu, BlockKind::Plain)
            .with_init(InitScheme::proposed(1.0));
        let v = forward_variance_relu_lower_bound(&cfg).unwrap();
        let oracle = product((0..100).map(|_| 1.0 + 1.0 / 400.0));
        assert!(close(v[99].value(), oracle, 1e-12));
        assert!(close(v[99].value(), 1.2836, 1e-4));
        assert!(v[99].value() < libm::exp(0.25));
        assert!(close(libm::exp(0.25), 1.2840, 1e-4));
        let flat = plain(Activation::Relu, 3, 2, 0.0).with_input_variance(0.7);
        assert!(close(forward_variance_relu_lower_bound(&flat).unwrap()[2].value(), 0.7, 1e-12));
    }

    #[test]
    fn relu_bound_in_log_space_when_overflowing() {
        // n Var[w] = 8: per-layer factor 3, so 3^100 at the last layer
        let cfg = plain(Activation::Relu, 100, 4, 2.0);
        let v = forward_variance_relu_lower_bound(&cfg).unwrap();
        assert!(close(v[99].log10_abs(), 100.0 * libm::log10(3.0), 1e-12));
        assert!(close(v[99].log10_abs(), 47.71, 1e-3));
        let deep = plain(Activation::Relu, 10_000, 4, 2.0);
        let v = forward_variance_relu_lower_bound(&deep).unwrap();
        assert!(!v[9_999].is_representable());
        assert!(v[9_999].ln_abs.is_finite());
    }

    #[test]
    fn wrong_kind_is_a_contract_error() {
        let relu = plain(Activation::Relu, 3, 3, 0.1);
        assert!(matches!(forward_variance_identity(&relu), Err(Error::Contract(_))));
        let ident = plain(Activation::Identity, 3, 3, 0.1);
        assert!(matches!(forward_variance_relu_lower_bound(&ident), Err(Error::Contract(_))));
        let bn = NetworkConfig::new(3, 3, Activation::Identity, BlockKind::BnPreAdd);
        assert!(matches!(backward_delta_variance(&bn), Err(Error::Contract(_))));
        assert!(matches!(gradient_variance_plain(&bn), Err(Error::Contract(_))));
        assert!(matches!(bn_sigma_squared(&ident), Err(Error::Contract(_))));
        assert!(matches!(bn_delta_variance(&ident), Err(Error::Contract(_))));
        assert!(matches!(bn_gradient_variance(&ident), Err(Error::Contract(_))));
    }

    #[test]
    fn relu_moment_identities() {
        let m = relu_moments(0.0).unwrap();
        assert_eq!((m.second_moment, m.mean_upper_bound), (0.0, 0.0));
        let m = relu_moments(1.0).unwrap();
        assert_eq!(m.second_moment, 0.5);
        assert!(close(m.mean_for(SymmetricLaw::Gaussian), 0.398_942_280_401_432_7, 1e-12));
        assert_eq!(m.mean_for(SymmetricLaw::TwoPoint), 0.5);
        assert!(relu_moments(-1.0).is_err());
    }

    #[test]
    fn relu_moments_against_gaussian_sampling() {
        use rand::SeedableRng;
        use rand_distr::{Distribution as _, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let samples = 10_000_000;
        let (mut s1, mut s2) = (0.0, 0.0);
        for _ in 0..samples {
            let u: f64 = StandardNormal.sample(&mut rng);
            let f = u.max(0.0);
            s1 += f;
            s2 += f * f;
        }
        let m = relu_moments(1.0).unwrap();
        let (mean, second) = (s1 / samples as f64, s2 / samples as f64);
        assert!((mean - m.mean_for(SymmetricLaw::Gaussian)).abs() < 1e-3, "{mean}");
        assert!((second - m.second_moment).abs() < 2e-3, "{second}");
    }

    #[test]
    fn backward_at_output_layer() {
        let id = plain(Activation::Identity, 6, 3, 0.2).with_output_delta_variance(1.7);
        assert!(close(backward_delta_variance(&id).unwrap()[5].value(), 1.7, 1e-12));
        let relu = plain(Activation::Relu, 6, 3, 0.2).with_output_delta_variance(1.7);
        assert!(close(backward_delta_variance(&relu).unwrap()[5].value(), 0.85, 1e-12));
    }

    #[test]
    fn identity_backward_product() {
        let cfg = plain(Activation::Identity, 32, 32, 1.0 / 1024.0);
        let v = backward_delta_variance(&cfg).unwrap();
        let oracle = product((0..31).map(|_| 1.0 + 1.0 / 32.0));
        assert!(close(v[0].value(), oracle, 1e-12));
        assert!(close(v[0].value(), 2.595, 1e-3));
    }

    #[test]
    fn plain_gradient_variances() {
        let flat = plain(Activation::Identity, 4, 2, 0.0)
            .with_input_variance(3.0)
            .with_output_delta_variance(0.5);
        let (g, kind) = gradient_variance_plain(&flat).unwrap();
        assert_eq!(kind, PredictionKind::Approximation);
        assert!(close(g[2].value(), 1.5, 1e-12));

        let id = NetworkConfig::new(100, 64, Activation::Identity, BlockKind::Plain)
            .with_init(InitScheme::proposed(1.0));
        let (g, _) = gradient_variance_plain(&id).unwrap();
        let oracle = product((0..99).map(|_| 1.01));
        assert!(close(g[0].value(), oracle, 1e-12));
        assert!(close(g[0].value(), 2.678, 1e-3));

        let relu = NetworkConfig { activation: Activation::Relu, ..id };
        let (g, kind) = gradient_variance_plain(&relu).unwrap();
        assert_eq!(kind, PredictionKind::LowerBound);
        let oracle = 0.25 * product((0..99).map(|_| 1.0025));
        assert!(close(g[50].value(), oracle, 1e-12));
        assert!(close(g[50].value(), 0.3201, 1e-3));
    }

    #[test]
    fn product_decomposition_of_identity_gradient() {
        let cfg = plain(Activation::Identity, 12, 5, 0.03).with_input_variance(1.3);
        let (g, _) = gradient_variance_plain(&cfg).unwrap();
        let back = backward_delta_variance(&cfg).unwrap();
        let fwd = forward_variance_identity(&cfg).unwrap();
        for l in 1..=cfg.depth {
            let prev = if l == 1 { cfg.input_variance } else { fwd[l - 2].value() };
            assert!(close(g[l - 1].value(), back[l - 1].value() * prev, 1e-12));
        }
    }

    #[test]
    fn sigma_squared_forms() {
        let cfg = NetworkConfig::new(10, 64, Activation::Identity, BlockKind::BnPreAdd)
            .with_init(InitScheme::fixed(1.0 / 64.0))
            .with_input_variance(1.0);
        let s = bn_sigma_squared(&cfg).unwrap();
        for (i, s) in s.iter().enumerate() {
            let l = (i + 1) as f64;
            assert!(close(s.full, l + 1.0, 1e-12));
            assert!(close(s.leading, l, 1e-12));
        }
        let first = NetworkConfig { input_variance: 0.0, ..cfg.clone() };
        assert!(close(bn_sigma_squared(&first).unwrap()[0].full, 1.0, 1e-12));
        let act = NetworkConfig {
            block: BlockKind::BnPreAct,
            activation: Activation::Relu,
            ..cfg.clone()
        };
        assert!(close(bn_sigma_squared(&act).unwrap()[9].leading, 5.0, 1e-12));
        let relu_add = NetworkConfig { activation: Activation::Relu, ..cfg };
        assert!(bn_sigma_squared(&relu_add).is_err());
    }

    #[test]
    fn bn_delta_ratios() {
        let cfg = NetworkConfig::new(100, 8, Activation::Identity, BlockKind::BnPreAdd);
        let r = bn_delta_ratio(&cfg).unwrap();
        assert!(close(r[0].value(), 100.0, 1e-12));
        assert!(close(r[99].value(), 1.0, 1e-15));

        let relu = NetworkConfig::new(10, 8, Activation::Relu, BlockKind::BnPreAdd);
        let r = bn_delta_ratio(&relu).unwrap();
        let oracle = product((1..=9).map(|k| 1.0 + 1.0 / (2.0 * k as f64)));
        assert!(close(r[0].value(), oracle, 1e-12));
        assert!(close(r[0].value(), 3.524, 1e-3));

        // activation before the weights telescopes for both activations
        for act in [Activation::Identity, Activation::Relu] {
            let cfg = NetworkConfig::new(40, 8, act, BlockKind::BnPreAct);
            let r = bn_delta_ratio(&cfg).unwrap();
            assert!(close(r[3].value(), 10.0, 1e-12));
        }
    }

    #[test]
    fn full_form_ratio_tends_to_leading_form() {
        let base = NetworkConfig::new(64, 64, Activation::Identity, BlockKind::BnPreAdd)
            .with_init(InitScheme::fixed(1.0 / 64.0));
        let full = bn_delta_ratio_full(&base.clone().with_input_variance(1.0)).unwrap();
        // prod (1 + 1/(k+1)) = (L+1)/(l+1)
        assert!(close(full[3].value(), 65.0 / 5.0, 1e-12));
        let tiny = bn_delta_ratio_full(&base.with_input_variance(1e-12)).unwrap();
        assert!(close(tiny[3].value(), 16.0, 1e-9));
    }

    #[test]
    fn bn_gradient_laws() {
        let add = NetworkConfig::new(100, 8, Activation::Identity, BlockKind::BnPreAdd)
            .with_output_delta_variance(2.0);
        let g = bn_gradient_variance(&add).unwrap();
        assert!(close(g[99].value(), 2.0, 1e-12));
        assert!(close(g[0].value(), 200.0, 1e-12));
        let act = NetworkConfig::new(100, 8, Activation::Relu, BlockKind::BnPreAct);
        assert!(close(bn_gradient_variance(&act).unwrap()[0].value(), 50.0, 1e-12));
    }

    #[test]
    fn telescoping_is_exact_for_deep_stacks() {
        for depth in [1usize, 2, 3, 17, 256, 1000, 10_000] {
            let cfg = NetworkConfig::new(depth, 4, Activation::Identity, BlockKind::BnPreAdd);
            let r = bn_delta_ratio(&cfg).unwrap();
            for (i, v) in r.iter().enumerate() {
                let expected = depth as f64 / (i + 1) as f64;
                assert!(close(v.value(), expected, 1e-12), "L={depth} l={} {}", i + 1, v.value());
            }
        }
    }

    #[test]
    fn robustness_contrast() {
        let f = robustness_factors(20, 2.0).unwrap();
        assert_eq!(libm::round(f.plain.value()), 1_048_576.0);
        let deep = robustness_factors(10_000, 2.0).unwrap();
        assert!(close(deep.resnet.value(), libm::exp(2.0), 5e-3));
        assert!(close(libm::exp(2.0), 7.389, 1e-3));
        for l in [1, 10, 1000] {
            assert!(close(robustness_factors(l, 1.0).unwrap().plain.value(), 1.0, 1e-15));
        }
        assert!(robustness_factors(0, 2.0).is_err());
    }

    #[test]
    fn depth_limits() {
        let d = depth_limit(&FloatFormat::FP16, 64, 1.0).unwrap();
        assert_eq!(d.max_depth, DepthBound::Finite(256));
        assert!(close(d.weight_std_at_max.unwrap(), libm::ldexp(1.0, -7), 1e-15));
        let d = depth_limit(&FloatFormat::FP64, 64, 1.0).unwrap();
        assert_eq!(d.max_depth, DepthBound::Saturated);
        let d = depth_limit(&FloatFormat::FP32, 64, 1.0).unwrap();
        assert_eq!(d.max_depth, DepthBound::Saturated);
        assert!(matches!(depth_limit(&FloatFormat::FP16, 64, 0.0), Err(Error::InvalidConfig(_))));
        let d = depth_limit(&FloatFormat::FP16, 100, 3.0).unwrap();
        // 3 / (100 * 2^-14) = 491.52
        assert_eq!(d.max_depth, DepthBound::Finite(491));
    }

    #[test]
    fn forward_identity_is_monotone() {
        let cfg = plain(Activation::Identity, 50, 7, 0.01);
        let v = forward_variance_identity(&cfg).unwrap();
        assert!(v.windows(2).all(|w| w[1].ln_abs >= w[0].ln_abs));
    }

    #[test]
    fn prediction_table_shapes() {
        let cfg = plain(Activation::Identity, 5, 3, 0.1);
        let t = predict(&cfg).unwrap();
        assert_eq!(t.rows.len(), 5);
        assert!(t.rows.iter().all(|r| r.var_z.is_some() && r.var_grad.is_some() && r.sigma_sq.is_none()));
        // var_u at layer 1 is n Var[w] Var[x]
        assert!(close(t.rows[0].var_u.unwrap().value.value(), 0.3, 1e-12));
        let relu = predict(&plain(Activation::Relu, 5, 3, 0.1)).unwrap();
        assert_eq!(relu.rows[0].var_z.unwrap().kind, PredictionKind::LowerBound);
        let bn = predict(&NetworkConfig::new(5, 3, Activation::Relu, BlockKind::BnPreAdd)).unwrap();
        assert!(bn.rows[0].sigma_sq.is_none() && bn.rows[0].var_delta_z.is_some());
    }
}
