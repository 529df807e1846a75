//! Network family, initialization schemes and floating-point format constants.

use alloc::format;
use core::fmt;
use core::str::FromStr;

use crate::error::{Error, Result};

/// Activation used inside every residual branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Identity,
    Relu,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => {
                if x > 0.0 {
                    x
                } else {
                    0.0
                }
            }
        }
    }

    /// Derivative; the ReLU derivative at exactly zero is taken to be 0.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `E[f'(u)]` for symmetric `u`: 1 for identity, 1/2 for ReLU.
    pub fn derivative_coefficient(self) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::invalid(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Layout of one residual block.
///
/// * `Plain`: `u = W z`, `z' = f(u) + z`.
/// * `BnPreAdd`: `u = W bn(z)`, `z' = f(u) + z`; the skip path carries the
///   unnormalized stream.
/// * `BnPreAct`: `z' = W f(bn(z)) + z`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum BlockKind {
    Plain,
    BnPreAdd,
    BnPreAct,
}

impl BlockKind {
    pub fn is_batch_normalized(self) -> bool {
        !matches!(self, BlockKind::Plain)
    }

    pub fn name(self) -> &'static str {
        match self {
            BlockKind::Plain => "plain",
            BlockKind::BnPreAdd => "bn_pre_add",
            BlockKind::BnPreAct => "bn_pre_act",
        }
    }
}

impl FromStr for BlockKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(BlockKind::Plain),
            "bn_pre_add" => Ok(BlockKind::BnPreAdd),
            "bn_pre_act" => Ok(BlockKind::BnPreAct),
            other => Err(Error::invalid(format!("unknown block kind `{other}`"))),
        }
    }
}

impl fmt::Display for BlockKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Symmetric weight distribution family; the scale is set by the scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Distribution {
    #[default]
    Gaussian,
    UniformSymmetric,
    Rademacher,
}

impl Distribution {
    pub fn name(self) -> &'static str {
        match self {
            Distribution::Gaussian => "gaussian",
            Distribution::UniformSymmetric => "uniform",
            Distribution::Rademacher => "rademacher",
        }
    }
}

impl FromStr for Distribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" | "normal" => Ok(Distribution::Gaussian),
            "uniform" | "uniform_symmetric" => Ok(Distribution::UniformSymmetric),
            "rademacher" => Ok(Distribution::Rademacher),
            other => Err(Error::invalid(format!("unknown distribution `{other}`"))),
        }
    }
}

/// How the weight variance is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum InitKind {
    /// `Var[w] = c / (n L)`: shrinks with total depth so that
    /// `(1 + n Var[w])^L -> e^c`.
    Proposed { c: f64 },
    /// `Var[w] = gain / n`.
    HeStyle { gain: f64 },
    /// `Var[w] = 1 / n`.
    GlorotStyle,
    /// Explicit `Var[w] = v`.
    FixedVariance { v: f64 },
}

impl InitKind {
    pub const DEFAULT_C: f64 = 1.0;
    pub const DEFAULT_HE_GAIN: f64 = 2.0;

    pub fn name(&self) -> &'static str {
        match self {
            InitKind::Proposed { .. } => "proposed",
            InitKind::HeStyle { .. } => "he",
            InitKind::GlorotStyle => "glorot",
            InitKind::FixedVariance { .. } => "fixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct InitScheme {
    pub kind: InitKind,
    pub distribution: Distribution,
}

impl InitScheme {
    pub fn new(kind: InitKind, distribution: Distribution) -> Self {
        InitScheme { kind, distribution }
    }

    pub fn proposed(c: f64) -> Self {
        Self::new(InitKind::Proposed { c }, Distribution::Gaussian)
    }

    pub fn he(gain: f64) -> Self {
        Self::new(InitKind::HeStyle { gain }, Distribution::Gaussian)
    }

    pub fn glorot() -> Self {
        Self::new(InitKind::GlorotStyle, Distribution::Gaussian)
    }

    pub fn fixed(v: f64) -> Self {
        Self::new(InitKind::FixedVariance { v }, Distribution::Gaussian)
    }

    pub fn with_distribution(mut self, distribution: Distribution) -> Self {
        self.distribution = distribution;
        self
    }
}

/// Weight variance selected by `init` for fan-in `n` and depth `depth`.
pub fn variance_of(init: &InitScheme, n: usize, depth: usize) -> Result<f64> {
    if n == 0 || depth == 0 {
        return Err(Error::invalid("fan-in and depth must be at least 1"));
    }
    let positive = |name: &str, x: f64| {
        if x.is_finite() && x > 0.0 {
            Ok(x)
        } else {
            Err(Error::invalid(format!("{name} must be positive and finite, got {x}")))
        }
    };
    let n = n as f64;
    match init.kind {
        InitKind::Proposed { c } => Ok(positive("c", c)? / (n * depth as f64)),
        InitKind::HeStyle { gain } => Ok(positive("gain", gain)? / n),
        InitKind::GlorotStyle => Ok(1.0 / n),
        // zero is allowed: it switches every residual branch off
        InitKind::FixedVariance { v } if v == 0.0 => Ok(0.0),
        InitKind::FixedVariance { v } => positive("variance", v),
    }
}

/// Complete definition of one experiment's network.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct NetworkConfig {
    /// Number of residual blocks `L`.
    pub depth: usize,
    /// Fan-in `n`, equal at every layer.
    pub width: usize,
    pub activation: Activation,
    pub block: BlockKind,
    pub init: InitScheme,
    /// Rows per minibatch `N`.
    pub batch_size: usize,
    /// `Var[x]` of the inputs.
    pub input_variance: f64,
    /// `Var[delta_z^L]` injected at the output.
    pub output_delta_variance: f64,
}

impl NetworkConfig {
    pub fn new(depth: usize, width: usize, activation: Activation, block: BlockKind) -> Self {
        NetworkConfig {
            depth,
            width,
            activation,
            block,
            init: InitScheme::proposed(InitKind::DEFAULT_C),
            batch_size: 32,
            input_variance: 1.0,
            output_delta_variance: 1.0,
        }
    }

    pub fn with_init(mut self, init: InitScheme) -> Self {
        self.init = init;
        self
    }

    pub fn with_batch_size(mut self, batch_size: usize) -> Self {
        self.batch_size = batch_size;
        self
    }

    pub fn with_input_variance(mut self, v: f64) -> Self {
        self.input_variance = v;
        self
    }

    pub fn with_output_delta_variance(mut self, v: f64) -> Self {
        self.output_delta_variance = v;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::invalid("depth must be at least 1"));
        }
        if self.width == 0 {
            return Err(Error::invalid("width must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be at least 1"));
        }
        if self.block.is_batch_normalized() && self.batch_size < 2 {
            return Err(Error::invalid(
                "batch-normalized blocks need a batch size of at least 2",
            ));
        }
        for (name, v) in [
            ("input variance", self.input_variance),
            ("output delta variance", self.output_delta_variance),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(format!(
                    "{name} must be finite and non-negative, got {v}"
                )));
            }
        }
        self.weight_variance().map(|_| ())
    }

    /// `Var[w]` for this network.
    pub fn weight_variance(&self) -> Result<f64> {
        variance_of(&self.init, self.width, self.depth)
    }

    /// `n Var[w]`, the per-layer growth increment.
    pub fn growth_increment(&self) -> Result<f64> {
        Ok(self.width as f64 * self.weight_variance()?)
    }
}

/// Range constants of a floating-point format.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloatFormat {
    pub name: &'static str,
    pub min_positive_normal: f64,
    pub significand_bits: u32,
}

impl FloatFormat {
    pub const FP16: FloatFormat = FloatFormat {
        name: "fp16",
        min_positive_normal: 6.103_515_625e-5, // 2^-14
        significand_bits: 11,
    };
    pub const BF16: FloatFormat = FloatFormat {
        name: "bf16",
        min_positive_normal: f32::MIN_POSITIVE as f64, // 2^-126
        significand_bits: 8,
    };
    pub const FP32: FloatFormat = FloatFormat {
        name: "fp32",
        min_positive_normal: f32::MIN_POSITIVE as f64,
        significand_bits: 24,
    };
    pub const FP64: FloatFormat = FloatFormat {
        name: "fp64",
        min_positive_normal: f64::MIN_POSITIVE, // 2^-1022
        significand_bits: 53,
    };

    pub const BUILTIN: [FloatFormat; 4] = [Self::FP16, Self::BF16, Self::FP32, Self::FP64];

    pub fn by_name(name: &str) -> Option<FloatFormat> {
        Self::BUILTIN.into_iter().find(|f| f.name == name)
    }
}

impl FromStr for FloatFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::by_name(s).ok_or_else(|| Error::invalid(format!("unknown float format `{s}`")))
    }
}
