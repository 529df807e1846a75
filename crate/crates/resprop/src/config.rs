//! JSON experiment configuration.
//!
//! Every section rejects unknown keys. Optional keys are filled from the
//! defaults below and the filled-in keys are listed in
//! [`Experiment::defaults_applied`], which the JSON summaries report.

use std::fs;
use std::path::{Path, PathBuf};

use resprop_core::montecarlo::ToleranceConfig;
use resprop_core::trainer::{DatasetConfig, TrainConfig};
use resprop_core::{Activation, BlockKind, Distribution, InitKind, InitScheme, NetworkConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

pub const DEFAULT_BATCH_SIZE: usize = 32;
pub const DEFAULT_TRIALS: u64 = 100;
pub const DEFAULT_SEED: u64 = 0;
pub const DEFAULT_TOLERANCE_REL: f64 = 0.05;
pub const DEFAULT_BATCH_SIZES: [usize; 4] = [8, 32, 128, 512];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub network: NetworkSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run: Option<RunSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSection {
    pub depth: usize,
    pub width: usize,
    pub activation: String,
    pub block: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_delta_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitSection {
    pub scheme: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gain: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distribution: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trials: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tolerance_rel: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json_path: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<DatasetSection>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub separation: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_sizes: Option<Vec<usize>>,
}

/// A validated configuration with every default filled in.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub net: NetworkConfig,
    pub trials: u64,
    pub seed: u64,
    pub tolerance: ToleranceConfig,
    pub workers: Option<usize>,
    pub output: OutputSection,
    pub train: TrainConfig,
    pub batch_sizes: Vec<usize>,
    /// Dotted keys that were missing and took their default value.
    pub defaults_applied: Vec<String>,
}

fn config_error(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

fn or_default<T>(value: Option<T>, default: T, key: &str, applied: &mut Vec<String>) -> T {
    value.unwrap_or_else(|| {
        applied.push(key.to_string());
        default
    })
}

fn parse_init(section: &InitSection) -> Result<InitScheme, CliError> {
    let given = |name: &str, v: Option<f64>| (name.to_string(), v.is_some());
    let params = [given("c", section.c), given("gain", section.gain), given("variance", section.variance)];
    let allowed: &[&str] = match section.scheme.as_str() {
        "proposed" => &["c"],
        "he" => &["gain"],
        "glorot" => &[],
        "fixed" => &["variance"],
        other => return Err(config_error(format!("init.scheme: unknown scheme '{other}'"))),
    };
    for (name, present) in &params {
        if *present && !allowed.contains(&name.as_str()) {
            return Err(config_error(format!("init.{name} does not apply to scheme '{}'", section.scheme)));
        }
    }
    let kind = match section.scheme.as_str() {
        "proposed" => InitKind::Proposed { c: section.c.unwrap_or(InitKind::DEFAULT_C) },
        "he" => InitKind::HeStyle { gain: section.gain.unwrap_or(InitKind::DEFAULT_HE_GAIN) },
        "glorot" => InitKind::GlorotStyle,
        _ => InitKind::FixedVariance {
            v: section.variance.ok_or_else(|| config_error("init.variance is required for scheme 'fixed'"))?,
        },
    };
    let distribution = match &section.distribution {
        Some(d) => d.parse::<Distribution>().map_err(|e| config_error(format!("init.distribution: {e}")))?,
        None => Distribution::default(),
    };
    Ok(InitScheme::new(kind, distribution))
}

fn init_section(init: &InitScheme) -> InitSection {
    let mut s = InitSection {
        scheme: init.kind.name().to_string(),
        c: None,
        gain: None,
        variance: None,
        distribution: Some(init.distribution.name().to_string()),
    };
    match init.kind {
        InitKind::Proposed { c } => s.c = Some(c),
        InitKind::HeStyle { gain } => s.gain = Some(gain),
        InitKind::GlorotStyle => {}
        InitKind::FixedVariance { v } => s.variance = Some(v),
    }
    s
}

impl ConfigFile {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| config_error(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| config_error(format!("config {}: {e}", path.display())))
    }

    /// Fills defaults and validates everything.
    pub fn resolve(&self) -> Result<Experiment, CliError> {
        let mut applied = Vec::new();
        let n = &self.network;
        let activation: Activation =
            n.activation.parse().map_err(|e| config_error(format!("network.activation: {e}")))?;
        let block: BlockKind = n.block.parse().map_err(|e| config_error(format!("network.block: {e}")))?;
        let init = match &self.init {
            Some(section) => {
                if section.scheme == "proposed" && section.c.is_none() {
                    applied.push("init.c".into());
                }
                if section.scheme == "he" && section.gain.is_none() {
                    applied.push("init.gain".into());
                }
                if section.distribution.is_none() {
                    applied.push("init.distribution".into());
                }
                parse_init(section)?
            }
            None => {
                applied.push("init".into());
                InitScheme::proposed(InitKind::DEFAULT_C)
            }
        };
        let net = NetworkConfig {
            depth: n.depth,
            width: n.width,
            activation,
            block,
            init,
            batch_size: or_default(n.batch_size, DEFAULT_BATCH_SIZE, "network.batch_size", &mut applied),
            input_variance: or_default(n.input_variance, 1.0, "network.input_variance", &mut applied),
            output_delta_variance: or_default(
                n.output_delta_variance,
                1.0,
                "network.output_delta_variance",
                &mut applied,
            ),
        };
        net.validate().map_err(|e| config_error(e.to_string()))?;

        let run = self.run.clone().unwrap_or_default();
        let trials = or_default(run.trials, DEFAULT_TRIALS, "run.trials", &mut applied);
        let seed = or_default(run.seed, DEFAULT_SEED, "run.seed", &mut applied);
        let tolerance_rel = or_default(run.tolerance_rel, DEFAULT_TOLERANCE_REL, "run.tolerance_rel", &mut applied);
        if trials == 0 {
            return Err(config_error("run.trials must be at least 1"));
        }
        if !(tolerance_rel.is_finite() && tolerance_rel > 0.0) {
            return Err(config_error("run.tolerance_rel must be positive"));
        }
        if run.workers == Some(0) {
            return Err(config_error("run.workers must be at least 1"));
        }
        let tolerance = ToleranceConfig { exact_rel: tolerance_rel, ..ToleranceConfig::default() };

        let defaults = TrainConfig::new(net.clone());
        let t = self.train.clone().unwrap_or_default();
        let d = t.dataset.clone().unwrap_or_default();
        let train = TrainConfig {
            net: net.clone(),
            steps: or_default(t.steps, defaults.steps, "train.steps", &mut applied),
            learning_rate: or_default(t.learning_rate, defaults.learning_rate, "train.learning_rate", &mut applied),
            repeats: or_default(t.repeats, defaults.repeats, "train.repeats", &mut applied),
            dataset: DatasetConfig {
                samples: or_default(d.samples, defaults.dataset.samples, "train.dataset.samples", &mut applied),
                separation: or_default(
                    d.separation,
                    defaults.dataset.separation,
                    "train.dataset.separation",
                    &mut applied,
                ),
            },
        };
        train.validate().map_err(|e| config_error(format!("train: {e}")))?;

        let batch_sizes = or_default(
            self.convergence.clone().unwrap_or_default().batch_sizes,
            DEFAULT_BATCH_SIZES.to_vec(),
            "convergence.batch_sizes",
            &mut applied,
        );
        if batch_sizes.is_empty() || batch_sizes.iter().any(|&b| b < 2) {
            return Err(config_error("convergence.batch_sizes must be non-empty and each at least 2"));
        }

        Ok(Experiment {
            net,
            trials,
            seed,
            tolerance,
            workers: run.workers,
            output: self.output.clone().unwrap_or_default(),
            train,
            batch_sizes,
            defaults_applied: applied,
        })
    }
}

impl Experiment {
    pub fn from_file(path: &Path) -> Result<Self, CliError> {
        ConfigFile::load(path)?.resolve()
    }

    pub fn with_seed(mut self, seed: Option<u64>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        self
    }

    pub fn with_trials(mut self, trials: Option<u64>) -> Result<Self, CliError> {
        if let Some(t) = trials {
            if t == 0 {
                return Err(config_error("--trials must be at least 1"));
            }
            self.trials = t;
        }
        Ok(self)
    }

    /// The fully specified configuration, which resolves back to `self`
    /// apart from the defaults list.
    pub fn to_config_file(&self) -> ConfigFile {
        let net = &self.net;
        ConfigFile {
            network: NetworkSection {
                depth: net.depth,
                width: net.width,
                activation: net.activation.name().into(),
                block: net.block.name().into(),
                batch_size: Some(net.batch_size),
                input_variance: Some(net.input_variance),
                output_delta_variance: Some(net.output_delta_variance),
            },
            init: Some(init_section(&net.init)),
            run: Some(RunSection {
                trials: Some(self.trials),
                seed: Some(self.seed),
                tolerance_rel: Some(self.tolerance.exact_rel),
                workers: self.workers,
            }),
            output: Some(self.output.clone()),
            train: Some(TrainSection {
                steps: Some(self.train.steps),
                learning_rate: Some(self.train.learning_rate),
                repeats: Some(self.train.repeats),
                dataset: Some(DatasetSection {
                    samples: Some(self.train.dataset.samples),
                    separation: Some(self.train.dataset.separation),
                }),
            }),
            convergence: Some(ConvergenceSection { batch_sizes: Some(self.batch_sizes.clone()) }),
        }
    }
}
