//! Experiment configuration file.

use std::path::Path;

use fovreg::dataset::SyntheticWorldConfig;
use fovreg::encoder::{Activation, SgdConfig};
use fovreg::losses::LossKind;
use fovreg::metrics::{EvalConfig, KlGroundTruth};
use fovreg::sampler::BatchSpec;
use fovreg::trainer::{default_sgd_for, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub world: SyntheticWorldConfig,
    pub pairs: PairsConfig,
    pub train: TrainSection,
    pub eval: EvalSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairsConfig {
    /// `null` takes every map×map and map×query pair.
    #[serde(default)]
    pub n_pairs: Option<usize>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub loss: LossKind,
    pub iterations: u64,
    #[serde(default = "default_batch")]
    pub batch: BatchSpec,
    #[serde(default = "default_snapshot_period")]
    pub snapshot_period: u64,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_d_out")]
    pub d_out: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub init_seed: u64,
    pub sampler_seed: u64,
    /// Explicit optimizer settings; absent means the per-loss default.
    #[serde(default)]
    pub sgd: Option<SgdConfig>,
    /// Decay period of the default GCL step schedule.
    #[serde(default = "default_step_period")]
    pub step_period: u64,
}

fn default_batch() -> BatchSpec {
    BatchSpec::new(16)
}

fn default_snapshot_period() -> u64 {
    10_000
}

fn default_hidden() -> Vec<usize> {
    vec![128, 64]
}

fn default_d_out() -> usize {
    32
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn default_step_period() -> u64 {
    250_000
}

impl TrainSection {
    pub fn sgd(&self) -> SgdConfig {
        self.sgd
            .unwrap_or_else(|| default_sgd_for(&self.loss, self.step_period))
    }

    pub fn to_train_config(&self) -> TrainConfig {
        TrainConfig {
            loss: self.loss,
            sgd: self.sgd(),
            batch: self.batch,
            iterations: self.iterations,
            snapshot_period: self.snapshot_period,
            hidden: self.hidden.clone(),
            d_out: self.d_out,
            activation: self.activation,
            init_seed: self.init_seed,
            sampler_seed: self.sampler_seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_dist_m")]
    pub dist_m: f64,
    #[serde(default = "default_angle_deg")]
    pub angle_deg: f64,
    #[serde(default = "default_bins")]
    pub bins: usize,
    #[serde(default = "default_smoothing")]
    pub smoothing: f64,
    #[serde(default = "default_max_kl_pairs")]
    pub max_kl_pairs: usize,
    pub kl_seed: u64,
    #[serde(default = "default_kl_ground_truth")]
    pub kl_ground_truth: KlGroundTruth,
}

pub const DEFAULT_DIST_M: f64 = 25.0;
pub const DEFAULT_ANGLE_DEG: f64 = 40.0;

fn default_dist_m() -> f64 {
    DEFAULT_DIST_M
}

fn default_angle_deg() -> f64 {
    DEFAULT_ANGLE_DEG
}

fn default_bins() -> usize {
    EvalConfig::default().bins
}

fn default_smoothing() -> f64 {
    EvalConfig::default().smoothing
}

fn default_max_kl_pairs() -> usize {
    EvalConfig::default().max_kl_pairs
}

fn default_kl_ground_truth() -> KlGroundTruth {
    KlGroundTruth::Graded
}

impl EvalSection {
    pub fn to_eval_config(&self) -> EvalConfig {
        EvalConfig {
            bins: self.bins,
            smoothing: self.smoothing,
            max_kl_pairs: self.max_kl_pairs,
            kl_seed: self.kl_seed,
            kl_ground_truth: self.kl_ground_truth,
            whitening: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses and validates a config document. Errors name the offending
    /// field as a dotted path, e.g. `world.seed`.
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            CliError::Input(format!(
                "config: {}",
                describe_serde_error(&path, &inner.to_string())
            ))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let field = |path: &str, msg: String| CliError::Input(format!("config: {path}: {msg}"));
        self.world
            .validate()
            .map_err(|e| field("world", e.to_string()))?;
        self.train
            .to_train_config()
            .validate()
            .map_err(|e| field("train", e.to_string()))?;
        if self.train.sgd.is_none() && self.train.step_period == 0 {
            return Err(field("train.step_period", "must be > 0".into()));
        }
        if !(self.eval.dist_m >= 0.0) {
            return Err(field("eval.dist_m", "must be >= 0".into()));
        }
        if !(self.eval.angle_deg >= 0.0) {
            return Err(field("eval.angle_deg", "must be >= 0".into()));
        }
        if self.eval.bins < 2 {
            return Err(field("eval.bins", "must be >= 2".into()));
        }
        if !(self.eval.smoothing > 0.0) {
            return Err(field("eval.smoothing", "must be > 0".into()));
        }
        if self.eval.max_kl_pairs == 0 {
            return Err(field("eval.max_kl_pairs", "must be > 0".into()));
        }
        Ok(())
    }
}

/// Turns a serde message plus the path of the enclosing value into
/// `a.b.field: message`. Missing and unknown fields are reported by serde
/// at the level of their parent, so their name is appended.
fn describe_serde_error(path: &str, message: &str) -> String {
    let named = |prefix: &str| {
        message
            .strip_prefix(prefix)
            .and_then(|rest| rest.split('`').next())
            .map(str::to_owned)
    };
    let leaf = named("missing field `").or_else(|| named("unknown field `"));
    let full = match (path, leaf) {
        (".", Some(leaf)) => leaf,
        (p, Some(leaf)) => format!("{p}.{leaf}"),
        (p, None) => p.to_owned(),
    };
    let message = message.split(" at line ").next().unwrap_or(message);
    if full.is_empty() || full == "." {
        message.to_owned()
    } else {
        format!("{full}: {message}")
    }
}
