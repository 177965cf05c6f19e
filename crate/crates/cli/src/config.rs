//! Config schemas for the subcommands. All parse strictly (unknown keys are
//! errors), carry their defaults in the struct so the persisted config.json
//! is self-describing, and validate with messages that name the offending
//! key and its constraint.

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use wasscert::experiments::SampleSchedule;
use wasscert::measures::SamplingDistribution;
use wasscert::network::{Activation, MlpSpec};
use wasscert::training::{OptimizerMode, TargetFunction, TrainSettings};
use wasscert::Seed;

use crate::error::CliError;

pub fn load_config<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("config {}: {e}", path.display())))
}

fn bad_key(key: &str, constraint: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("config key `{key}`: {constraint}"))
}

fn check_order_key(key: &str, p: f64) -> Result<(), CliError> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(bad_key(key, format!("must satisfy p >= 1, got {p}")))
    }
}

fn check_grid(key: &str, grid: &[usize]) -> Result<(), CliError> {
    if grid.is_empty() || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(bad_key(key, "must be non-empty and strictly increasing"));
    }
    Ok(())
}

fn check_dims(target: &TargetFunction, dist: &SamplingDistribution) -> Result<(), CliError> {
    if target.dim() != dist.dim() {
        return Err(bad_key(
            "target",
            format!("dimension {} does not match `dist` dimension {}", target.dim(), dist.dim()),
        ));
    }
    Ok(())
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("results")
}

fn default_p() -> f64 {
    2.0
}

fn default_reps() -> usize {
    10
}

fn default_rate_reps() -> usize {
    20
}

fn default_risk_samples() -> usize {
    20_000
}

fn default_activation() -> Activation {
    Activation::Relu
}

fn local_train_default() -> TrainSettings {
    TrainSettings { mode: OptimizerMode::SingleRunLocal, ..TrainSettings::default() }
}

/// Common seed plumbing: `seed` and `seed_stream` assemble the master Seed.
pub fn master_seed(seed: u64, stream: u64) -> Seed {
    Seed::with_stream(seed, stream)
}

/// Where the training set comes from: a point file on disk or a fresh draw.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataSource {
    PointsFile { path: PathBuf },
    Sampled { dist: SamplingDistribution, n: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub data: DataSource,
    pub target: TargetFunction,
    pub network: MlpSpec,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seed_stream: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.target.validate().map_err(|e| bad_key("target", e))?;
        self.train.validate().map_err(|e| bad_key("train", e))?;
        let data_dim = match &self.data {
            DataSource::PointsFile { .. } => None,
            DataSource::Sampled { dist, n } => {
                dist.validate().map_err(|e| bad_key("data.dist", e))?;
                if *n == 0 {
                    return Err(bad_key("data.n", "must be at least 1"));
                }
                Some(dist.dim())
            }
        };
        if let Some(d) = data_dim {
            if d != self.network.input_dim() {
                return Err(bad_key(
                    "network",
                    format!("input dimension {} does not match `data.dist` dimension {d}", self.network.input_dim()),
                ));
            }
        }
        if self.target.dim() != self.network.input_dim() {
            return Err(bad_key(
                "target",
                format!(
                    "dimension {} does not match `network` input dimension {}",
                    self.target.dim(),
                    self.network.input_dim()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    /// Model file written by `train`.
    pub model: PathBuf,
    /// The cloud the model was trained on.
    pub train_points: PathBuf,
    pub target: TargetFunction,
    pub dist: SamplingDistribution,
    /// Reference size; omitted means M_ref = N, the exact path.
    #[serde(default)]
    pub m_ref: Option<usize>,
    #[serde(default = "default_p")]
    pub p: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seed_stream: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl CertifyConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.target.validate().map_err(|e| bad_key("target", e))?;
        self.dist.validate().map_err(|e| bad_key("dist", e))?;
        check_dims(&self.target, &self.dist)?;
        check_order_key("p", self.p)?;
        if self.m_ref == Some(0) {
            return Err(bad_key("m_ref", "must be a positive multiple of the training size"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateFitConfig {
    pub dist: SamplingDistribution,
    #[serde(default = "default_p")]
    pub p: f64,
    /// Even sample counts, strictly increasing, at least four.
    pub ns: Vec<usize>,
    #[serde(default = "default_rate_reps")]
    pub reps: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seed_stream: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl RateFitConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.dist.validate().map_err(|e| bad_key("dist", e))?;
        check_order_key("p", self.p)?;
        check_grid("ns", &self.ns)?;
        if self.ns.len() < 4 {
            return Err(bad_key("ns", "needs at least 4 grid points"));
        }
        if let Some(&n) = self.ns.iter().find(|&&n| n % 2 != 0) {
            return Err(bad_key("ns", format!("all entries must be even, got {n}")));
        }
        if self.reps < 20 {
            return Err(bad_key("reps", format!("must be at least 20, got {}", self.reps)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeNConfig {
    pub network: MlpSpec,
    pub target: TargetFunction,
    pub dist: SamplingDistribution,
    pub ns: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub train: TrainSettings,
    /// Sample count of the floor run; must exceed the largest grid value.
    pub floor_n: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seed_stream: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl ConvergeNConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.target.validate().map_err(|e| bad_key("target", e))?;
        self.dist.validate().map_err(|e| bad_key("dist", e))?;
        self.train.validate().map_err(|e| bad_key("train", e))?;
        check_dims(&self.target, &self.dist)?;
        check_grid("ns", &self.ns)?;
        if self.reps == 0 {
            return Err(bad_key("reps", "must be at least 1"));
        }
        let max_n = *self.ns.last().expect("grid checked non-empty");
        if self.floor_n <= max_n {
            return Err(bad_key(
                "floor_n",
                format!("must exceed the largest grid value {max_n}, got {}", self.floor_n),
            ));
        }
        if self.dist.dim() != self.network.input_dim() {
            return Err(bad_key(
                "network",
                format!(
                    "input dimension {} does not match `dist` dimension {}",
                    self.network.input_dim(),
                    self.dist.dim()
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeWidthConfig {
    pub widths: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub target: TargetFunction,
    pub dist: SamplingDistribution,
    pub schedule: SampleSchedule,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default)]
    pub train: TrainSettings,
    /// Monte-Carlo samples per risk estimate (per-width schedules only).
    #[serde(default = "default_risk_samples")]
    pub risk_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seed_stream: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl ConvergeWidthConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.target.validate().map_err(|e| bad_key("target", e))?;
        self.dist.validate().map_err(|e| bad_key("dist", e))?;
        self.train.validate().map_err(|e| bad_key("train", e))?;
        check_dims(&self.target, &self.dist)?;
        check_grid("widths", &self.widths)?;
        if self.reps == 0 {
            return Err(bad_key("reps", "must be at least 1"));
        }
        match &self.schedule {
            SampleSchedule::Fixed { n } => {
                if *n == 0 {
                    return Err(bad_key("schedule.n", "must be at least 1"));
                }
            }
            SampleSchedule::PerWidth { ns } => {
                if ns.len() != self.widths.len() {
                    return Err(bad_key(
                        "schedule.ns",
                        format!("has {} entries for {} widths", ns.len(), self.widths.len()),
                    ));
                }
                if ns.contains(&0) {
                    return Err(bad_key("schedule.ns", "entries must be at least 1"));
                }
                if self.risk_samples < 100 {
                    return Err(bad_key("risk_samples", "must be at least 100"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocalStudyConfig {
    pub network: MlpSpec,
    pub target: TargetFunction,
    pub dist: SamplingDistribution,
    pub ns: Vec<usize>,
    #[serde(default = "default_reps")]
    pub reps: usize,
    /// Must keep `mode` at single-run-local; that is the point of the study.
    #[serde(default = "local_train_default")]
    pub train: TrainSettings,
    #[serde(default = "default_risk_samples")]
    pub risk_samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub seed_stream: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

impl LocalStudyConfig {
    pub fn validate(&self) -> Result<(), CliError> {
        self.target.validate().map_err(|e| bad_key("target", e))?;
        self.dist.validate().map_err(|e| bad_key("dist", e))?;
        self.train.validate().map_err(|e| bad_key("train", e))?;
        check_dims(&self.target, &self.dist)?;
        check_grid("ns", &self.ns)?;
        if self.reps == 0 {
            return Err(bad_key("reps", "must be at least 1"));
        }
        if self.train.mode != OptimizerMode::SingleRunLocal {
            return Err(bad_key("train.mode", "must be single-run-local for this study"));
        }
        if self.risk_samples < 100 {
            return Err(bad_key("risk_samples", "must be at least 100"));
        }
        if self.dist.dim() != self.network.input_dim() {
            return Err(bad_key(
                "network",
                format!(
                    "input dimension {} does not match `dist` dimension {}",
                    self.network.input_dim(),
                    self.dist.dim()
                ),
            ));
        }
        Ok(())
    }
}
