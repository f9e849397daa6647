//! Run configurations. Each subcommand reads an optional JSON file of its own
//! run type, applies command-line flags on top, and writes the resolved
//! result next to its outputs so the run can be repeated with `--config`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use meirl_core::baselines::{BcConfig, EkfConfig};
use meirl_core::synth::DatasetConfig;
use meirl_core::trainer::TrainConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{config, CliError, CliResult};

/// Methods in comparison-table order.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum,
)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum MethodName {
    Ekf,
    Bc,
    Random,
    IrlNokin,
    Ours,
}

impl MethodName {
    pub const ALL: [MethodName; 5] = [
        MethodName::Ekf,
        MethodName::Bc,
        MethodName::Random,
        MethodName::IrlNokin,
        MethodName::Ours,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodName::Ekf => "ekf",
            MethodName::Bc => "bc",
            MethodName::Random => "random",
            MethodName::IrlNokin => "irl_nokin",
            MethodName::Ours => "ours",
        }
    }

    pub fn parse(s: &str) -> CliResult<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| config(format!("unknown method '{s}'")))
    }

    /// Whether the method needs a trained checkpoint.
    pub fn learned(self) -> bool {
        matches!(
            self,
            MethodName::Bc | MethodName::IrlNokin | MethodName::Ours
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    #[default]
    Test,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateRun {
    pub out: Option<PathBuf>,
    pub dataset: DatasetConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainRun {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub method: MethodName,
    /// Checkpoint to continue from.
    pub resume: Option<PathBuf>,
    pub train: TrainConfig,
    pub bc: BcConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            data: None,
            out: None,
            method: MethodName::Ours,
            resume: None,
            train: TrainConfig::default(),
            bc: BcConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PredictRun {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Learned model; its method is read from the file.
    pub checkpoint: Option<PathBuf>,
    /// Required for `ekf` and `random`, optional otherwise.
    pub method: Option<MethodName>,
    pub split: Split,
    pub index: usize,
    /// Sampled trajectories to export.
    pub samples: usize,
    pub seed: u64,
    /// Replace terrain channels with constants.
    pub zero_lidar: bool,
    pub ekf: EkfConfig,
}

impl Default for PredictRun {
    fn default() -> Self {
        PredictRun {
            data: None,
            out: None,
            checkpoint: None,
            method: None,
            split: Split::Test,
            index: 0,
            samples: 100,
            seed: 0,
            zero_lidar: false,
            ekf: EkfConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalRun {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub methods: Vec<MethodName>,
    /// Checkpoint per learned method.
    pub checkpoints: BTreeMap<MethodName, PathBuf>,
    /// Rollouts per demonstration for the Hausdorff distance.
    pub samples: usize,
    pub seed: u64,
    pub zero_lidar: bool,
    pub ekf: EkfConfig,
}

impl Default for EvalRun {
    fn default() -> Self {
        EvalRun {
            data: None,
            out: None,
            methods: MethodName::ALL.to_vec(),
            checkpoints: BTreeMap::new(),
            samples: 1000,
            seed: 0,
            zero_lidar: false,
            ekf: EkfConfig::default(),
        }
    }
}

/// Loads `path` as `T`, or the defaults without a path.
pub fn load<T: DeserializeOwned + Default>(path: Option<&Path>) -> CliResult<T> {
    let Some(p) = path else {
        return Ok(T::default());
    };
    let text = fs::read_to_string(p)
        .map_err(|e| config(format!("cannot read config {}: {e}", p.display())))?;
    serde_json::from_str(&text).map_err(|e| config(format!("config {}: {e}", p.display())))
}

/// Writes the resolved run next to the outputs.
pub fn save<T: Serialize>(run: &T, dir: &Path) -> CliResult<()> {
    let p = dir.join("config.json");
    let json = serde_json::to_string_pretty(run).expect("run config serializes");
    fs::write(&p, json + "\n")
        .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", p.display())))
}

/// A required path that the config or a flag must supply.
pub fn required<'a>(p: &'a Option<PathBuf>, what: &str) -> CliResult<&'a Path> {
    p.as_deref()
        .ok_or_else(|| config(format!("missing {what} (flag or config file)")))
}

/// Creates `dir` if needed; failure means the output location is unusable.
pub fn output_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| {
        config(format!(
            "cannot create output directory {}: {e}",
            dir.display()
        ))
    })
}
