//! Config file handling: one TOML section per subcommand, every key
//! optional with the documented default, unknown keys rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use atloss::data::noise::NoiseKind;
use atloss::data::refine::DEFAULT_FENCE_MULTIPLIER;
use atloss::data::synthetic::StormParams;
use atloss::experiment::{LossChoice, SuiteConfig};
use atloss::verification::{GradCheckConfig, LipschitzConfig, PenaltyOracleConfig};

use crate::CliError;

/// Report serialization format.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatChoice {
    Csv,
    Json,
}

impl FormatChoice {
    pub fn extension(&self) -> &'static str {
        match self {
            FormatChoice::Csv => "csv",
            FormatChoice::Json => "json",
        }
    }
}

/// The `[output]` section: destination directory, report format, and
/// whether commands also render threshold-highlighted PNG plots.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: Option<PathBuf>,
    pub format: Option<FormatChoice>,
    pub plots: bool,
}

/// The `[generate]` section; storm-shape keys (cell_count, amplitude, ...)
/// live in the `[generate.storm]` subsection.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateConfig {
    pub height: usize,
    pub width: usize,
    pub steps: usize,
    pub seed: u64,
    pub dt_minutes: f64,
    /// Output file name, relative to the output directory.
    pub file: String,
    pub storm: StormParams,
}

impl Default for GenerateConfig {
    fn default() -> Self {
        GenerateConfig {
            height: 64,
            width: 64,
            steps: 120,
            seed: 0x746f_7272,
            dt_minutes: 10.0,
            file: "sequence.grid".to_string(),
            storm: StormParams::default(),
        }
    }
}

/// The `[refine]` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Input sequence file; relative paths resolve against the output
    /// directory, where `generate` writes.
    pub input: String,
    /// Output file name, relative to the output directory.
    pub file: String,
    pub fence_multiplier: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            input: "sequence.grid".to_string(),
            file: "refined.grid".to_string(),
            fence_multiplier: DEFAULT_FENCE_MULTIPLIER,
        }
    }
}

/// Data track for the `train` command.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackChoice {
    Clean,
    Dirty,
}

/// The `[train]` section.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCommandConfig {
    pub loss: LossChoice,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    pub input_frames: usize,
    pub threshold: f64,
    pub perturbation_scale: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub track: TrackChoice,
    pub noise_kind: NoiseKind,
    pub noise_fraction: f64,
    pub noise_seed: u64,
    /// Existing sequence file to train on; generated from `[generate]`
    /// when absent. Relative paths resolve against the output directory.
    pub data_path: Option<String>,
    /// Remove impulse artifacts from the input frames before windowing.
    pub refine_input: bool,
    pub fence_multiplier: f64,
    pub dt_minutes: f64,
    /// Windows held out from the end of the sequence for per-epoch metrics.
    pub val_windows: usize,
    /// Log file stem, relative to the output directory.
    pub file: String,
}

impl Default for TrainCommandConfig {
    fn default() -> Self {
        let adam = atloss::train::AdamConfig::default();
        TrainCommandConfig {
            loss: LossChoice::At,
            epochs: 30,
            seed: 11,
            batch_size: atloss::train::DEFAULT_BATCH_SIZE,
            input_frames: 1,
            threshold: atloss::loss::at::DEFAULT_THRESHOLD,
            perturbation_scale: atloss::loss::at::DEFAULT_PERTURBATION_SCALE,
            learning_rate: adam.learning_rate,
            beta1: adam.beta1,
            beta2: adam.beta2,
            epsilon: adam.epsilon,
            track: TrackChoice::Clean,
            noise_kind: NoiseKind::SaltAndPepper,
            noise_fraction: 0.20,
            noise_seed: 0x6e6f_6973,
            data_path: None,
            refine_input: true,
            fence_multiplier: DEFAULT_FENCE_MULTIPLIER,
            dt_minutes: 10.0,
            val_windows: 15,
            file: "train_log".to_string(),
        }
    }
}

impl TrainCommandConfig {
    pub fn adam(&self) -> atloss::train::AdamConfig {
        atloss::train::AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

/// Whole config file: one optional section per subcommand.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub output: OutputConfig,
    pub generate: GenerateConfig,
    pub refine: RefineConfig,
    pub gradcheck: GradCheckConfig,
    pub lipschitz: LipschitzConfig,
    #[serde(rename = "penalty-oracle")]
    pub penalty_oracle: PenaltyOracleConfig,
    pub train: TrainCommandConfig,
    pub consistency: SuiteConfig,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(FileConfig::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        toml::from_str(&text)
            .map_err(|e| CliError::Config(format!("invalid config {}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_default() {
        let parsed: FileConfig = toml::from_str("").unwrap();
        assert_eq!(parsed.generate.height, 64);
        assert_eq!(parsed.train.epochs, 30);
        assert!(parsed.output.dir.is_none());
    }

    #[test]
    fn sections_override_defaults() {
        let parsed: FileConfig = toml::from_str(
            r#"
            [output]
            plots = true

            [generate]
            height = 32

            [generate.storm]
            cell_count = 4

            [gradcheck]
            cases = 10

            [penalty-oracle]
            cells = 6

            [train]
            loss = "huber"
            track = "dirty"

            [consistency]
            seeds = [1, 2]
            "#,
        )
        .unwrap();
        assert!(parsed.output.plots);
        assert_eq!(parsed.generate.height, 32);
        assert_eq!(parsed.generate.storm.cell_count, 4);
        assert_eq!(parsed.gradcheck.cases, 10);
        assert_eq!(parsed.penalty_oracle.cells, 6);
        assert_eq!(parsed.train.loss, LossChoice::Huber);
        assert_eq!(parsed.train.track, TrackChoice::Dirty);
        assert_eq!(parsed.consistency.seeds, vec![1, 2]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<FileConfig>("[gradcheck]\nbogus = 1\n").is_err());
        assert!(toml::from_str::<FileConfig>("[generate]\nhieght = 32\n").is_err());
        assert!(toml::from_str::<FileConfig>("[generate.storm]\ncells = 4\n").is_err());
        assert!(toml::from_str::<FileConfig>("[no_such_section]\nx = 1\n").is_err());
        assert!(toml::from_str::<FileConfig>("[consistency]\nnoize = 0.2\n").is_err());
    }
}
