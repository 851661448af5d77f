//! JSON run configuration with flag overrides.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use mhca_core::attention::GateMode;
use mhca_core::data::DEFAULT_TEST_FRACTION;
use mhca_core::model::{DEFAULT_HIDDEN_UNITS, DEFAULT_WIDTHS};
use mhca_core::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

pub const RESOLVED_CONFIG_FILE: &str = "config.resolved.json";

/// Where images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated two-class textures, `2 · n_per_class` images.
    Synthetic {
        n_per_class: usize,
        #[serde(default)]
        seed: u64,
    },
    /// A dataset archive written by `synth-data`.
    Archive { path: PathBuf },
    /// `root/<class_name>/*.pgm|*.ppm`.
    Directory { path: PathBuf },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic { n_per_class: 250, seed: 0 }
    }
}

/// Every setting of a run. Missing keys take their defaults; unknown keys
/// are errors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_adam: f64,
    /// Seeds the split, model initialization and shuffling.
    pub seed: u64,
    pub freeze_fraction: f64,
    pub runs: usize,
    pub attention: bool,
    pub heads: usize,
    pub reduction: usize,
    pub gate_mode: GateMode,
    pub widths: Vec<usize>,
    pub hidden_units: usize,
    pub input_size: usize,
    pub data: DataSource,
    pub test_fraction: f64,
    pub output_dir: PathBuf,
}

impl Default for CliConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            max_epochs: t.max_epochs,
            beta1: t.beta1,
            beta2: t.beta2,
            eps_adam: t.eps_adam,
            seed: t.seed,
            freeze_fraction: t.freeze_fraction,
            runs: t.runs,
            attention: true,
            heads: 16,
            reduction: 8,
            gate_mode: GateMode::default(),
            widths: DEFAULT_WIDTHS.to_vec(),
            hidden_units: DEFAULT_HIDDEN_UNITS,
            input_size: 32,
            data: DataSource::default(),
            test_fraction: DEFAULT_TEST_FRACTION,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Values given on the command line; `None` keeps the file's value.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub learning_rate: Option<f64>,
    pub batch_size: Option<usize>,
    pub max_epochs: Option<usize>,
    pub seed: Option<u64>,
    pub freeze_fraction: Option<f64>,
    pub runs: Option<usize>,
    pub attention: Option<bool>,
    pub heads: Option<usize>,
    pub reduction: Option<usize>,
    pub gate_mode: Option<GateMode>,
    pub widths: Option<Vec<usize>>,
    pub hidden_units: Option<usize>,
    pub input_size: Option<usize>,
    pub data: Option<DataSource>,
    pub test_fraction: Option<f64>,
    pub output_dir: Option<PathBuf>,
}

/// Reads `path` (or starts from defaults), applies `overrides` and validates.
/// An empty or whitespace-only file means "all defaults".
pub fn parse_config(path: Option<&Path>, overrides: &Overrides) -> Result<CliConfig> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
            parse_config_str(&text).with_context(|| format!("in config {}", p.display()))?
        }
        None => CliConfig::default(),
    };
    cfg.apply(overrides);
    cfg.validate()?;
    Ok(cfg)
}

/// Parses JSON text without validating; errors carry the offending key path.
pub fn parse_config_str(text: &str) -> Result<CliConfig> {
    if text.trim().is_empty() {
        return Ok(CliConfig::default());
    }
    let de = &mut serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner();
        if path.is_empty() || path == "." {
            anyhow::anyhow!("{inner}")
        } else {
            anyhow::anyhow!("{path}: {inner}")
        }
    })
}

macro_rules! take {
    ($cfg:ident, $o:ident: $($field:ident),*) => {
        $(if let Some(v) = &$o.$field { $cfg.$field = v.clone(); })*
    };
}

impl CliConfig {
    pub fn apply(&mut self, o: &Overrides) {
        let cfg = self;
        take!(cfg, o: learning_rate, batch_size, max_epochs, seed, freeze_fraction, runs, attention, heads,
            reduction, gate_mode, widths, hidden_units, input_size, data, test_fraction, output_dir);
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            beta1: self.beta1,
            beta2: self.beta2,
            eps_adam: self.eps_adam,
            seed: self.seed,
            freeze_fraction: self.freeze_fraction,
            runs: self.runs,
        }
    }

    /// Architecture for this config on data with the given shape.
    pub fn model_config(&self, num_classes: usize, in_channels: usize, attention: bool) -> ModelConfig {
        let mut m = ModelConfig::xception_lite(self.input_size, num_classes)
            .with_widths(self.widths.clone())
            .with_hidden_units(self.hidden_units);
        m.in_channels = in_channels;
        if attention {
            m.with_attention(self.heads, self.reduction, self.gate_mode)
        } else {
            m.without_attention()
        }
    }

    /// Rejects out-of-range values, naming the key.
    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        if self.heads == 0 {
            bail!("heads: must be at least 1");
        }
        if self.reduction == 0 {
            bail!("reduction: must be at least 1");
        }
        if self.widths.is_empty() || self.widths.contains(&0) {
            bail!("widths: must be a non-empty list of positive integers");
        }
        if self.hidden_units == 0 {
            bail!("hidden_units: must be at least 1");
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            bail!("test_fraction: must be in (0, 1)");
        }
        match &self.data {
            DataSource::Synthetic { n_per_class: 0, .. } => bail!("data.synthetic.n_per_class: must be at least 1"),
            DataSource::Synthetic { .. } if self.input_size < mhca_core::data::synth::MIN_SIZE => {
                bail!("input_size: synthetic data needs at least {}", mhca_core::data::synth::MIN_SIZE)
            }
            _ => {}
        }
        self.model_config(2, 3, self.attention).validate().map_err(|e| anyhow::anyhow!("model: {e}"))?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    /// Writes the resolved config into the output directory.
    pub fn echo(&self) -> Result<PathBuf> {
        std::fs::create_dir_all(&self.output_dir)
            .with_context(|| format!("creating output directory {}", self.output_dir.display()))?;
        let path = self.output_dir.join(RESOLVED_CONFIG_FILE);
        std::fs::write(&path, self.to_json()?).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}
