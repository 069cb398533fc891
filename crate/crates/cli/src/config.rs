//! Experiment configuration files.
//!
//! A config is a TOML document with a top-level `run_id`, an optional
//! `output_dir` and `preset`, and the blocks `[model]`, `[dmrg]`, `[measure]`
//! and `[sweep]`. Only `run_id` and `[model]` are required. See the README for
//! the full grammar.

use lrxxz_core::dmrg::{DmrgConfig, Preset};
use lrxxz_core::entanglement::ProfileOptions;
use lrxxz_core::mpo::{ChainLength, Decay, ModelSpec};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const OUTPUT_DIR_ENV: &str = "LRXXZ_OUTPUT_DIR";
pub const MAX_WORKERS_ENV: &str = "LRXXZ_MAX_WORKERS";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("{0}")]
    Invalid(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LengthField {
    Sites(usize),
    Word(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelBlock {
    pub decay: Decay,
    #[serde(default)]
    pub alpha: f64,
    pub j_xy: f64,
    pub j_z: f64,
    pub h_x: f64,
    pub length: LengthField,
}

impl ModelBlock {
    pub fn to_spec(&self) -> Result<ModelSpec, ConfigError> {
        let length = match &self.length {
            LengthField::Sites(n) => ChainLength::Finite(*n),
            LengthField::Word(w) if w == "infinite" => ChainLength::Infinite,
            LengthField::Word(w) => {
                return Err(ConfigError::Invalid(format!("model.length: expected a site count or \"infinite\", got {w:?}")))
            }
        };
        let spec = ModelSpec { decay: self.decay, alpha: self.alpha, j_xy: self.j_xy, j_z: self.j_z, h_x: self.h_x, length };
        spec.validate().map_err(|e| ConfigError::Invalid(format!("model: {e}")))?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    Alpha,
    HX,
    JXy,
    Length,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::Alpha => "alpha",
            SweepParameter::HX => "h_x",
            SweepParameter::JXy => "j_xy",
            SweepParameter::Length => "length",
        }
    }

    pub fn apply(&self, base: &ModelSpec, value: f64) -> Result<ModelSpec, ConfigError> {
        let mut spec = *base;
        match self {
            SweepParameter::Alpha => spec.alpha = value,
            SweepParameter::HX => spec.h_x = value,
            SweepParameter::JXy => spec.j_xy = value,
            SweepParameter::Length => {
                if value < 2.0 || value.fract() != 0.0 {
                    return Err(ConfigError::Invalid(format!("sweep: length values must be integers >= 2, got {value}")));
                }
                spec.length = ChainLength::Finite(value as usize);
            }
        }
        spec.validate().map_err(|e| ConfigError::Invalid(format!("sweep point {}={value}: {e}", self.name())))?;
        Ok(spec)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RangeBlock {
    pub from: f64,
    pub to: f64,
    pub step: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepBlock {
    pub parameter: SweepParameter,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub range: Option<RangeBlock>,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    run_id: String,
    #[serde(default)]
    output_dir: Option<PathBuf>,
    #[serde(default)]
    preset: Option<Preset>,
    model: ModelBlock,
    #[serde(default)]
    dmrg: Option<toml::Table>,
    #[serde(default)]
    measure: Option<ProfileOptions>,
    #[serde(default)]
    sweep: Option<SweepBlock>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Sweep {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

/// A validated configuration with preset and command-line overrides applied.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub run_id: String,
    pub output_dir: PathBuf,
    pub preset: Preset,
    pub model: ModelSpec,
    pub dmrg: DmrgConfig,
    pub measure: ProfileOptions,
    pub sweep: Option<Sweep>,
}

#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub preset: Option<Preset>,
    pub seed: Option<u64>,
    pub run_id: Option<String>,
}

impl ExperimentConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        Self::parse(&text, path, overrides)
    }

    pub fn parse(text: &str, path: &Path, overrides: &Overrides) -> Result<Self, ConfigError> {
        let raw: RawConfig =
            toml::from_str(text).map_err(|e| ConfigError::Parse { path: path.into(), message: e.to_string() })?;
        let run_id = overrides.run_id.clone().unwrap_or(raw.run_id);
        if run_id.trim().is_empty() || run_id.contains(['/', '\\']) || run_id == "." || run_id == ".." {
            return Err(ConfigError::Invalid(format!("run_id must be a nonempty plain name, got {run_id:?}")));
        }
        let preset = overrides.preset.or(raw.preset).unwrap_or(Preset::Desk);
        let dmrg = merge_dmrg(preset, raw.dmrg, path)?;
        let mut dmrg = dmrg;
        if let Some(seed) = overrides.seed {
            dmrg.seed = seed;
        }
        dmrg.validate().map_err(|e| ConfigError::Invalid(format!("dmrg: {e}")))?;
        let model = raw.model.to_spec()?;
        let measure = raw.measure.unwrap_or_default();
        if measure.d_max == 0 || !(measure.threshold > 0.0) {
            return Err(ConfigError::Invalid("measure: d_max must be >= 1 and threshold > 0".into()));
        }
        let sweep = raw.sweep.map(|s| resolve_sweep(&s, &model)).transpose()?;
        let output_dir = std::env::var_os(OUTPUT_DIR_ENV)
            .map(PathBuf::from)
            .or(raw.output_dir)
            .unwrap_or_else(|| PathBuf::from("runs"));
        Ok(Self { run_id, output_dir, preset, model, dmrg, measure, sweep })
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    /// Model for every sweep point, or the single base model.
    pub fn points(&self) -> Result<Vec<(Option<f64>, ModelSpec)>, ConfigError> {
        match &self.sweep {
            None => Ok(vec![(None, self.model)]),
            Some(s) => s.values.iter().map(|&v| Ok((Some(v), s.parameter.apply(&self.model, v)?))).collect(),
        }
    }
}

fn merge_dmrg(preset: Preset, table: Option<toml::Table>, path: &Path) -> Result<DmrgConfig, ConfigError> {
    let base = DmrgConfig::preset(preset);
    let Some(table) = table else { return Ok(base) };
    let mut merged = toml::Table::try_from(base).map_err(|e| ConfigError::Invalid(e.to_string()))?;
    for (k, v) in table {
        merged.insert(k, v);
    }
    toml::Value::Table(merged)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::Parse { path: path.into(), message: format!("[dmrg]: {}", e.message()) })
}

fn resolve_sweep(block: &SweepBlock, model: &ModelSpec) -> Result<Sweep, ConfigError> {
    let values = match (&block.values, &block.range) {
        (Some(v), None) => v.clone(),
        (None, Some(r)) => {
            if !(r.step > 0.0) || !(r.to >= r.from) {
                return Err(ConfigError::Invalid("sweep.range needs step > 0 and to >= from".into()));
            }
            lrxxz_core::fit::uniform_grid(r.from, r.to, r.step)
        }
        _ => return Err(ConfigError::Invalid("sweep needs exactly one of `values` or `range`".into())),
    };
    if values.is_empty() {
        return Err(ConfigError::Invalid("sweep values must be nonempty".into()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(ConfigError::Invalid(format!("sweep values must be finite, got {v}")));
    }
    for &v in &values {
        block.parameter.apply(model, v)?;
    }
    Ok(Sweep { parameter: block.parameter, values })
}
