//! Run configuration: a TOML file layered over built-in defaults, then
//! command-line overrides on top.

use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use epiforecast::ingest::ColumnMap;
use epiforecast::{ExperimentConfig, ModelKind};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    /// OxCGRT-format CSV read by `ingest`.
    pub data: Option<PathBuf>,
    /// Cultural-dimension table; regions fall back to neutral scores without it.
    pub culture: Option<PathBuf>,
    pub out: PathBuf,
    /// Dataset snapshot; defaults to `<out>/dataset.json`.
    pub snapshot: Option<PathBuf>,
    /// Checkpoint directory; defaults to `<out>/checkpoints`.
    pub checkpoints: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            data: None,
            culture: None,
            out: PathBuf::from("out"),
            snapshot: None,
            checkpoints: None,
        }
    }
}

impl Paths {
    pub fn snapshot(&self) -> PathBuf {
        self.snapshot.clone().unwrap_or_else(|| self.out.join("dataset.json"))
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.checkpoints.clone().unwrap_or_else(|| self.out.join("checkpoints"))
    }

    pub fn checkpoint(&self, kind: ModelKind) -> PathBuf {
        self.checkpoints().join(format!("{kind}.json"))
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub paths: Paths,
    pub columns: ColumnMap,
    pub experiment: ExperimentConfig,
}

/// Values given on the command line; each one replaces the config entry.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub models: Option<Vec<ModelKind>>,
    pub experiment: Option<String>,
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn apply(&mut self, o: &Overrides) -> Result<(), CliError> {
        if let Some(name) = &o.experiment {
            let preset = ExperimentConfig::named(name)
                .ok_or_else(|| CliError::Usage(format!("unknown experiment `{name}` (expected e2020 or e2021)")))?;
            let e = &mut self.experiment;
            e.name = preset.name;
            e.train_start = preset.train_start;
            e.train_end = preset.train_end;
            e.eval_start = preset.eval_start;
            e.eval_end = preset.eval_end;
        }
        if let Some(seed) = o.seed {
            self.experiment.seed = seed;
        }
        if let Some(models) = &o.models {
            self.experiment.models = models.clone();
        }
        if let Some(out) = &o.out {
            self.paths.out = out.clone();
        }
        self.experiment
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.experiment
            .train
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))?;
        self.experiment
            .hyper
            .validate()
            .map_err(|e| CliError::Usage(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).unwrap_or_else(|e| format!("<unprintable config: {e}>"))
    }
}

/// Comma-separated model kinds as given on the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelList(pub Vec<ModelKind>);

pub fn parse_models(raw: &str) -> Result<ModelList, String> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<ModelKind>().map_err(|e| e.to_string()))
        .collect::<Result<Vec<_>, _>>()
        .and_then(|v| if v.is_empty() { Err("no model kinds given".into()) } else { Ok(ModelList(v)) })
}

pub fn parse_day(raw: &str) -> Result<NaiveDate, String> {
    epiforecast::ingest::parse_date(raw).ok_or_else(|| format!("`{raw}` is not a YYYY-MM-DD date"))
}
