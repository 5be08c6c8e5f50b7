//! TOML run configuration.
//!
//! ```toml
//! [task]
//! manifest = "train.json"        # required; relative to this file
//! name = "pets"                  # default: manifest file stem
//! description = "..."            # default: generic classification text
//! mode = "dual_encoder"          # or "encoder_decoder", "multiple_choice"
//! seed_prompts = ["a photo of a {}"]
//!
//! [optimizer]                    # every key optional
//! k = 5
//! alpha = 1.0
//! steering_mode = { kind = "last_token" }
//! alpha_grid = [0.5, 1.0, 2.0, 4.0]
//!
//! [backend]
//! name = "surrogate"             # remaining keys belong to the backend
//!
//! [output]
//! log_dir = "runs"
//! ```
//!
//! Unknown keys are rejected everywhere except inside `[backend]`, whose
//! extra keys are validated by the selected backend.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::manifest::{read_class_names, ManifestError};
use crate::config::{ConfigError, EvalMode, RunConfig, SteeringMode, DEFAULT_ALPHA_GRID};
use crate::optimizer::default_seed_prompt;

/// Overrides the configured log directory when set.
pub const LOG_DIR_ENV: &str = "STEERPROMPT_LOG_DIR";
pub const DEFAULT_LOG_DIR: &str = "runs";
pub const DEFAULT_BACKEND: &str = "surrogate";

#[derive(Debug, Error)]
pub enum SettingsError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: String,
        source: toml::de::Error,
    },
    #[error("{path}: {source}")]
    Invalid { path: String, source: ConfigError },
    #[error("{path}: {msg}")]
    Value { path: String, msg: String },
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("serializing config: {0}")]
    Serialize(#[from] toml::ser::Error),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskSection {
    manifest: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mode: Option<EvalMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed_prompts: Option<Vec<String>>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptimizerSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    candidates_per_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    max_new_tokens: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    layer_index: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    steering_mode: Option<SteeringMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ensemble_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    patience: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    alpha_grid: Option<Vec<f64>>,
}

/// Backend name plus the backend's own keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendSection {
    pub name: String,
    #[serde(flatten)]
    pub options: toml::Table,
}

impl Default for BackendSection {
    fn default() -> Self {
        Self {
            name: DEFAULT_BACKEND.to_string(),
            options: toml::Table::new(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OutputSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    log_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    task: TaskSection,
    #[serde(default)]
    optimizer: OptimizerSection,
    #[serde(default)]
    backend: BackendSection,
    #[serde(default)]
    output: OutputSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSettings {
    /// As written; relative paths resolve against the config directory.
    pub manifest: PathBuf,
    pub name: String,
    pub description: String,
    pub mode: EvalMode,
    pub seed_prompts: Vec<String>,
}

/// A configuration with every default filled in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Settings {
    pub task: TaskSettings,
    pub run: RunConfig,
    pub alpha_grid: Vec<f64>,
    pub backend: BackendSection,
    pub log_dir: PathBuf,
    /// Directory of the config file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

pub fn default_description(num_classes: usize) -> String {
    format!("Classify each image into one of {num_classes} categories.")
}

impl Settings {
    pub fn load(path: &Path) -> Result<Self, SettingsError> {
        let text = fs::read_to_string(path).map_err(|source| SettingsError::Io {
            path: path.display().to_string(),
            source,
        })?;
        let base_dir = path.parent().unwrap_or(Path::new("")).to_path_buf();
        Self::parse(&text, &base_dir, &path.display().to_string())
    }

    /// Parses config text whose relative paths resolve against `base_dir`.
    /// `origin` labels errors.
    pub fn parse(text: &str, base_dir: &Path, origin: &str) -> Result<Self, SettingsError> {
        let file: FileConfig = toml::from_str(text).map_err(|source| SettingsError::Parse {
            path: origin.to_string(),
            source,
        })?;
        let value_err = |msg: String| SettingsError::Value {
            path: origin.to_string(),
            msg,
        };

        let t = file.task;
        let mode = t.mode.unwrap_or_default();
        let classes = read_class_names(&class_names_path(base_dir, &t.manifest)?)?;
        let name = match t.name {
            Some(n) => n,
            None => t
                .manifest
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "task".into()),
        };
        let description = t
            .description
            .unwrap_or_else(|| default_description(classes.len()));
        if name.trim().is_empty() || description.trim().is_empty() {
            return Err(value_err(
                "task.name and task.description must be non-empty".into(),
            ));
        }
        let seed_prompts = match t.seed_prompts {
            Some(p) if p.is_empty() => {
                return Err(value_err("task.seed_prompts must not be empty".into()))
            }
            Some(p) => p,
            None => vec![default_seed_prompt(mode).to_string()],
        };

        let o = file.optimizer;
        let d = RunConfig::for_mode(mode, classes.len());
        let run = RunConfig {
            k: o.k.unwrap_or(d.k),
            candidates_per_iter: o.candidates_per_iter.unwrap_or(d.candidates_per_iter),
            max_iterations: o.max_iterations.unwrap_or(d.max_iterations),
            max_new_tokens: o.max_new_tokens.unwrap_or(d.max_new_tokens),
            alpha: o.alpha.unwrap_or(d.alpha),
            layer_index: o.layer_index.or(d.layer_index),
            steering_mode: o.steering_mode.unwrap_or(d.steering_mode),
            tau: o.tau.unwrap_or(d.tau),
            seed: o.seed.unwrap_or(d.seed),
            ensemble_size: o.ensemble_size.unwrap_or(d.ensemble_size),
            patience: o.patience.or(d.patience),
        };
        run.validate().map_err(|source| SettingsError::Invalid {
            path: origin.to_string(),
            source,
        })?;
        let alpha_grid = o.alpha_grid.unwrap_or_else(|| DEFAULT_ALPHA_GRID.to_vec());
        if alpha_grid.is_empty() || alpha_grid.iter().any(|a| !(*a >= 0.0 && a.is_finite())) {
            return Err(value_err(
                "optimizer.alpha_grid must be a non-empty list of non-negative numbers".into(),
            ));
        }
        if file.backend.name.trim().is_empty() {
            return Err(value_err("backend.name must be non-empty".into()));
        }

        Ok(Self {
            task: TaskSettings {
                manifest: t.manifest,
                name,
                description,
                mode,
                seed_prompts,
            },
            run,
            alpha_grid,
            backend: file.backend,
            log_dir: file
                .output
                .log_dir
                .unwrap_or_else(|| DEFAULT_LOG_DIR.into()),
            base_dir: base_dir.to_path_buf(),
        })
    }

    /// The resolved configuration as TOML with every key explicit. Loading
    /// it from the same directory yields `self` again.
    pub fn to_toml(&self) -> Result<String, SettingsError> {
        let r = &self.run;
        let file = FileConfig {
            task: TaskSection {
                manifest: self.task.manifest.clone(),
                name: Some(self.task.name.clone()),
                description: Some(self.task.description.clone()),
                mode: Some(self.task.mode),
                seed_prompts: Some(self.task.seed_prompts.clone()),
            },
            optimizer: OptimizerSection {
                k: Some(r.k),
                candidates_per_iter: Some(r.candidates_per_iter),
                max_iterations: Some(r.max_iterations),
                max_new_tokens: Some(r.max_new_tokens),
                alpha: Some(r.alpha),
                layer_index: r.layer_index,
                steering_mode: Some(r.steering_mode),
                tau: Some(r.tau),
                seed: Some(r.seed),
                ensemble_size: Some(r.ensemble_size),
                patience: r.patience,
                alpha_grid: Some(self.alpha_grid.clone()),
            },
            backend: self.backend.clone(),
            output: OutputSection {
                log_dir: Some(self.log_dir.clone()),
            },
        };
        Ok(toml::to_string(&file)?)
    }

    pub fn manifest_path(&self) -> PathBuf {
        self.base_dir.join(&self.task.manifest)
    }

    /// Log directory: the environment override if set, else the configured
    /// directory relative to the config file.
    pub fn resolved_log_dir(&self) -> PathBuf {
        match std::env::var_os(LOG_DIR_ENV) {
            Some(d) if !d.is_empty() => PathBuf::from(d),
            _ => self.base_dir.join(&self.log_dir),
        }
    }
}

fn class_names_path(base_dir: &Path, manifest: &Path) -> Result<PathBuf, SettingsError> {
    #[derive(Deserialize)]
    struct Head {
        class_names: PathBuf,
    }
    let path = base_dir.join(manifest);
    let text = fs::read_to_string(&path).map_err(|source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let head: Head = serde_json::from_str(&text).map_err(|source| ManifestError::Json {
        path: path.display().to_string(),
        source,
    })?;
    Ok(path
        .parent()
        .unwrap_or(Path::new(""))
        .join(head.class_names))
}
