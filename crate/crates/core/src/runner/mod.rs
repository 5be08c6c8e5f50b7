//! Everything around the optimizer that touches disk: run configuration,
//! manifests, embedding tables, run logs, evaluation, and curve export.

pub mod curve;
pub mod embfile;
pub mod manifest;
pub mod registry;
pub mod report;
pub mod runlog;
pub mod settings;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use thiserror::Error;

use crate::backends::surrogate::SurrogateWorld;
use crate::backends::BackendError;
use crate::config::RunConfig;
use crate::demo;
use crate::fitness::{FewShotTask, FitnessError};
use crate::metaprompt::{MetaPromptError, MetaPromptTemplate, TaskDescriptor};
use crate::optimizer::{
    alpha_grid_search, AlphaSearch, Backends, Optimizer, OptimizerError, RunOutcome,
};

use manifest::{Manifest, ManifestError};
use registry::{objective_for, BackendContext, BackendRegistry, ModelSet};
use report::AccuracyReport;
use runlog::{LogHeader, RunLogError, RunLogWriter, LOG_VERSION};
use settings::{Settings, SettingsError};

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error(transparent)]
    Settings(#[from] SettingsError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error(transparent)]
    MetaPrompt(#[from] MetaPromptError),
    #[error(transparent)]
    RunLog(#[from] RunLogError),
    #[error(transparent)]
    Curve(#[from] curve::CurveError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_BACKEND: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

fn fitness_exit_code(e: &FitnessError) -> i32 {
    match e {
        FitnessError::Backend(_) | FitnessError::Example { .. } => EXIT_BACKEND,
        FitnessError::MissingPlaceholder(_)
        | FitnessError::BadTau(_)
        | FitnessError::InvalidTask(_)
        | FitnessError::NoPrompts => EXIT_CONFIG,
        FitnessError::NonFinite => EXIT_RUNTIME,
    }
}

impl RunnerError {
    /// Process exit status: 1 for configuration and input errors, 2 for
    /// backend errors, 3 for failures during a run.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Settings(_) | RunnerError::Manifest(_) | RunnerError::MetaPrompt(_) => {
                EXIT_CONFIG
            }
            RunnerError::Backend(_) => EXIT_BACKEND,
            RunnerError::Fitness(e) => fitness_exit_code(e),
            RunnerError::Optimizer(e) => match e {
                OptimizerError::Config(_)
                | OptimizerError::InvalidSeed { .. }
                | OptimizerError::MetaPrompt(_)
                | OptimizerError::EmptyGrid => EXIT_CONFIG,
                OptimizerError::Conformance(_) => EXIT_BACKEND,
                OptimizerError::SeedScoring { source, .. } => fitness_exit_code(source),
                _ => EXIT_RUNTIME,
            },
            RunnerError::RunLog(_) | RunnerError::Curve(_) | RunnerError::Io { .. } => EXIT_RUNTIME,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunnerError + '_ {
    move |source| RunnerError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// A configured task with its models loaded.
pub struct Session {
    pub settings: Settings,
    pub manifest: Manifest,
    pub task: FewShotTask,
    pub models: ModelSet,
}

impl Session {
    pub fn open(settings: Settings, registry: &BackendRegistry) -> Result<Self, RunnerError> {
        let path = settings.manifest_path();
        Self::with_manifest(settings, &path, registry)
    }

    /// Like [`Session::open`] but reads the examples from `manifest_path`
    /// instead of the configured manifest.
    pub fn with_manifest(
        settings: Settings,
        manifest_path: &Path,
        registry: &BackendRegistry,
    ) -> Result<Self, RunnerError> {
        let manifest = Manifest::load(manifest_path)?;
        let t = &settings.task;
        let task = manifest.task(&t.name, &t.description, t.mode)?;
        let models = registry.build(
            &settings.backend,
            &BackendContext {
                base_dir: &settings.base_dir,
                manifest: &manifest,
                mode: settings.task.mode,
            },
        )?;
        Ok(Self {
            settings,
            manifest,
            task,
            models,
        })
    }

    pub fn descriptor(&self) -> Result<TaskDescriptor, RunnerError> {
        let t = &self.settings.task;
        Ok(TaskDescriptor::new(&t.name, &t.description, t.mode)?)
    }

    pub fn backends(&self) -> Result<Backends, RunnerError> {
        Ok(Backends {
            generator: self.models.generator.clone(),
            objective: objective_for(&self.task, &self.models, &self.settings.run)?,
        })
    }

    /// Default log file for this run inside the resolved log directory.
    pub fn default_log_path(&self) -> PathBuf {
        let slug: String = self
            .settings
            .task
            .name
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() {
                    c.to_ascii_lowercase()
                } else {
                    '-'
                }
            })
            .collect();
        self.settings
            .resolved_log_dir()
            .join(format!("{slug}-seed{}.jsonl", self.settings.run.seed))
    }
}

/// Companion file of a run log, e.g. `run.jsonl` → `run.prompts.txt`.
pub fn sibling(log_path: &Path, suffix: &str) -> PathBuf {
    let stem = log_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "run".into());
    log_path.with_file_name(format!("{stem}.{suffix}"))
}

/// Runs the optimizer, streaming every record to a run log at `log_path`.
pub fn run_logged(
    config: RunConfig,
    task: TaskDescriptor,
    seed_prompts: &[String],
    backends: Backends,
    header_config: serde_json::Value,
    log_path: &Path,
) -> Result<RunOutcome, RunnerError> {
    if let Some(dir) = log_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let seed = config.seed;
    let mut writer = None;
    let outcome = Optimizer::run_with(
        config,
        task,
        MetaPromptTemplate::default(),
        seed_prompts,
        backends,
        |rec| {
            match &mut writer {
                None => {
                    let header = LogHeader {
                        version: LOG_VERSION.to_string(),
                        seed,
                        config: header_config.clone(),
                        initial: rec.clone(),
                    };
                    writer = Some(RunLogWriter::create(log_path, &header)?);
                }
                Some(w) => w.write_iteration(rec)?,
            }
            Ok(())
        },
    )?;
    Ok(outcome)
}

/// Writes the final ensemble, one prompt per line, best first.
pub fn write_prompts(path: &Path, outcome: &RunOutcome) -> Result<(), RunnerError> {
    let text: String = outcome
        .ensemble
        .iter()
        .map(|c| format!("{}\n", c.text))
        .collect();
    fs::write(path, text).map_err(io_err(path))
}

/// Reads a prompts file: one prompt per line, blank lines skipped.
pub fn read_prompts(path: &Path) -> Result<Vec<String>, RunnerError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

pub fn optimize(session: &Session, log_path: &Path) -> Result<RunOutcome, RunnerError> {
    let s = &session.settings;
    let header = serde_json::to_value(s).expect("settings serialize to JSON");
    let outcome = run_logged(
        s.run.clone(),
        session.descriptor()?,
        &s.task.seed_prompts,
        session.backends()?,
        header,
        log_path,
    )?;
    write_prompts(&sibling(log_path, "prompts.txt"), &outcome)?;
    Ok(outcome)
}

pub fn alpha_sweep(session: &Session, grid: &[f64]) -> Result<AlphaSearch, RunnerError> {
    let s = &session.settings;
    Ok(alpha_grid_search(
        &s.run,
        &session.descriptor()?,
        &MetaPromptTemplate::default(),
        &s.task.seed_prompts,
        &session.backends()?,
        grid,
    )?)
}

pub fn evaluate(session: &Session, prompts: &[String]) -> Result<AccuracyReport, RunnerError> {
    Ok(report::evaluate(
        prompts,
        &session.task,
        &session.models,
        &session.settings.run,
    )?)
}

/// Writes `<log>.csv` and optionally an SVG image for a run log.
pub fn plot(log_path: &Path, image: Option<&Path>, smoothing: f64) -> Result<String, RunnerError> {
    let log = runlog::RunLog::load(log_path)?;
    let rows = curve::curve_rows(&log, smoothing)?;
    let table = curve::to_csv(&rows)?;
    let csv_path = sibling(log_path, "csv");
    fs::write(&csv_path, &table).map_err(io_err(&csv_path))?;
    if let Some(img) = image {
        curve::render_svg(&rows, img)?;
    }
    Ok(table)
}

/// Runs the shipped synthetic task at `alpha` and `seed`, logging to
/// `log_path`.
pub fn surrogate_demo(alpha: f64, seed: u64, log_path: &Path) -> Result<RunOutcome, RunnerError> {
    let world = Arc::new(SurrogateWorld::default());
    let config = demo::config(alpha, seed);
    let header = serde_json::json!({
        "task": demo::TASK_NAME,
        "run": &config,
        "surrogate": {
            "vocab_size": world.vocab().len(),
            "dim": world.dim(),
            "target": world.target(),
            "temperature": demo::GENERATOR_TEMPERATURE,
        },
    });
    let outcome = run_logged(
        config,
        demo::task(),
        &demo::seed_prompts(),
        demo::backends(world),
        header,
        log_path,
    )?;
    write_prompts(&sibling(log_path, "prompts.txt"), &outcome)?;
    Ok(outcome)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sibling_names() {
        assert_eq!(
            sibling(Path::new("runs/a.jsonl"), "csv"),
            PathBuf::from("runs/a.csv")
        );
        assert_eq!(
            sibling(Path::new("a"), "prompts.txt"),
            PathBuf::from("a.prompts.txt")
        );
    }

    #[test]
    fn exit_codes() {
        let e = RunnerError::Backend(BackendError::UnknownBackend("x".into()));
        assert_eq!(e.exit_code(), EXIT_BACKEND);
        let e = RunnerError::Fitness(FitnessError::NoPrompts);
        assert_eq!(e.exit_code(), EXIT_CONFIG);
        let e = RunnerError::Optimizer(OptimizerError::InsufficientHistory(1));
        assert_eq!(e.exit_code(), EXIT_RUNTIME);
    }
}
