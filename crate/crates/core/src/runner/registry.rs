//! Backend selection by name.
//!
//! A backend factory receives the `[backend]` table of the run config (minus
//! `name`) and the loaded manifest, and returns the model handles the task
//! mode needs. Live adapters register their own factory under a new name.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use super::manifest::{parse_class_names, Manifest};
use super::settings::BackendSection;
use crate::backends::surrogate::{
    SurrogateCaptioner, SurrogateEmbedder, SurrogateGenerator, SurrogateScorer, SurrogateWorld,
};
use crate::backends::{BackendError, Captioner, Embedder, Generator, ImageRef, Scorer};
use crate::config::{EvalMode, RunConfig};
use crate::fitness::{
    DualEncoderObjective, FewShotTask, FitnessError, Objective, OpenEndedObjective,
};
use crate::metaprompt::CLASS_PLACEHOLDER;

/// Model handles for one run. The scorer serves dual-encoder tasks; the
/// captioner and embedder serve the open-ended modes.
#[derive(Clone)]
pub struct ModelSet {
    pub generator: Arc<dyn Generator>,
    pub scorer: Option<Arc<dyn Scorer>>,
    pub captioner: Option<Arc<dyn Captioner>>,
    pub embedder: Option<Arc<dyn Embedder>>,
}

pub struct BackendContext<'a> {
    /// Directory that relative paths in the backend options resolve against.
    pub base_dir: &'a Path,
    pub manifest: &'a Manifest,
    pub mode: EvalMode,
}

pub type BackendFactory = fn(&toml::Table, &BackendContext) -> Result<ModelSet, BackendError>;

pub struct BackendRegistry {
    factories: BTreeMap<String, BackendFactory>,
}

impl Default for BackendRegistry {
    fn default() -> Self {
        let mut r = Self {
            factories: BTreeMap::new(),
        };
        r.register("surrogate", surrogate_factory);
        r
    }
}

impl BackendRegistry {
    pub fn register(&mut self, name: &str, factory: BackendFactory) {
        self.factories.insert(name.to_string(), factory);
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn build(
        &self,
        section: &BackendSection,
        ctx: &BackendContext,
    ) -> Result<ModelSet, BackendError> {
        let factory = self
            .factories
            .get(&section.name)
            .ok_or_else(|| BackendError::UnknownBackend(section.name.clone()))?;
        factory(&section.options, ctx)
    }
}

/// The objective a task mode optimizes, built from the available models.
pub fn objective_for(
    task: &FewShotTask,
    models: &ModelSet,
    run: &RunConfig,
) -> Result<Arc<dyn Objective>, FitnessError> {
    let missing = |what: &str| {
        FitnessError::Backend(BackendError::InvalidInput(format!(
            "backend provides no {what}, needed for {} tasks",
            task.mode.as_str()
        )))
    };
    Ok(match task.mode {
        EvalMode::DualEncoder => {
            let scorer = models.scorer.clone().ok_or_else(|| missing("scorer"))?;
            Arc::new(DualEncoderObjective::new(task.clone(), scorer, run.tau)?)
        }
        EvalMode::EncoderDecoder | EvalMode::MultipleChoice => {
            let captioner = models
                .captioner
                .clone()
                .ok_or_else(|| missing("captioner"))?;
            let embedder = models.embedder.clone().ok_or_else(|| missing("embedder"))?;
            Arc::new(OpenEndedObjective::new(
                task.clone(),
                captioner,
                embedder,
                run.seed,
            )?)
        }
    })
}

/// Options of the `surrogate` backend.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SurrogateOptions {
    /// Vocabulary file, one token per line.
    vocab: Option<PathBuf>,
    dim: Option<usize>,
    target: Option<String>,
    /// Sampling temperature; 0 decodes greedily.
    temperature: Option<f64>,
    /// JSON object mapping image references to the text the surrogate
    /// captioner describes them with.
    descriptions: Option<PathBuf>,
}

fn surrogate_factory(
    options: &toml::Table,
    ctx: &BackendContext,
) -> Result<ModelSet, BackendError> {
    let opts: SurrogateOptions = options
        .clone()
        .try_into()
        .map_err(|e| BackendError::InvalidInput(format!("surrogate backend options: {e}")))?;
    let default = SurrogateWorld::default();
    let vocab = match &opts.vocab {
        Some(p) => {
            let path = ctx.base_dir.join(p);
            let text = fs::read_to_string(&path)
                .map_err(|e| BackendError::InvalidInput(format!("{}: {e}", path.display())))?;
            parse_class_names(&text)
                .map_err(|e| BackendError::InvalidInput(format!("{}: {e}", path.display())))?
        }
        None => default.vocab().to_vec(),
    };
    let mut vocab = vocab;
    // dual-encoder candidates need a class slot to be valid
    if ctx.mode == EvalMode::DualEncoder && !vocab.iter().any(|t| t == CLASS_PLACEHOLDER) {
        vocab.push(CLASS_PLACEHOLDER.to_string());
    }
    let world = Arc::new(SurrogateWorld::new(
        vocab,
        opts.dim.unwrap_or(default.dim()),
        opts.target.as_deref().unwrap_or(default.target()),
    )?);
    let temperature = opts.temperature.unwrap_or(0.0);
    if !(temperature >= 0.0 && temperature.is_finite()) {
        return Err(BackendError::InvalidInput(format!(
            "surrogate temperature must be non-negative, got {temperature}"
        )));
    }

    for (image, v) in &ctx.manifest.features {
        if v.len() != world.dim() {
            return Err(BackendError::InvalidInput(format!(
                "image {image} has dimension {} but the surrogate world has {}",
                v.len(),
                world.dim()
            )));
        }
    }
    let descriptions: HashMap<ImageRef, String> = match &opts.descriptions {
        Some(p) => {
            let path = ctx.base_dir.join(p);
            let text = fs::read_to_string(&path)
                .map_err(|e| BackendError::InvalidInput(format!("{}: {e}", path.display())))?;
            let raw: HashMap<String, String> = serde_json::from_str(&text)
                .map_err(|e| BackendError::InvalidInput(format!("{}: {e}", path.display())))?;
            raw.into_iter()
                .map(|(k, v)| (ImageRef::new(k), v))
                .collect()
        }
        None => HashMap::new(),
    };

    Ok(ModelSet {
        generator: Arc::new(SurrogateGenerator::new(world.clone(), temperature)),
        scorer: Some(Arc::new(SurrogateScorer::new(
            world.clone(),
            ctx.manifest.features.clone(),
        ))),
        captioner: Some(Arc::new(SurrogateCaptioner::new(
            world.clone(),
            descriptions,
        ))),
        embedder: Some(Arc::new(SurrogateEmbedder::new(world))),
    })
}
