//! Labeled datasets on disk.
//!
//! A manifest is a JSON file naming a class-names file (one name per line,
//! line order defines class indices), an optional embedding table, and the
//! examples. Each example points either at a row of the embedding table or
//! at an image reference the backend resolves itself. Relative paths are
//! resolved against the manifest's directory.
//!
//! ```json
//! {
//!   "class_names": "classes.txt",
//!   "embeddings": "images.glovemb",
//!   "examples": [
//!     {"embedding": 0, "label": 2},
//!     {"image": "img/0001.jpg", "label": 0, "choices": [0, 3, 5]}
//!   ]
//! }
//! ```

use std::collections::{HashMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::embfile::{EmbFileError, EmbeddingTable};
use crate::backends::ImageRef;
use crate::config::EvalMode;
use crate::fitness::{FewShotTask, FitnessError, LabeledExample};

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("{path}: {source}")]
    Embeddings { path: String, source: EmbFileError },
    #[error("class-names file {path}: {msg}")]
    ClassNames { path: String, msg: String },
    #[error("example {index}: {msg}")]
    Example { index: usize, msg: String },
    #[error(transparent)]
    Task(#[from] FitnessError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestSpec {
    pub class_names: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embeddings: Option<PathBuf>,
    pub examples: Vec<ExampleSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExampleSpec {
    /// Row of the manifest's embedding table.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    pub label: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<usize>>,
}

/// A loaded manifest. Examples backed by the embedding table get the image
/// reference `<table file name>#<row>` and their vector in `features`.
#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub class_names: Vec<String>,
    pub examples: Vec<LabeledExample>,
    pub features: HashMap<ImageRef, Vec<f64>>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |source| ManifestError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Reads one class name per line. A trailing newline is allowed; blank or
/// repeated names are not.
pub fn read_class_names(path: &Path) -> Result<Vec<String>, ManifestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_class_names(&text).map_err(|msg| ManifestError::ClassNames {
        path: path.display().to_string(),
        msg,
    })
}

pub fn parse_class_names(text: &str) -> Result<Vec<String>, String> {
    let body = text.strip_suffix('\n').unwrap_or(text);
    let mut seen = HashSet::new();
    let mut names = Vec::new();
    for (i, line) in body.split('\n').enumerate() {
        let name = line.trim();
        if name.is_empty() {
            return Err(format!("line {} is blank", i + 1));
        }
        if !seen.insert(name) {
            return Err(format!("line {}: duplicate class {name:?}", i + 1));
        }
        names.push(name.to_string());
    }
    Ok(names)
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let spec: ManifestSpec =
            serde_json::from_str(&text).map_err(|source| ManifestError::Json {
                path: path.display().to_string(),
                source,
            })?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::from_spec(&spec, base)
    }

    pub fn from_spec(spec: &ManifestSpec, base: &Path) -> Result<Self, ManifestError> {
        let class_names = read_class_names(&base.join(&spec.class_names))?;
        let table = match &spec.embeddings {
            Some(p) => {
                let full = base.join(p);
                let table =
                    EmbeddingTable::load(&full).map_err(|source| ManifestError::Embeddings {
                        path: full.display().to_string(),
                        source,
                    })?;
                let name = p
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                Some((name, table))
            }
            None => None,
        };

        let mut examples = Vec::with_capacity(spec.examples.len());
        let mut features = HashMap::new();
        for (index, ex) in spec.examples.iter().enumerate() {
            let bad = |msg: String| ManifestError::Example { index, msg };
            let image = match (ex.embedding, &ex.image) {
                (Some(row), None) => {
                    let (name, table) = table.as_ref().ok_or_else(|| {
                        bad(
                            "refers to an embedding row but the manifest has no embeddings file"
                                .into(),
                        )
                    })?;
                    let v = table.row(row).ok_or_else(|| {
                        bad(format!(
                            "embedding row {row} out of range ({} rows)",
                            table.count()
                        ))
                    })?;
                    let image = ImageRef::new(format!("{name}#{row}"));
                    features.insert(image.clone(), v.iter().map(|&x| x as f64).collect());
                    image
                }
                (None, Some(img)) if !img.is_empty() => ImageRef::new(img.clone()),
                _ => return Err(bad("needs exactly one of \"embedding\" or \"image\"".into())),
            };
            examples.push(LabeledExample {
                image,
                label: ex.label,
                choices: ex.choices.clone(),
            });
        }
        Ok(Self {
            class_names,
            examples,
            features,
        })
    }

    /// The manifest as a validated task. Multiple-choice tasks need a choice
    /// set on every example.
    pub fn task(
        &self,
        name: &str,
        description: &str,
        mode: EvalMode,
    ) -> Result<FewShotTask, ManifestError> {
        if mode == EvalMode::MultipleChoice {
            if let Some(index) = self.examples.iter().position(|e| e.choices.is_none()) {
                return Err(ManifestError::Example {
                    index,
                    msg: "multiple-choice tasks need \"choices\" on every example".into(),
                });
            }
        }
        Ok(FewShotTask::new(
            self.class_names.clone(),
            self.examples.clone(),
            name,
            description,
            mode,
        )?)
    }
}
