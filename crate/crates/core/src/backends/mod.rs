//! Interfaces to the external models.
//!
//! The optimizer talks to four kinds of model: a text generator that can be
//! steered and probed for activations, a dual-encoder scorer, an
//! image-conditioned captioner, and a sentence embedder. Anything that
//! implements these traits can be plugged in; the [`surrogate`] module
//! ships deterministic stand-ins for all four.

pub mod conformance;
pub mod surrogate;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::steering::{ActivationMatrix, GuidanceState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("unknown backend {0:?}")]
    UnknownBackend(String),
    #[error("unknown image reference {0}")]
    UnknownImage(ImageRef),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("conformance check failed: {0}")]
    Conformance(String),
    #[error("backend call failed: {0}")]
    Failed(String),
}

/// Opaque handle to one image, resolved by the backend that consumes it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ImageRef(pub String);

impl ImageRef {
    pub fn new(s: impl Into<String>) -> Self {
        Self(s.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ImageRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Source of per-layer activations for a text.
pub trait ActivationProbe {
    /// Activations of `text` at `layer`, one row per token of `text`.
    fn probe_activations(&self, text: &str, layer: usize)
        -> Result<ActivationMatrix, BackendError>;
}

/// A decoder language model that can be steered during generation.
pub trait Generator: ActivationProbe + Send + Sync {
    fn hidden_width(&self) -> usize;
    fn num_layers(&self) -> usize;
    fn count_tokens(&self, text: &str) -> usize;

    /// Generates at most `max_tokens` tokens after `prompt`, adding the
    /// guidance offset at each decoding step when `guidance` is enabled.
    fn generate(
        &self,
        prompt: &str,
        guidance: Option<&GuidanceState>,
        max_tokens: usize,
        seed: u64,
    ) -> Result<String, BackendError>;

    /// Whether concurrent calls are allowed. Non-reentrant backends are
    /// called from one thread at a time.
    fn reentrant(&self) -> bool {
        true
    }
}

/// Dual-encoder model with aligned image and text embeddings.
pub trait Scorer: Send + Sync {
    /// Unit-norm text embedding.
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError>;
    /// Unit-norm image embedding.
    fn embed_image(&self, image: &ImageRef) -> Result<Vec<f64>, BackendError>;

    fn reentrant(&self) -> bool {
        true
    }
}

/// Encoder-decoder model producing free text for an image and a prompt.
pub trait Captioner: Send + Sync {
    fn caption(&self, image: &ImageRef, prompt: &str, seed: u64) -> Result<String, BackendError>;

    fn reentrant(&self) -> bool {
        true
    }
}

/// Sentence embedding model.
pub trait Embedder: Send + Sync {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError>;

    fn reentrant(&self) -> bool {
        true
    }
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
    const PRIME: u64 = 0x0000_0100_0000_01b3;
    bytes
        .iter()
        .fold(OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(PRIME))
}

pub(crate) fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    dot / (na * nb)
}

pub(crate) fn normalize(v: &mut [f64]) {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}
