//! Deterministic stand-ins for every backend.
//!
//! Tokens are lowercased whitespace-separated words. Each token embeds to a
//! unit vector derived only from its bytes: the FNV-1a hash seeds a 64-bit
//! LCG whose successive states are mapped to `[-1, 1)` and L2-normalized.
//! The generator is an "identity transformer": every layer's activations
//! are the token embeddings, the hidden state at a decoding step is the
//! embedding of the previous token, and logits are dot products with the
//! vocabulary embeddings.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{
    cosine, fnv1a64, normalize, ActivationProbe, BackendError, Captioner, Embedder, Generator,
    ImageRef, Scorer,
};
use crate::steering::{ActivationMatrix, GuidanceState};

pub const DEFAULT_DIM: usize = 16;
pub const DEFAULT_NUM_LAYERS: usize = 4;

const LCG_MUL: u64 = 6_364_136_223_846_793_005;
const LCG_INC: u64 = 1_442_695_040_888_963_407;

static DEFAULT_VOCAB: &str = include_str!("../../assets/surrogate_vocab.txt");
static DEFAULT_TARGET: &str = include_str!("../../assets/surrogate_target.txt");

/// Hash-seeded unit embedding of one token.
pub fn surrogate_embed(token: &str, dim: usize) -> Array1<f64> {
    let mut x = fnv1a64(token.as_bytes());
    let mut v: Vec<f64> = (0..dim)
        .map(|_| {
            x = x.wrapping_mul(LCG_MUL).wrapping_add(LCG_INC);
            ((x >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
        })
        .collect();
    normalize(&mut v);
    Array1::from(v)
}

pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(str::to_lowercase).collect()
}

/// Vocabulary, embedding table, and target phrase of the synthetic task.
#[derive(Debug, Clone)]
pub struct SurrogateWorld {
    vocab: Vec<String>,
    dim: usize,
    table: Array2<f64>,
    target: String,
    target_mean: Array1<f64>,
}

impl Default for SurrogateWorld {
    fn default() -> Self {
        Self::new(
            DEFAULT_VOCAB.lines().map(str::to_string).collect(),
            DEFAULT_DIM,
            DEFAULT_TARGET.trim(),
        )
        .expect("bundled surrogate world is valid")
    }
}

impl SurrogateWorld {
    pub fn new(vocab: Vec<String>, dim: usize, target: &str) -> Result<Self, BackendError> {
        let vocab: Vec<String> = vocab
            .into_iter()
            .map(|w| w.trim().to_lowercase())
            .filter(|w| !w.is_empty())
            .collect();
        if vocab.is_empty() {
            return Err(BackendError::InvalidInput(
                "surrogate vocabulary is empty".into(),
            ));
        }
        if dim == 0 {
            return Err(BackendError::InvalidInput(
                "surrogate dim must be positive".into(),
            ));
        }
        let mut table = Array2::zeros((vocab.len(), dim));
        for (i, w) in vocab.iter().enumerate() {
            table.row_mut(i).assign(&surrogate_embed(w, dim));
        }
        let target_mean = mean_of_tokens(&tokenize(target), dim)
            .ok_or_else(|| BackendError::InvalidInput("surrogate target phrase is empty".into()))?;
        Ok(Self {
            vocab,
            dim,
            table,
            target: target.trim().to_string(),
            target_mean,
        })
    }

    /// Same vocabulary and dimension with another target phrase.
    pub fn with_target(&self, target: &str) -> Result<Self, BackendError> {
        Self::new(self.vocab.clone(), self.dim, target)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn target(&self) -> &str {
        &self.target
    }

    pub fn embed(&self, token: &str) -> Array1<f64> {
        match self.vocab.iter().position(|w| w == token) {
            Some(i) => self.table.row(i).to_owned(),
            None => surrogate_embed(token, self.dim),
        }
    }

    /// Token embeddings of `text`, one row per token.
    pub fn token_matrix(&self, text: &str) -> Array2<f64> {
        let tokens = tokenize(text);
        let mut m = Array2::zeros((tokens.len(), self.dim));
        for (i, t) in tokens.iter().enumerate() {
            m.row_mut(i).assign(&self.embed(t));
        }
        m
    }

    /// Mean token embedding, `None` for text without tokens.
    pub fn mean_embedding(&self, text: &str) -> Option<Array1<f64>> {
        mean_of_tokens(&tokenize(text), self.dim)
    }

    /// `(1 + cos(mean(prompt), mean(target))) / 2`, clamped to `[0, 1]`.
    pub fn fitness_target(&self, prompt: &str) -> f64 {
        let Some(m) = self.mean_embedding(prompt) else {
            return 0.5;
        };
        let c = cosine(m.as_slice().unwrap(), self.target_mean.as_slice().unwrap());
        ((1.0 + c) / 2.0).clamp(0.0, 1.0)
    }

    /// Landscape score of several prompts combined: their unit-normalized
    /// mean embeddings are averaged before comparing with the target.
    pub fn ensemble_fitness_target(&self, prompts: &[String]) -> f64 {
        let mut acc = vec![0.0; self.dim];
        for p in prompts {
            if let Some(m) = self.mean_embedding(p) {
                let mut m = m.to_vec();
                normalize(&mut m);
                acc.iter_mut().zip(&m).for_each(|(a, b)| *a += b);
            }
        }
        let c = cosine(&acc, self.target_mean.as_slice().unwrap());
        ((1.0 + c) / 2.0).clamp(0.0, 1.0)
    }

    /// Vocabulary logits for one hidden state.
    pub fn logits(&self, hidden: &Array1<f64>) -> Array1<f64> {
        self.table.dot(hidden)
    }
}

fn mean_of_tokens(tokens: &[String], dim: usize) -> Option<Array1<f64>> {
    if tokens.is_empty() {
        return None;
    }
    let mut acc = Array1::zeros(dim);
    for t in tokens {
        acc += &surrogate_embed(t, dim);
    }
    Some(acc / tokens.len() as f64)
}

/// Softmax of `logits / temperature`.
pub fn softmax(logits: &Array1<f64>, temperature: f64) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .map(|l| ((l - max) / temperature).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Steerable identity-transformer generator over the surrogate vocabulary.
#[derive(Debug, Clone)]
pub struct SurrogateGenerator {
    world: Arc<SurrogateWorld>,
    /// Sampling temperature; `0` decodes greedily.
    temperature: f64,
    num_layers: usize,
}

impl SurrogateGenerator {
    pub fn new(world: Arc<SurrogateWorld>, temperature: f64) -> Self {
        Self {
            world,
            temperature,
            num_layers: DEFAULT_NUM_LAYERS,
        }
    }

    pub fn greedy(world: Arc<SurrogateWorld>) -> Self {
        Self::new(world, 0.0)
    }

    pub fn world(&self) -> &SurrogateWorld {
        &self.world
    }

    /// Next-token distribution for a context, after steering. With
    /// temperature `0` the distribution is one-hot on the greedy choice.
    pub fn next_token_probs(
        &self,
        context: &Array2<f64>,
        guidance: Option<&GuidanceState>,
        temperature: f64,
    ) -> Result<Vec<f64>, BackendError> {
        let mut hidden = context.clone();
        if let Some(g) = guidance {
            g.steer(&mut hidden)
                .map_err(|e| BackendError::InvalidInput(e.to_string()))?;
        }
        let last = hidden.row(hidden.nrows() - 1).to_owned();
        let logits = self.world.logits(&last);
        if temperature > 0.0 {
            return Ok(softmax(&logits, temperature));
        }
        let mut probs = vec![0.0; logits.len()];
        probs[argmax_first(logits.iter().copied())] = 1.0;
        Ok(probs)
    }
}

/// Index of the largest value; the earliest wins ties.
pub(crate) fn argmax_first(values: impl Iterator<Item = f64>) -> usize {
    let mut best = 0;
    let mut best_val = f64::NEG_INFINITY;
    for (i, v) in values.enumerate() {
        if v > best_val {
            best = i;
            best_val = v;
        }
    }
    best
}

impl ActivationProbe for SurrogateGenerator {
    fn probe_activations(
        &self,
        text: &str,
        layer: usize,
    ) -> Result<ActivationMatrix, BackendError> {
        if layer >= self.num_layers {
            return Err(BackendError::InvalidInput(format!(
                "layer {layer} out of range for {} layers",
                self.num_layers
            )));
        }
        ActivationMatrix::new(self.world.token_matrix(text), layer)
            .map_err(|e| BackendError::InvalidInput(format!("{text:?}: {e}")))
    }
}

impl Generator for SurrogateGenerator {
    fn hidden_width(&self) -> usize {
        self.world.dim
    }

    fn num_layers(&self) -> usize {
        self.num_layers
    }

    fn count_tokens(&self, text: &str) -> usize {
        tokenize(text).len()
    }

    fn generate(
        &self,
        prompt: &str,
        guidance: Option<&GuidanceState>,
        max_tokens: usize,
        seed: u64,
    ) -> Result<String, BackendError> {
        let mut context = self.world.token_matrix(prompt);
        if context.nrows() == 0 {
            context = Array2::zeros((1, self.world.dim));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out: Vec<&str> = Vec::with_capacity(max_tokens);
        for _ in 0..max_tokens {
            let probs = self.next_token_probs(&context, guidance, self.temperature)?;
            let idx = if self.temperature > 0.0 {
                sample(&probs, rng.random::<f64>())
            } else {
                argmax_first(probs.iter().copied())
            };
            out.push(&self.world.vocab[idx]);
            context
                .push_row(self.world.table.row(idx))
                .expect("row width matches");
        }
        Ok(out.join(" "))
    }
}

fn sample(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Dual encoder whose text tower is the unit mean token embedding and whose
/// image tower looks up precomputed vectors.
#[derive(Debug, Clone)]
pub struct SurrogateScorer {
    world: Arc<SurrogateWorld>,
    images: HashMap<ImageRef, Vec<f64>>,
}

impl SurrogateScorer {
    pub fn new(world: Arc<SurrogateWorld>, images: HashMap<ImageRef, Vec<f64>>) -> Self {
        let images = images
            .into_iter()
            .map(|(k, mut v)| {
                normalize(&mut v);
                (k, v)
            })
            .collect();
        Self { world, images }
    }
}

impl Scorer for SurrogateScorer {
    fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        let mut v = self
            .world
            .mean_embedding(text)
            .ok_or_else(|| BackendError::InvalidInput("empty text".into()))?
            .to_vec();
        normalize(&mut v);
        Ok(v)
    }

    fn embed_image(&self, image: &ImageRef) -> Result<Vec<f64>, BackendError> {
        self.images
            .get(image)
            .cloned()
            .ok_or_else(|| BackendError::UnknownImage(image.clone()))
    }
}

/// Captioner that describes each image with a fixed word list, keeping the
/// words that lean toward the prompt.
#[derive(Debug, Clone)]
pub struct SurrogateCaptioner {
    world: Arc<SurrogateWorld>,
    descriptions: HashMap<ImageRef, String>,
}

impl SurrogateCaptioner {
    pub fn new(world: Arc<SurrogateWorld>, descriptions: HashMap<ImageRef, String>) -> Self {
        Self {
            world,
            descriptions,
        }
    }
}

impl Captioner for SurrogateCaptioner {
    fn caption(&self, image: &ImageRef, prompt: &str, _seed: u64) -> Result<String, BackendError> {
        let desc = self
            .descriptions
            .get(image)
            .ok_or_else(|| BackendError::UnknownImage(image.clone()))?;
        let Some(direction) = self.world.mean_embedding(prompt) else {
            return Ok(desc.clone());
        };
        let kept: Vec<String> = tokenize(desc)
            .into_iter()
            .filter(|t| self.world.embed(t).dot(&direction) > 0.0)
            .collect();
        if kept.is_empty() {
            return Ok(desc.clone());
        }
        Ok(kept.join(" "))
    }
}

/// Sentence embedder returning the mean token embedding.
#[derive(Debug, Clone)]
pub struct SurrogateEmbedder {
    world: Arc<SurrogateWorld>,
}

impl SurrogateEmbedder {
    pub fn new(world: Arc<SurrogateWorld>) -> Self {
        Self { world }
    }
}

impl Embedder for SurrogateEmbedder {
    fn embed(&self, text: &str) -> Result<Vec<f64>, BackendError> {
        Ok(self
            .world
            .mean_embedding(text)
            .unwrap_or_else(|| Array1::zeros(self.world.dim))
            .to_vec())
    }
}
