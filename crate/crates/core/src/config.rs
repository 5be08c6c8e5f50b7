//! Run parameters and the enums shared across modules.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// How candidate prompts are scored against the vision-language model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EvalMode {
    #[default]
    DualEncoder,
    EncoderDecoder,
    MultipleChoice,
}

impl EvalMode {
    pub fn as_str(self) -> &'static str {
        match self {
            EvalMode::DualEncoder => "dual_encoder",
            EvalMode::EncoderDecoder => "encoder_decoder",
            EvalMode::MultipleChoice => "multiple_choice",
        }
    }
}

/// Where the guidance offset is added, and where its embeddings come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum SteeringMode {
    /// Offset added to the last position only; embeddings are token means.
    #[default]
    LastToken,
    /// Offset added to every position.
    AllTokens,
    /// Offset added to the last position; embeddings use the last prompt token.
    LastTokenSource,
    /// Offset added to the first `n` positions. `None` means the token
    /// length of the positive prompt.
    ActaddFirstN { n: Option<usize> },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("k must be at least 1")]
    ZeroK,
    #[error("candidates_per_iter must be at least 2, got {0}")]
    TooFewCandidates(usize),
    #[error("max_new_tokens must be at least 1")]
    ZeroTokens,
    #[error("tau must be positive and finite, got {0}")]
    BadTau(f64),
    #[error("alpha must be non-negative and finite, got {0}")]
    BadAlpha(f64),
    #[error("ensemble_size must be at least 1")]
    ZeroEnsemble,
}

/// Resolved parameters of one optimization run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// In-context examples per side of the ranking.
    pub k: usize,
    pub candidates_per_iter: usize,
    pub max_iterations: usize,
    pub max_new_tokens: usize,
    pub alpha: f64,
    /// Generator layer used for embeddings and steering; `None` resolves to
    /// the middle layer of the generator.
    pub layer_index: Option<usize>,
    pub steering_mode: SteeringMode,
    pub tau: f64,
    pub seed: u64,
    pub ensemble_size: usize,
    /// Stop after this many iterations without a new best. Off by default.
    pub patience: Option<usize>,
}

pub const DEFAULT_K: usize = 5;
pub const DEFAULT_MAX_NEW_TOKENS: usize = 50;
pub const DEFAULT_ENSEMBLE_SIZE: usize = 3;
pub const DEFAULT_TAU: f64 = 0.01;
pub const DEFAULT_ALPHA_GRID: [f64; 4] = [0.5, 1.0, 2.0, 4.0];

/// Candidates requested per iteration for a scoring mode.
pub fn default_candidates_per_iter(mode: EvalMode) -> usize {
    match mode {
        EvalMode::DualEncoder => 10,
        EvalMode::EncoderDecoder | EvalMode::MultipleChoice => 5,
    }
}

/// Iteration budget: 100 for dual encoders, 50 for encoder-decoders, and 25
/// whenever the task has 1000 or more classes.
pub fn default_max_iterations(mode: EvalMode, num_classes: usize) -> usize {
    if num_classes >= 1000 {
        return 25;
    }
    match mode {
        EvalMode::DualEncoder => 100,
        EvalMode::EncoderDecoder | EvalMode::MultipleChoice => 50,
    }
}

impl RunConfig {
    pub fn for_mode(mode: EvalMode, num_classes: usize) -> Self {
        Self {
            k: DEFAULT_K,
            candidates_per_iter: default_candidates_per_iter(mode),
            max_iterations: default_max_iterations(mode, num_classes),
            max_new_tokens: DEFAULT_MAX_NEW_TOKENS,
            alpha: 1.0,
            layer_index: None,
            steering_mode: SteeringMode::default(),
            tau: DEFAULT_TAU,
            seed: 0,
            ensemble_size: DEFAULT_ENSEMBLE_SIZE,
            patience: None,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.k == 0 {
            return Err(ConfigError::ZeroK);
        }
        if self.candidates_per_iter < 2 {
            return Err(ConfigError::TooFewCandidates(self.candidates_per_iter));
        }
        if self.max_new_tokens == 0 {
            return Err(ConfigError::ZeroTokens);
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(ConfigError::BadTau(self.tau));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(ConfigError::BadAlpha(self.alpha));
        }
        if self.ensemble_size == 0 {
            return Err(ConfigError::ZeroEnsemble);
        }
        Ok(())
    }

    /// Layer to steer for a generator with `num_layers` layers.
    pub fn resolved_layer(&self, num_layers: usize) -> usize {
        self.layer_index.unwrap_or(num_layers / 2)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn budgets() {
        assert_eq!(default_max_iterations(EvalMode::DualEncoder, 10), 100);
        assert_eq!(default_max_iterations(EvalMode::EncoderDecoder, 10), 50);
        assert_eq!(default_max_iterations(EvalMode::DualEncoder, 1000), 25);
        assert_eq!(default_candidates_per_iter(EvalMode::DualEncoder), 10);
        assert_eq!(default_candidates_per_iter(EvalMode::EncoderDecoder), 5);
    }

    #[test]
    fn defaults_validate() {
        let c = RunConfig::for_mode(EvalMode::DualEncoder, 3);
        assert_eq!(c.k, 5);
        assert_eq!(c.max_new_tokens, 50);
        assert_eq!(c.ensemble_size, 3);
        c.validate().unwrap();
    }

    #[test]
    fn invalid_values() {
        let base = RunConfig::for_mode(EvalMode::DualEncoder, 3);
        let mut c = base.clone();
        c.candidates_per_iter = 1;
        assert_eq!(c.validate(), Err(ConfigError::TooFewCandidates(1)));
        let mut c = base.clone();
        c.tau = 0.0;
        assert!(matches!(c.validate(), Err(ConfigError::BadTau(_))));
        let mut c = base.clone();
        c.k = 0;
        assert_eq!(c.validate(), Err(ConfigError::ZeroK));
        let mut c = base;
        c.max_new_tokens = 0;
        assert_eq!(c.validate(), Err(ConfigError::ZeroTokens));
    }

    #[test]
    fn middle_layer_default() {
        let c = RunConfig::for_mode(EvalMode::DualEncoder, 3);
        assert_eq!(c.resolved_layer(32), 16);
        let c = RunConfig {
            layer_index: Some(17),
            ..c
        };
        assert_eq!(c.resolved_layer(32), 17);
    }
}
