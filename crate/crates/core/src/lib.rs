//! Black-box prompt optimization for vision-language models.
//!
//! A text generator proposes prompts from a meta-prompt that lists the best
//! and worst prompts scored so far. Each candidate is scored by few-shot
//! classification accuracy, and generation is steered by adding the scaled
//! difference between the embeddings of the best and second-best prompts to
//! an intermediate hidden state.

pub mod backends;
pub mod config;
pub mod demo;
pub mod fitness;
pub mod history;
pub mod metaprompt;
pub mod optimizer;
pub mod runner;
pub mod steering;

pub use backends::{
    ActivationProbe, BackendError, Captioner, Embedder, Generator, ImageRef, Scorer,
};
pub use config::{EvalMode, RunConfig, SteeringMode};
pub use fitness::{FewShotTask, FitnessError, LabeledExample, Objective};
pub use history::{GuidancePair, HistoryBuffer, PromptCandidate};
pub use metaprompt::{MetaPromptTemplate, TaskDescriptor};

pub use optimizer::{Backends, IterationRecord, Optimizer, RunOutcome};
pub use steering::{ActivationMatrix, GuidanceState};

pub use ndarray;
