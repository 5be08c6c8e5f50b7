//! The shipped synthetic task: the surrogate generator searches for prompts
//! whose mean token embedding points toward a fixed target phrase.

use std::sync::Arc;

use crate::backends::surrogate::{SurrogateGenerator, SurrogateWorld};
use crate::config::{EvalMode, RunConfig};
use crate::fitness::SurrogateTargetObjective;
use crate::metaprompt::TaskDescriptor;
use crate::optimizer::Backends;

pub const TASK_NAME: &str = "synthetic target phrase";
pub const TASK_DESCRIPTION: &str =
    "Find a short description whose wording matches a hidden target phrase.";
/// Sampling temperature of the surrogate generator in the synthetic task.
pub const GENERATOR_TEMPERATURE: f64 = 0.35;
/// Tokens per generated prompt in the synthetic task.
pub const PROMPT_TOKENS: usize = 6;
pub const SEED_PROMPT: &str = "a photo of a {}";

/// Surrogate world, generator, and objective of the synthetic task.
pub fn backends(world: Arc<SurrogateWorld>) -> Backends {
    Backends {
        generator: Arc::new(SurrogateGenerator::new(
            world.clone(),
            GENERATOR_TEMPERATURE,
        )),
        objective: Arc::new(SurrogateTargetObjective::new(
            world,
            EvalMode::EncoderDecoder,
        )),
    }
}

pub fn task() -> TaskDescriptor {
    TaskDescriptor::new(TASK_NAME, TASK_DESCRIPTION, EvalMode::EncoderDecoder)
        .expect("demo task is non-empty")
}

/// 30 iterations of 10 candidates at the given alpha and seed.
pub fn config(alpha: f64, seed: u64) -> RunConfig {
    RunConfig {
        candidates_per_iter: 10,
        max_iterations: 30,
        max_new_tokens: PROMPT_TOKENS,
        alpha,
        seed,
        ..RunConfig::for_mode(EvalMode::EncoderDecoder, 2)
    }
}

pub fn seed_prompts() -> Vec<String> {
    vec![SEED_PROMPT.to_string()]
}
