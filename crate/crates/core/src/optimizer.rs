//! The guided optimization loop.
//!
//! Initialization scores the seed prompt, runs one unsteered generation
//! round, and derives the first guidance pair. Each iteration then renders
//! the meta-prompt from the current top/bottom-k history, generates
//! candidates with the guidance offset applied, scores them, appends them to
//! the history, and refreshes the guidance pair if the best fitness strictly
//! improved.

use std::collections::HashSet;
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{conformance, fnv1a64, BackendError, Generator};
use crate::config::{ConfigError, EvalMode, RunConfig, SteeringMode};
use crate::fitness::{FitnessError, Objective};
use crate::history::{normalize_text, HistoryBuffer, HistoryError, PromptCandidate};
use crate::metaprompt::{self, MetaPromptError, MetaPromptTemplate, TaskDescriptor};
use crate::steering::{maybe_update_guidance, GuidanceState, SteeringError};

/// Seed prompt for dual-encoder tasks.
pub const DUAL_ENCODER_SEED: &str = "a photo of a {}";
/// Seed prompt for encoder-decoder and multiple-choice tasks.
pub const OPEN_ENDED_SEED: &str =
    "Describe the category present in this image briefly and also identify the name of the category present";

/// Generation rounds attempted during initialization before giving up on
/// reaching two scored prompts.
const MAX_INIT_ROUNDS: usize = 3;

pub fn default_seed_prompt(mode: EvalMode) -> &'static str {
    match mode {
        EvalMode::DualEncoder => DUAL_ENCODER_SEED,
        EvalMode::EncoderDecoder | EvalMode::MultipleChoice => OPEN_ENDED_SEED,
    }
}

#[derive(Debug, Error)]
pub enum OptimizerError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("backend failed conformance: {0}")]
    Conformance(BackendError),
    #[error("seed prompt {prompt:?} is invalid: {source}")]
    InvalidSeed {
        prompt: String,
        source: MetaPromptError,
    },
    #[error("scoring seed prompt {prompt:?} failed: {source}")]
    SeedScoring {
        prompt: String,
        source: FitnessError,
    },
    #[error("initialization produced {0} scored prompts; guidance needs 2")]
    InsufficientHistory(usize),
    #[error(transparent)]
    MetaPrompt(#[from] MetaPromptError),
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error(transparent)]
    Steering(#[from] SteeringError),
    #[error("alpha grid is empty")]
    EmptyGrid,
    #[error("writing iteration record failed: {0}")]
    Sink(#[source] Box<dyn std::error::Error + Send + Sync>),
}

/// The generator and the objective a run optimizes against.
#[derive(Clone)]
pub struct Backends {
    pub generator: Arc<dyn Generator>,
    pub objective: Arc<dyn Objective>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub text: String,
    pub fitness: f64,
    /// Already in the history; the cached fitness is reported.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub duplicate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidanceSnapshot {
    pub p_plus: String,
    pub p_minus: String,
    pub fitness_plus: f64,
    pub fitness_minus: f64,
    pub alpha: f64,
    pub layer: usize,
    pub mode: SteeringMode,
    pub updated: bool,
}

impl GuidanceSnapshot {
    fn of(state: &GuidanceState, updated: bool) -> Option<Self> {
        let pair = state.pair.as_ref()?;
        Some(Self {
            p_plus: pair.p_plus.clone(),
            p_minus: pair.p_minus.clone(),
            fitness_plus: pair.fitness_plus,
            fitness_minus: pair.fitness_minus,
            alpha: state.alpha,
            layer: state.layer_index,
            mode: state.mode,
            updated,
        })
    }
}

/// Snapshot of one iteration; one line of the run log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// FNV-1a of the rendered meta-prompt, hex.
    pub meta_prompt_hash: String,
    pub candidates: Vec<CandidateRecord>,
    /// Generator outputs rejected by validation.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dropped: Vec<String>,
    pub best_candidate: Option<f64>,
    pub best_so_far: f64,
    /// Fitness of the ensemble of the current top prompts; absent when
    /// ensemble scoring failed.
    pub ensemble_fitness: Option<f64>,
    pub guidance: Option<GuidanceSnapshot>,
}

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub config: RunConfig,
    pub task: TaskDescriptor,
    pub history: HistoryBuffer,
    pub guidance: GuidanceState,
    pub iteration: usize,
    rng: ChaCha8Rng,
    stale_iterations: usize,
}

impl OptimizerState {
    pub fn best_so_far(&self) -> f64 {
        self.history.max_fitness().unwrap_or(0.0)
    }
}

/// Result of a complete run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub history: HistoryBuffer,
    /// Top prompts by training fitness, best first.
    pub ensemble: Vec<PromptCandidate>,
    /// Seed round record (iteration 0).
    pub initial: IterationRecord,
    pub records: Vec<IterationRecord>,
}

impl RunOutcome {
    pub fn best_fitness(&self) -> f64 {
        self.history.max_fitness().unwrap_or(0.0)
    }
}

pub struct Optimizer {
    backends: Backends,
    template: MetaPromptTemplate,
    state: OptimizerState,
}

/// Top `n` prompts by fitness, best first.
pub fn select_ensemble(history: &HistoryBuffer, n: usize) -> Vec<PromptCandidate> {
    history.top(n)
}

impl Optimizer {
    /// Scores the seed prompts, runs the unsteered generation round, and
    /// derives the first guidance pair.
    pub fn initialize(
        config: RunConfig,
        task: TaskDescriptor,
        template: MetaPromptTemplate,
        seed_prompts: &[String],
        backends: Backends,
    ) -> Result<(Self, IterationRecord), OptimizerError> {
        config.validate()?;
        template.check()?;
        conformance::check_generator(backends.generator.as_ref())
            .map_err(OptimizerError::Conformance)?;

        let layer = config.resolved_layer(backends.generator.num_layers());
        let guidance = GuidanceState::uninitialized(config.alpha, layer, config.steering_mode);
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut opt = Self {
            backends,
            template,
            state: OptimizerState {
                config,
                task,
                history: HistoryBuffer::new(),
                guidance,
                iteration: 0,
                rng,
                stale_iterations: 0,
            },
        };

        let mut seeds = Vec::new();
        let defaults = [default_seed_prompt(opt.state.task.mode).to_string()];
        let seed_prompts = if seed_prompts.is_empty() {
            &defaults[..]
        } else {
            seed_prompts
        };
        for p in seed_prompts {
            let text = metaprompt::validate_prompt(p, opt.state.task.mode).map_err(|source| {
                OptimizerError::InvalidSeed {
                    prompt: p.clone(),
                    source,
                }
            })?;
            let fitness = opt.backends.objective.score(&text).map_err(|source| {
                OptimizerError::SeedScoring {
                    prompt: text.clone(),
                    source,
                }
            })?;
            seeds.push(CandidateRecord {
                text,
                fitness,
                duplicate: false,
            });
        }
        opt.state.history.add_scored(
            seeds
                .iter()
                .map(|c| PromptCandidate::scored(c.text.clone(), c.fitness, 0)),
        )?;

        let mut candidates = seeds;
        let mut dropped = Vec::new();
        let mut hash = String::new();
        for _ in 0..MAX_INIT_ROUNDS {
            let (h, mut cands, mut drops) = opt.generation_round(None)?;
            hash = h;
            candidates.append(&mut cands);
            dropped.append(&mut drops);
            if opt.state.history.len() >= 2 {
                break;
            }
        }
        if opt.state.history.len() < 2 {
            return Err(OptimizerError::InsufficientHistory(opt.state.history.len()));
        }

        let (guidance, updated) = maybe_update_guidance(
            &opt.state.guidance,
            &opt.state.history,
            opt.backends.generator.as_ref(),
        )?;
        opt.state.guidance = guidance;
        let record = opt.record(0, hash, candidates, dropped, updated);
        Ok((opt, record))
    }

    pub fn state(&self) -> &OptimizerState {
        &self.state
    }

    pub fn history(&self) -> &HistoryBuffer {
        &self.state.history
    }

    /// Renders, generates, validates, and scores one batch, adding new
    /// prompts to the history. Returns the meta-prompt hash, the scored
    /// candidates, and the rejected outputs.
    fn generation_round(
        &mut self,
        guidance: Option<&GuidanceState>,
    ) -> Result<(String, Vec<CandidateRecord>, Vec<String>), OptimizerError> {
        let cfg = &self.state.config;
        let want = cfg.candidates_per_iter;
        let (tops, bottoms) = self.state.history.top_bottom(cfg.k)?;
        let meta = metaprompt::render(&self.template, &self.state.task, &tops, &bottoms, want)?;
        let hash = format!("{:016x}", fnv1a64(meta.as_bytes()));

        let mut raw: Vec<String> = Vec::with_capacity(want);
        let mut calls = 0;
        while raw.len() < want && calls < want {
            calls += 1;
            let seed = self.state.rng.next_u64();
            let out =
                match self
                    .backends
                    .generator
                    .generate(&meta, guidance, cfg.max_new_tokens, seed)
                {
                    Ok(out) => out,
                    Err(e) => {
                        log::warn!("generation call failed: {e}");
                        continue;
                    }
                };
            match metaprompt::parse_candidates(&out, want - raw.len()) {
                Ok(mut found) => raw.append(&mut found),
                Err(e) => log::warn!("{e}"),
            }
        }

        if raw.len() < want {
            log::info!(
                "collected {} of {want} candidates in {calls} generation calls",
                raw.len()
            );
        }

        let mode = self.state.task.mode;
        let mut valid = Vec::with_capacity(raw.len());
        let mut dropped = Vec::new();
        for r in raw {
            match metaprompt::validate_prompt(&r, mode) {
                Ok(v) => valid.push(v),
                Err(e) => {
                    log::info!("dropping candidate: {e}");
                    dropped.push(r);
                }
            }
        }

        // fitness is deterministic, so known prompts reuse their score
        let mut fresh: Vec<String> = Vec::new();
        for v in &valid {
            let key = normalize_text(v);
            if !self.state.history.contains(v) && !fresh.iter().any(|f| normalize_text(f) == key) {
                fresh.push(v.clone());
            }
        }
        let objective = self.backends.objective.as_ref();
        let score = |p: &String| match objective.score(p) {
            Ok(f) => Some(f),
            Err(e) => {
                log::warn!("scoring {p:?} failed: {e}");
                None
            }
        };
        let scores: Vec<Option<f64>> = if objective.reentrant() {
            fresh.par_iter().map(score).collect()
        } else {
            fresh.iter().map(score).collect()
        };

        let iteration = self.state.iteration;
        let steered = guidance.is_some_and(|g| g.enabled && g.alpha > 0.0);
        let mut new_entries = Vec::new();
        for (text, s) in fresh.iter().zip(&scores) {
            if let Some(f) = s {
                let mut c = PromptCandidate::scored(text.clone(), *f, iteration);
                c.steered = steered;
                new_entries.push(c);
            }
        }
        self.state.history.add_scored(new_entries)?;

        let fresh_keys: HashSet<String> = fresh.iter().map(|f| normalize_text(f)).collect();
        let mut records = Vec::with_capacity(valid.len());
        let mut seen: HashSet<String> = HashSet::new();
        for v in valid {
            let key = normalize_text(&v);
            let Some(entry) = self.state.history.get(&v) else {
                // scoring failed
                dropped.push(v);
                continue;
            };
            let duplicate = !fresh_keys.contains(&key) || !seen.insert(key);
            records.push(CandidateRecord {
                text: v,
                fitness: entry.score(),
                duplicate,
            });
        }
        Ok((hash, records, dropped))
    }

    fn record(
        &self,
        iteration: usize,
        meta_prompt_hash: String,
        candidates: Vec<CandidateRecord>,
        dropped: Vec<String>,
        updated: bool,
    ) -> IterationRecord {
        let best_candidate = candidates.iter().map(|c| c.fitness).reduce(f64::max);
        let ensemble: Vec<String> =
            select_ensemble(&self.state.history, self.state.config.ensemble_size)
                .into_iter()
                .map(|c| c.text)
                .collect();
        let ensemble_fitness = match self.backends.objective.score_ensemble(&ensemble) {
            Ok(f) => Some(f),
            Err(e) => {
                log::warn!("ensemble scoring failed: {e}");
                None
            }
        };
        IterationRecord {
            iteration,
            meta_prompt_hash,
            candidates,
            dropped,
            best_candidate,
            best_so_far: self.state.best_so_far(),
            ensemble_fitness,
            guidance: GuidanceSnapshot::of(&self.state.guidance, updated),
        }
    }

    /// One steered iteration.
    pub fn step(&mut self) -> Result<IterationRecord, OptimizerError> {
        self.state.iteration += 1;
        let before = self.state.best_so_far();
        let guidance = self.state.guidance.clone();
        let (hash, candidates, dropped) = self.generation_round(Some(&guidance))?;
        if candidates.is_empty() {
            log::warn!(
                "iteration {} produced no valid candidates",
                self.state.iteration
            );
        }

        let (guidance, updated) = maybe_update_guidance(
            &self.state.guidance,
            &self.state.history,
            self.backends.generator.as_ref(),
        )?;
        self.state.guidance = guidance;
        if self.state.best_so_far() > before {
            self.state.stale_iterations = 0;
        } else {
            self.state.stale_iterations += 1;
        }
        Ok(self.record(self.state.iteration, hash, candidates, dropped, updated))
    }

    fn should_stop(&self) -> bool {
        let cfg = &self.state.config;
        self.state.iteration >= cfg.max_iterations
            || cfg
                .patience
                .is_some_and(|p| self.state.stale_iterations >= p)
    }

    /// Runs initialization and every iteration, handing each record to
    /// `sink` as soon as it exists. A sink error stops the run.
    pub fn run_with<F>(
        config: RunConfig,
        task: TaskDescriptor,
        template: MetaPromptTemplate,
        seed_prompts: &[String],
        backends: Backends,
        mut sink: F,
    ) -> Result<RunOutcome, OptimizerError>
    where
        F: FnMut(&IterationRecord) -> Result<(), Box<dyn std::error::Error + Send + Sync>>,
    {
        let (mut opt, initial) = Self::initialize(config, task, template, seed_prompts, backends)?;
        sink(&initial).map_err(OptimizerError::Sink)?;
        let mut records = Vec::new();
        while !opt.should_stop() {
            let rec = opt.step()?;
            sink(&rec).map_err(OptimizerError::Sink)?;
            records.push(rec);
        }
        let ensemble = select_ensemble(&opt.state.history, opt.state.config.ensemble_size);
        Ok(RunOutcome {
            history: opt.state.history,
            ensemble,
            initial,
            records,
        })
    }

    pub fn run(
        config: RunConfig,
        task: TaskDescriptor,
        template: MetaPromptTemplate,
        seed_prompts: &[String],
        backends: Backends,
    ) -> Result<RunOutcome, OptimizerError> {
        Self::run_with(config, task, template, seed_prompts, backends, |_| Ok(()))
    }
}

/// Outcome of an alpha sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearch {
    pub chosen: f64,
    /// `(alpha, best fitness)` per grid point, in grid order.
    pub results: Vec<(f64, f64)>,
    pub iterations: usize,
}

/// Short-budget run per grid value; the highest best fitness wins and ties
/// go to the smaller alpha.
pub fn alpha_grid_search(
    config: &RunConfig,
    task: &TaskDescriptor,
    template: &MetaPromptTemplate,
    seed_prompts: &[String],
    backends: &Backends,
    grid: &[f64],
) -> Result<AlphaSearch, OptimizerError> {
    if grid.is_empty() {
        return Err(OptimizerError::EmptyGrid);
    }
    let iterations = config.max_iterations.div_ceil(5);
    let mut results = Vec::with_capacity(grid.len());
    for &alpha in grid {
        let cfg = RunConfig {
            alpha,
            max_iterations: iterations,
            ..config.clone()
        };
        let out = Optimizer::run(
            cfg,
            task.clone(),
            template.clone(),
            seed_prompts,
            backends.clone(),
        )?;
        log::info!("alpha {alpha}: best fitness {:.4}", out.best_fitness());
        results.push((alpha, out.best_fitness()));
    }
    let chosen = results
        .iter()
        .copied()
        .reduce(|best, cur| {
            if cur.1 > best.1 || (cur.1 == best.1 && cur.0 < best.0) {
                cur
            } else {
                best
            }
        })
        .map(|(a, _)| a)
        .expect("grid is non-empty");
    Ok(AlphaSearch {
        chosen,
        results,
        iterations,
    })
}
