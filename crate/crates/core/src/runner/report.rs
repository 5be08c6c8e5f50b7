//! Accuracy of a prompt ensemble on a labeled manifest.

use serde::{Deserialize, Serialize};

use super::registry::ModelSet;
use crate::config::{EvalMode, RunConfig};
use crate::fitness::{DualEncoderObjective, FewShotTask, FitnessError, OpenEndedObjective};
use crate::metaprompt::validate_prompt;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: String,
    pub correct: usize,
    pub total: usize,
    /// `None` for classes without examples.
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyReport {
    pub prompts: Vec<String>,
    pub correct: usize,
    pub total: usize,
    pub top1: f64,
    pub per_class: Vec<ClassAccuracy>,
}

/// Tallies predictions against labels; `None` predictions count as wrong.
pub fn tally(
    task: &FewShotTask,
    prompts: &[String],
    predictions: &[Option<usize>],
) -> AccuracyReport {
    let mut per_class: Vec<ClassAccuracy> = task
        .class_names
        .iter()
        .map(|c| ClassAccuracy {
            class: c.clone(),
            correct: 0,
            total: 0,
            accuracy: None,
        })
        .collect();
    let mut correct = 0;
    for (ex, pred) in task.examples.iter().zip(predictions) {
        let hit = *pred == Some(ex.label);
        let slot = &mut per_class[ex.label];
        slot.total += 1;
        if hit {
            slot.correct += 1;
            correct += 1;
        }
    }
    for c in &mut per_class {
        if c.total > 0 {
            c.accuracy = Some(c.correct as f64 / c.total as f64);
        }
    }
    let total = task.examples.len();
    AccuracyReport {
        prompts: prompts.to_vec(),
        correct,
        total,
        top1: correct as f64 / total as f64,
        per_class,
    }
}

/// Ensemble accuracy of `prompts` (best first) on `task`.
pub fn evaluate(
    prompts: &[String],
    task: &FewShotTask,
    models: &ModelSet,
    run: &RunConfig,
) -> Result<AccuracyReport, FitnessError> {
    if prompts.is_empty() {
        return Err(FitnessError::NoPrompts);
    }
    let prompts = prompts
        .iter()
        .map(|p| {
            validate_prompt(p, task.mode)
                .map_err(|e| FitnessError::InvalidTask(format!("prompt {p:?} is not usable: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let missing = |what: &str| {
        FitnessError::InvalidTask(format!(
            "backend provides no {what} for {} tasks",
            task.mode.as_str()
        ))
    };
    let predictions: Vec<Option<usize>> = match task.mode {
        EvalMode::DualEncoder => {
            let scorer = models.scorer.clone().ok_or_else(|| missing("scorer"))?;
            DualEncoderObjective::new(task.clone(), scorer, run.tau)?
                .predictions(&prompts)?
                .into_iter()
                .map(Some)
                .collect()
        }
        EvalMode::EncoderDecoder | EvalMode::MultipleChoice => {
            let captioner = models
                .captioner
                .clone()
                .ok_or_else(|| missing("captioner"))?;
            let embedder = models.embedder.clone().ok_or_else(|| missing("embedder"))?;
            OpenEndedObjective::new(task.clone(), captioner, embedder, run.seed)?
                .predictions(&prompts)?
        }
    };
    Ok(tally(task, &prompts, &predictions))
}
