//! Prompt fitness: few-shot classification accuracy under a candidate
//! prompt.
//!
//! Dual encoders classify by the softmax of image/class-text cosine
//! similarities (temperature `tau`); encoder-decoders caption the image with
//! the prompt and match the caption to the class names with a sentence
//! embedder. Both report the fraction of labeled examples predicted
//! correctly.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::surrogate::SurrogateWorld;
use crate::backends::{cosine, normalize, BackendError, Captioner, Embedder, ImageRef, Scorer};
use crate::config::EvalMode;
use crate::metaprompt::CLASS_PLACEHOLDER;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitnessError {
    #[error("prompt {0:?} has no class placeholder")]
    MissingPlaceholder(String),
    #[error("tau must be positive, got {0}")]
    BadTau(f64),
    #[error("similarities must be finite")]
    NonFinite,
    #[error("need at least one prompt")]
    NoPrompts,
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("scoring example {index} ({image}) failed: {source}")]
    Example {
        index: usize,
        image: ImageRef,
        source: BackendError,
    },
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// One labeled few-shot example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledExample {
    pub image: ImageRef,
    pub label: usize,
    /// Candidate classes for multiple-choice questions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub choices: Option<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotTask {
    pub class_names: Vec<String>,
    pub examples: Vec<LabeledExample>,
    pub name: String,
    pub description: String,
    pub mode: EvalMode,
}

impl FewShotTask {
    pub fn new(
        class_names: Vec<String>,
        examples: Vec<LabeledExample>,
        name: impl Into<String>,
        description: impl Into<String>,
        mode: EvalMode,
    ) -> Result<Self, FitnessError> {
        let task = Self {
            class_names,
            examples,
            name: name.into(),
            description: description.into(),
            mode,
        };
        task.validate()?;
        Ok(task)
    }

    pub fn validate(&self) -> Result<(), FitnessError> {
        let c = self.class_names.len();
        if c < 2 {
            return Err(FitnessError::InvalidTask(format!(
                "need at least 2 classes, have {c}"
            )));
        }
        if self.examples.is_empty() {
            return Err(FitnessError::InvalidTask("no labeled examples".into()));
        }
        for (i, ex) in self.examples.iter().enumerate() {
            if ex.label >= c {
                return Err(FitnessError::InvalidTask(format!(
                    "example {i} has label {} but there are {c} classes",
                    ex.label
                )));
            }
            if let Some(choices) = &ex.choices {
                if choices.iter().any(|&k| k >= c) {
                    return Err(FitnessError::InvalidTask(format!(
                        "example {i} has a choice index out of range"
                    )));
                }
                if !choices.contains(&ex.label) {
                    return Err(FitnessError::InvalidTask(format!(
                        "example {i}: label {} is not among its choices",
                        ex.label
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.examples.iter().map(|e| e.label).collect()
    }
}

/// Fills the class slot of a dual-encoder prompt.
pub fn class_text(prompt: &str, class_name: &str) -> Result<String, FitnessError> {
    if !prompt.contains(CLASS_PLACEHOLDER) {
        return Err(FitnessError::MissingPlaceholder(prompt.to_string()));
    }
    Ok(prompt.replacen(CLASS_PLACEHOLDER, class_name, 1))
}

/// Class probabilities for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct LikelihoodVector {
    pub probs: Vec<f64>,
}

impl LikelihoodVector {
    /// Most likely class; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        argmax_lowest(&self.probs)
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `softmax(similarities / tau)`, evaluated with the maximum subtracted.
pub fn likelihoods(similarities: &[f64], tau: f64) -> Result<LikelihoodVector, FitnessError> {
    if tau.is_nan() || tau <= 0.0 {
        return Err(FitnessError::BadTau(tau));
    }
    if similarities.iter().any(|s| !s.is_finite()) {
        return Err(FitnessError::NonFinite);
    }
    let max = similarities
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = similarities
        .iter()
        .map(|s| ((s - max) / tau).exp())
        .collect();
    let z: f64 = exps.iter().sum();
    Ok(LikelihoodVector {
        probs: exps.into_iter().map(|e| e / z).collect(),
    })
}

/// Fraction of `labels` matched by the likelihood argmax of each row.
pub fn accuracy_from_similarities(
    similarities: &[Vec<f64>],
    labels: &[usize],
    tau: f64,
) -> Result<f64, FitnessError> {
    let mut correct = 0usize;
    for (row, &label) in similarities.iter().zip(labels) {
        if likelihoods(row, tau)?.argmax() == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / labels.len() as f64)
}

fn fraction(predictions: &[Option<usize>], labels: &[usize]) -> f64 {
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, &y)| **p == Some(y))
        .count();
    correct as f64 / labels.len() as f64
}

/// Runs `f` over `0..n`, in parallel when the backend allows it. Output order
/// always follows the index.
fn map_indices<T, F>(n: usize, parallel: bool, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync + Send,
{
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Image embeddings of every example, computed once per task.
pub fn image_features(
    task: &FewShotTask,
    scorer: &dyn Scorer,
) -> Result<Vec<Vec<f64>>, FitnessError> {
    map_indices(task.examples.len(), scorer.reentrant(), |i| {
        let ex = &task.examples[i];
        scorer
            .embed_image(&ex.image)
            .map_err(|source| FitnessError::Example {
                index: i,
                image: ex.image.clone(),
                source,
            })
    })
    .into_iter()
    .collect()
}

/// Per-class prototypes: the unit-normalized mean of each prompt's
/// unit-normalized class-text embedding.
pub fn class_prototypes(
    prompts: &[String],
    task: &FewShotTask,
    scorer: &dyn Scorer,
) -> Result<Vec<Vec<f64>>, FitnessError> {
    if prompts.is_empty() {
        return Err(FitnessError::NoPrompts);
    }
    let texts = prompts
        .iter()
        .map(|p| {
            task.class_names
                .iter()
                .map(|c| class_text(p, c))
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<Vec<_>, _>>()?;

    map_indices(task.class_names.len(), scorer.reentrant(), |c| {
        let mut acc: Vec<f64> = Vec::new();
        for per_prompt in &texts {
            let mut e = scorer.embed_text(&per_prompt[c])?;
            normalize(&mut e);
            if acc.is_empty() {
                acc = vec![0.0; e.len()];
            }
            acc.iter_mut().zip(&e).for_each(|(a, b)| *a += b);
        }
        let n = texts.len() as f64;
        acc.iter_mut().for_each(|a| *a /= n);
        normalize(&mut acc);
        Ok(acc)
    })
    .into_iter()
    .collect()
}

/// Predicted class per example from prototypes and precomputed image
/// features.
pub fn predict_dual_with(
    prototypes: &[Vec<f64>],
    features: &[Vec<f64>],
    tau: f64,
) -> Result<Vec<usize>, FitnessError> {
    features
        .iter()
        .map(|img| {
            let sims: Vec<f64> = prototypes.iter().map(|p| cosine(img, p)).collect();
            Ok(likelihoods(&sims, tau)?.argmax())
        })
        .collect()
}

/// Accuracy of the classifier built from the ensemble of `prompts`.
pub fn ensemble_predict_dual(
    prompts: &[String],
    task: &FewShotTask,
    scorer: &dyn Scorer,
    tau: f64,
) -> Result<f64, FitnessError> {
    let features = image_features(task, scorer)?;
    ensemble_dual_with_features(prompts, task, scorer, &features, tau)
}

pub fn ensemble_dual_with_features(
    prompts: &[String],
    task: &FewShotTask,
    scorer: &dyn Scorer,
    features: &[Vec<f64>],
    tau: f64,
) -> Result<f64, FitnessError> {
    let prototypes = class_prototypes(prompts, task, scorer)?;
    let preds = predict_dual_with(&prototypes, features, tau)?;
    let preds: Vec<Option<usize>> = preds.into_iter().map(Some).collect();
    Ok(fraction(&preds, &task.labels()))
}

/// Dual-encoder fitness of one prompt (a one-prompt ensemble).
pub fn fitness_dual(
    prompt: &str,
    task: &FewShotTask,
    scorer: &dyn Scorer,
    tau: f64,
) -> Result<f64, FitnessError> {
    ensemble_predict_dual(&[prompt.to_string()], task, scorer, tau)
}

/// Class whose name embedding is closest in cosine to the caption
/// embedding. `allowed` restricts the candidates; ties go to the lowest
/// class index.
pub fn predict_open_with(
    caption_embedding: &[f64],
    class_embeddings: &[Vec<f64>],
    allowed: Option<&[usize]>,
) -> usize {
    let candidates: Vec<usize> = match allowed {
        Some(a) => {
            let mut a = a.to_vec();
            a.sort_unstable();
            a.dedup();
            a
        }
        None => (0..class_embeddings.len()).collect(),
    };
    let sims: Vec<f64> = candidates
        .iter()
        .map(|&c| cosine(caption_embedding, &class_embeddings[c]))
        .collect();
    candidates[argmax_lowest(&sims)]
}

pub fn predict_open(
    caption: &str,
    class_names: &[String],
    embedder: &dyn Embedder,
) -> Result<usize, FitnessError> {
    let cap = embedder.embed(caption)?;
    let classes = class_embeddings(class_names, embedder)?;
    Ok(predict_open_with(&cap, &classes, None))
}

pub fn class_embeddings(
    class_names: &[String],
    embedder: &dyn Embedder,
) -> Result<Vec<Vec<f64>>, FitnessError> {
    class_names
        .iter()
        .map(|c| embedder.embed(c).map_err(FitnessError::from))
        .collect()
}

/// Per-example predictions of one open-ended prompt. Failed or empty
/// generations yield `None`.
pub fn predict_open_examples(
    prompt: &str,
    task: &FewShotTask,
    captioner: &dyn Captioner,
    embedder: &dyn Embedder,
    class_embs: &[Vec<f64>],
    seed: u64,
) -> Vec<Option<usize>> {
    let parallel = captioner.reentrant() && embedder.reentrant();
    map_indices(task.examples.len(), parallel, |i| {
        let ex = &task.examples[i];
        let caption = match captioner.caption(&ex.image, prompt, seed) {
            Ok(c) if !c.trim().is_empty() => c,
            Ok(_) => {
                log::warn!(
                    "empty caption for example {i} ({}); counted incorrect",
                    ex.image
                );
                return None;
            }
            Err(e) => {
                log::warn!(
                    "captioning example {i} ({}) failed: {e}; counted incorrect",
                    ex.image
                );
                return None;
            }
        };
        match embedder.embed(&caption) {
            Ok(emb) => {
                let allowed = match task.mode {
                    EvalMode::MultipleChoice => ex.choices.as_deref(),
                    _ => None,
                };
                Some(predict_open_with(&emb, class_embs, allowed))
            }
            Err(e) => {
                log::warn!("embedding caption of example {i} failed: {e}; counted incorrect");
                None
            }
        }
    })
}

pub fn fitness_open(
    prompt: &str,
    task: &FewShotTask,
    captioner: &dyn Captioner,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<f64, FitnessError> {
    let class_embs = class_embeddings(&task.class_names, embedder)?;
    let preds = predict_open_examples(prompt, task, captioner, embedder, &class_embs, seed);
    Ok(fraction(&preds, &task.labels()))
}

/// Majority vote over per-prompt predictions. `prompts` are ordered best
/// first; a tied vote goes to the tied class predicted by the earliest
/// prompt.
pub fn vote(per_prompt: &[Option<usize>]) -> Option<usize> {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for p in per_prompt.iter().flatten() {
        match counts.iter_mut().find(|(c, _)| c == p) {
            Some((_, n)) => *n += 1,
            None => counts.push((*p, 1)),
        }
    }
    let top = counts.iter().map(|&(_, n)| n).max()?;
    per_prompt
        .iter()
        .flatten()
        .copied()
        .find(|p| counts.iter().any(|&(c, n)| c == *p && n == top))
}

pub fn ensemble_predict_open(
    prompts: &[String],
    task: &FewShotTask,
    captioner: &dyn Captioner,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<f64, FitnessError> {
    let preds = ensemble_open_predictions(prompts, task, captioner, embedder, seed)?;
    Ok(fraction(&preds, &task.labels()))
}

pub fn ensemble_open_predictions(
    prompts: &[String],
    task: &FewShotTask,
    captioner: &dyn Captioner,
    embedder: &dyn Embedder,
    seed: u64,
) -> Result<Vec<Option<usize>>, FitnessError> {
    if prompts.is_empty() {
        return Err(FitnessError::NoPrompts);
    }
    let class_embs = class_embeddings(&task.class_names, embedder)?;
    let per_prompt: Vec<Vec<Option<usize>>> = prompts
        .iter()
        .map(|p| predict_open_examples(p, task, captioner, embedder, &class_embs, seed))
        .collect();
    Ok((0..task.examples.len())
        .map(|i| vote(&per_prompt.iter().map(|v| v[i]).collect::<Vec<_>>()))
        .collect())
}

/// The quantity the optimizer maximizes.
pub trait Objective: Send + Sync {
    fn score(&self, prompt: &str) -> Result<f64, FitnessError>;
    /// Score of the classifier built from `prompts` (best first).
    fn score_ensemble(&self, prompts: &[String]) -> Result<f64, FitnessError>;
    fn mode(&self) -> EvalMode;
    fn reentrant(&self) -> bool {
        true
    }
}

/// Dual-encoder accuracy on a few-shot task, with image features cached.
pub struct DualEncoderObjective {
    task: FewShotTask,
    scorer: Arc<dyn Scorer>,
    features: Vec<Vec<f64>>,
    tau: f64,
}

impl DualEncoderObjective {
    pub fn new(task: FewShotTask, scorer: Arc<dyn Scorer>, tau: f64) -> Result<Self, FitnessError> {
        if tau.is_nan() || tau <= 0.0 {
            return Err(FitnessError::BadTau(tau));
        }
        let features = image_features(&task, scorer.as_ref())?;
        Ok(Self {
            task,
            scorer,
            features,
            tau,
        })
    }

    /// Predicted class per example for an ensemble.
    pub fn predictions(&self, prompts: &[String]) -> Result<Vec<usize>, FitnessError> {
        let protos = class_prototypes(prompts, &self.task, self.scorer.as_ref())?;
        predict_dual_with(&protos, &self.features, self.tau)
    }
}

impl Objective for DualEncoderObjective {
    fn score(&self, prompt: &str) -> Result<f64, FitnessError> {
        self.score_ensemble(&[prompt.to_string()])
    }

    fn score_ensemble(&self, prompts: &[String]) -> Result<f64, FitnessError> {
        ensemble_dual_with_features(
            prompts,
            &self.task,
            self.scorer.as_ref(),
            &self.features,
            self.tau,
        )
    }

    fn mode(&self) -> EvalMode {
        EvalMode::DualEncoder
    }

    fn reentrant(&self) -> bool {
        self.scorer.reentrant()
    }
}

/// Caption-and-match accuracy for encoder-decoder and multiple-choice tasks.
pub struct OpenEndedObjective {
    task: FewShotTask,
    captioner: Arc<dyn Captioner>,
    embedder: Arc<dyn Embedder>,
    class_embs: Vec<Vec<f64>>,
    seed: u64,
}

impl OpenEndedObjective {
    pub fn new(
        task: FewShotTask,
        captioner: Arc<dyn Captioner>,
        embedder: Arc<dyn Embedder>,
        seed: u64,
    ) -> Result<Self, FitnessError> {
        let class_embs = class_embeddings(&task.class_names, embedder.as_ref())?;
        Ok(Self {
            task,
            captioner,
            embedder,
            class_embs,
            seed,
        })
    }

    pub fn predictions(&self, prompts: &[String]) -> Result<Vec<Option<usize>>, FitnessError> {
        ensemble_open_predictions(
            prompts,
            &self.task,
            self.captioner.as_ref(),
            self.embedder.as_ref(),
            self.seed,
        )
    }
}

impl Objective for OpenEndedObjective {
    fn score(&self, prompt: &str) -> Result<f64, FitnessError> {
        let preds = predict_open_examples(
            prompt,
            &self.task,
            self.captioner.as_ref(),
            self.embedder.as_ref(),
            &self.class_embs,
            self.seed,
        );
        Ok(fraction(&preds, &self.task.labels()))
    }

    fn score_ensemble(&self, prompts: &[String]) -> Result<f64, FitnessError> {
        let preds = self.predictions(prompts)?;
        Ok(fraction(&preds, &self.task.labels()))
    }

    fn mode(&self) -> EvalMode {
        self.task.mode
    }

    fn reentrant(&self) -> bool {
        self.captioner.reentrant() && self.embedder.reentrant()
    }
}

/// Synthetic landscape: closeness of a prompt's mean token embedding to the
/// surrogate target phrase.
pub struct SurrogateTargetObjective {
    world: Arc<SurrogateWorld>,
    mode: EvalMode,
}

impl SurrogateTargetObjective {
    pub fn new(world: Arc<SurrogateWorld>, mode: EvalMode) -> Self {
        Self { world, mode }
    }
}

impl Objective for SurrogateTargetObjective {
    fn score(&self, prompt: &str) -> Result<f64, FitnessError> {
        Ok(self.world.fitness_target(prompt))
    }

    fn score_ensemble(&self, prompts: &[String]) -> Result<f64, FitnessError> {
        if prompts.is_empty() {
            return Err(FitnessError::NoPrompts);
        }
        Ok(self.world.ensemble_fitness_target(prompts))
    }

    fn mode(&self) -> EvalMode {
        self.mode
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backends::surrogate::{SurrogateEmbedder, SurrogateScorer};
    use std::collections::HashMap;

    /// Scorer over orthonormal class axes: class `c` text embeds to `e_c`
    /// and each image embeds to a given unit vector, so image/class cosines
    /// equal the image's coordinates.
    struct AxisScorer {
        classes: Vec<String>,
        images: HashMap<ImageRef, Vec<f64>>,
    }

    impl AxisScorer {
        fn from_table(table: &[Vec<f64>]) -> (Self, FewShotTask) {
            let c = table[0].len();
            let classes: Vec<String> = (0..c).map(|i| format!("class{i}")).collect();
            let mut images = HashMap::new();
            let mut examples = vec![];
            for (i, row) in table.iter().enumerate() {
                let r2: f64 = row.iter().map(|x| x * x).sum();
                let mut v = row.clone();
                v.push((1.0 - r2).max(0.0).sqrt());
                images.insert(ImageRef::new(format!("img{i}")), v);
                examples.push(LabeledExample {
                    image: ImageRef::new(format!("img{i}")),
                    label: 0,
                    choices: None,
                });
            }
            let task = FewShotTask {
                class_names: classes.clone(),
                examples,
                name: "t".into(),
                description: "d".into(),
                mode: EvalMode::DualEncoder,
            };
            (Self { classes, images }, task)
        }
    }

    impl Scorer for AxisScorer {
        fn embed_text(&self, text: &str) -> Result<Vec<f64>, BackendError> {
            let c = self
                .classes
                .iter()
                .position(|n| n == text)
                .ok_or_else(|| BackendError::InvalidInput(text.into()))?;
            let mut v = vec![0.0; self.classes.len() + 1];
            v[c] = 1.0;
            Ok(v)
        }

        fn embed_image(&self, image: &ImageRef) -> Result<Vec<f64>, BackendError> {
            self.images
                .get(image)
                .cloned()
                .ok_or_else(|| BackendError::UnknownImage(image.clone()))
        }
    }

    #[test]
    fn class_text_examples() {
        assert_eq!(
            class_text("a photo of a {}", "dog").unwrap(),
            "a photo of a dog"
        );
        assert_eq!(
            class_text("a {} on grass", "cat").unwrap(),
            "a cat on grass"
        );
        assert_eq!(
            class_text("x", "dog").unwrap_err(),
            FitnessError::MissingPlaceholder("x".into())
        );
    }

    #[test]
    fn likelihood_examples() {
        assert_eq!(likelihoods(&[0.5, 0.5], 1.0).unwrap().probs, vec![0.5, 0.5]);
        // reference: e^0.8 / (e^0.8 + e^0.2) evaluated independently
        let p = likelihoods(&[0.8, 0.2], 1.0).unwrap().probs;
        assert!((p[0] - 0.6457).abs() < 1e-4 && (p[1] - 0.3543).abs() < 1e-4);
        assert!((p[0] - 0.6456563062257954).abs() < 1e-12);
        assert_eq!(likelihoods(&[0.8, 0.2], 0.01).unwrap().argmax(), 0);
        assert_eq!(likelihoods(&[0.8, 0.2], 1.0).unwrap().argmax(), 0);
        assert_eq!(
            likelihoods(&[0.1], 0.0).unwrap_err(),
            FitnessError::BadTau(0.0)
        );
        assert_eq!(
            likelihoods(&[f64::NAN, 0.1], 1.0).unwrap_err(),
            FitnessError::NonFinite
        );
    }

    #[test]
    fn all_correct_is_one() {
        let table = vec![vec![0.6, 0.1], vec![0.1, 0.6]];
        let (scorer, mut task) = AxisScorer::from_table(&table);
        task.examples[1].label = 1;
        assert_eq!(fitness_dual("{}", &task, &scorer, 0.01).unwrap(), 1.0);
    }

    #[test]
    fn tie_predicts_lowest_class() {
        // sims (0.8, 0.2) truth 0 and (0.5, 0.5) truth 1 -> 0.5
        let table = vec![vec![0.8, 0.2], vec![0.5, 0.5]];
        let (scorer, mut task) = AxisScorer::from_table(&table);
        task.examples[1].label = 1;
        assert_eq!(fitness_dual("{}", &task, &scorer, 1.0).unwrap(), 0.5);
        assert_eq!(
            accuracy_from_similarities(&table, &[0, 1], 1.0).unwrap(),
            0.5
        );
    }

    #[test]
    fn scorer_failure_names_example() {
        let table = vec![vec![0.8, 0.2]];
        let (mut scorer, task) = AxisScorer::from_table(&table);
        scorer.images.clear();
        assert!(matches!(
            fitness_dual("{}", &task, &scorer, 1.0),
            Err(FitnessError::Example { index: 0, .. })
        ));
    }

    #[test]
    fn prompt_without_placeholder_fails() {
        let (scorer, task) = AxisScorer::from_table(&[vec![0.8, 0.2]]);
        assert!(matches!(
            fitness_dual("no slot", &task, &scorer, 1.0),
            Err(FitnessError::MissingPlaceholder(_))
        ));
    }

    fn surrogate_task() -> (FewShotTask, SurrogateScorer) {
        let world = Arc::new(SurrogateWorld::default());
        let classes: Vec<String> = ["bird", "dog", "car"].map(String::from).to_vec();
        let mut images = HashMap::new();
        let mut examples = vec![];
        for (i, c) in classes.iter().enumerate() {
            for (j, style) in ["bright photo", "blurry sketch"].iter().enumerate() {
                let r = ImageRef::new(format!("{c}-{j}"));
                images.insert(
                    r.clone(),
                    world
                        .mean_embedding(&format!("{style} {c}"))
                        .unwrap()
                        .to_vec(),
                );
                examples.push(LabeledExample {
                    image: r,
                    label: i,
                    choices: None,
                });
            }
        }
        let task =
            FewShotTask::new(classes, examples, "toy", "toy", EvalMode::DualEncoder).unwrap();
        (task, SurrogateScorer::new(world, images))
    }

    #[test]
    fn ensemble_reductions() {
        let (task, scorer) = surrogate_task();
        let p = "a bright photo of a {}".to_string();
        let single = fitness_dual(&p, &task, &scorer, 0.01).unwrap();
        assert_eq!(
            ensemble_predict_dual(std::slice::from_ref(&p), &task, &scorer, 0.01).unwrap(),
            single
        );
        assert_eq!(
            ensemble_predict_dual(&[p.clone(), p.clone(), p.clone()], &task, &scorer, 0.01)
                .unwrap(),
            single
        );
        assert!(matches!(
            ensemble_predict_dual(&[], &task, &scorer, 0.01),
            Err(FitnessError::NoPrompts)
        ));
    }

    #[test]
    fn orthogonal_prototypes_average() {
        let mut v = vec![1.0, 0.0];
        let w = [0.0, 1.0];
        v.iter_mut().zip(&w).for_each(|(a, b)| *a = (*a + b) / 2.0);
        normalize(&mut v);
        assert!((cosine(&v, &[1.0, 0.0]) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
        assert!((cosine(&v, &w) - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn fitness_is_a_multiple_of_one_over_d() {
        let (task, scorer) = surrogate_task();
        for p in ["a {}", "a blurry sketch of a {}", "{} bright"] {
            let f = fitness_dual(p, &task, &scorer, 0.01).unwrap();
            let k = f * task.examples.len() as f64;
            assert_eq!(k, k.round());
        }
    }

    #[test]
    fn predict_open_examples_with_surrogate() {
        let w = Arc::new(SurrogateWorld::default());
        let e = SurrogateEmbedder::new(w.clone());
        let classes = vec!["golden retriever".to_string(), "tabby cat".to_string()];
        // independent check of the two cosines
        let cap = w.mean_embedding("a golden retriever").unwrap();
        let c0 = w.mean_embedding("golden retriever").unwrap();
        let c1 = w.mean_embedding("tabby cat").unwrap();
        let cos = |a: &ndarray::Array1<f64>, b: &ndarray::Array1<f64>| {
            a.dot(b) / (a.dot(a).sqrt() * b.dot(b).sqrt())
        };
        let expected = if cos(&cap, &c0) >= cos(&cap, &c1) {
            0
        } else {
            1
        };
        assert_eq!(expected, 0);
        assert_eq!(
            predict_open("a golden retriever", &classes, &e).unwrap(),
            expected
        );
        assert_eq!(predict_open("tabby cat", &classes, &e).unwrap(), 1);
    }

    #[test]
    fn predict_open_tie_and_restriction() {
        let classes = vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]];
        assert_eq!(predict_open_with(&[1.0, 0.0], &classes, None), 0);
        assert_eq!(predict_open_with(&[1.0, 0.0], &classes, Some(&[2, 1])), 1);
        assert_eq!(predict_open_with(&[0.0, 0.0], &classes, None), 0);
    }

    #[test]
    fn vote_rules() {
        assert_eq!(vote(&[Some(2), Some(2), Some(2)]), Some(2));
        assert_eq!(vote(&[Some(1), Some(2), Some(2)]), Some(2));
        assert_eq!(vote(&[Some(3), Some(1), Some(2)]), Some(3));
        assert_eq!(vote(&[None, Some(1), Some(2)]), Some(1));
        assert_eq!(vote(&[None, None]), None);
        // 2-2 tie goes to the class of the earliest prompt in the tie
        assert_eq!(vote(&[Some(0), Some(1), Some(1), Some(0)]), Some(0));
    }

    #[test]
    fn task_validation() {
        let ex = |label| LabeledExample {
            image: ImageRef::new("x"),
            label,
            choices: None,
        };
        let names = vec!["a".to_string(), "b".to_string()];
        assert!(
            FewShotTask::new(names.clone(), vec![ex(2)], "n", "d", EvalMode::DualEncoder).is_err()
        );
        assert!(FewShotTask::new(
            names[..1].to_vec(),
            vec![ex(0)],
            "n",
            "d",
            EvalMode::DualEncoder
        )
        .is_err());
        assert!(FewShotTask::new(names.clone(), vec![], "n", "d", EvalMode::DualEncoder).is_err());
        let mut bad = ex(0);
        bad.choices = Some(vec![1]);
        assert!(FewShotTask::new(names, vec![bad], "n", "d", EvalMode::MultipleChoice).is_err());
    }
}
