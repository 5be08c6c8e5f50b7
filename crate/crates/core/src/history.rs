//! Scored prompt candidates, the global history buffer, and the ranking
//! rules shared by the meta-prompt and the guidance pair.
//!
//! All rankings use one total order: higher fitness first, then the
//! earlier iteration, then the lexicographically smaller text. Bottom-k
//! selection flips only the fitness direction.

use std::cmp::Ordering;
use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HistoryError {
    #[error("candidate {text:?} has no fitness")]
    Unscored { text: String },
    #[error("candidate {text:?} has fitness {fitness} outside [0, 1]")]
    FitnessOutOfRange { text: String, fitness: f64 },
    #[error("candidate text is empty")]
    EmptyText,
    #[error("history is empty")]
    Empty,
    #[error("need at least 2 history entries, have {0}")]
    TooFewEntries(usize),
}

/// One proposed prompt and, once measured, its fitness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptCandidate {
    pub text: String,
    pub fitness: Option<f64>,
    pub iteration: usize,
    pub steered: bool,
}

impl PromptCandidate {
    pub fn new(text: impl Into<String>, iteration: usize, steered: bool) -> Self {
        Self {
            text: text.into(),
            fitness: None,
            iteration,
            steered,
        }
    }

    pub fn scored(text: impl Into<String>, fitness: f64, iteration: usize) -> Self {
        Self {
            text: text.into(),
            fitness: Some(fitness),
            iteration,
            steered: false,
        }
    }

    /// Fitness of an entry that is known to be scored (every history entry is).
    pub fn score(&self) -> f64 {
        self.fitness.unwrap_or(f64::NAN)
    }
}

/// Whitespace-collapsed, trimmed, case-preserving form used for deduplication.
pub fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Descending fitness, then earlier iteration, then smaller text.
pub fn rank_order(a: &PromptCandidate, b: &PromptCandidate) -> Ordering {
    b.score()
        .total_cmp(&a.score())
        .then_with(|| tie_break(a, b))
}

fn ascending_order(a: &PromptCandidate, b: &PromptCandidate) -> Ordering {
    a.score()
        .total_cmp(&b.score())
        .then_with(|| tie_break(a, b))
}

fn tie_break(a: &PromptCandidate, b: &PromptCandidate) -> Ordering {
    a.iteration
        .cmp(&b.iteration)
        .then_with(|| a.text.cmp(&b.text))
}

/// Outcome of [`HistoryBuffer::add_scored`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AddReport {
    pub added: usize,
    /// Texts skipped because an entry with the same normalized text exists.
    pub duplicates: Vec<String>,
}

/// Append-only record of every scored prompt seen during a run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct HistoryBuffer {
    entries: Vec<PromptCandidate>,
    index: HashMap<String, usize>,
}

impl HistoryBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Entries in insertion order.
    pub fn entries(&self) -> &[PromptCandidate] {
        &self.entries
    }

    pub fn contains(&self, text: &str) -> bool {
        self.index.contains_key(&normalize_text(text))
    }

    pub fn get(&self, text: &str) -> Option<&PromptCandidate> {
        self.index
            .get(&normalize_text(text))
            .map(|&i| &self.entries[i])
    }

    /// Highest fitness in the buffer.
    pub fn max_fitness(&self) -> Option<f64> {
        self.entries
            .iter()
            .map(PromptCandidate::score)
            .reduce(f64::max)
    }

    /// Adds scored candidates, skipping any whose normalized text is already
    /// present. The whole batch is rejected if any candidate is unscored.
    pub fn add_scored<I>(&mut self, scored: I) -> Result<AddReport, HistoryError>
    where
        I: IntoIterator<Item = PromptCandidate>,
    {
        let scored: Vec<PromptCandidate> = scored.into_iter().collect();
        for cand in &scored {
            if normalize_text(&cand.text).is_empty() {
                return Err(HistoryError::EmptyText);
            }
            match cand.fitness {
                None => {
                    return Err(HistoryError::Unscored {
                        text: cand.text.clone(),
                    })
                }
                Some(f) if !(0.0..=1.0).contains(&f) => {
                    return Err(HistoryError::FitnessOutOfRange {
                        text: cand.text.clone(),
                        fitness: f,
                    })
                }
                Some(_) => {}
            }
        }

        let mut report = AddReport::default();
        for mut cand in scored {
            let key = normalize_text(&cand.text);
            if self.index.contains_key(&key) {
                log::debug!("skipping duplicate prompt {:?}", cand.text);
                report.duplicates.push(cand.text);
                continue;
            }
            cand.text = cand.text.trim().to_string();
            self.index.insert(key, self.entries.len());
            self.entries.push(cand);
            report.added += 1;
        }
        Ok(report)
    }

    /// The `k` best entries (best first) and the `k` worst (worst first).
    pub fn top_bottom(
        &self,
        k: usize,
    ) -> Result<(Vec<PromptCandidate>, Vec<PromptCandidate>), HistoryError> {
        if self.entries.is_empty() {
            return Err(HistoryError::Empty);
        }
        let mut sorted: Vec<&PromptCandidate> = self.entries.iter().collect();
        sorted.sort_by(|a, b| rank_order(a, b));
        let tops = sorted.iter().take(k).map(|c| (*c).clone()).collect();

        sorted.sort_by(|a, b| ascending_order(a, b));
        let bottoms = sorted.iter().take(k).map(|c| (*c).clone()).collect();
        Ok((tops, bottoms))
    }

    /// Top `n` entries by rank, best first.
    pub fn top(&self, n: usize) -> Vec<PromptCandidate> {
        let mut sorted: Vec<&PromptCandidate> = self.entries.iter().collect();
        sorted.sort_by(|a, b| rank_order(a, b));
        sorted.into_iter().take(n).cloned().collect()
    }

    /// Best and second-best entries.
    pub fn best_pair(&self) -> Result<GuidancePair, HistoryError> {
        if self.entries.len() < 2 {
            return Err(HistoryError::TooFewEntries(self.entries.len()));
        }
        let best = self.top(2);
        Ok(GuidancePair {
            p_plus: best[0].text.clone(),
            p_minus: best[1].text.clone(),
            fitness_plus: best[0].score(),
            fitness_minus: best[1].score(),
        })
    }

    /// Rebuilds a buffer from entries in insertion order, as read back from a
    /// run log.
    pub fn from_entries(entries: Vec<PromptCandidate>) -> Result<Self, HistoryError> {
        let mut buf = Self::new();
        buf.add_scored(entries)?;
        Ok(buf)
    }
}

/// Positive/negative prompts that define the steering direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GuidancePair {
    pub p_plus: String,
    pub p_minus: String,
    pub fitness_plus: f64,
    pub fitness_minus: f64,
}
