//! Meta-prompt rendering and parsing of generator output.
//!
//! A meta-prompt has a static system section, a task body with named slots,
//! and ranked in-context examples printed with their accuracy. The default
//! wording lives in `assets/meta_prompt.txt` and can be replaced by any file
//! with the same sections:
//!
//! ```text
//! [system]
//! ...
//! [task]
//! ... {task_name} {task_description} {num_candidates} {top_examples} {bottom_examples} ...
//! [example]
//! {rank}. {text} (accuracy: {accuracy_pct}%)
//! ```

use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EvalMode;
use crate::history::PromptCandidate;

/// Literal class slot in dual-encoder prompts.
pub const CLASS_PLACEHOLDER: &str = "{}";

/// Spellings a generator may use instead of `{}`.
pub const CLASS_ALIASES: [&str; 8] = [
    "<class name>",
    "<classname>",
    "<class>",
    "<CLASS>",
    "{class}",
    "{class name}",
    "[class]",
    "[class name]",
];

const TASK_SLOTS: [&str; 5] = [
    "task_name",
    "task_description",
    "num_candidates",
    "top_examples",
    "bottom_examples",
];
const EXAMPLE_SLOTS: [&str; 2] = ["text", "accuracy_pct"];

const NONE_YET: &str = "(none yet)";
const DUAL_ENCODER_RULE: &str =
    "Every prompt must contain the class placeholder {} exactly once; it will be replaced by each class name.";

static DEFAULT_TEMPLATE: &str = include_str!("../assets/meta_prompt.txt");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetaPromptError {
    #[error("template is missing placeholder {{{0}}}")]
    MissingPlaceholder(String),
    #[error("template placeholder {{{0}}} appears {1} times")]
    RepeatedPlaceholder(String, usize),
    #[error("template is missing section [{0}]")]
    MissingSection(String),
    #[error("num_candidates must be at least 1")]
    ZeroCandidates,
    #[error("example {0:?} has no fitness")]
    UnscoredExample(String),
    #[error("no candidates could be parsed from generator output: {raw:?}")]
    NothingParsed { raw: String },
    #[error("prompt is empty")]
    EmptyPrompt,
    #[error("prompt {text:?} must contain exactly one {{}} placeholder, found {found}")]
    Placeholder { text: String, found: usize },
    #[error("task name and description must be non-empty")]
    EmptyTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaPromptTemplate {
    pub system_text: String,
    pub task_body: String,
    pub example_line_format: String,
}

impl Default for MetaPromptTemplate {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("bundled template is valid")
    }
}

impl MetaPromptTemplate {
    /// Parses a sectioned template file and checks its placeholders.
    pub fn parse(source: &str) -> Result<Self, MetaPromptError> {
        let mut sections: Vec<(String, Vec<&str>)> = Vec::new();
        for line in source.lines() {
            let trimmed = line.trim();
            if trimmed.starts_with('[') && trimmed.ends_with(']') && !trimmed.contains(' ') {
                sections.push((trimmed[1..trimmed.len() - 1].to_string(), Vec::new()));
            } else if let Some((_, body)) = sections.last_mut() {
                body.push(line);
            }
        }
        let take = |name: &str| -> Result<String, MetaPromptError> {
            sections
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, lines)| lines.join("\n").trim().to_string())
                .ok_or_else(|| MetaPromptError::MissingSection(name.into()))
        };
        let template = Self {
            system_text: take("system")?,
            task_body: take("task")?,
            example_line_format: take("example")?,
        };
        template.check()?;
        Ok(template)
    }

    pub fn check(&self) -> Result<(), MetaPromptError> {
        slot_positions(&self.task_body, &TASK_SLOTS)?;
        slot_positions(&self.example_line_format, &EXAMPLE_SLOTS)?;
        Ok(())
    }
}

/// Finds each named slot, which must occur exactly once.
fn slot_positions<'a>(
    body: &str,
    names: &[&'a str],
) -> Result<Vec<(usize, &'a str)>, MetaPromptError> {
    let mut found = Vec::with_capacity(names.len());
    for &name in names {
        let token = format!("{{{name}}}");
        let hits: Vec<usize> = body.match_indices(&token).map(|(i, _)| i).collect();
        match hits.len() {
            0 => return Err(MetaPromptError::MissingPlaceholder(name.into())),
            1 => found.push((hits[0], name)),
            n => return Err(MetaPromptError::RepeatedPlaceholder(name.into(), n)),
        }
    }
    found.sort_unstable();
    Ok(found)
}

/// Single-pass substitution, so substituted values are never rescanned.
fn fill(body: &str, slots: &[(usize, &str)], value: impl Fn(&str) -> String) -> String {
    let mut out = String::with_capacity(body.len() * 2);
    let mut cursor = 0;
    for &(pos, name) in slots {
        out.push_str(&body[cursor..pos]);
        out.push_str(&value(name));
        cursor = pos + name.len() + 2;
    }
    out.push_str(&body[cursor..]);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub name: String,
    pub description: String,
    pub mode: EvalMode,
}

impl TaskDescriptor {
    pub fn new(
        name: impl Into<String>,
        description: impl Into<String>,
        mode: EvalMode,
    ) -> Result<Self, MetaPromptError> {
        let task = Self {
            name: name.into(),
            description: description.into(),
            mode,
        };
        if task.name.trim().is_empty() || task.description.trim().is_empty() {
            return Err(MetaPromptError::EmptyTask);
        }
        Ok(task)
    }
}

/// Fitness as a percentage with one decimal, ties to even.
pub fn format_accuracy(fitness: f64) -> String {
    // `{:.1}` rounds the exact binary value half-to-even
    format!("{:.1}", fitness * 100.0)
}

fn render_examples(format: &str, examples: &[PromptCandidate]) -> Result<String, MetaPromptError> {
    if examples.is_empty() {
        return Ok(NONE_YET.to_string());
    }
    let mut slots = vec![];
    if let Some(i) = format.find("{rank}") {
        slots.push((i, "rank"));
    }
    slots.extend(slot_positions(format, &EXAMPLE_SLOTS)?);
    slots.sort_unstable();

    let mut lines = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        let fitness = ex
            .fitness
            .ok_or_else(|| MetaPromptError::UnscoredExample(ex.text.clone()))?;
        lines.push(fill(format, &slots, |name| match name {
            "rank" => (i + 1).to_string(),
            "text" => ex.text.clone(),
            _ => format_accuracy(fitness),
        }));
    }
    Ok(lines.join("\n"))
}

/// Renders the full meta-prompt. `tops` must be best-first and `bottoms`
/// worst-first, as returned by `HistoryBuffer::top_bottom`.
pub fn render(
    template: &MetaPromptTemplate,
    task: &TaskDescriptor,
    tops: &[PromptCandidate],
    bottoms: &[PromptCandidate],
    num_candidates: usize,
) -> Result<String, MetaPromptError> {
    if num_candidates == 0 {
        return Err(MetaPromptError::ZeroCandidates);
    }
    let slots = slot_positions(&template.task_body, &TASK_SLOTS)?;
    let top_text = render_examples(&template.example_line_format, tops)?;
    let bottom_text = render_examples(&template.example_line_format, bottoms)?;

    let body = fill(&template.task_body, &slots, |name| match name {
        "task_name" => task.name.clone(),
        "task_description" => task.description.clone(),
        "num_candidates" => num_candidates.to_string(),
        "top_examples" => top_text.clone(),
        _ => bottom_text.clone(),
    });

    let mut out = String::new();
    out.push_str(&template.system_text);
    out.push_str("\n\n");
    out.push_str(&body);
    if task.mode == EvalMode::DualEncoder {
        out.push('\n');
        out.push_str(DUAL_ENCODER_RULE);
    }
    out.push('\n');
    Ok(out)
}

fn list_item_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*\d+\s*[.)]\s*(.*)$").unwrap())
}

fn strip_quotes(s: &str) -> &str {
    let s = s.trim();
    for (open, close) in [('"', '"'), ('\'', '\''), ('“', '”'), ('`', '`')] {
        if s.len() >= open.len_utf8() + close.len_utf8()
            && s.starts_with(open)
            && s.ends_with(close)
        {
            return s[open.len_utf8()..s.len() - close.len_utf8()].trim();
        }
    }
    s
}

/// Extracts up to `expected` prompts from raw generator output.
///
/// Enumerated lines (`1.` or `1)`) are preferred. If there are fewer of them
/// than expected, every non-empty line is used instead, with any list marker
/// removed. Returning fewer than `expected` is not an error.
pub fn parse_candidates(raw: &str, expected: usize) -> Result<Vec<String>, MetaPromptError> {
    let re = list_item_re();
    let numbered: Vec<String> = raw
        .lines()
        .filter_map(|line| re.captures(line))
        .map(|c| strip_quotes(&c[1]).to_string())
        .filter(|s| !s.is_empty())
        .collect();

    let mut out = if numbered.len() >= expected {
        numbered
    } else {
        raw.lines()
            .map(|line| match re.captures(line) {
                Some(c) => strip_quotes(&c[1]).to_string(),
                None => strip_quotes(line).to_string(),
            })
            .filter(|s| !s.is_empty())
            .collect()
    };

    if out.is_empty() {
        return Err(MetaPromptError::NothingParsed {
            raw: raw.to_string(),
        });
    }
    out.truncate(expected);
    Ok(out)
}

/// Checks a candidate for the given mode and returns its normalized form.
pub fn validate_prompt(text: &str, mode: EvalMode) -> Result<String, MetaPromptError> {
    let text = text.lines().next().unwrap_or("").trim();
    if text.is_empty() {
        return Err(MetaPromptError::EmptyPrompt);
    }
    if mode != EvalMode::DualEncoder {
        return Ok(text.to_string());
    }
    let found = text.matches(CLASS_PLACEHOLDER).count();
    if found == 1 {
        return Ok(text.to_string());
    }
    if found == 0 {
        let aliases: Vec<&str> = CLASS_ALIASES
            .iter()
            .copied()
            .filter(|a| text.contains(a))
            .collect();
        if let [alias] = aliases.as_slice() {
            if text.matches(alias).count() == 1 {
                return Ok(text.replacen(alias, CLASS_PLACEHOLDER, 1));
            }
        }
    }
    Err(MetaPromptError::Placeholder {
        text: text.to_string(),
        found,
    })
}
