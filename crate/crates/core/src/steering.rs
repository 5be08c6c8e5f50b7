//! Activation steering.
//!
//! The positive and negative prompts are embedded by pooling their layer
//! activations, and the scaled difference of the two embeddings is added to
//! the generator's hidden state at every decoding step:
//!
//! ```text
//! H = mean_s a_l(p)[s, :]
//! h_n <- h_n + alpha * (H_plus - H_minus)
//! ```
//!
//! The guidance pair only changes when the global best fitness strictly
//! improves, so the offset stays fixed between improvements.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{ActivationProbe, BackendError};
use crate::config::SteeringMode;
use crate::history::{GuidancePair, HistoryBuffer, HistoryError};

#[derive(Debug, Error)]
pub enum SteeringError {
    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("activation matrix must have at least one row and column, got {rows}x{cols}")]
    EmptyActivations { rows: usize, cols: usize },
    #[error("activation matrix contains a non-finite value")]
    NonFinite,
    #[error(transparent)]
    History(#[from] HistoryError),
    #[error("activation probe failed: {0}")]
    Probe(#[from] BackendError),
}

/// Layer activations of one tokenized text, `S x E`.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    values: Array2<f64>,
    layer_index: usize,
}

impl ActivationMatrix {
    pub fn new(values: Array2<f64>, layer_index: usize) -> Result<Self, SteeringError> {
        let (rows, cols) = values.dim();
        if rows == 0 || cols == 0 {
            return Err(SteeringError::EmptyActivations { rows, cols });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(SteeringError::NonFinite);
        }
        Ok(Self {
            values,
            layer_index,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn layer_index(&self) -> usize {
        self.layer_index
    }

    pub fn seq_len(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }
}

/// How a token sequence is pooled into one vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    MeanTokens,
    LastToken,
}

pub fn sentence_embedding(acts: &ActivationMatrix, source: EmbeddingSource) -> Array1<f64> {
    match source {
        EmbeddingSource::MeanTokens => acts
            .values
            .mean_axis(Axis(0))
            .expect("activation matrix has at least one row"),
        EmbeddingSource::LastToken => acts.values.row(acts.seq_len() - 1).to_owned(),
    }
}

/// `alpha * (h_plus - h_minus)`.
pub fn guidance_vector(
    h_plus: &Array1<f64>,
    h_minus: &Array1<f64>,
    alpha: f64,
) -> Result<Array1<f64>, SteeringError> {
    if h_plus.len() != h_minus.len() {
        return Err(SteeringError::DimensionMismatch {
            left: h_plus.len(),
            right: h_minus.len(),
        });
    }
    Ok((h_plus - h_minus) * alpha)
}

/// Rows of a hidden-state matrix that receive the offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OffsetSite {
    LastRow,
    AllRows,
    FirstRows(usize),
}

impl OffsetSite {
    /// Resolves a steering mode; `first_n_default` stands in for an unset
    /// ActAdd width.
    pub fn for_mode(mode: SteeringMode, first_n_default: usize) -> Self {
        match mode {
            SteeringMode::LastToken | SteeringMode::LastTokenSource => OffsetSite::LastRow,
            SteeringMode::AllTokens => OffsetSite::AllRows,
            SteeringMode::ActaddFirstN { n } => OffsetSite::FirstRows(n.unwrap_or(first_n_default)),
        }
    }
}

/// Adds `g` to the selected rows of `hidden`; other entries are untouched.
pub fn apply_offset(
    hidden: &Array2<f64>,
    g: &Array1<f64>,
    site: OffsetSite,
) -> Result<Array2<f64>, SteeringError> {
    let mut out = hidden.clone();
    apply_offset_in_place(&mut out, g, site)?;
    Ok(out)
}

pub fn apply_offset_in_place(
    hidden: &mut Array2<f64>,
    g: &Array1<f64>,
    site: OffsetSite,
) -> Result<(), SteeringError> {
    if hidden.ncols() != g.len() {
        return Err(SteeringError::DimensionMismatch {
            left: hidden.ncols(),
            right: g.len(),
        });
    }
    let rows = hidden.nrows();
    let range = match site {
        OffsetSite::LastRow => rows.saturating_sub(1)..rows,
        OffsetSite::AllRows => 0..rows,
        OffsetSite::FirstRows(n) => 0..n.min(rows),
    };
    for r in range {
        let mut row = hidden.row_mut(r);
        row += g;
    }
    Ok(())
}

/// Everything a generator needs to steer one iteration's decoding.
#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceState {
    pub pair: Option<GuidancePair>,
    pub h_plus: Array1<f64>,
    pub h_minus: Array1<f64>,
    /// Token count of the positive prompt; the default ActAdd width.
    pub plus_len: usize,
    pub alpha: f64,
    pub layer_index: usize,
    pub mode: SteeringMode,
    pub enabled: bool,
}

impl GuidanceState {
    pub fn uninitialized(alpha: f64, layer_index: usize, mode: SteeringMode) -> Self {
        Self {
            pair: None,
            h_plus: Array1::zeros(0),
            h_minus: Array1::zeros(0),
            plus_len: 0,
            alpha,
            layer_index,
            mode,
            enabled: false,
        }
    }

    pub fn embedding_source(&self) -> EmbeddingSource {
        match self.mode {
            SteeringMode::LastTokenSource => EmbeddingSource::LastToken,
            _ => EmbeddingSource::MeanTokens,
        }
    }

    pub fn offset_site(&self) -> OffsetSite {
        OffsetSite::for_mode(self.mode, self.plus_len)
    }

    /// The offset to add, or `None` when guidance is off.
    pub fn offset(&self) -> Option<Array1<f64>> {
        if !self.enabled {
            return None;
        }
        guidance_vector(&self.h_plus, &self.h_minus, self.alpha).ok()
    }

    /// Steers `hidden` in place according to this state.
    pub fn steer(&self, hidden: &mut Array2<f64>) -> Result<(), SteeringError> {
        match self.offset() {
            Some(g) => apply_offset_in_place(hidden, &g, self.offset_site()),
            None => Ok(()),
        }
    }
}

/// Refreshes the guidance pair and its embeddings when the history holds a
/// strictly better prompt than the current positive one. Returns the new
/// state and whether it changed.
pub fn maybe_update_guidance(
    state: &GuidanceState,
    history: &HistoryBuffer,
    probe: &dyn ActivationProbe,
) -> Result<(GuidanceState, bool), SteeringError> {
    let pair = history.best_pair()?;
    let improved = match &state.pair {
        None => true,
        Some(current) => pair.fitness_plus > current.fitness_plus,
    };
    if !improved {
        return Ok((state.clone(), false));
    }

    let source = state.embedding_source();
    let plus = probe.probe_activations(&pair.p_plus, state.layer_index)?;
    let minus = probe.probe_activations(&pair.p_minus, state.layer_index)?;
    let h_plus = sentence_embedding(&plus, source);
    let h_minus = sentence_embedding(&minus, source);
    if h_plus.len() != h_minus.len() {
        return Err(SteeringError::DimensionMismatch {
            left: h_plus.len(),
            right: h_minus.len(),
        });
    }
    Ok((
        GuidanceState {
            pair: Some(pair),
            h_plus,
            h_minus,
            plus_len: plus.seq_len(),
            enabled: true,
            ..state.clone()
        },
        true,
    ))
}
