//! Offline prompt construction and online ambiguity scoring.
//!
//! A [`GeometricPrompt`] bundles the lowest-entropy and highest-entropy
//! reference views of an object. Scorers estimate the probability that a
//! live view is ambiguous given that prompt. [`OracleScorer`] derives it from
//! scene geometry; [`RemoteScorer`] asks an HTTP service.

mod remote;

pub use remote::{RemoteScorer, RemoteScorerConfig, ScoreRequest, ScoreResponse, ViewSummary};

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scene::{indistinguishable_indices, ObjectModel, ViewDescriptor};

pub const DEFAULT_U_COUNT: usize = 3;
pub const DEFAULT_A_COUNT: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AmbiguityError {
    #[error("need at least {needed} views for the prompt, got {available}")]
    InsufficientViews { needed: usize, available: usize },
    #[error("prompt view counts must be at least 1")]
    EmptySelection,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScorerError {
    #[error("scorer request timed out")]
    Timeout,
    #[error("scorer endpoint unreachable: {0}")]
    Unreachable(String),
    #[error("malformed scorer response: {0}")]
    MalformedResponse(String),
    #[error("prompt was built for `{prompt}` but the view shows `{object}`")]
    ObjectMismatch { prompt: String, object: String },
    #[error("scorer configuration: {0}")]
    Config(String),
}

impl ScorerError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ScorerError::Timeout | ScorerError::Unreachable(_) | ScorerError::MalformedResponse(_)
        )
    }
}

/// A reference view together with its offline entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptView {
    /// Position in the offline scan.
    pub index: usize,
    pub view: ViewDescriptor,
    pub entropy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeometricPrompt {
    pub object_name: String,
    pub unambiguous: Vec<PromptView>,
    pub ambiguous: Vec<PromptView>,
}

impl GeometricPrompt {
    /// `max(U) <= min(A)` and both sides non-empty.
    pub fn is_consistent(&self) -> bool {
        if self.unambiguous.is_empty() || self.ambiguous.is_empty() {
            return false;
        }
        let max_u = self.unambiguous.iter().map(|v| v.entropy).fold(f64::MIN, f64::max);
        let min_a = self.ambiguous.iter().map(|v| v.entropy).fold(f64::MAX, f64::min);
        max_u <= min_a
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbiguityScore {
    pub p_amb: f64,
    pub scorer_id: String,
    /// Wall-clock seconds spent producing the score.
    pub latency: f64,
}

/// Picks the `u_count` lowest-entropy views as unambiguous references and
/// the `a_count` highest-entropy views as ambiguous ones. Equal entropies
/// are ordered by view index.
pub fn build_prompt(
    object_name: &str,
    views: &[(ViewDescriptor, f64)],
    u_count: usize,
    a_count: usize,
) -> Result<GeometricPrompt, AmbiguityError> {
    if u_count == 0 || a_count == 0 {
        return Err(AmbiguityError::EmptySelection);
    }
    if views.len() < u_count + a_count {
        return Err(AmbiguityError::InsufficientViews {
            needed: u_count + a_count,
            available: views.len(),
        });
    }
    let mut ascending: Vec<usize> = (0..views.len()).collect();
    ascending.sort_by(|&a, &b| views[a].1.total_cmp(&views[b].1).then(a.cmp(&b)));
    let mut descending: Vec<usize> = (0..views.len()).collect();
    descending.sort_by(|&a, &b| views[b].1.total_cmp(&views[a].1).then(a.cmp(&b)));

    let unambiguous: Vec<usize> = ascending[..u_count].to_vec();
    let ambiguous: Vec<usize> = descending
        .iter()
        .copied()
        .filter(|i| !unambiguous.contains(i))
        .take(a_count)
        .collect();
    let to_view = |i: usize| PromptView {
        index: i,
        view: views[i].0.clone(),
        entropy: views[i].1,
    };
    Ok(GeometricPrompt {
        object_name: object_name.to_string(),
        unambiguous: unambiguous.into_iter().map(to_view).collect(),
        ambiguous: ambiguous.into_iter().map(to_view).collect(),
    })
}

/// Estimates `P("ambiguous" | view, prompt)`.
pub trait AmbiguityScorer: Send + Sync {
    fn id(&self) -> &str;

    fn score(
        &self,
        object: &ObjectModel,
        descriptor: &ViewDescriptor,
        prompt: &GeometricPrompt,
    ) -> Result<AmbiguityScore, ScorerError>;
}

pub(crate) fn check_object(object: &ObjectModel, prompt: &GeometricPrompt) -> Result<(), ScorerError> {
    if object.name != prompt.object_name {
        return Err(ScorerError::ObjectMismatch {
            prompt: prompt.object_name.clone(),
            object: object.name.clone(),
        });
    }
    Ok(())
}

/// Geometric ground truth: `p_amb = 1 − 1/|indistinguishable set|`.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleScorer;

impl OracleScorer {
    pub const ID: &'static str = "oracle";

    pub fn p_amb(object: &ObjectModel, descriptor: &ViewDescriptor) -> f64 {
        let n = indistinguishable_indices(object, descriptor).len();
        1.0 - 1.0 / n as f64
    }
}

impl AmbiguityScorer for OracleScorer {
    fn id(&self) -> &str {
        Self::ID
    }

    fn score(
        &self,
        object: &ObjectModel,
        descriptor: &ViewDescriptor,
        prompt: &GeometricPrompt,
    ) -> Result<AmbiguityScore, ScorerError> {
        check_object(object, prompt)?;
        let start = Instant::now();
        let p_amb = Self::p_amb(object, descriptor);
        Ok(AmbiguityScore {
            p_amb,
            scorer_id: Self::ID.to_string(),
            latency: elapsed_secs(start),
        })
    }
}

pub(crate) fn elapsed_secs(start: Instant) -> f64 {
    let d: Duration = start.elapsed();
    d.as_secs_f64()
}
