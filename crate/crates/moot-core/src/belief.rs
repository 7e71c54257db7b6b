//! Outcome spaces, belief states, and the evidence/argument records that
//! debates are built from.
//!
//! A belief is a probability vector over a fixed, labeled outcome space.
//! Spaces come in two kinds: `Categorical` (labels are unordered) and
//! `Structured` (labels sit at integer positions `0..n-1`, giving a ground
//! metric `|i - j|` that transport-based distances can use).

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for "sums to one" checks on probability vectors.
pub const SUM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    /// Unordered labels; disagreement is measured information-theoretically.
    Categorical,
    /// Labels at integer positions `0..n-1` with ground metric `|i - j|`.
    Structured,
}

/// A fixed answer space shared by every participant in a debate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeSpace {
    pub labels: Vec<String>,
    pub kind: SpaceKind,
}

impl OutcomeSpace {
    pub fn new(labels: Vec<String>, kind: SpaceKind) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::Parameter("outcome space needs at least one label".into()));
        }
        for (i, a) in labels.iter().enumerate() {
            if labels[..i].contains(a) {
                return Err(Error::Parameter(format!("duplicate outcome label '{a}'")));
            }
        }
        Ok(Self { labels, kind })
    }

    pub fn categorical<S: Into<String>>(labels: Vec<S>) -> Result<Self> {
        Self::new(labels.into_iter().map(Into::into).collect(), SpaceKind::Categorical)
    }

    pub fn structured<S: Into<String>>(labels: Vec<S>) -> Result<Self> {
        Self::new(labels.into_iter().map(Into::into).collect(), SpaceKind::Structured)
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    /// log2 of the space size; the normalizer for entropy-based signals.
    pub fn log2_size(&self) -> f64 {
        (self.size() as f64).log2()
    }
}

/// A probability vector bound to its outcome space.
///
/// Construction validates nonnegativity and that the entries sum to one
/// within [`SUM_TOLERANCE`]; `renormalized` accepts any nonnegative vector
/// with positive mass and scales it instead.
#[derive(Debug, Clone, PartialEq)]
pub struct BeliefState {
    space: Arc<OutcomeSpace>,
    probs: Vec<f64>,
}

impl BeliefState {
    pub fn new(space: Arc<OutcomeSpace>, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space.size() {
            return Err(Error::Shape(format!(
                "belief has {} entries for a space of {} labels",
                probs.len(),
                space.size()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Parameter(format!("belief entries must be finite and >= 0, got {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::Parameter(format!(
                "belief mass sums to {sum}, outside 1 +/- {SUM_TOLERANCE}"
            )));
        }
        Ok(Self { space, probs })
    }

    /// Accept any nonnegative vector with positive total mass and rescale it.
    pub fn renormalized(space: Arc<OutcomeSpace>, probs: Vec<f64>) -> Result<Self> {
        if probs.len() != space.size() {
            return Err(Error::Shape(format!(
                "belief has {} entries for a space of {} labels",
                probs.len(),
                space.size()
            )));
        }
        if let Some(p) = probs.iter().find(|p| !p.is_finite() || **p < 0.0) {
            return Err(Error::Parameter(format!("belief entries must be finite and >= 0, got {p}")));
        }
        let sum: f64 = probs.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Parameter("belief has no probability mass to normalize".into()));
        }
        let probs = probs.into_iter().map(|p| p / sum).collect();
        Ok(Self { space, probs })
    }

    pub fn uniform(space: Arc<OutcomeSpace>) -> Self {
        let n = space.size();
        Self { space, probs: vec![1.0 / n as f64; n] }
    }

    pub fn space(&self) -> &Arc<OutcomeSpace> {
        &self.space
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Shannon entropy in bits (all logs in this crate are base 2).
    pub fn entropy_bits(&self) -> f64 {
        entropy_bits_of(&self.probs)
    }

    pub fn same_space(&self, other: &BeliefState) -> bool {
        Arc::ptr_eq(&self.space, &other.space) || *self.space == *other.space
    }
}

/// `H(p) = -sum_k p_k log2 p_k`, with `0 log 0 = 0`.
pub fn entropy_bits_of(probs: &[f64]) -> f64 {
    probs
        .iter()
        .filter(|&&p| p > 0.0)
        .map(|&p| -p * p.log2())
        .sum()
}

/// Pull a belief toward uniform: `(1 - delta) p + delta / n` per entry.
///
/// Keeps every entry strictly positive so divergences stay finite. Requires
/// `0 < delta < 1/n`, which guarantees the floor `delta/n` sits below any
/// entry the uniform distribution itself would have.
pub fn smooth(b: &BeliefState, delta: f64) -> Result<BeliefState> {
    let n = b.space.size() as f64;
    if !(delta > 0.0 && delta < 1.0 / n) {
        return Err(Error::Parameter(format!(
            "smoothing delta must satisfy 0 < delta < 1/{n}, got {delta}"
        )));
    }
    let floor = delta / n;
    let probs = b.probs.iter().map(|p| (1.0 - delta) * p + floor).collect();
    Ok(BeliefState { space: b.space.clone(), probs })
}

/// Convex combination `sum_u w_u p_u` of beliefs over one shared space.
///
/// Weights must be nonnegative and sum to one within [`SUM_TOLERANCE`]; the
/// result is renormalized to absorb rounding drift.
pub fn mix(beliefs: &[BeliefState], weights: &[f64]) -> Result<BeliefState> {
    if beliefs.is_empty() {
        return Err(Error::Parameter("mix needs at least one belief".into()));
    }
    if beliefs.len() != weights.len() {
        return Err(Error::Shape(format!(
            "{} beliefs but {} weights",
            beliefs.len(),
            weights.len()
        )));
    }
    let space = beliefs[0].space.clone();
    for b in &beliefs[1..] {
        if !b.same_space(&beliefs[0]) {
            return Err(Error::Shape("mix requires all beliefs on the same outcome space".into()));
        }
    }
    if let Some(w) = weights.iter().find(|w| !w.is_finite() || **w < 0.0) {
        return Err(Error::Parameter(format!("mixture weights must be finite and >= 0, got {w}")));
    }
    let wsum: f64 = weights.iter().sum();
    if (wsum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Parameter(format!(
            "mixture weights sum to {wsum}, outside 1 +/- {SUM_TOLERANCE}"
        )));
    }
    let n = space.size();
    let mut probs = vec![0.0; n];
    for (b, &w) in beliefs.iter().zip(weights) {
        for (acc, &p) in probs.iter_mut().zip(b.probs()) {
            *acc += w * p;
        }
    }
    BeliefState::renormalized(space, probs)
}

/// A snippet of retrievable evidence an argument can cite.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvidenceSpan {
    /// Stable identifier; overlap and deduplication key on this.
    pub id: String,
    pub text: String,
    /// Where the span came from (corpus name, URL, or a planted tag in
    /// simulation: "on-target" / "off-target").
    pub source: String,
}

/// One argument emitted by an agent in one round.
///
/// `q_score` and `crit_score` are filled in by the moderator when the
/// argument is scored; `admitted` records the dual-gate outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Argument {
    pub agent: String,
    pub claim: String,
    pub justification: String,
    /// Ids of the evidence spans this argument cites.
    pub span_ids: Vec<String>,
    #[serde(default)]
    pub q_score: Option<f64>,
    #[serde(default)]
    pub crit_score: Option<f64>,
    #[serde(default)]
    pub admitted: bool,
}
