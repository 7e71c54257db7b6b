//! Agent and judge backends plus the HTTP wire protocol they share.
//!
//! The moderator only ever talks to trait objects, so simulated, recorded,
//! and remote participants are interchangeable. Judge requests carry a
//! masked pseudonym instead of the agent id; real identities never reach a
//! judge backend.

pub mod embed;
pub mod http;
pub mod sim;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::belief::{EvidenceSpan, OutcomeSpace};
use crate::error::Result;

/// Everything an agent may see when asked to respond: the shared admitted
/// history, the behavior dial with its rendered stance band, the current
/// gates, and (for simulation backends) the previous round's beliefs and
/// judged mixture. HTTP transport serializes only the wire-protocol subset.
#[derive(Debug, Clone)]
pub struct AgentAnchor {
    /// 1-based round number.
    pub round: u32,
    pub cl: f64,
    pub tau_q: f64,
    pub tau_crit: f64,
    /// Instruction band rendered from `cl`; numeric consumers ignore it.
    pub stance: String,
    pub space: Arc<OutcomeSpace>,
    pub admitted_history: Vec<AdmittedRoundView>,
    /// Previous round's (smoothed) belief per agent; empty at round 1.
    pub previous_beliefs: BTreeMap<String, Vec<f64>>,
    /// Previous round's judged mixture; None at round 1.
    pub shared_mixture: Option<Vec<f64>>,
    /// Tokens left in the debate budget.
    pub budget_hint: u64,
}

/// One round of the admitted record, reduced to what crosses the wire.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdmittedRoundView {
    pub round: u32,
    pub claims: Vec<String>,
}

/// Render the behavior dial as a short stance instruction. Five bands from
/// adversarial to consolidating; simulation backends read only the number.
pub fn stance_band(cl: f64) -> &'static str {
    if cl >= 0.8 {
        "challenge opposing claims directly and surface failure modes"
    } else if cl >= 0.6 {
        "press objections but concede points backed by stronger evidence"
    } else if cl >= 0.4 {
        "weigh both positions evenly and propose discriminating tests"
    } else if cl >= 0.2 {
        "support the leading claims, adding caveats that still need checking"
    } else {
        "consolidate agreements and state the strongest shared justification"
    }
}

/// A draft argument as produced by an agent, before scoring.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentDraft {
    pub claim: String,
    pub justification: String,
    pub span_ids: Vec<String>,
}

/// An agent's full reply for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentResponse {
    /// Belief over the shared outcome space; validated and smoothed by the
    /// moderator before use.
    pub probs: Vec<f64>,
    pub arguments: Vec<ArgumentDraft>,
    /// Span pool for this round; every cited id must resolve here.
    pub spans: Vec<EvidenceSpan>,
    pub token_cost: u64,
    /// Free-text plan/recommendation passthrough; never interpreted.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub recommendations: String,
}

pub trait AgentBackend {
    fn id(&self) -> &str;
    fn respond(&self, anchor: &AgentAnchor) -> Result<AgentResponse>;
}

/// Scores for one argument from one judge, before aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JudgeSubScores {
    pub evidence: f64,
    pub logic: f64,
    pub relevance: f64,
}

pub trait JudgeBackend {
    fn id(&self) -> &str;
    fn score(&self, request: &WireJudgeRequest) -> Result<JudgeSubScores>;
}

/// Stable per-debate pseudonyms: agents in sorted-id order become
/// "agent-1".."agent-m". Judges only ever see these.
pub fn mask_agent_ids<S: AsRef<str>>(agent_ids: &[S]) -> BTreeMap<String, String> {
    let mut sorted: Vec<&str> = agent_ids.iter().map(|s| s.as_ref()).collect();
    sorted.sort_unstable();
    sorted
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id.to_string(), format!("agent-{}", i + 1)))
        .collect()
}

// ---------------------------------------------------------------------------
// Wire protocol (HTTP/JSON)
// ---------------------------------------------------------------------------

/// Agent request body. Field set and names are the protocol contract.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireAgentRequest {
    pub round: u32,
    pub cl: f64,
    pub tau_q: f64,
    pub tau_crit: f64,
    pub outcome_labels: Vec<String>,
    pub admitted_history: Vec<AdmittedRoundView>,
    pub budget_hint: u64,
}

impl WireAgentRequest {
    pub fn from_anchor(anchor: &AgentAnchor) -> Self {
        Self {
            round: anchor.round,
            cl: anchor.cl,
            tau_q: anchor.tau_q,
            tau_crit: anchor.tau_crit,
            outcome_labels: anchor.space.labels.clone(),
            admitted_history: anchor.admitted_history.clone(),
            budget_hint: anchor.budget_hint,
        }
    }
}

/// Agent response body; `AgentResponse` doubles as the wire shape.
pub type WireAgentResponse = AgentResponse;

/// Judge request body. `masked_agent` is the pseudonym, never the agent id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireJudgeRequest {
    pub argument_text: String,
    pub span_texts: Vec<String>,
    pub masked_agent: String,
}

/// Judge response body.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WireJudgeResponse {
    pub evidence: f64,
    pub logic: f64,
    pub relevance: f64,
}
