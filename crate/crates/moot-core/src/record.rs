//! Durable debate records: everything a round produced, stored so that the
//! full control trajectory can be recomputed from the record alone. Records
//! are append-only — rounds are pushed in order and never rewritten.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

use crate::belief::{EvidenceSpan, OutcomeSpace};
use crate::controller::{DialState, StopReason};
use crate::error::{Error, Result};
use crate::judge::composite;
use crate::signals::SignalSnapshot;

pub const SCHEMA_VERSION: u32 = 1;

/// One agent's raw contribution to a round: validated (and possibly
/// renormalized) belief report *before* smoothing, so replay can rebuild
/// the smoothed state bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentTurn {
    pub agent: String,
    pub probs: Vec<f64>,
    pub token_cost: u64,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub recommendations: String,
}

/// One judge's verdict on one argument, stored with the composite the
/// engine used.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredJudgeScore {
    pub judge: String,
    pub evidence: f64,
    pub logic: f64,
    pub relevance: f64,
    pub composite: f64,
}

/// An argument together with its admission verdict. Rejected arguments are
/// *not* stored: the record holds admitted material only, which is exactly
/// the set every downstream signal was computed from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdmittedArgument {
    pub agent: String,
    pub claim: String,
    pub justification: String,
    pub span_ids: Vec<String>,
    /// Evidence quality after the directional gate.
    pub q_gate: f64,
    /// Raw absolute-cosine quality, kept for diagnostics.
    pub q_raw: f64,
    /// Mean composite critique score across judges.
    pub crit: f64,
    pub judge_scores: Vec<StoredJudgeScore>,
}

/// Everything one round produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundEntry {
    pub round: u32,
    /// Dial settings the round was played under (before end-of-round updates).
    pub dials: DialState,
    pub agents: Vec<AgentTurn>,
    pub admitted: Vec<AdmittedArgument>,
    /// Spans cited by admitted arguments this round, sorted by id.
    pub spans: Vec<EvidenceSpan>,
    /// Reliability scores after this round's update, keyed by agent.
    pub reliability: BTreeMap<String, f64>,
    /// Mixture weights used this round, keyed by agent.
    pub weights: BTreeMap<String, f64>,
    /// Reliability-weighted ensemble mixture over the outcome space.
    pub mixture: Vec<f64>,
    pub signals: SignalSnapshot,
    pub tokens_round: u64,
    /// Cumulative spend including this round.
    pub budget_spent: u64,
    /// Set on the final round only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
}

/// A complete debate: header-level identity plus the per-round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DebateRecord {
    pub schema_version: u32,
    pub space: OutcomeSpace,
    pub agent_ids: Vec<String>,
    pub judge_ids: Vec<String>,
    pub rounds: Vec<RoundEntry>,
    pub stop_reason: StopReason,
    pub stopped_at_round: u32,
    pub budget_spent: u64,
    pub final_mixture: Vec<f64>,
}

impl DebateRecord {
    /// Structural invariants every loaded record must satisfy: contiguous
    /// 1-based rounds, admitted-only content whose spans resolve, composite
    /// scores that really are the axis means, and a coherent footer.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Replay(format!(
                "unsupported schema version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let n = self.space.size();
        if self.rounds.is_empty() {
            // The only debate with no rounds is one whose budget was spent
            // before round one (budget_tokens = 0).
            if self.stop_reason != StopReason::Budget
                || self.stopped_at_round != 0
                || self.budget_spent != 0
            {
                return Err(Error::Replay(
                    "a record with no rounds must be a zero-budget stop".into(),
                ));
            }
            if self.final_mixture.len() != n
                || (self.final_mixture.iter().sum::<f64>() - 1.0).abs() > 1e-6
            {
                return Err(Error::Replay("zero-round record needs the prior mixture".into()));
            }
            return Ok(());
        }
        for (i, round) in self.rounds.iter().enumerate() {
            let expect = (i + 1) as u32;
            if round.round != expect {
                return Err(Error::Replay(format!(
                    "round indices must be contiguous from 1: found {} at position {i}",
                    round.round
                )));
            }
            if round.agents.len() != self.agent_ids.len() {
                return Err(Error::Replay(format!(
                    "round {} has {} agent turns for {} agents",
                    round.round,
                    round.agents.len(),
                    self.agent_ids.len()
                )));
            }
            for turn in &round.agents {
                if !self.agent_ids.contains(&turn.agent) {
                    return Err(Error::Replay(format!(
                        "round {} agent turn from unknown agent {}",
                        round.round, turn.agent
                    )));
                }
                if turn.probs.len() != n {
                    return Err(Error::Replay(format!(
                        "round {} agent {} reported {} probabilities over {n} outcomes",
                        round.round,
                        turn.agent,
                        turn.probs.len()
                    )));
                }
                let sum: f64 = turn.probs.iter().sum();
                if turn.probs.iter().any(|p| !p.is_finite() || *p < 0.0) || (sum - 1.0).abs() > 1e-6 {
                    return Err(Error::Replay(format!(
                        "round {} agent {} stored probabilities are not a distribution",
                        round.round, turn.agent
                    )));
                }
            }
            let mut span_ids: Vec<&str> = round.spans.iter().map(|s| s.id.as_str()).collect();
            let sorted = span_ids.windows(2).all(|w| w[0] < w[1]);
            if !sorted {
                return Err(Error::Replay(format!(
                    "round {} span list must be sorted by id with no duplicates",
                    round.round
                )));
            }
            span_ids.sort_unstable();
            for arg in &round.admitted {
                if !self.agent_ids.contains(&arg.agent) {
                    return Err(Error::Replay(format!(
                        "round {} admitted argument from unknown agent {}",
                        round.round, arg.agent
                    )));
                }
                if arg.judge_scores.len() != self.judge_ids.len() {
                    return Err(Error::Replay(format!(
                        "round {} argument `{}` carries {} judge scores for {} judges",
                        round.round,
                        arg.claim,
                        arg.judge_scores.len(),
                        self.judge_ids.len()
                    )));
                }
                let mut mean = 0.0;
                for score in &arg.judge_scores {
                    let expect = composite(score.evidence, score.logic, score.relevance)?;
                    if (score.composite - expect).abs() > 1e-9 {
                        return Err(Error::Replay(format!(
                            "round {} judge {} composite {} disagrees with axis mean {expect}",
                            round.round, score.judge, score.composite
                        )));
                    }
                    mean += score.composite;
                }
                mean /= arg.judge_scores.len() as f64;
                if (mean - arg.crit).abs() > 1e-9 {
                    return Err(Error::Replay(format!(
                        "round {} argument `{}` stored crit {} disagrees with judge mean {mean}",
                        round.round, arg.claim, arg.crit
                    )));
                }
            }
            if round.mixture.len() != n {
                return Err(Error::Replay(format!(
                    "round {} mixture has wrong arity",
                    round.round
                )));
            }
        }
        let last = self.rounds.last().expect("nonempty");
        if self.stopped_at_round != last.round {
            return Err(Error::Replay(format!(
                "footer says stopped at round {} but the log ends at round {}",
                self.stopped_at_round, last.round
            )));
        }
        match &last.stop_reason {
            Some(r) if *r == self.stop_reason => {}
            other => {
                return Err(Error::Replay(format!(
                    "final round stop reason {other:?} disagrees with footer {:?}",
                    self.stop_reason
                )));
            }
        }
        if self.budget_spent != last.budget_spent {
            return Err(Error::Replay("footer budget disagrees with final round".into()));
        }
        if self.final_mixture != last.mixture {
            return Err(Error::Replay("footer mixture disagrees with final round".into()));
        }
        for (i, round) in self.rounds.iter().enumerate() {
            if i + 1 < self.rounds.len() && round.stop_reason.is_some() {
                return Err(Error::Replay(format!(
                    "round {} carries a stop reason but is not final",
                    round.round
                )));
            }
        }
        Ok(())
    }

    /// Pooled admitted span-id sets per agent, up to and including `round` —
    /// the inputs to the overlap conjunct of the stop rule.
    pub fn admitted_span_sets(&self, round: u32) -> BTreeMap<String, std::collections::BTreeSet<String>> {
        let mut sets: BTreeMap<String, std::collections::BTreeSet<String>> = self
            .agent_ids
            .iter()
            .map(|id| (id.clone(), Default::default()))
            .collect();
        for entry in self.rounds.iter().filter(|r| r.round <= round) {
            for arg in &entry.admitted {
                if let Some(set) = sets.get_mut(&arg.agent) {
                    set.extend(arg.span_ids.iter().cloned());
                }
            }
        }
        sets
    }
}
