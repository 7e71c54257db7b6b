//! Simulated agents and judges with fully seeded randomness.
//!
//! A sim agent holds an initial belief and, from round two on, takes a
//! gated-averaging step toward the judged mixture the moderator shares:
//! `p' = (1 - beta_eff) p + beta_eff mixture + noise`, where by default
//! `beta_eff = beta * (1 - cl)` — a hot debate (high CL) keeps agents
//! entrenched, a consolidating one lets them converge. Arguments cite spans
//! from a configured pool; at high CL a configurable share of citations
//! drifts off-target, at low CL agents consolidate onto on-target evidence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use serde::{Deserialize, Serialize};

use crate::agents::{
    embed::{OFF_TARGET, ON_TARGET},
    AgentAnchor, AgentBackend, AgentResponse, ArgumentDraft, JudgeBackend, JudgeSubScores,
    WireJudgeRequest,
};
use crate::belief::EvidenceSpan;
use crate::error::{Error, Result};

fn seeded_rng(parts: &[&[u8]]) -> ChaCha8Rng {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimAgentConfig {
    pub id: String,
    pub seed: u64,
    /// Belief emitted at round 1 (renormalized by the moderator if needed).
    pub initial_probs: Vec<f64>,
    /// Attraction strength toward the shared mixture.
    pub beta: f64,
    /// L1 cap on the zero-mean belief noise; 0 disables noise.
    pub noise_sigma: f64,
    /// true: `beta_eff = beta * (1 - cl)` (dial-coupled); false: constant
    /// contraction `beta_eff = beta` regardless of the dial.
    pub cl_coupled: bool,
    /// Center of the quality judges will perceive for this agent.
    pub true_argument_quality: f64,
    pub args_per_round: usize,
    pub citations_per_arg: usize,
    /// Evidence the agent can cite; `source` tags drive planted embeddings.
    pub span_pool: Vec<EvidenceSpan>,
    /// Probability scale for off-target citations at full contentiousness:
    /// each citation goes off-target with probability `cl * off_target_bias`.
    pub off_target_bias: f64,
    /// Per-round token cost is uniform in `[cost_lo, cost_hi]`.
    pub cost_lo: u64,
    pub cost_hi: u64,
}

impl SimAgentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Config("sim agent id must be nonempty".into()));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Config(format!("beta must be in [0,1], got {}", self.beta)));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise_sigma must be nonnegative".into()));
        }
        if !(0.0..=1.0).contains(&self.true_argument_quality) {
            return Err(Error::Config("true_argument_quality must be in [0,1]".into()));
        }
        if self.args_per_round == 0 || self.citations_per_arg == 0 {
            return Err(Error::Config("sim agents must produce at least one argument and citation".into()));
        }
        if self.span_pool.is_empty() {
            return Err(Error::Config("sim agent span pool must be nonempty".into()));
        }
        if !(0.0..=1.0).contains(&self.off_target_bias) {
            return Err(Error::Config("off_target_bias must be in [0,1]".into()));
        }
        if self.cost_lo == 0 || self.cost_hi < self.cost_lo {
            return Err(Error::Config(
                "token costs need 1 <= cost_lo <= cost_hi (positive costs bound the debate by budget)".into(),
            ));
        }
        Ok(())
    }

    /// A reasonable default agent around an initial belief and a shared pool.
    pub fn with_defaults(id: &str, seed: u64, initial_probs: Vec<f64>, span_pool: Vec<EvidenceSpan>) -> Self {
        Self {
            id: id.into(),
            seed,
            initial_probs,
            beta: 0.3,
            noise_sigma: 0.0,
            cl_coupled: true,
            true_argument_quality: 0.93,
            args_per_round: 2,
            citations_per_arg: 3,
            span_pool,
            off_target_bias: 0.5,
            cost_lo: 120,
            cost_hi: 280,
        }
    }
}

/// A shared default evidence pool: four on-target spans and two off-target
/// distractors, so overlap can rise as agents consolidate.
pub fn default_span_pool(topic: &str) -> Vec<EvidenceSpan> {
    let mut pool = Vec::new();
    for i in 1..=4 {
        pool.push(EvidenceSpan {
            id: format!("{topic}-ev{i}"),
            text: format!("observation {i} supporting the {topic} finding"),
            source: ON_TARGET.into(),
        });
    }
    for i in 1..=2 {
        pool.push(EvidenceSpan {
            id: format!("{topic}-alt{i}"),
            text: format!("tangential report {i} about {topic}"),
            source: OFF_TARGET.into(),
        });
    }
    pool
}

pub struct SimAgent {
    cfg: SimAgentConfig,
}

impl SimAgent {
    pub fn new(cfg: SimAgentConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn config(&self) -> &SimAgentConfig {
        &self.cfg
    }

    fn belief_for(&self, anchor: &AgentAnchor, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
        let n = anchor.space.size();
        if self.cfg.initial_probs.len() != n {
            return Err(Error::Config(format!(
                "agent '{}' initial belief has {} entries for a {}-label space",
                self.cfg.id,
                self.cfg.initial_probs.len(),
                n
            )));
        }
        let own_prev = anchor.previous_beliefs.get(&self.cfg.id);
        let mut p = match (own_prev, anchor.shared_mixture.as_ref()) {
            (Some(prev), Some(mixture)) => {
                let beta_eff = if self.cfg.cl_coupled {
                    self.cfg.beta * (1.0 - anchor.cl)
                } else {
                    self.cfg.beta
                };
                prev.iter()
                    .zip(mixture)
                    .map(|(o, m)| (1.0 - beta_eff) * o + beta_eff * m)
                    .collect::<Vec<f64>>()
            }
            _ => self.cfg.initial_probs.clone(),
        };
        if self.cfg.noise_sigma > 0.0 {
            // Zero-mean noise with a seeded L1 budget, projected back to the
            // simplex by clamping and renormalizing.
            let mut xi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = xi.iter().sum::<f64>() / n as f64;
            for x in xi.iter_mut() {
                *x -= mean;
            }
            let l1: f64 = xi.iter().map(|x| x.abs()).sum();
            if l1 > 0.0 {
                let scale = rng.random_range(0.0..=1.0) * self.cfg.noise_sigma / l1;
                for (pi, x) in p.iter_mut().zip(&xi) {
                    *pi = (*pi + scale * x).max(1e-12);
                }
            }
        }
        let sum: f64 = p.iter().sum();
        if sum <= 0.0 {
            return Err(Error::Config(format!("agent '{}' produced an empty belief", self.cfg.id)));
        }
        for pi in p.iter_mut() {
            *pi /= sum;
        }
        Ok(p)
    }

    fn pick_spans(&self, anchor: &AgentAnchor, rng: &mut ChaCha8Rng) -> Vec<String> {
        let on: Vec<&EvidenceSpan> =
            self.cfg.span_pool.iter().filter(|s| s.source != OFF_TARGET).collect();
        let off: Vec<&EvidenceSpan> =
            self.cfg.span_pool.iter().filter(|s| s.source == OFF_TARGET).collect();
        let p_off = (anchor.cl * self.cfg.off_target_bias).clamp(0.0, 1.0);
        let mut ids = std::collections::BTreeSet::new();
        for _ in 0..self.cfg.citations_per_arg {
            let go_off = !off.is_empty() && rng.random_range(0.0..1.0) < p_off;
            let pool = if go_off || on.is_empty() { &off } else { &on };
            let pick = pool[rng.random_range(0..pool.len())];
            ids.insert(pick.id.clone());
        }
        ids.into_iter().collect()
    }
}

impl AgentBackend for SimAgent {
    fn id(&self) -> &str {
        &self.cfg.id
    }

    fn respond(&self, anchor: &AgentAnchor) -> Result<AgentResponse> {
        let mut rng = seeded_rng(&[
            &self.cfg.seed.to_le_bytes(),
            self.cfg.id.as_bytes(),
            &anchor.round.to_le_bytes(),
        ]);
        let probs = self.belief_for(anchor, &mut rng)?;
        let top = probs
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap_or(std::cmp::Ordering::Equal))
            .map(|(i, _)| anchor.space.labels[i].clone())
            .unwrap_or_default();

        let mut arguments = Vec::new();
        let mut cited = std::collections::BTreeSet::new();
        for i in 0..self.cfg.args_per_round {
            let span_ids = self.pick_spans(anchor, &mut rng);
            cited.extend(span_ids.iter().cloned());
            arguments.push(ArgumentDraft {
                claim: format!("{}: round {} case {} favors {}", self.cfg.id, anchor.round, i + 1, top),
                justification: format!(
                    "grounded in spans [{}] under stance '{}'",
                    span_ids.join(", "),
                    anchor.stance
                ),
                span_ids,
            });
        }
        let spans: Vec<EvidenceSpan> = self
            .cfg
            .span_pool
            .iter()
            .filter(|s| cited.contains(&s.id))
            .cloned()
            .collect();
        let token_cost = rng.random_range(self.cfg.cost_lo..=self.cfg.cost_hi);
        Ok(AgentResponse { probs, arguments, spans, token_cost, recommendations: String::new() })
    }
}

/// Deterministic mock judge: scores are the configured per-pseudonym quality
/// plus content-seeded noise, clipped to [0, 1]. Two identical requests get
/// identical scores, so replays reproduce trajectories exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimJudgeConfig {
    pub id: String,
    pub seed: u64,
    /// Half-width of the uniform score noise.
    pub noise: f64,
    /// Perceived quality per masked pseudonym ("agent-1", ...).
    pub quality_by_masked: std::collections::BTreeMap<String, f64>,
    /// Fallback for pseudonyms not in the map.
    pub default_quality: f64,
}

impl SimJudgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Config("sim judge id must be nonempty".into()));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::Config("judge noise must be in [0, 0.5]".into()));
        }
        for (k, q) in &self.quality_by_masked {
            if !(0.0..=1.0).contains(q) {
                return Err(Error::Config(format!("quality for '{k}' must be in [0,1]")));
            }
        }
        if !(0.0..=1.0).contains(&self.default_quality) {
            return Err(Error::Config("default_quality must be in [0,1]".into()));
        }
        Ok(())
    }
}

pub struct SimJudge {
    cfg: SimJudgeConfig,
}

impl SimJudge {
    pub fn new(cfg: SimJudgeConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }
}

impl JudgeBackend for SimJudge {
    fn id(&self) -> &str {
        &self.cfg.id
    }

    fn score(&self, request: &WireJudgeRequest) -> Result<JudgeSubScores> {
        let base = self
            .cfg
            .quality_by_masked
            .get(&request.masked_agent)
            .copied()
            .unwrap_or(self.cfg.default_quality);
        let joined = request.span_texts.join("\n");
        let mut rng = seeded_rng(&[
            &self.cfg.seed.to_le_bytes(),
            self.cfg.id.as_bytes(),
            request.masked_agent.as_bytes(),
            request.argument_text.as_bytes(),
            joined.as_bytes(),
        ]);
        let mut draw = |_axis: &str| {
            let jitter = if self.cfg.noise > 0.0 {
                rng.random_range(-self.cfg.noise..=self.cfg.noise)
            } else {
                0.0
            };
            (base + jitter).clamp(0.0, 1.0)
        };
        Ok(JudgeSubScores {
            evidence: draw("evidence"),
            logic: draw("logic"),
            relevance: draw("relevance"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::{OutcomeSpace, SpaceKind};
    use approx::assert_abs_diff_eq;
    use std::collections::BTreeMap;
    use std::sync::Arc;

    fn space() -> Arc<OutcomeSpace> {
        Arc::new(
            OutcomeSpace::new(
                vec!["a".into(), "b".into(), "c".into(), "d".into()],
                SpaceKind::Categorical,
            )
            .unwrap(),
        )
    }

    fn anchor(round: u32, cl: f64, prev: Option<(&str, Vec<f64>)>, mixture: Option<Vec<f64>>) -> AgentAnchor {
        let mut previous_beliefs = BTreeMap::new();
        if let Some((id, b)) = prev {
            previous_beliefs.insert(id.to_string(), b);
        }
        AgentAnchor {
            round,
            cl,
            tau_q: 0.5,
            tau_crit: 0.3,
            stance: crate::agents::stance_band(cl).to_string(),
            space: space(),
            admitted_history: vec![],
            previous_beliefs,
            shared_mixture: mixture,
            budget_hint: 10_000,
        }
    }

    fn agent(beta: f64, sigma: f64) -> SimAgent {
        let mut cfg = SimAgentConfig::with_defaults(
            "a1",
            7,
            vec![1.0, 0.0, 0.0, 0.0],
            default_span_pool("topic"),
        );
        cfg.beta = beta;
        cfg.noise_sigma = sigma;
        SimAgent::new(cfg).unwrap()
    }

    #[test]
    fn round_one_emits_the_initial_belief() {
        let a = agent(0.5, 0.0);
        let r = a.respond(&anchor(1, 0.9, None, None)).unwrap();
        assert_eq!(r.probs, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(!r.arguments.is_empty());
        assert!(r.token_cost >= 120 && r.token_cost <= 280);
    }

    #[test]
    fn zero_cl_zero_noise_is_an_exact_half_step() {
        let a = agent(0.5, 0.0);
        let prev = vec![1.0, 0.0, 0.0, 0.0];
        let mixture = vec![0.5, 0.5, 0.0, 0.0];
        let r = a
            .respond(&anchor(2, 0.0, Some(("a1", prev)), Some(mixture)))
            .unwrap();
        assert_abs_diff_eq!(r.probs[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(r.probs[1], 0.25, epsilon = 1e-12);
    }

    #[test]
    fn full_cl_freezes_coupled_agents() {
        let a = agent(0.5, 0.0);
        let prev = vec![1.0, 0.0, 0.0, 0.0];
        let mixture = vec![0.0, 1.0, 0.0, 0.0];
        let r = a
            .respond(&anchor(2, 1.0, Some(("a1", prev.clone())), Some(mixture)))
            .unwrap();
        assert_eq!(r.probs, prev);
    }

    #[test]
    fn responses_are_deterministic_per_round() {
        let a = agent(0.3, 0.05);
        let anc = anchor(2, 0.4, Some(("a1", vec![0.7, 0.1, 0.1, 0.1])), Some(vec![0.25; 4]));
        let r1 = a.respond(&anc).unwrap();
        let r2 = a.respond(&anc).unwrap();
        assert_eq!(r1, r2);
    }

    #[test]
    fn noise_keeps_probs_on_the_simplex() {
        let a = agent(0.3, 0.2);
        let anc = anchor(2, 0.4, Some(("a1", vec![0.7, 0.1, 0.1, 0.1])), Some(vec![0.25; 4]));
        let r = a.respond(&anc).unwrap();
        let sum: f64 = r.probs.iter().sum();
        assert_abs_diff_eq!(sum, 1.0, epsilon = 1e-9);
        assert!(r.probs.iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn low_cl_citations_consolidate_on_target() {
        let a = agent(0.3, 0.0);
        let anc = anchor(5, 0.0, Some(("a1", vec![0.7, 0.1, 0.1, 0.1])), Some(vec![0.25; 4]));
        let r = a.respond(&anc).unwrap();
        for span in &r.spans {
            assert_eq!(span.source, ON_TARGET, "CL=0 must cite only on-target spans");
        }
    }

    #[test]
    fn cited_ids_always_resolve_in_the_returned_pool() {
        let a = agent(0.3, 0.0);
        for round in 1..6 {
            let anc = anchor(round, 0.9, Some(("a1", vec![0.7, 0.1, 0.1, 0.1])), Some(vec![0.25; 4]));
            let r = a.respond(&anc).unwrap();
            let pool: std::collections::BTreeSet<_> = r.spans.iter().map(|s| s.id.clone()).collect();
            for arg in &r.arguments {
                for id in &arg.span_ids {
                    assert!(pool.contains(id), "cited id {id} missing from span pool");
                }
            }
        }
    }

    fn judge(noise: f64) -> SimJudge {
        let mut quality = BTreeMap::new();
        quality.insert("agent-1".to_string(), 0.9);
        quality.insert("agent-2".to_string(), 0.6);
        SimJudge::new(SimJudgeConfig {
            id: "j1".into(),
            seed: 11,
            noise,
            quality_by_masked: quality,
            default_quality: 0.8,
        })
        .unwrap()
    }

    fn jreq(masked: &str, text: &str) -> WireJudgeRequest {
        WireJudgeRequest {
            argument_text: text.into(),
            span_texts: vec!["span text".into()],
            masked_agent: masked.into(),
        }
    }

    #[test]
    fn judge_scores_center_on_configured_quality() {
        let j = judge(0.0);
        let s = j.score(&jreq("agent-1", "claim")).unwrap();
        assert_eq!((s.evidence, s.logic, s.relevance), (0.9, 0.9, 0.9));
        let s2 = j.score(&jreq("agent-2", "claim")).unwrap();
        assert_eq!(s2.evidence, 0.6);
        let s3 = j.score(&jreq("agent-9", "claim")).unwrap();
        assert_eq!(s3.evidence, 0.8);
    }

    #[test]
    fn judge_noise_is_content_deterministic_and_clipped() {
        let j = judge(0.05);
        let a = j.score(&jreq("agent-1", "claim A")).unwrap();
        let b = j.score(&jreq("agent-1", "claim A")).unwrap();
        assert_eq!(a, b);
        let c = j.score(&jreq("agent-1", "claim B")).unwrap();
        assert_ne!(a, c);
        for v in [a.evidence, a.logic, a.relevance] {
            assert!((0.0..=1.0).contains(&v));
            assert!((v - 0.9).abs() <= 0.05 + 1e-12);
        }
    }
}
