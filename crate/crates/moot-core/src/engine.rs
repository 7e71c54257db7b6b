//! The moderator's round loop: anchor delivery, response validation,
//! judging, dual-gate admission, reliability weighting, signal measurement,
//! dial updates, and stopping.
//!
//! A round is played in two phases. The *staging* phase performs every
//! fallible step — backend calls, validation, judging, all signal math —
//! into local state only; any failure aborts the round with the engine
//! untouched, so a debate interrupted by a flaky backend can simply be
//! resumed. The *commit* phase is pure assignment.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use crate::agents::embed::DeterministicEmbedder;
use crate::agents::{
    mask_agent_ids, stance_band, AdmittedRoundView, AgentAnchor, AgentBackend, JudgeBackend,
    WireJudgeRequest,
};
use crate::belief::{mix, smooth, BeliefState, EvidenceSpan, OutcomeSpace};
use crate::controller::{
    should_stop, update_cl, update_gates, AblationSwitches, ControllerConfig, DialState,
    PlateauState, StopInputs, StopReason,
};
use crate::error::{Error, Result};
use crate::judge::{
    aggregate_round, composite, judge_stability_stop, JudgeScore, ReliabilityTracker,
    StabilityPoint,
};
use crate::record::{
    AdmittedArgument, AgentTurn, DebateRecord, RoundEntry, StoredJudgeScore, SCHEMA_VERSION,
};
use crate::scheduler::{reward, SchedulerState};
use crate::signals::{
    ensemble_overlap, evidence_quality, generalized_jsd, information_gain, jsd, logged_metrics,
    unified_distance, SignalSnapshot,
};
use crate::signals::dispersion_kl;

/// Tolerance within which a reported belief that misses unit mass is
/// renormalized instead of rejected.
pub const PROB_SUM_TOLERANCE: f64 = 0.05;

/// Safety cap on rounds for configurations whose token costs cannot bound
/// the debate; hitting it is reported as an error, never as a normal stop.
pub const DEFAULT_MAX_ROUNDS: u32 = 1000;

/// Everything needed to assemble a debate.
pub struct EngineSetup {
    pub space: Arc<OutcomeSpace>,
    pub agents: Vec<Box<dyn AgentBackend>>,
    pub judges: Vec<Box<dyn JudgeBackend>>,
    pub embedder: DeterministicEmbedder,
    pub controller: ControllerConfig,
    pub ablations: AblationSwitches,
    pub initial_dials: DialState,
    /// None runs the fixed schedule; a no-op-only scheduler must reproduce
    /// it byte for byte.
    pub scheduler: Option<SchedulerState>,
    pub max_rounds: u32,
}

/// One agent's staged, validated contribution while a round is in flight.
struct StagedTurn {
    agent: String,
    /// Validated (possibly renormalized) reported belief, pre-smoothing.
    raw_probs: Vec<f64>,
    smoothed: BeliefState,
    token_cost: u64,
    recommendations: String,
    arguments: Vec<StagedArgument>,
}

struct StagedArgument {
    claim: String,
    justification: String,
    span_ids: Vec<String>,
    q_gate: f64,
    q_raw: f64,
    crit: f64,
    scores: Vec<JudgeScore>,
}

pub struct DebateEngine {
    space: Arc<OutcomeSpace>,
    agents: Vec<Box<dyn AgentBackend>>,
    judges: Vec<Box<dyn JudgeBackend>>,
    embedder: DeterministicEmbedder,
    cfg: ControllerConfig,
    ablations: AblationSwitches,
    max_rounds: u32,
    masked: BTreeMap<String, String>,

    dials: DialState,
    plateau: PlateauState,
    tracker: ReliabilityTracker,
    scheduler: Option<SchedulerState>,
    /// Arm pulled at the end of an earlier round, awaiting its reward.
    pending_pull: Option<usize>,

    span_registry: BTreeMap<String, EvidenceSpan>,
    admitted_sets: BTreeMap<String, BTreeSet<String>>,
    admitted_history: Vec<AdmittedRoundView>,
    prev_beliefs: BTreeMap<String, Vec<f64>>,
    prev_mixture: Option<BeliefState>,
    prev_info_gain: f64,
    prev_dispersion: f64,

    budget_spent: u64,
    next_round: u32,
    rounds: Vec<RoundEntry>,
    stopped: Option<StopReason>,
    /// Human-readable validation notes (e.g. renormalized beliefs); never
    /// part of the transcript.
    pub warnings: Vec<String>,
}

impl DebateEngine {
    pub fn new(setup: EngineSetup) -> Result<Self> {
        let EngineSetup {
            space,
            mut agents,
            mut judges,
            embedder,
            controller,
            ablations,
            mut initial_dials,
            scheduler,
            max_rounds,
        } = setup;
        controller.validate()?;
        ablations.validate()?;
        initial_dials.validate()?;
        if space.size() < 2 {
            return Err(Error::Config("debates need at least two outcomes".into()));
        }
        if agents.len() < 2 {
            return Err(Error::Config(format!(
                "disagreement is undefined for {} agent(s); at least two are required",
                agents.len()
            )));
        }
        if judges.is_empty() {
            return Err(Error::Config("at least one judge is required".into()));
        }
        if max_rounds == 0 {
            return Err(Error::Config("max_rounds must be positive".into()));
        }
        // Deterministic processing order regardless of construction order.
        agents.sort_by(|a, b| a.id().cmp(b.id()));
        judges.sort_by(|a, b| a.id().cmp(b.id()));
        let agent_ids: Vec<String> = agents.iter().map(|a| a.id().to_string()).collect();
        let judge_ids: Vec<String> = judges.iter().map(|j| j.id().to_string()).collect();
        if agent_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("agent ids must be distinct".into()));
        }
        if judge_ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("judge ids must be distinct".into()));
        }
        if let Some(cl) = ablations.scheduled_cl(1) {
            initial_dials.cl = cl;
        }
        let tracker = ReliabilityTracker::new(
            agent_ids.clone(),
            controller.lambda_ema,
            controller.epsilon_weight,
        )?;
        let masked = mask_agent_ids(&agent_ids);
        let admitted_sets = agent_ids.iter().map(|id| (id.clone(), BTreeSet::new())).collect();
        Ok(Self {
            space,
            agents,
            judges,
            embedder,
            plateau: PlateauState::new(controller.window_w),
            cfg: controller,
            ablations,
            max_rounds,
            masked,
            dials: initial_dials,
            tracker,
            scheduler,
            pending_pull: None,
            span_registry: BTreeMap::new(),
            admitted_sets,
            admitted_history: Vec::new(),
            prev_beliefs: BTreeMap::new(),
            prev_mixture: None,
            prev_info_gain: 0.0,
            prev_dispersion: 0.0,
            budget_spent: 0,
            next_round: 1,
            rounds: Vec::new(),
            stopped: None,
            warnings: Vec::new(),
        })
    }

    pub fn stop_reason(&self) -> Option<StopReason> {
        self.stopped
    }

    pub fn rounds(&self) -> &[RoundEntry] {
        &self.rounds
    }

    pub fn dials(&self) -> &DialState {
        &self.dials
    }

    pub fn budget_spent(&self) -> u64 {
        self.budget_spent
    }

    pub fn agent_ids(&self) -> Vec<String> {
        self.agents.iter().map(|a| a.id().to_string()).collect()
    }

    pub fn judge_ids(&self) -> Vec<String> {
        self.judges.iter().map(|j| j.id().to_string()).collect()
    }

    fn uniform_prior(&self) -> BeliefState {
        BeliefState::uniform(self.space.clone())
    }

    /// Validate one reported belief: correct arity, finite nonnegative
    /// entries, and unit mass within [`PROB_SUM_TOLERANCE`] (renormalized).
    fn validate_probs(&mut self, agent: &str, round: u32, probs: &[f64]) -> Result<Vec<f64>> {
        if probs.len() != self.space.size() {
            return Err(Error::Backend {
                backend: agent.into(),
                reason: format!(
                    "reported {} probabilities over a {}-label space",
                    probs.len(),
                    self.space.size()
                ),
            });
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Backend {
                backend: agent.into(),
                reason: "belief entries must be finite and nonnegative".into(),
            });
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > PROB_SUM_TOLERANCE || sum <= 0.0 {
            return Err(Error::Backend {
                backend: agent.into(),
                reason: format!(
                    "belief mass {sum} outside 1 +/- {PROB_SUM_TOLERANCE}; not normalizable"
                ),
            });
        }
        if (sum - 1.0).abs() > crate::belief::SUM_TOLERANCE {
            self.warnings.push(format!(
                "round {round}: agent '{agent}' belief summed to {sum:.6}; renormalized"
            ));
        }
        Ok(probs.iter().map(|p| p / sum).collect())
    }

    /// Play one round. On success, everything is committed and the returned
    /// value is the (possibly new) stop state; on error, the engine is
    /// exactly as it was, so the call can be retried.
    pub fn play_round(&mut self) -> Result<Option<StopReason>> {
        if self.stopped.is_some() {
            return Ok(self.stopped);
        }
        let round = self.next_round;
        let n = self.space.size();

        // ----- staging: agent responses --------------------------------
        let anchor = AgentAnchor {
            round,
            cl: self.dials.cl,
            tau_q: self.dials.tau_q,
            tau_crit: self.dials.tau_crit,
            stance: stance_band(self.dials.cl).to_string(),
            space: self.space.clone(),
            admitted_history: self.admitted_history.clone(),
            previous_beliefs: self.prev_beliefs.clone(),
            shared_mixture: self.prev_mixture.as_ref().map(|m| m.probs().to_vec()),
            budget_hint: self.cfg.budget_tokens.saturating_sub(self.budget_spent),
        };
        let mut responses = Vec::with_capacity(self.agents.len());
        for agent in &self.agents {
            let resp = agent.respond(&anchor)?;
            responses.push((agent.id().to_string(), resp));
        }

        // ----- staging: validation and span resolution ------------------
        // Spans visible this round: everything registered so far plus the
        // new pools, first writer wins on id collisions.
        let mut staged_spans = self.span_registry.clone();
        for (_, resp) in &responses {
            for span in &resp.spans {
                staged_spans.entry(span.id.clone()).or_insert_with(|| span.clone());
            }
        }
        let mut turns: Vec<StagedTurn> = Vec::with_capacity(responses.len());
        for (agent, resp) in &responses {
            let raw_probs = self.validate_probs(agent, round, &resp.probs)?;
            let belief = BeliefState::new(self.space.clone(), raw_probs.clone())
                .and_then(|b| smooth(&b, self.cfg.delta_smooth))
                .map_err(|e| Error::Backend { backend: agent.clone(), reason: e.to_string() })?;
            for arg in &resp.arguments {
                for id in &arg.span_ids {
                    if !staged_spans.contains_key(id) {
                        return Err(Error::Backend {
                            backend: agent.clone(),
                            reason: format!("argument cites unresolvable span id '{id}'"),
                        });
                    }
                }
            }
            turns.push(StagedTurn {
                agent: agent.clone(),
                raw_probs,
                smoothed: belief,
                token_cost: resp.token_cost,
                recommendations: resp.recommendations.clone(),
                arguments: resp
                    .arguments
                    .iter()
                    .map(|a| StagedArgument {
                        claim: a.claim.clone(),
                        justification: a.justification.clone(),
                        span_ids: a.span_ids.clone(),
                        q_gate: 0.0,
                        q_raw: 0.0,
                        crit: 0.0,
                        scores: Vec::new(),
                    })
                    .collect(),
            });
        }

        // ----- staging: scoring (evidence quality + judge panel) ---------
        let theta = self.embedder.theta().clone();
        for turn in turns.iter_mut() {
            let masked = self.masked[&turn.agent].clone();
            for arg in turn.arguments.iter_mut() {
                if !arg.span_ids.is_empty() {
                    let spans: Vec<EvidenceSpan> =
                        arg.span_ids.iter().map(|id| staged_spans[id].clone()).collect();
                    let q = evidence_quality(&spans, &self.embedder, &theta)?;
                    arg.q_gate = q.gate;
                    arg.q_raw = q.raw;
                }
                let request = WireJudgeRequest {
                    argument_text: format!("{}\n\n{}", arg.claim, arg.justification),
                    span_texts: arg.span_ids.iter().map(|id| staged_spans[id].text.clone()).collect(),
                    masked_agent: masked.clone(),
                };
                let mut scores = Vec::with_capacity(self.judges.len());
                for judge in &self.judges {
                    let s = judge.score(&request)?;
                    let score = JudgeScore::new(judge.id(), s.evidence, s.logic, s.relevance)
                        .map_err(|e| Error::Backend {
                            backend: judge.id().into(),
                            reason: e.to_string(),
                        })?;
                    scores.push(score);
                }
                arg.crit = scores.iter().map(JudgeScore::composite).sum::<f64>()
                    / scores.len() as f64;
                arg.scores = scores;
            }
        }

        // ----- staging: dual-gate admission ------------------------------
        let no_q_gate = self.ablations.no_q_gate;
        let mut admitted_records: Vec<AdmittedArgument> = Vec::new();
        let mut admitted_args: Vec<crate::belief::Argument> = Vec::new();
        let mut admitted_scores: Vec<Vec<JudgeScore>> = Vec::new();
        let mut admitted_ids_round: BTreeSet<String> = BTreeSet::new();
        let mut sets_after = self.admitted_sets.clone();
        for turn in &turns {
            for arg in &turn.arguments {
                let q_pass = no_q_gate || arg.q_gate >= self.dials.tau_q;
                let crit_pass = arg.crit >= self.dials.tau_crit;
                if !(q_pass && crit_pass) {
                    continue; // rejected arguments are discarded, not stored
                }
                admitted_records.push(AdmittedArgument {
                    agent: turn.agent.clone(),
                    claim: arg.claim.clone(),
                    justification: arg.justification.clone(),
                    span_ids: arg.span_ids.clone(),
                    q_gate: arg.q_gate,
                    q_raw: arg.q_raw,
                    crit: arg.crit,
                    judge_scores: arg
                        .scores
                        .iter()
                        .map(|s| StoredJudgeScore {
                            judge: s.judge.clone(),
                            evidence: s.evidence,
                            logic: s.logic,
                            relevance: s.relevance,
                            composite: s.composite(),
                        })
                        .collect(),
                });
                admitted_args.push(crate::belief::Argument {
                    agent: turn.agent.clone(),
                    claim: arg.claim.clone(),
                    justification: arg.justification.clone(),
                    span_ids: arg.span_ids.clone(),
                    q_score: Some(arg.q_gate),
                    crit_score: Some(arg.crit),
                    admitted: true,
                });
                admitted_scores.push(arg.scores.clone());
                admitted_ids_round.extend(arg.span_ids.iter().cloned());
                sets_after
                    .get_mut(&turn.agent)
                    .expect("sets keyed by agent id")
                    .extend(arg.span_ids.iter().cloned());
            }
        }

        // ----- staging: round CRIT, reliability, weights -----------------
        let summary = if admitted_args.is_empty() {
            None
        } else {
            Some(aggregate_round(&admitted_scores, &admitted_args)?)
        };
        let (round_crit, judge_variance, per_agent_crit) = match &summary {
            Some(s) => (s.round_mean, s.judge_variance, s.per_agent.clone()),
            None => (0.0, 0.0, BTreeMap::new()),
        };
        let mut tracker_after = self.tracker.clone();
        tracker_after.update(&per_agent_crit)?;
        tracker_after.record_stability(StabilityPoint { round_mean: round_crit, judge_variance });
        let reliability: BTreeMap<String, f64> = turns
            .iter()
            .map(|t| (t.agent.clone(), tracker_after.gamma(&t.agent).expect("tracked agent")))
            .collect();
        let weights: BTreeMap<String, f64> = if self.ablations.uniform_weights {
            turns.iter().map(|t| (t.agent.clone(), 1.0 / turns.len() as f64)).collect()
        } else {
            tracker_after.weights()
        };

        // ----- staging: signals ------------------------------------------
        let beliefs: Vec<BeliefState> = turns.iter().map(|t| t.smoothed.clone()).collect();
        let weight_vec: Vec<f64> = turns.iter().map(|t| weights[&t.agent]).collect();
        let mixture = mix(&beliefs, &weight_vec)?;

        let (q_round_gate, q_round_raw) = if admitted_ids_round.is_empty() {
            (0.0, 0.0) // vacuous evidence must not satisfy the quality conjunct
        } else {
            let spans: Vec<EvidenceSpan> =
                admitted_ids_round.iter().map(|id| staged_spans[id].clone()).collect();
            let q = evidence_quality(&spans, &self.embedder, &theta)?;
            (q.gate, q.raw)
        };
        let set_vec: Vec<BTreeSet<String>> =
            turns.iter().map(|t| sets_after[&t.agent].clone()).collect();
        let (overlap, overlap_vacuous) = ensemble_overlap(&set_vec)?;

        let js = if beliefs.len() == 2 {
            jsd(&beliefs[0], &beliefs[1])?
        } else {
            let u = vec![1.0 / beliefs.len() as f64; beliefs.len()];
            (generalized_jsd(&beliefs, &u)? / (beliefs.len() as f64).log2()).clamp(0.0, 1.0)
        };
        let prev_mixture = self.prev_mixture.clone().unwrap_or_else(|| self.uniform_prior());
        let info_gain = information_gain(&prev_mixture, &mixture)?;
        let prev_entropy_norm = prev_mixture.entropy_bits() / (n as f64).log2();
        let dispersion = dispersion_kl(&beliefs)?;
        let unified = unified_distance(&beliefs)?;
        let logged = logged_metrics(&beliefs, &weight_vec)?;

        let mut plateau_after = self.plateau.clone();
        plateau_after.observe(info_gain, prev_entropy_norm, js);
        let (ratio_i, ratio_d) = plateau_after.ratios(&self.cfg);
        let (flag_i, flag_d) = plateau_after.apply_flags(ratio_i, ratio_d, &self.cfg);
        plateau_after.note_round_crit(round_crit, &self.cfg);

        let tokens_round: u64 = turns.iter().map(|t| t.token_cost).sum();
        let budget_after = self.budget_spent.saturating_add(tokens_round);
        let judge_stable = self.cfg.judge_stability_enabled
            && judge_stability_stop(&tracker_after, self.cfg.eps_var, self.cfg.delta_mean);

        // Stop evaluation uses the dials the round was played under.
        let stop = should_stop(
            &plateau_after,
            &self.dials,
            &StopInputs {
                q: q_round_gate,
                overlap,
                budget_spent: budget_after,
                judge_stable,
                no_q_gate,
            },
            &self.cfg,
        );

        let signals = SignalSnapshot {
            q: q_round_gate,
            q_raw: q_round_raw,
            js,
            overlap,
            overlap_vacuous,
            crit_round: round_crit,
            info_gain,
            dispersion_kl: dispersion,
            unified_distance: unified,
            ratio_i,
            ratio_d,
            flag_i,
            flag_d,
            logged_mi: logged.mi,
            logged_ce: logged.ce,
        };
        let mut round_spans: Vec<EvidenceSpan> =
            admitted_ids_round.iter().map(|id| staged_spans[id].clone()).collect();
        round_spans.sort_by(|a, b| a.id.cmp(&b.id));
        let entry = RoundEntry {
            round,
            dials: self.dials,
            agents: turns
                .iter()
                .map(|t| AgentTurn {
                    agent: t.agent.clone(),
                    probs: t.raw_probs.clone(),
                    token_cost: t.token_cost,
                    recommendations: t.recommendations.clone(),
                })
                .collect(),
            admitted: admitted_records,
            spans: round_spans,
            reliability,
            weights,
            mixture: mixture.probs().to_vec(),
            signals,
            tokens_round,
            budget_spent: budget_after,
            stop_reason: stop,
        };

        // ----- commit -----------------------------------------------------
        self.span_registry = staged_spans;
        self.admitted_sets = sets_after;
        self.admitted_history.push(AdmittedRoundView {
            round,
            claims: entry.admitted.iter().map(|a| a.claim.clone()).collect(),
        });
        self.prev_beliefs =
            turns.iter().map(|t| (t.agent.clone(), t.smoothed.probs().to_vec())).collect();
        self.tracker = tracker_after;
        self.plateau = plateau_after;
        self.budget_spent = budget_after;
        self.rounds.push(entry);
        self.next_round += 1;
        self.stopped = stop;

        if stop.is_none() {
            // Settle the scheduler first so end-of-round dial updates use
            // the step sizes the newly pulled arm dictates.
            self.settle_scheduler(info_gain, dispersion, tokens_round);
            let (alpha_i, alpha_d, gamma_gate) = match &self.scheduler {
                Some(s) => (s.alpha, s.alpha, s.gamma),
                None => (self.cfg.alpha_i, self.cfg.alpha_d, self.cfg.gamma_gate),
            };
            let mut step_cfg = self.cfg.clone();
            step_cfg.alpha_i = alpha_i;
            step_cfg.alpha_d = alpha_d;
            step_cfg.gamma_gate = gamma_gate;
            let new_cl = match self.ablations.scheduled_cl(round + 1) {
                Some(cl) => cl,
                None => update_cl(&self.dials, flag_i, flag_d, &step_cfg),
            };
            // Gate tightening applies regardless of an imposed CL schedule.
            let (tau_q, tau_crit) = update_gates(&self.dials, flag_i, &step_cfg);
            self.dials.cl = new_cl;
            self.dials.tau_q = tau_q;
            self.dials.tau_crit = tau_crit;
        }
        self.prev_mixture = Some(mixture);
        self.prev_info_gain = info_gain;
        self.prev_dispersion = dispersion;
        Ok(stop)
    }

    /// Reward the arm pulled at the end of the previous round (this round's
    /// signals are its outcome), then pull the next one. An empty feasible
    /// set halts scheduling — the debate itself continues toward its own
    /// budget stop.
    fn settle_scheduler(&mut self, info_gain: f64, dispersion: f64, tokens_round: u64) {
        let Some(scheduler) = self.scheduler.as_mut() else {
            return;
        };
        if let Some(k) = self.pending_pull.take() {
            let r = reward(
                scheduler.reward_cfg(),
                self.prev_info_gain,
                info_gain,
                self.prev_dispersion,
                dispersion,
                tokens_round as f64,
            );
            scheduler
                .step_saturating(k, r, tokens_round as f64)
                .expect("reward pre-clipped and cost saturating");
        }
        scheduler.budget_remaining =
            self.cfg.budget_tokens.saturating_sub(self.budget_spent) as f64;
        if let Some(k) = scheduler.select_action() {
            scheduler.apply_action(k);
            self.pending_pull = Some(k);
        }
    }

    /// Run to completion and return the sealed record.
    pub fn run(&mut self) -> Result<DebateRecord> {
        // Degenerate budget: spent (0) already meets a zero budget.
        if self.rounds.is_empty() && self.budget_spent >= self.cfg.budget_tokens {
            self.stopped = Some(StopReason::Budget);
        }
        while self.stopped.is_none() {
            if self.rounds.len() as u32 >= self.max_rounds {
                return Err(Error::Budget(format!(
                    "no stop after {} rounds; configuration cannot bound the debate",
                    self.max_rounds
                )));
            }
            self.play_round()?;
        }
        self.record()
    }

    /// The debate record as of now; only a stopped debate has one.
    pub fn record(&self) -> Result<DebateRecord> {
        let stop_reason = self
            .stopped
            .ok_or_else(|| Error::Config("debate still running; no record to seal".into()))?;
        let final_mixture = match self.prev_mixture.as_ref() {
            Some(m) => m.probs().to_vec(),
            None => self.uniform_prior().probs().to_vec(),
        };
        let record = DebateRecord {
            schema_version: SCHEMA_VERSION,
            space: (*self.space).clone(),
            agent_ids: self.agent_ids(),
            judge_ids: self.judge_ids(),
            rounds: self.rounds.clone(),
            stop_reason,
            stopped_at_round: self.rounds.last().map(|r| r.round).unwrap_or(0),
            budget_spent: self.budget_spent,
            final_mixture,
        };
        record.validate()?;
        Ok(record)
    }
}

/// Composite helper shared with validation: mean of the three axes.
pub fn crit_composite(evidence: f64, logic: f64, relevance: f64) -> Result<f64> {
    composite(evidence, logic, relevance)
}
