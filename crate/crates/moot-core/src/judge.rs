//! Judge scoring and reliability tracking.
//!
//! Every argument is scored by a panel of judges on three axes (evidence,
//! logic, relevance); the equal-weight mean is the argument's composite.
//! Per-agent round means feed an exponential moving average `Gamma_u` whose
//! normalized values weight the judged mixture.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::belief::Argument;
use crate::error::{Error, Result};

/// One judge's scores for one argument. Sub-scores live in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgeScore {
    pub judge: String,
    pub evidence: f64,
    pub logic: f64,
    pub relevance: f64,
}

impl JudgeScore {
    pub fn new(judge: impl Into<String>, evidence: f64, logic: f64, relevance: f64) -> Result<Self> {
        let score = Self { judge: judge.into(), evidence, logic, relevance };
        score.validate()?;
        Ok(score)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("evidence", self.evidence), ("logic", self.logic), ("relevance", self.relevance)] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Parameter(format!("judge sub-score '{name}' must be in [0,1], got {v}")));
            }
        }
        Ok(())
    }

    pub fn composite(&self) -> f64 {
        composite(self.evidence, self.logic, self.relevance).expect("validated at construction")
    }
}

/// Equal-weight composite of the three judging axes.
pub fn composite(evidence: f64, logic: f64, relevance: f64) -> Result<f64> {
    for (name, v) in [("evidence", evidence), ("logic", logic), ("relevance", relevance)] {
        if !(0.0..=1.0).contains(&v) || !v.is_finite() {
            return Err(Error::Parameter(format!("judge sub-score '{name}' must be in [0,1], got {v}")));
        }
    }
    Ok((evidence + logic + relevance) / 3.0)
}

/// Aggregated judge output for one round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundCritSummary {
    /// Mean composite per argument, argument order preserved.
    pub per_argument: Vec<f64>,
    /// Mean composite per agent over that agent's arguments and all judges.
    pub per_agent: BTreeMap<String, f64>,
    /// Mean composite per judge over all arguments (feeds the stability stop).
    pub per_judge: BTreeMap<String, f64>,
    /// Grand mean over every (argument, judge) pair.
    pub round_mean: f64,
    /// Population variance of the per-judge means.
    pub judge_variance: f64,
}

/// Collapse a round's judge scores: `scores_by_argument[i]` holds the panel's
/// scores for `arguments[i]`.
///
/// Every argument must be scored by the same panel, each judge exactly once;
/// a gap is an error that names the missing (judge, argument) pair.
pub fn aggregate_round(
    scores_by_argument: &[Vec<JudgeScore>],
    arguments: &[Argument],
) -> Result<RoundCritSummary> {
    if arguments.is_empty() {
        return Err(Error::Aggregation("no arguments to aggregate".into()));
    }
    if scores_by_argument.len() != arguments.len() {
        return Err(Error::Aggregation(format!(
            "{} score groups for {} arguments",
            scores_by_argument.len(),
            arguments.len()
        )));
    }
    let panel: Vec<String> = {
        let mut ids: Vec<String> = scores_by_argument[0].iter().map(|s| s.judge.clone()).collect();
        ids.sort();
        ids.dedup();
        ids
    };
    if panel.is_empty() {
        return Err(Error::Aggregation("empty judge panel".into()));
    }
    // Coverage check: each judge exactly once per argument.
    for (i, scores) in scores_by_argument.iter().enumerate() {
        for judge in &panel {
            let hits = scores.iter().filter(|s| &s.judge == judge).count();
            if hits != 1 {
                return Err(Error::Aggregation(format!(
                    "judge '{judge}' scored argument {i} ('{}') {hits} times, expected once",
                    arguments[i].claim
                )));
            }
        }
        for s in scores {
            if !panel.contains(&s.judge) {
                return Err(Error::Aggregation(format!(
                    "judge '{}' scored argument {i} but not argument 0",
                    s.judge
                )));
            }
            s.validate()?;
        }
    }

    let k = panel.len() as f64;
    let per_argument: Vec<f64> = scores_by_argument
        .iter()
        .map(|scores| scores.iter().map(JudgeScore::composite).sum::<f64>() / k)
        .collect();

    let mut agent_acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for (arg, scores) in arguments.iter().zip(scores_by_argument) {
        let entry = agent_acc.entry(arg.agent.clone()).or_insert((0.0, 0));
        for s in scores {
            entry.0 += s.composite();
            entry.1 += 1;
        }
    }
    let per_agent: BTreeMap<String, f64> =
        agent_acc.into_iter().map(|(a, (sum, n))| (a, sum / n as f64)).collect();

    let mut per_judge: BTreeMap<String, f64> = BTreeMap::new();
    for judge in &panel {
        let sum: f64 = scores_by_argument
            .iter()
            .flat_map(|scores| scores.iter().filter(|s| &s.judge == judge))
            .map(JudgeScore::composite)
            .sum();
        per_judge.insert(judge.clone(), sum / arguments.len() as f64);
    }

    let total: f64 = scores_by_argument
        .iter()
        .flat_map(|scores| scores.iter().map(JudgeScore::composite))
        .sum();
    let round_mean = total / (arguments.len() as f64 * k);

    let judge_means: Vec<f64> = per_judge.values().copied().collect();
    let jm = judge_means.iter().sum::<f64>() / judge_means.len() as f64;
    let judge_variance =
        judge_means.iter().map(|x| (x - jm) * (x - jm)).sum::<f64>() / judge_means.len() as f64;

    Ok(RoundCritSummary { per_argument, per_agent, per_judge, round_mean, judge_variance })
}

/// Per-round judge-panel statistics kept for the stability stop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityPoint {
    pub round_mean: f64,
    pub judge_variance: f64,
}

/// EMA reliability per agent: `Gamma_u <- lambda Gamma_u + (1 - lambda) crit`,
/// seeded at 0.5 (no prior trust either way).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityTracker {
    lambda: f64,
    epsilon: f64,
    gamma: BTreeMap<String, f64>,
    history: Vec<StabilityPoint>,
}

impl ReliabilityTracker {
    pub fn new<S: Into<String>>(agents: Vec<S>, lambda: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&lambda) {
            return Err(Error::Parameter(format!("reliability lambda must be in [0,1), got {lambda}")));
        }
        if epsilon <= 0.0 {
            return Err(Error::Parameter(format!("weight-floor epsilon must be > 0, got {epsilon}")));
        }
        let gamma: BTreeMap<String, f64> = agents.into_iter().map(|a| (a.into(), 0.5)).collect();
        if gamma.is_empty() {
            return Err(Error::Parameter("reliability tracker needs at least one agent".into()));
        }
        Ok(Self { lambda, epsilon, gamma, history: Vec::new() })
    }

    pub fn agents(&self) -> impl Iterator<Item = &String> {
        self.gamma.keys()
    }

    pub fn gamma(&self, agent: &str) -> Option<f64> {
        self.gamma.get(agent).copied()
    }

    /// Apply one round of per-agent CRIT means. Agents without an entry
    /// (nothing admitted this round) keep their Gamma unchanged.
    pub fn update(&mut self, per_agent_crit: &BTreeMap<String, f64>) -> Result<()> {
        for (agent, crit) in per_agent_crit {
            if !(0.0..=1.0).contains(crit) {
                return Err(Error::Parameter(format!(
                    "per-agent CRIT for '{agent}' must be in [0,1], got {crit}"
                )));
            }
            let slot = self
                .gamma
                .get_mut(agent)
                .ok_or_else(|| Error::Parameter(format!("unknown agent '{agent}' in reliability update")))?;
            *slot = self.lambda * *slot + (1.0 - self.lambda) * crit;
        }
        Ok(())
    }

    /// Record the round's panel statistics for the stability stop.
    pub fn record_stability(&mut self, point: StabilityPoint) {
        self.history.push(point);
    }

    pub fn stability_history(&self) -> &[StabilityPoint] {
        &self.history
    }

    /// Normalized mixture weights `(Gamma_u + eps) / sum_v (Gamma_v + eps)`,
    /// strictly positive and summing to one.
    pub fn weights(&self) -> BTreeMap<String, f64> {
        let total: f64 = self.gamma.values().map(|g| g + self.epsilon).sum();
        self.gamma.iter().map(|(a, g)| (a.clone(), (g + self.epsilon) / total)).collect()
    }
}

/// Compound judge-stability stop: the panel's variance is small and the round
/// mean has stopped moving, both holding on the two most recent rounds.
/// Needs at least three rounds of history (two consecutive deltas).
/// Comparisons are strict.
pub fn judge_stability_stop(tracker: &ReliabilityTracker, eps_var: f64, delta_mean: f64) -> bool {
    let h = tracker.stability_history();
    if h.len() < 3 {
        return false;
    }
    let n = h.len();
    let calm = |t: usize| {
        h[t].judge_variance < eps_var && (h[t].round_mean - h[t - 1].round_mean).abs() < delta_mean
    };
    calm(n - 1) && calm(n - 2)
}
