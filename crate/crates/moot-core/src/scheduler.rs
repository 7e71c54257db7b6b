//! Budget-feasible UCB scheduling of the controller's step sizes.
//!
//! The action set is the 3x3 grid of joint adjustments `(d_alpha, d_gamma)`
//! in `{-delta, 0, +delta}^2` (nine actions, the no-op included). Each round
//! the scheduler filters actions through a conservative cost estimate
//! against the remaining budget, picks the UCB argmax among the feasible
//! ones, and learns from a bounded reward that pays for information-gain
//! increases and dispersion drops net of token cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One joint adjustment of the CL step size and the gate step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub d_alpha: f64,
    pub d_gamma: f64,
}

/// The 3x3 action grid in row-major order; index 4 is the no-op.
pub fn action_grid(delta: f64) -> Vec<Action> {
    let steps = [-delta, 0.0, delta];
    let mut grid = Vec::with_capacity(9);
    for da in steps {
        for dg in steps {
            grid.push(Action { d_alpha: da, d_gamma: dg });
        }
    }
    grid
}

/// Reward shaping and cost normalization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    /// Weight on clamped information-gain increase.
    pub w1: f64,
    /// Weight on clamped dispersion drop.
    pub w2: f64,
    /// Cost penalty coefficient.
    pub lambda_cost: f64,
    /// Normalizer for per-round cost; also the most conservative possible
    /// cost estimate.
    pub c_max: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { w1: 0.5, w2: 0.5, lambda_cost: 0.1, c_max: 1000.0 }
    }
}

/// Bounded per-round reward:
/// `clip(w1 [ig_cur - ig_prev]_+ + w2 [d_prev - d_cur]_+ - lambda c / c_max, 0, 1)`.
pub fn reward(cfg: &RewardConfig, ig_prev: f64, ig_cur: f64, d_prev: f64, d_cur: f64, cost: f64) -> f64 {
    let gain = (ig_cur - ig_prev).max(0.0);
    let drop = (d_prev - d_cur).max(0.0);
    let raw = cfg.w1 * gain + cfg.w2 * drop - cfg.lambda_cost * cost / cfg.c_max;
    raw.clamp(0.0, 1.0)
}

fn percentile_95(sorted: &[f64]) -> f64 {
    debug_assert!(!sorted.is_empty());
    let n = sorted.len();
    let idx = ((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1;
    sorted[idx]
}

/// UCB state over the action grid plus the shared budget ledger and the
/// current dial step sizes it steers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerState {
    actions: Vec<Action>,
    mu_hat: Vec<f64>,
    counts: Vec<u64>,
    /// Total pulls so far (the `t` in the exploration bonus).
    t: u64,
    pub budget_remaining: f64,
    pub alpha: f64,
    pub gamma: f64,
    reward_cfg: RewardConfig,
    /// Per-action observed costs, kept sorted for the percentile estimate.
    cost_obs: Vec<Vec<f64>>,
}

impl SchedulerState {
    pub fn new(delta: f64, reward_cfg: RewardConfig, budget: f64, alpha0: f64, gamma0: f64) -> Result<Self> {
        if delta <= 0.0 || !delta.is_finite() {
            return Err(Error::Parameter(format!("action step must be positive, got {delta}")));
        }
        if reward_cfg.c_max <= 0.0 {
            return Err(Error::Parameter("c_max must be positive".into()));
        }
        if budget < 0.0 {
            return Err(Error::Parameter("budget must be nonnegative".into()));
        }
        let actions = action_grid(delta);
        let k = actions.len();
        Ok(Self {
            actions,
            mu_hat: vec![0.0; k],
            counts: vec![0; k],
            t: 0,
            budget_remaining: budget,
            alpha: alpha0.clamp(0.0, 1.0),
            gamma: gamma0.clamp(0.0, 1.0),
            reward_cfg,
            cost_obs: vec![Vec::new(); k],
        })
    }

    /// Restrict to the no-op action only; with this grid the scheduler is a
    /// transparent pass-through and transcripts must match the fixed-schedule
    /// controller byte for byte.
    pub fn noop_only(reward_cfg: RewardConfig, budget: f64, alpha0: f64, gamma0: f64) -> Self {
        let mut s = Self::new(0.2, reward_cfg, budget, alpha0, gamma0).expect("static params");
        s.actions = vec![Action { d_alpha: 0.0, d_gamma: 0.0 }];
        s.mu_hat = vec![0.0];
        s.counts = vec![0];
        s.cost_obs = vec![Vec::new()];
        s
    }

    pub fn actions(&self) -> &[Action] {
        &self.actions
    }

    pub fn arm_count(&self) -> usize {
        self.actions.len()
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn mu_hat(&self) -> &[f64] {
        &self.mu_hat
    }

    pub fn pulls(&self) -> u64 {
        self.t
    }

    pub fn reward_cfg(&self) -> &RewardConfig {
        &self.reward_cfg
    }

    /// Conservative per-action cost estimate: the running 95th percentile of
    /// observed costs, initialized to `c_max` (maximally conservative) until
    /// the action has been observed at all.
    pub fn cost_estimate(&self, k: usize) -> f64 {
        let obs = &self.cost_obs[k];
        if obs.is_empty() {
            self.reward_cfg.c_max
        } else {
            percentile_95(obs)
        }
    }

    /// Actions whose estimated cost fits the remaining budget. May be empty,
    /// which signals the caller to halt scheduling.
    pub fn feasible_set(&self) -> Vec<usize> {
        (0..self.actions.len())
            .filter(|&k| self.cost_estimate(k) <= self.budget_remaining)
            .collect()
    }

    /// UCB score for a pulled arm: `mu_hat + sqrt(2 ln t / max(1, n))`.
    pub fn ucb_score(&self, k: usize) -> f64 {
        let n = self.counts[k].max(1) as f64;
        let t = self.t.max(1) as f64;
        self.mu_hat[k] + (2.0 * t.ln() / n).sqrt()
    }

    /// Pick the next action among the feasible set: any feasible unpulled arm
    /// first (lowest index), otherwise the UCB argmax with lowest-index
    /// tie-breaking. `None` means no action fits the budget.
    pub fn select_action(&self) -> Option<usize> {
        let feasible = self.feasible_set();
        if feasible.is_empty() {
            return None;
        }
        if let Some(&k) = feasible.iter().find(|&&k| self.counts[k] == 0) {
            return Some(k);
        }
        let mut best = feasible[0];
        let mut best_score = self.ucb_score(best);
        for &k in &feasible[1..] {
            let s = self.ucb_score(k);
            if s > best_score {
                best = k;
                best_score = s;
            }
        }
        Some(best)
    }

    /// Move the dial step sizes by the chosen action, clipped to [0, 1].
    pub fn apply_action(&mut self, k: usize) {
        let a = self.actions[k];
        self.alpha = (self.alpha + a.d_alpha).clamp(0.0, 1.0);
        self.gamma = (self.gamma + a.d_gamma).clamp(0.0, 1.0);
    }

    /// Absorb the observed reward and realized cost for action `k`:
    /// incremental-mean update, count increment, budget decrement, cost
    /// observation recorded. A budget that would go negative is reported as
    /// the invariant violation it is (the feasibility filter plus a
    /// conservative estimator must prevent it).
    pub fn step(&mut self, k: usize, reward: f64, cost: f64) -> Result<()> {
        if k >= self.actions.len() {
            return Err(Error::Parameter(format!("action index {k} out of range")));
        }
        if !(0.0..=1.0).contains(&reward) {
            return Err(Error::Parameter(format!("reward must be pre-clipped to [0,1], got {reward}")));
        }
        if cost < 0.0 {
            return Err(Error::Parameter(format!("cost must be nonnegative, got {cost}")));
        }
        if cost > self.budget_remaining {
            return Err(Error::Budget(format!(
                "realized cost {cost} exceeds remaining budget {}; conservative-estimator contract breached",
                self.budget_remaining
            )));
        }
        let n = self.counts[k] as f64;
        self.mu_hat[k] = (n * self.mu_hat[k] + reward) / (n + 1.0);
        self.counts[k] += 1;
        self.t += 1;
        self.budget_remaining -= cost;
        let obs = &mut self.cost_obs[k];
        let pos = obs.partition_point(|&c| c < cost);
        obs.insert(pos, cost);
        Ok(())
    }

    /// Like [`SchedulerState::step`], but for embedding in a debate whose
    /// token ledger the engine owns: a cost overrunning this mirror of the
    /// budget saturates it at zero instead of erroring, because the debate's
    /// own budget stop is the authority on overruns there.
    pub fn step_saturating(&mut self, k: usize, reward: f64, cost: f64) -> Result<()> {
        if cost > self.budget_remaining {
            let clamped = self.budget_remaining;
            self.step(k, reward, clamped)?;
            self.budget_remaining = 0.0;
            // Swap the clamped observation for the true cost so the
            // percentile estimator sees what the round actually spent.
            let obs = &mut self.cost_obs[k];
            let pos = obs.partition_point(|&c| c < clamped);
            debug_assert_eq!(obs[pos], clamped);
            obs.remove(pos);
            let pos = obs.partition_point(|&c| c < cost);
            obs.insert(pos, cost);
            Ok(())
        } else {
            self.step(k, reward, cost)
        }
    }
}
