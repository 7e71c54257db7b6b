//! The moderator's control math: dial state, plateau detection, dial
//! updates, the stop rule, initialization binning, and the regime
//! classifier that decides whether a debate is worth running at all.
//!
//! Everything here is pure bookkeeping over already-measured signals; the
//! round loop that produces those signals lives in [`crate::engine`].

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Why a debate halted, in priority order (hard limits beat soft criteria).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The token ledger is exhausted.
    Budget,
    /// Judged argument quality stayed below the floor for too many rounds.
    Stalemate,
    /// Both progress ratios plateaued with enough evidence on the table.
    Plateau,
    /// Judge panel variance and round means went flat (opt-in rule).
    JudgeStability,
}

/// The two dials plus the fixed floors they are compared against.
///
/// `cl` is the behavior dial (how adversarially agents are told to engage);
/// `tau_q`/`tau_crit` are the information dial (admission thresholds).
/// `tau_o` is the overlap floor consulted only by the stop rule, and
/// `tau_max` caps gate tightening.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DialState {
    pub cl: f64,
    pub tau_q: f64,
    pub tau_crit: f64,
    pub tau_o: f64,
    pub tau_max: f64,
}

impl DialState {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("cl", self.cl),
            ("tau_q", self.tau_q),
            ("tau_crit", self.tau_crit),
            ("tau_o", self.tau_o),
            ("tau_max", self.tau_max),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Parameter(format!("dial {name} = {v} outside [0, 1]")));
            }
        }
        if self.tau_q > self.tau_max || self.tau_crit > self.tau_max {
            return Err(Error::Parameter(format!(
                "gates ({}, {}) exceed tau_max = {}",
                self.tau_q, self.tau_crit, self.tau_max
            )));
        }
        Ok(())
    }
}

/// Controller hyperparameters. Defaults are the small-window settings the
/// whole test suite is tuned around; every field can be overridden from the
/// run configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerConfig {
    /// Moving-average window for the progress ratios.
    pub window_w: usize,
    /// Denominator stabilizer in the progress ratios.
    pub eta: f64,
    /// Information plateau tolerance: flag when `ratio_i < eps_i_rel`.
    pub eps_i_rel: f64,
    /// Dispersion plateau tolerance: flag when `ratio_d < eps_d_rel`.
    pub eps_d_rel: f64,
    /// Consecutive flagged rounds (both dials) required to stop.
    pub tau_stop: u32,
    /// CL reduction per information plateau round.
    pub alpha_i: f64,
    /// CL reduction per dispersion plateau round.
    pub alpha_d: f64,
    /// Gate tightening per information plateau round.
    pub gamma_gate: f64,
    /// Judge-reliability EMA memory.
    pub lambda_ema: f64,
    /// Stabilizer in the reliability-to-weight normalization.
    pub epsilon_weight: f64,
    /// Interior smoothing applied to every reported belief.
    pub delta_smooth: f64,
    /// Token budget; the debate halts once spend reaches it.
    pub budget_tokens: u64,
    /// Initial admission gates and the fixed floors.
    pub tau_q_init: f64,
    pub tau_crit_init: f64,
    pub tau_o: f64,
    pub tau_max: f64,
    /// Stalemate rule: round CRIT below the floor this many rounds in a row.
    pub stalemate_crit_floor: f64,
    pub stalemate_rounds: u32,
    /// Opt-in compound stop on judge-panel stability.
    pub judge_stability_enabled: bool,
    pub eps_var: f64,
    pub delta_mean: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            window_w: 3,
            eta: 1e-3,
            eps_i_rel: 0.02,
            eps_d_rel: 0.05,
            tau_stop: 2,
            alpha_i: 0.2,
            alpha_d: 0.2,
            gamma_gate: 0.1,
            lambda_ema: 0.8,
            epsilon_weight: 1e-6,
            delta_smooth: 1e-4,
            budget_tokens: 50_000,
            tau_q_init: 0.50,
            tau_crit_init: 0.30,
            tau_o: 0.30,
            tau_max: 0.90,
            stalemate_crit_floor: 0.2,
            stalemate_rounds: 3,
            judge_stability_enabled: false,
            eps_var: 0.01,
            delta_mean: 0.005,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window_w == 0 {
            return Err(Error::Parameter("window_w must be at least 1".into()));
        }
        if self.tau_stop == 0 {
            return Err(Error::Parameter("tau_stop must be at least 1".into()));
        }
        if self.eta <= 0.0 {
            return Err(Error::Parameter("eta must be positive".into()));
        }
        if self.eps_i_rel <= 0.0 || self.eps_d_rel <= 0.0 {
            return Err(Error::Parameter("plateau tolerances must be positive".into()));
        }
        for (name, v) in [
            ("alpha_i", self.alpha_i),
            ("alpha_d", self.alpha_d),
            ("gamma_gate", self.gamma_gate),
            ("tau_q_init", self.tau_q_init),
            ("tau_crit_init", self.tau_crit_init),
            ("tau_o", self.tau_o),
            ("tau_max", self.tau_max),
            ("stalemate_crit_floor", self.stalemate_crit_floor),
        ] {
            if !(0.0..=1.0).contains(&v) || !v.is_finite() {
                return Err(Error::Parameter(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if !(0.0..1.0).contains(&self.lambda_ema) {
            return Err(Error::Parameter("lambda_ema must lie in [0, 1)".into()));
        }
        if self.epsilon_weight <= 0.0 {
            return Err(Error::Parameter("epsilon_weight must be positive".into()));
        }
        if self.delta_smooth <= 0.0 || self.delta_smooth >= 1.0 {
            return Err(Error::Parameter("delta_smooth must lie in (0, 1)".into()));
        }
        if self.tau_q_init > self.tau_max || self.tau_crit_init > self.tau_max {
            return Err(Error::Parameter("initial gates must not exceed tau_max".into()));
        }
        if self.stalemate_rounds == 0 {
            return Err(Error::Parameter("stalemate_rounds must be at least 1".into()));
        }
        if self.eps_var < 0.0 || self.delta_mean < 0.0 {
            return Err(Error::Parameter("judge-stability thresholds must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Pure-configuration variant switches. Each one removes exactly one
/// mechanism so baselines can be compared against the full controller.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSwitches {
    /// Force mixture weights to 1/m (reliability tracking still logged).
    pub uniform_weights: bool,
    /// Drop the evidence-quality gate from admission and from the stop
    /// rule's quality conjunct (judged quality still gates).
    pub no_q_gate: bool,
    /// Impose a fixed CL trajectory instead of the plateau-driven updates;
    /// the last entry holds for any later round, so a one-entry schedule
    /// freezes CL.
    pub cl_schedule: Option<Vec<f64>>,
}

impl AblationSwitches {
    pub fn validate(&self) -> Result<()> {
        if let Some(schedule) = &self.cl_schedule {
            if schedule.is_empty() {
                return Err(Error::Parameter("cl_schedule must be nonempty when set".into()));
            }
            for v in schedule {
                if !(0.0..=1.0).contains(v) {
                    return Err(Error::Parameter(format!("cl_schedule entry {v} outside [0, 1]")));
                }
            }
        }
        Ok(())
    }

    /// The CL the schedule imposes for `round` (1-based), holding the last
    /// entry; None when no schedule is set.
    pub fn scheduled_cl(&self, round: u32) -> Option<f64> {
        self.cl_schedule.as_ref().map(|s| {
            let idx = (round.max(1) as usize - 1).min(s.len() - 1);
            s[idx]
        })
    }
}

/// Percentile bins for picking the opening contentiousness from a quick
/// estimate of instance difficulty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitThresholds {
    pub q_lo: f64,
    pub q_hi: f64,
    pub js_lo: f64,
    pub js_hi: f64,
}

impl Default for InitThresholds {
    fn default() -> Self {
        // Development-split percentiles (P30/P70) over simulated instances.
        Self { q_lo: 0.5, q_hi: 0.7, js_lo: 0.3, js_hi: 0.5 }
    }
}

/// Opening dial state from initial quality/disagreement estimates: strong
/// evidence with little disagreement starts calm (0.7), weak evidence with
/// strong disagreement starts hot (0.9), everything else moderate (0.8).
pub fn init_dials(q0: f64, js0: f64, bins: &InitThresholds, cfg: &ControllerConfig) -> DialState {
    let cl = if q0 >= bins.q_hi && js0 <= bins.js_lo {
        0.7
    } else if q0 <= bins.q_lo && js0 >= bins.js_hi {
        0.9
    } else {
        0.8
    };
    DialState {
        cl,
        tau_q: cfg.tau_q_init,
        tau_crit: cfg.tau_crit_init,
        tau_o: cfg.tau_o,
        tau_max: cfg.tau_max,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    /// Deliberation expected to pay: run the full debate.
    MaciRegime,
    /// Evidence is already aligned and the space is small: vote instead.
    VotingRegime,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RegimeThresholds {
    /// Output-space size at which ambiguity starts to favor debate.
    pub min_space: usize,
    pub q_lo: f64,
    pub js_hi: f64,
    pub overlap_lo: f64,
    /// Calibration error above which the baseline is considered poor.
    pub ece_hi: f64,
}

impl Default for RegimeThresholds {
    fn default() -> Self {
        Self { min_space: 20, q_lo: 0.5, js_hi: 0.5, overlap_lo: 0.3, ece_hi: 0.1 }
    }
}

/// Debate pays when any of these hold: a large ambiguous output space with
/// weak evidence and high disagreement; low initial evidence overlap; or a
/// poorly calibrated baseline. Otherwise majority voting suffices.
pub fn classify_regime(
    space_size: usize,
    q0: f64,
    js0: f64,
    overlap0: f64,
    baseline_ece: Option<f64>,
    thresholds: &RegimeThresholds,
) -> Regime {
    let ambiguous_large_space =
        space_size >= thresholds.min_space && q0 <= thresholds.q_lo && js0 >= thresholds.js_hi;
    let low_overlap = overlap0 <= thresholds.overlap_lo;
    let poor_calibration = baseline_ece.is_some_and(|ece| ece >= thresholds.ece_hi);
    if ambiguous_large_space || low_overlap || poor_calibration {
        Regime::MaciRegime
    } else {
        Regime::VotingRegime
    }
}

fn mean(values: &VecDeque<f64>) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Rolling plateau-detection state. The series hold at most the last
/// `window_w` values; moving averages run over whatever prefix exists, so
/// detection works from round one instead of idling for a window.
#[derive(Debug, Clone)]
pub struct PlateauState {
    window: usize,
    info_gain: VecDeque<f64>,
    /// Normalized entropy of the *previous* round's mixture — the remaining
    /// capacity the information ratio measures progress against.
    prev_entropy_norm: VecDeque<f64>,
    js_drop: VecDeque<f64>,
    js_prev: VecDeque<f64>,
    last_js: Option<f64>,
    /// Consecutive rounds each flag has been raised (reset on any miss).
    pub run_i: u32,
    pub run_d: u32,
    /// Consecutive rounds with round CRIT below the stalemate floor.
    pub low_crit_run: u32,
    pub rounds_observed: u32,
}

impl PlateauState {
    pub fn new(window: usize) -> Self {
        Self {
            window: window.max(1),
            info_gain: VecDeque::new(),
            prev_entropy_norm: VecDeque::new(),
            js_drop: VecDeque::new(),
            js_prev: VecDeque::new(),
            last_js: None,
            run_i: 0,
            run_d: 0,
            low_crit_run: 0,
            rounds_observed: 0,
        }
    }

    fn push(series: &mut VecDeque<f64>, window: usize, value: f64) {
        series.push_back(value);
        while series.len() > window {
            series.pop_front();
        }
    }

    /// Record one round's measurements: the normalized information gain, the
    /// previous mixture's normalized entropy, and the current disagreement.
    pub fn observe(&mut self, info_gain: f64, prev_entropy_norm: f64, js_now: f64) {
        self.rounds_observed += 1;
        Self::push(&mut self.info_gain, self.window, info_gain.max(0.0));
        Self::push(&mut self.prev_entropy_norm, self.window, prev_entropy_norm.max(0.0));
        if let Some(prev) = self.last_js {
            Self::push(&mut self.js_drop, self.window, (prev - js_now).max(0.0));
            Self::push(&mut self.js_prev, self.window, prev);
        }
        self.last_js = Some(js_now);
    }

    /// Progress relative to remaining capacity. The dispersion ratio is a
    /// 1.0 sentinel on the first round (there is no previous disagreement to
    /// make progress against), which can never flag.
    pub fn ratios(&self, cfg: &ControllerConfig) -> (f64, f64) {
        let ratio_i = mean(&self.info_gain) / (mean(&self.prev_entropy_norm) + cfg.eta);
        let ratio_d = if self.js_prev.is_empty() {
            1.0
        } else {
            mean(&self.js_drop) / (mean(&self.js_prev) + cfg.eta)
        };
        (ratio_i, ratio_d)
    }

    /// Raise/clear the plateau flags for this round's ratios and update the
    /// consecutive-run counters. Comparison is strictly below tolerance.
    pub fn apply_flags(&mut self, ratio_i: f64, ratio_d: f64, cfg: &ControllerConfig) -> (bool, bool) {
        let flag_i = ratio_i < cfg.eps_i_rel;
        let flag_d = ratio_d < cfg.eps_d_rel;
        self.run_i = if flag_i { self.run_i + 1 } else { 0 };
        self.run_d = if flag_d { self.run_d + 1 } else { 0 };
        (flag_i, flag_d)
    }

    /// Track consecutive low-quality rounds for the stalemate stop.
    pub fn note_round_crit(&mut self, round_crit: f64, cfg: &ControllerConfig) {
        self.low_crit_run =
            if round_crit < cfg.stalemate_crit_floor { self.low_crit_run + 1 } else { 0 };
    }
}

/// Behavior-dial update: each raised plateau flag pulls contentiousness
/// down by its step, floored at zero.
pub fn update_cl(dials: &DialState, flag_i: bool, flag_d: bool, cfg: &ControllerConfig) -> f64 {
    let mut cl = dials.cl;
    if flag_i {
        cl -= cfg.alpha_i;
    }
    if flag_d {
        cl -= cfg.alpha_d;
    }
    cl.max(0.0)
}

/// Information-dial update: an information plateau tightens both admission
/// gates by `gamma_gate`, capped at `tau_max`.
pub fn update_gates(dials: &DialState, flag_i: bool, cfg: &ControllerConfig) -> (f64, f64) {
    if flag_i {
        (
            (dials.tau_q + cfg.gamma_gate).min(dials.tau_max),
            (dials.tau_crit + cfg.gamma_gate).min(dials.tau_max),
        )
    } else {
        (dials.tau_q, dials.tau_crit)
    }
}

/// Everything the stop rule consults beyond the plateau counters.
#[derive(Debug, Clone, Copy)]
pub struct StopInputs {
    /// Evidence quality over this round's admitted spans.
    pub q: f64,
    /// Evidence overlap this round.
    pub overlap: f64,
    /// Ledger state after accounting this round.
    pub budget_spent: u64,
    /// Result of the opt-in judge-stability rule (false when disabled).
    pub judge_stable: bool,
    /// Whether the quality conjunct is ablated away.
    pub no_q_gate: bool,
}

/// The full stop decision for a round, evaluated against the dials that
/// were in force *during* the round (before this round's updates).
///
/// Priority: budget > stalemate > plateau > judge stability — hard limits
/// dominate soft criteria when several fire at once. The plateau stop
/// requires all four conjuncts: both flags persistent for `tau_stop`
/// rounds, evidence quality at or above the current gate, and overlap at
/// or above the floor.
pub fn should_stop(
    plateau: &PlateauState,
    dials: &DialState,
    inputs: &StopInputs,
    cfg: &ControllerConfig,
) -> Option<StopReason> {
    if inputs.budget_spent >= cfg.budget_tokens {
        return Some(StopReason::Budget);
    }
    if plateau.low_crit_run >= cfg.stalemate_rounds {
        return Some(StopReason::Stalemate);
    }
    let plateaued = plateau.run_i >= cfg.tau_stop && plateau.run_d >= cfg.tau_stop;
    let quality_ok = inputs.no_q_gate || inputs.q >= dials.tau_q;
    if plateaued && quality_ok && inputs.overlap >= dials.tau_o {
        return Some(StopReason::Plateau);
    }
    if cfg.judge_stability_enabled && inputs.judge_stable {
        return Some(StopReason::JudgeStability);
    }
    None
}
