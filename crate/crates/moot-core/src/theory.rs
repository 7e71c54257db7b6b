//! Theory-mode belief dynamics: the gated averaging update and the small
//! simulation runners that make its convergence guarantees directly
//! testable — monotone dispersion contraction per step, and halting-time
//! scaling of the plateau detector as its tolerance shrinks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::sync::Arc;

use crate::belief::{mix, smooth, BeliefState, OutcomeSpace, SpaceKind};
use crate::controller::{ControllerConfig, PlateauState};
use crate::error::{Error, Result};
use crate::signals::{dispersion_kl, generalized_jsd, information_gain, jsd};

/// Valid range for the gated-averaging attraction strength.
pub const BETA_MIN: f64 = 0.1;
pub const BETA_MAX: f64 = 0.9;

/// One gated averaging step over an ensemble.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedStep {
    pub beliefs: Vec<BeliefState>,
    /// False when the dispersion gate rejected the proposal (beliefs are
    /// then the unchanged inputs).
    pub accepted: bool,
    pub dispersion_before: f64,
    pub dispersion_after: f64,
}

fn uniform_weights(m: usize) -> Vec<f64> {
    vec![1.0 / m as f64; m]
}

/// The raw averaging proposal: every belief moves `beta_eff` of the way to
/// the ensemble's uniform mixture, plus optional zero-mean noise with L1
/// norm at most `noise_sigma`, projected back onto the simplex interior.
fn convex_step(
    beliefs: &[BeliefState],
    beta_eff: f64,
    noise_sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<BeliefState>> {
    let mixture = mix(beliefs, &uniform_weights(beliefs.len()))?;
    let n = mixture.probs().len();
    let mut out = Vec::with_capacity(beliefs.len());
    for b in beliefs {
        let mut p: Vec<f64> = b
            .probs()
            .iter()
            .zip(mixture.probs())
            .map(|(own, m)| (1.0 - beta_eff) * own + beta_eff * m)
            .collect();
        if noise_sigma > 0.0 {
            let mut xi: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mean = xi.iter().sum::<f64>() / n as f64;
            for x in xi.iter_mut() {
                *x -= mean;
            }
            let l1: f64 = xi.iter().map(|x| x.abs()).sum();
            if l1 > 0.0 {
                let scale = rng.random_range(0.0..=1.0) * noise_sigma / l1;
                for (pi, x) in p.iter_mut().zip(&xi) {
                    *pi += scale * x;
                }
            }
            // Projection back to the (smoothed) simplex: clamp and renormalize.
            for pi in p.iter_mut() {
                *pi = pi.max(1e-12);
            }
            let sum: f64 = p.iter().sum();
            for pi in p.iter_mut() {
                *pi /= sum;
            }
        }
        out.push(BeliefState::new(b.space().clone(), p)?);
    }
    Ok(out)
}

/// Would replacing `old` with `proposed` raise ensemble dispersion by more
/// than `nu`? Returns (accepted, dispersion_before, dispersion_after).
pub fn acceptance_check(
    old: &[BeliefState],
    proposed: &[BeliefState],
    nu: f64,
) -> Result<(bool, f64, f64)> {
    let before = dispersion_kl(old)?;
    let after = dispersion_kl(proposed)?;
    Ok((after <= before + nu, before, after))
}

/// Gated averaging: propose the convex step, then accept it only if it does
/// not raise ensemble dispersion by more than `nu`. With zero noise the
/// step always contracts, so it is always accepted; the gate exists to
/// discard dispersion-inflating noise realizations. The uniform mixture is
/// exactly preserved in the noiseless case.
pub fn gated_average_step(
    beliefs: &[BeliefState],
    beta: f64,
    noise_sigma: f64,
    nu: f64,
    rng: &mut ChaCha8Rng,
) -> Result<GatedStep> {
    if beliefs.len() < 2 {
        return Err(Error::Parameter("gated averaging needs at least two beliefs".into()));
    }
    if !(BETA_MIN..=BETA_MAX).contains(&beta) {
        return Err(Error::Parameter(format!(
            "beta = {beta} outside the schedule interval [{BETA_MIN}, {BETA_MAX}]"
        )));
    }
    if noise_sigma < 0.0 || nu < 0.0 {
        return Err(Error::Parameter("noise_sigma and nu must be nonnegative".into()));
    }
    let proposed = convex_step(beliefs, beta, noise_sigma, rng)?;
    let (accepted, before, after) = acceptance_check(beliefs, &proposed, nu)?;
    if accepted {
        Ok(GatedStep { beliefs: proposed, accepted: true, dispersion_before: before, dispersion_after: after })
    } else {
        Ok(GatedStep {
            beliefs: beliefs.to_vec(),
            accepted: false,
            dispersion_before: before,
            dispersion_after: before,
        })
    }
}

/// How the attraction strength evolves across a theory run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoryMode {
    /// Constant contraction: `beta_eff = beta` every round.
    Geometric,
    /// Dial-coupled: `beta_eff = beta * (1 - CL)` with CL following the
    /// plateau-driven schedule, so contraction accelerates as the debate
    /// consolidates.
    ClScheduled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryRunConfig {
    pub num_agents: usize,
    pub space_size: usize,
    pub beta: f64,
    pub noise_sigma: f64,
    pub nu: f64,
    pub mode: TheoryMode,
    pub seed: u64,
    pub max_rounds: u32,
    /// Point-mass starts on distinct labels instead of random interiors.
    pub opposed_init: bool,
    pub controller: ControllerConfig,
}

impl Default for TheoryRunConfig {
    fn default() -> Self {
        Self {
            num_agents: 2,
            space_size: 4,
            beta: 0.3,
            noise_sigma: 0.0,
            nu: 0.0,
            mode: TheoryMode::ClScheduled,
            seed: 0,
            max_rounds: 500,
            opposed_init: false,
            controller: ControllerConfig::default(),
        }
    }
}

impl TheoryRunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_agents < 2 {
            return Err(Error::Parameter("theory runs need at least two agents".into()));
        }
        if self.space_size < 2 {
            return Err(Error::Parameter("theory runs need at least two outcomes".into()));
        }
        if !(BETA_MIN..=BETA_MAX).contains(&self.beta) {
            return Err(Error::Parameter(format!(
                "beta = {} outside [{BETA_MIN}, {BETA_MAX}]",
                self.beta
            )));
        }
        if self.max_rounds == 0 {
            return Err(Error::Parameter("max_rounds must be positive".into()));
        }
        self.controller.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TheoryOutcome {
    /// Round at which both plateau flags had persisted long enough; None if
    /// the run hit max_rounds first.
    pub rounds_to_halt: Option<u32>,
    pub dispersion: Vec<f64>,
    pub js: Vec<f64>,
    pub betas_effective: Vec<f64>,
    /// Steps where an accepted noiseless update broke the per-step
    /// contraction bound D' <= (1 - beta_eff) * D + 1e-9.
    pub lemma_violations: u32,
    pub rejected_steps: u32,
}

fn theory_rng(seed: u64, salt: &str) -> ChaCha8Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(salt.as_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

fn theory_space(size: usize) -> Arc<OutcomeSpace> {
    let labels = (0..size).map(|i| format!("y{i}")).collect();
    Arc::new(OutcomeSpace::new(labels, SpaceKind::Categorical).expect("size >= 2 labels"))
}

/// Seeded ensemble start: either opposed point masses (cycled over labels)
/// or random interior points, always smoothed into the interior.
pub fn initial_ensemble(cfg: &TheoryRunConfig) -> Result<Vec<BeliefState>> {
    let space = theory_space(cfg.space_size);
    let mut rng = theory_rng(cfg.seed, "init");
    let mut out = Vec::with_capacity(cfg.num_agents);
    for agent in 0..cfg.num_agents {
        let raw = if cfg.opposed_init {
            let mut p = vec![0.0; cfg.space_size];
            p[agent % cfg.space_size] = 1.0;
            p
        } else {
            let draws: Vec<f64> = (0..cfg.space_size)
                .map(|_| -(rng.random_range(1e-12..1.0f64)).ln())
                .collect();
            let sum: f64 = draws.iter().sum();
            draws.into_iter().map(|d| d / sum).collect()
        };
        let b = BeliefState::new(space.clone(), raw)?;
        out.push(smooth(&b, cfg.controller.delta_smooth)?);
    }
    Ok(out)
}

/// Normalized cross-agent disagreement, shared with the debate engine: the
/// pairwise divergence for two agents, the uniform-weight generalized form
/// rescaled by log2(m) beyond that.
pub fn normalized_js(beliefs: &[BeliefState]) -> Result<f64> {
    if beliefs.len() == 2 {
        jsd(&beliefs[0], &beliefs[1])
    } else {
        let raw = generalized_jsd(beliefs, &uniform_weights(beliefs.len()))?;
        Ok((raw / (beliefs.len() as f64).log2()).clamp(0.0, 1.0))
    }
}

/// Run one theory-mode debate: gated averaging under the plateau detector,
/// halting when both progress flags have persisted for `tau_stop` rounds.
/// (Pure ensembles cite no evidence, so the quality and overlap conjuncts
/// of the full stop rule are vacuous here.)
pub fn run_theory(cfg: &TheoryRunConfig) -> Result<TheoryOutcome> {
    cfg.validate()?;
    let ctl = &cfg.controller;
    let mut beliefs = initial_ensemble(cfg)?;
    let mut rng = theory_rng(cfg.seed, "steps");
    let mut plateau = PlateauState::new(ctl.window_w);
    let mut cl: f64 = 0.8; // moderate opening band
    let log_n = (cfg.space_size as f64).log2();
    let mut prev_mixture = BeliefState::uniform(beliefs[0].space().clone());

    let mut outcome = TheoryOutcome {
        rounds_to_halt: None,
        dispersion: Vec::new(),
        js: Vec::new(),
        betas_effective: Vec::new(),
        lemma_violations: 0,
        rejected_steps: 0,
    };

    for round in 1..=cfg.max_rounds {
        let beta_eff = match cfg.mode {
            TheoryMode::Geometric => cfg.beta,
            TheoryMode::ClScheduled => cfg.beta * (1.0 - cl),
        };
        let proposed = convex_step(&beliefs, beta_eff, cfg.noise_sigma, &mut rng)?;
        let (accepted, before, after) = acceptance_check(&beliefs, &proposed, cfg.nu)?;
        if accepted {
            if cfg.noise_sigma == 0.0 && after > (1.0 - beta_eff) * before + 1e-9 {
                outcome.lemma_violations += 1;
            }
            beliefs = proposed;
        } else {
            outcome.rejected_steps += 1;
        }
        outcome.betas_effective.push(beta_eff);
        outcome.dispersion.push(if accepted { after } else { before });

        let mixture = mix(&beliefs, &uniform_weights(beliefs.len()))?;
        let js = normalized_js(&beliefs)?;
        outcome.js.push(js);
        let ig = information_gain(&prev_mixture, &mixture)?;
        plateau.observe(ig, prev_mixture.entropy_bits() / log_n, js);
        let (ratio_i, ratio_d) = plateau.ratios(ctl);
        let (flag_i, flag_d) = plateau.apply_flags(ratio_i, ratio_d, ctl);
        if plateau.run_i >= ctl.tau_stop && plateau.run_d >= ctl.tau_stop {
            outcome.rounds_to_halt = Some(round);
            break;
        }
        if let TheoryMode::ClScheduled = cfg.mode {
            let mut step = 0.0;
            if flag_i {
                step += ctl.alpha_i;
            }
            if flag_d {
                step += ctl.alpha_d;
            }
            cl = (cl - step).max(0.0);
        }
        prev_mixture = mixture;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneReport {
    pub debates: u32,
    pub steps_checked: u64,
    pub violations: u64,
    /// Largest observed D' - ((1 - beta) * D + 1e-9); negative when clean.
    pub worst_excess: f64,
}

/// Randomized per-step verification of the contraction bound: ensembles of
/// varying size and outcome-space width, constant beta, zero noise, zero
/// gate slack; every accepted step must satisfy
/// `D(t+1) <= (1 - beta) * D(t) + 1e-9`.
pub fn run_monotone_suite(debates: u32, steps_per_debate: u32, master_seed: u64) -> Result<MonotoneReport> {
    let mut report = MonotoneReport {
        debates,
        steps_checked: 0,
        violations: 0,
        worst_excess: f64::NEG_INFINITY,
    };
    for i in 0..debates {
        let mut setup_rng = theory_rng(master_seed, &format!("monotone-{i}"));
        let cfg = TheoryRunConfig {
            num_agents: setup_rng.random_range(2..=5),
            space_size: setup_rng.random_range(2..=6),
            beta: setup_rng.random_range(BETA_MIN..=BETA_MAX),
            noise_sigma: 0.0,
            nu: 0.0,
            mode: TheoryMode::Geometric,
            seed: master_seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            max_rounds: steps_per_debate,
            opposed_init: false,
            controller: ControllerConfig::default(),
        };
        let mut beliefs = initial_ensemble(&cfg)?;
        let mut rng = theory_rng(cfg.seed, "suite-steps");
        for _ in 0..steps_per_debate {
            let step = gated_average_step(&beliefs, cfg.beta, 0.0, 0.0, &mut rng)?;
            let bound = (1.0 - cfg.beta) * step.dispersion_before + 1e-9;
            let excess = step.dispersion_after - bound;
            report.steps_checked += 1;
            report.worst_excess = report.worst_excess.max(excess);
            if !step.accepted || excess > 0.0 {
                report.violations += 1;
            }
            beliefs = step.beliefs;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TerminationPoint {
    pub eps_d_rel: f64,
    pub mean_rounds: f64,
    pub halted: u32,
    pub seeds: u32,
}

/// Halting-time scaling: run `seeds` theory debates per tolerance and
/// report the mean rounds-to-halt (max_rounds counts as the halting round
/// for the mean, but is also reported via `halted`).
pub fn run_termination_sweep(
    eps_grid: &[f64],
    seeds: u32,
    mode: TheoryMode,
    base: &TheoryRunConfig,
) -> Result<Vec<TerminationPoint>> {
    let mut points = Vec::with_capacity(eps_grid.len());
    for &eps in eps_grid {
        let mut total = 0u64;
        let mut halted = 0u32;
        for s in 0..seeds {
            let mut cfg = base.clone();
            cfg.mode = mode;
            cfg.seed = base.seed.wrapping_add(s as u64);
            cfg.controller.eps_d_rel = eps;
            let outcome = run_theory(&cfg)?;
            match outcome.rounds_to_halt {
                Some(r) => {
                    halted += 1;
                    total += r as u64;
                }
                None => total += cfg.max_rounds as u64,
            }
        }
        points.push(TerminationPoint {
            eps_d_rel: eps,
            mean_rounds: total as f64 / seeds as f64,
            halted,
            seeds,
        });
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn two_point_masses() -> Vec<BeliefState> {
        let space = theory_space(2);
        vec![
            BeliefState::new(space.clone(), vec![1.0, 0.0]).unwrap(),
            BeliefState::new(space, vec![0.0, 1.0]).unwrap(),
        ]
    }

    #[test]
    fn half_step_matches_hand_computation() {
        let mut rng = theory_rng(0, "t");
        let step = gated_average_step(&two_point_masses(), 0.5, 0.0, 0.0, &mut rng).unwrap();
        assert!(step.accepted);
        assert_abs_diff_eq!(step.beliefs[0].probs()[0], 0.75, epsilon = 1e-12);
        assert_abs_diff_eq!(step.beliefs[1].probs()[0], 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(step.dispersion_before, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(step.dispersion_after, 0.18872187554086717, epsilon = 1e-9);
        assert!(step.dispersion_after <= 0.5 * step.dispersion_before);
    }

    #[test]
    fn identical_beliefs_are_a_fixed_point() {
        let space = theory_space(3);
        let b = BeliefState::new(space, vec![0.2, 0.3, 0.5]).unwrap();
        let beliefs = vec![b.clone(), b.clone(), b];
        let mut rng = theory_rng(1, "t");
        let step = gated_average_step(&beliefs, 0.4, 0.0, 0.0, &mut rng).unwrap();
        assert!(step.accepted);
        assert_eq!(step.dispersion_after, 0.0);
        for (old, new) in beliefs.iter().zip(&step.beliefs) {
            for (a, b) in old.probs().iter().zip(new.probs()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn noiseless_step_preserves_the_mixture() {
        let space = theory_space(4);
        let beliefs = vec![
            BeliefState::new(space.clone(), vec![0.7, 0.1, 0.1, 0.1]).unwrap(),
            BeliefState::new(space.clone(), vec![0.1, 0.6, 0.2, 0.1]).unwrap(),
            BeliefState::new(space, vec![0.25, 0.25, 0.25, 0.25]).unwrap(),
        ];
        let before = mix(&beliefs, &uniform_weights(3)).unwrap();
        let mut rng = theory_rng(2, "t");
        let step = gated_average_step(&beliefs, 0.3, 0.0, 0.0, &mut rng).unwrap();
        let after = mix(&step.beliefs, &uniform_weights(3)).unwrap();
        for (a, b) in before.probs().iter().zip(after.probs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn beta_outside_the_interval_is_rejected() {
        let mut rng = theory_rng(3, "t");
        for beta in [0.05, 0.95, 0.0, 1.0] {
            assert!(gated_average_step(&two_point_masses(), beta, 0.0, 0.0, &mut rng).is_err());
        }
    }

    #[test]
    fn dispersion_inflating_proposals_are_rejected_by_the_gate() {
        // Craft the rejection directly: the acceptance check must refuse any
        // proposal that raises dispersion beyond nu = 0.
        let space = theory_space(2);
        let old = vec![
            BeliefState::new(space.clone(), vec![0.6, 0.4]).unwrap(),
            BeliefState::new(space.clone(), vec![0.4, 0.6]).unwrap(),
        ];
        let inflated = vec![
            BeliefState::new(space.clone(), vec![0.9, 0.1]).unwrap(),
            BeliefState::new(space, vec![0.1, 0.9]).unwrap(),
        ];
        let (accepted, before, after) = acceptance_check(&old, &inflated, 0.0).unwrap();
        assert!(!accepted);
        assert!(after > before);
        // And with enough slack, the same proposal passes.
        let (accepted, _, _) = acceptance_check(&old, &inflated, 10.0).unwrap();
        assert!(accepted);
    }

    #[test]
    fn noisy_steps_never_raise_dispersion_beyond_nu_when_accepted() {
        let cfg = TheoryRunConfig {
            noise_sigma: 0.3,
            nu: 0.01,
            opposed_init: true,
            max_rounds: 40,
            ..Default::default()
        };
        let mut beliefs = initial_ensemble(&cfg).unwrap();
        let mut rng = theory_rng(7, "noisy");
        for _ in 0..40 {
            let before = dispersion_kl(&beliefs).unwrap();
            let step = gated_average_step(&beliefs, cfg.beta, cfg.noise_sigma, cfg.nu, &mut rng).unwrap();
            if step.accepted {
                assert!(
                    step.dispersion_after <= before + cfg.nu + 1e-9,
                    "accepted step inflated dispersion: {} -> {}",
                    before,
                    step.dispersion_after
                );
            } else {
                assert_eq!(step.dispersion_after, before);
            }
            beliefs = step.beliefs;
        }
    }

    #[test]
    fn monotone_suite_is_clean_on_a_small_sample() {
        let report = run_monotone_suite(25, 20, 11).unwrap();
        assert_eq!(report.violations, 0, "worst excess {}", report.worst_excess);
        assert_eq!(report.steps_checked, 500);
        assert!(report.worst_excess <= 0.0);
    }

    #[test]
    fn theory_runs_halt_and_contract() {
        for mode in [TheoryMode::Geometric, TheoryMode::ClScheduled] {
            let cfg = TheoryRunConfig { mode, opposed_init: true, seed: 5, ..Default::default() };
            let outcome = run_theory(&cfg).unwrap();
            let halt = outcome.rounds_to_halt.expect("theory run must halt");
            assert!(halt >= 3, "needs at least tau_stop flagged rounds plus one");
            assert!(halt < cfg.max_rounds);
            assert_eq!(outcome.lemma_violations, 0);
            assert_eq!(outcome.rejected_steps, 0);
            for pair in outcome.dispersion.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "dispersion rose: {pair:?}");
            }
            let last_js = *outcome.js.last().unwrap();
            assert!(last_js < 0.05, "converged runs end in agreement, js = {last_js}");
        }
    }

    #[test]
    fn tighter_tolerance_never_halts_earlier() {
        let base = TheoryRunConfig { opposed_init: true, seed: 9, ..Default::default() };
        let points =
            run_termination_sweep(&[0.2, 0.1, 0.05], 5, TheoryMode::Geometric, &base).unwrap();
        assert!(points.iter().all(|p| p.halted == p.seeds));
        assert!(points[0].mean_rounds <= points[1].mean_rounds);
        assert!(points[1].mean_rounds <= points[2].mean_rounds);
    }

    #[test]
    fn determinism_same_seed_same_trajectory() {
        let cfg = TheoryRunConfig { noise_sigma: 0.05, seed: 13, ..Default::default() };
        let a = run_theory(&cfg).unwrap();
        let b = run_theory(&cfg).unwrap();
        assert_eq!(a, b);
    }
}
