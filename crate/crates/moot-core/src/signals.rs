//! Moderator-side signals: divergences, evidence overlap, evidence quality,
//! and information gain.
//!
//! All logarithms are base 2, so entropies, divergences, and gains are in
//! bits and the pairwise Jensen-Shannon divergence lives in [0, 1].

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::belief::{entropy_bits_of, mix, BeliefState, EvidenceSpan, SpaceKind, SUM_TOLERANCE};
use crate::error::{Error, Result};

/// A dense real vector produced by an embedding backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector(pub Vec<f64>);

impl EmbeddingVector {
    pub fn dimension(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    /// Unit-length copy; errors on (near-)zero vectors.
    pub fn normalized(&self) -> Result<EmbeddingVector> {
        let n = self.norm();
        if n < 1e-12 {
            return Err(Error::Domain("cannot normalize a zero embedding".into()));
        }
        Ok(EmbeddingVector(self.0.iter().map(|x| x / n).collect()))
    }

    pub fn dot(&self, other: &EmbeddingVector) -> Result<f64> {
        if self.dimension() != other.dimension() {
            return Err(Error::Shape(format!(
                "embedding dimensions differ: {} vs {}",
                self.dimension(),
                other.dimension()
            )));
        }
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum())
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> Result<f64> {
        let na = self.norm();
        let nb = other.norm();
        if na < 1e-12 || nb < 1e-12 {
            return Err(Error::Domain("cosine undefined for zero embeddings".into()));
        }
        Ok(self.dot(other)? / (na * nb))
    }
}

/// Maps evidence spans to embedding vectors. Implementations must be
/// deterministic: the same span yields the same vector on every call.
pub trait EmbeddingProvider {
    fn dimension(&self) -> usize;
    fn embed(&self, span: &EvidenceSpan) -> Result<EmbeddingVector>;
}

/// `KL(p || q) = sum_k p_k log2(p_k / q_k)` in bits.
///
/// Requires `q_k > 0` wherever `p_k > 0` (guaranteed for smoothed beliefs).
pub fn kl_bits(p: &BeliefState, q: &BeliefState) -> Result<f64> {
    if !p.same_space(q) {
        return Err(Error::Shape("KL requires both beliefs on the same space".into()));
    }
    let mut acc = 0.0;
    for (k, (&pk, &qk)) in p.probs().iter().zip(q.probs()).enumerate() {
        if pk > 0.0 {
            if qk <= 0.0 {
                return Err(Error::Domain(format!(
                    "KL undefined: p has mass {pk} at index {k} where q is zero"
                )));
            }
            acc += pk * (pk / qk).log2();
        }
    }
    Ok(acc.max(0.0))
}

/// Pairwise Jensen-Shannon divergence in bits:
/// `JS(p, q) = KL(p || m)/2 + KL(q || m)/2` with `m = (p + q)/2`.
///
/// Always defined (the midpoint covers both supports) and bounded by 1.
pub fn jsd(p: &BeliefState, q: &BeliefState) -> Result<f64> {
    if !p.same_space(q) {
        return Err(Error::Shape("JSD requires both beliefs on the same space".into()));
    }
    let m = mix(&[p.clone(), q.clone()], &[0.5, 0.5])?;
    let v = 0.5 * kl_bits(p, &m)? + 0.5 * kl_bits(q, &m)?;
    Ok(v.clamp(0.0, 1.0))
}

/// Multi-distribution Jensen-Shannon divergence:
/// `H(sum_u w_u p_u) - sum_u w_u H(p_u)`, in bits.
///
/// Not normalized; the value is bounded by the entropy of the weights
/// (`log2 m` for uniform weights over m beliefs) and coincides with [`jsd`]
/// for two beliefs at weights (1/2, 1/2).
pub fn generalized_jsd(beliefs: &[BeliefState], weights: &[f64]) -> Result<f64> {
    if beliefs.len() < 2 {
        return Err(Error::Parameter("generalized JSD needs at least two beliefs".into()));
    }
    let wsum: f64 = weights.iter().sum();
    if weights.len() != beliefs.len() || (wsum - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::Parameter("generalized JSD needs simplex weights, one per belief".into()));
    }
    let m = mix(beliefs, weights)?;
    let mean_h: f64 = beliefs
        .iter()
        .zip(weights)
        .map(|(b, &w)| w * b.entropy_bits())
        .sum();
    Ok((m.entropy_bits() - mean_h).max(0.0))
}

/// Normalized 1-Wasserstein distance on a structured space.
///
/// With labels at integer positions `0..n-1` and ground metric `|i - j|`,
/// `W1(p, q) = sum_{k<n-1} |F_p(k) - F_q(k)|`; dividing by the diameter
/// `n - 1` lands the value in [0, 1].
pub fn wasserstein1_normalized(p: &BeliefState, q: &BeliefState) -> Result<f64> {
    if !p.same_space(q) {
        return Err(Error::Shape("W1 requires both beliefs on the same space".into()));
    }
    if p.space().kind != SpaceKind::Structured {
        return Err(Error::Kind(
            "normalized W1 is defined only for structured spaces (ordered integer positions)".into(),
        ));
    }
    let n = p.space().size();
    if n == 1 {
        return Ok(0.0);
    }
    let mut fp = 0.0;
    let mut fq = 0.0;
    let mut w1 = 0.0;
    for k in 0..n - 1 {
        fp += p.probs()[k];
        fq += q.probs()[k];
        w1 += (fp - fq).abs();
    }
    Ok((w1 / (n - 1) as f64).clamp(0.0, 1.0))
}

/// Space-aware disagreement across an ensemble of beliefs.
///
/// Categorical spaces use the uniform-weight generalized JSD; structured
/// spaces use the mean pairwise normalized W1. At two beliefs these reduce
/// to the plain pairwise measures.
pub fn unified_distance(beliefs: &[BeliefState]) -> Result<f64> {
    if beliefs.len() < 2 {
        return Err(Error::Parameter("unified distance needs at least two beliefs".into()));
    }
    for b in &beliefs[1..] {
        if !b.same_space(&beliefs[0]) {
            return Err(Error::Shape("unified distance requires one shared space".into()));
        }
    }
    match beliefs[0].space().kind {
        SpaceKind::Categorical => {
            let w = vec![1.0 / beliefs.len() as f64; beliefs.len()];
            generalized_jsd(beliefs, &w)
        }
        SpaceKind::Structured => {
            let mut acc = 0.0;
            let mut pairs = 0usize;
            for i in 0..beliefs.len() {
                for j in i + 1..beliefs.len() {
                    acc += wasserstein1_normalized(&beliefs[i], &beliefs[j])?;
                    pairs += 1;
                }
            }
            Ok(acc / pairs as f64)
        }
    }
}

/// Mean KL of each belief to the ensemble's uniform-weight mixture, in bits.
/// Zero iff all beliefs coincide; this is the quantity the gated-averaging
/// analysis contracts.
pub fn dispersion_kl(beliefs: &[BeliefState]) -> Result<f64> {
    if beliefs.len() < 2 {
        return Err(Error::Parameter("dispersion needs at least two beliefs".into()));
    }
    let w = vec![1.0 / beliefs.len() as f64; beliefs.len()];
    let center = mix(beliefs, &w)?;
    let mut acc = 0.0;
    for b in beliefs {
        // The uniform mixture covers every support, so KL is always defined.
        acc += kl_bits(b, &center)?;
    }
    Ok(acc / beliefs.len() as f64)
}

/// Jaccard overlap of two evidence-span id sets.
///
/// Both sets empty is scored 1.0 (agreement by vacuity) and flagged, so a
/// consolidation round that cites nothing cannot block stopping; the flag
/// lets downstream consumers tell the two cases apart.
pub fn span_overlap(a: &BTreeSet<String>, b: &BTreeSet<String>) -> (f64, bool) {
    if a.is_empty() && b.is_empty() {
        return (1.0, true);
    }
    let inter = a.intersection(b).count() as f64;
    let union = a.union(b).count() as f64;
    (inter / union, false)
}

/// Mean pairwise Jaccard overlap across m agents' span sets; the flag is
/// raised if any pair was scored by vacuity.
pub fn ensemble_overlap(sets: &[BTreeSet<String>]) -> Result<(f64, bool)> {
    if sets.len() < 2 {
        return Err(Error::Parameter("overlap needs at least two span sets".into()));
    }
    let mut acc = 0.0;
    let mut pairs = 0usize;
    let mut vacuous = false;
    for i in 0..sets.len() {
        for j in i + 1..sets.len() {
            let (v, vac) = span_overlap(&sets[i], &sets[j]);
            acc += v;
            vacuous |= vac;
            pairs += 1;
        }
    }
    Ok((acc / pairs as f64, vacuous))
}

/// Evidence quality of a span set against a target direction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvidenceQuality {
    /// Cosine clamped to [0, 1]; this is what gates compare against.
    pub gate: f64,
    /// Unclamped cosine, logged for analysis.
    pub raw: f64,
}

/// Mean-of-unit-vectors evidence quality: embed each distinct span, normalize
/// each embedding, average, and take the cosine against `theta`.
///
/// Duplicate span ids are collapsed (set semantics), and per-span
/// normalization makes the score invariant to positive rescaling of any
/// single embedding. Requires a nonempty span set.
pub fn evidence_quality(
    spans: &[EvidenceSpan],
    provider: &dyn EmbeddingProvider,
    theta: &EmbeddingVector,
) -> Result<EvidenceQuality> {
    if spans.is_empty() {
        return Err(Error::Parameter("evidence quality needs at least one span".into()));
    }
    let mut seen = BTreeSet::new();
    let mut mean = vec![0.0; provider.dimension()];
    let mut count = 0usize;
    // Sort by id so duplicates collapse deterministically regardless of
    // citation order.
    let mut ordered: Vec<&EvidenceSpan> = spans.iter().collect();
    ordered.sort_by(|a, b| a.id.cmp(&b.id));
    for span in ordered {
        if !seen.insert(span.id.clone()) {
            continue;
        }
        let unit = provider.embed(span)?.normalized()?;
        if unit.dimension() != mean.len() {
            return Err(Error::Shape("embedding dimension drifted across spans".into()));
        }
        for (m, x) in mean.iter_mut().zip(&unit.0) {
            *m += x;
        }
        count += 1;
    }
    for m in mean.iter_mut() {
        *m /= count as f64;
    }
    let mean = EmbeddingVector(mean);
    // Opposing spans can cancel to (near) zero; treat that as orthogonal
    // evidence rather than an error.
    let raw = if mean.norm() < 1e-12 { 0.0 } else { mean.cosine(theta)? };
    Ok(EvidenceQuality { gate: raw.clamp(0.0, 1.0), raw })
}

/// Normalized one-step information gain of the judged mixture:
/// `[(H(prev) - H(cur)) / log2 n]_+`.
pub fn information_gain(prev: &BeliefState, cur: &BeliefState) -> Result<f64> {
    if !prev.same_space(cur) {
        return Err(Error::Shape("information gain requires one shared space".into()));
    }
    let log_n = prev.space().log2_size();
    if log_n <= 0.0 {
        return Ok(0.0); // single-outcome space: entropy is identically zero
    }
    Ok(((prev.entropy_bits() - cur.entropy_bits()) / log_n).max(0.0))
}

/// Diagnostics that are logged every round but never consumed by control
/// logic: a mixture-vs-members mutual information and a weighted
/// cross-entropy to the mixture.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LoggedMetrics {
    /// `(H(sum_u w_u p_u) - sum_u w_u H(p_u)) / log2 n`, in [0, 1] for m <= n.
    pub mi: f64,
    /// `sum_u w_u CE(p_u, mixture)` in bits, with `CE(p, q) = -sum p log2 q`.
    pub ce: f64,
}

pub fn logged_metrics(beliefs: &[BeliefState], weights: &[f64]) -> Result<LoggedMetrics> {
    let m = mix(beliefs, weights)?;
    let log_n = m.space().log2_size();
    let raw = generalized_jsd(beliefs, weights)?;
    let mi = if log_n > 0.0 { (raw / log_n).max(0.0) } else { 0.0 };
    let mut ce = 0.0;
    for (b, &w) in beliefs.iter().zip(weights) {
        if w == 0.0 {
            continue;
        }
        let mut h = 0.0;
        for (&pk, &mk) in b.probs().iter().zip(m.probs()) {
            if pk > 0.0 {
                if mk <= 0.0 {
                    return Err(Error::Domain("cross-entropy undefined: mixture misses support".into()));
                }
                h -= pk * mk.log2();
            }
        }
        ce += w * h;
    }
    Ok(LoggedMetrics { mi, ce })
}

/// Everything the moderator measured in one round, in the order the metrics
/// CSV reports it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalSnapshot {
    /// Evidence quality over this round's admitted spans (0.0 when nothing
    /// was admitted, which blocks quality-gated stopping).
    pub q: f64,
    /// Unclamped cosine behind `q`.
    pub q_raw: f64,
    /// Cross-agent belief divergence, normalized to [0, 1] (pairwise JSD for
    /// two agents; uniform-weight generalized JSD / log2(m) beyond that).
    pub js: f64,
    /// Jaccard overlap of admitted evidence (mean pairwise for m > 2).
    pub overlap: f64,
    /// True when overlap was scored 1.0 because no spans were admitted.
    pub overlap_vacuous: bool,
    /// Mean judge composite over this round's admitted arguments.
    pub crit_round: f64,
    /// Normalized entropy drop of the judged mixture since last round.
    pub info_gain: f64,
    /// Mean KL of agent beliefs to their uniform mixture, in bits.
    pub dispersion_kl: f64,
    /// Space-aware raw disagreement (generalized JSD or mean pairwise W1).
    pub unified_distance: f64,
    /// Relative information-gain progress ratio.
    pub ratio_i: f64,
    /// Relative dispersion-drop progress ratio.
    pub ratio_d: f64,
    /// Information plateau flag: `ratio_i < eps_i_rel`.
    pub flag_i: bool,
    /// Dispersion plateau flag: `ratio_d < eps_d_rel`.
    pub flag_d: bool,
    pub logged_mi: f64,
    pub logged_ce: f64,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::OutcomeSpace;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::sync::Arc;

    fn cat(n: usize) -> Arc<OutcomeSpace> {
        let labels: Vec<String> = (0..n).map(|i| format!("y{i}")).collect();
        Arc::new(OutcomeSpace::new(labels, SpaceKind::Categorical).unwrap())
    }

    fn ord(n: usize) -> Arc<OutcomeSpace> {
        let labels: Vec<String> = (0..n).map(|i| format!("y{i}")).collect();
        Arc::new(OutcomeSpace::new(labels, SpaceKind::Structured).unwrap())
    }

    fn b(space: &Arc<OutcomeSpace>, probs: &[f64]) -> BeliefState {
        BeliefState::new(space.clone(), probs.to_vec()).unwrap()
    }

    fn random_belief(rng: &mut ChaCha8Rng, space: &Arc<OutcomeSpace>) -> BeliefState {
        let raw: Vec<f64> = (0..space.size()).map(|_| rng.random_range(1e-9..1.0)).collect();
        BeliefState::renormalized(space.clone(), raw).unwrap()
    }

    #[test]
    fn kl_skewed_vs_uniform() {
        let s = cat(2);
        let p = b(&s, &[0.75, 0.25]);
        let q = b(&s, &[0.5, 0.5]);
        assert_abs_diff_eq!(kl_bits(&p, &q).unwrap(), 0.188722, epsilon = 5e-7);
    }

    #[test]
    fn kl_of_identical_is_zero() {
        let s = cat(4);
        let p = b(&s, &[0.1, 0.2, 0.3, 0.4]);
        assert_abs_diff_eq!(kl_bits(&p, &p).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn kl_rejects_support_violation() {
        let s = cat(2);
        let p = b(&s, &[1.0, 0.0]);
        let q = b(&s, &[0.0, 1.0]);
        assert!(matches!(kl_bits(&p, &q), Err(Error::Domain(_))));
    }

    #[test]
    fn jsd_of_disjoint_point_masses_is_one() {
        let s = cat(2);
        let p = b(&s, &[1.0, 0.0]);
        let q = b(&s, &[0.0, 1.0]);
        assert_abs_diff_eq!(jsd(&p, &q).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn jsd_of_disjoint_supports_over_union_space() {
        // Two three-label answer sets embedded in a six-label union; the
        // second had a 0.05 residual that renormalization absorbs. Disjoint
        // supports pin the divergence at its maximum.
        let s = cat(6);
        let p = b(&s, &[0.60, 0.25, 0.15, 0.0, 0.0, 0.0]);
        let q = BeliefState::renormalized(s.clone(), vec![0.0, 0.0, 0.0, 0.60, 0.20, 0.15]).unwrap();
        let v = jsd(&p, &q).unwrap();
        assert!(v > 0.9, "disjoint supports should be near-maximal, got {v}");
        assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn jsd_identical_is_zero() {
        let s = cat(3);
        let p = b(&s, &[0.2, 0.5, 0.3]);
        assert_abs_diff_eq!(jsd(&p, &p).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn jsd_symmetric_and_bounded_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(101);
        for _ in 0..10_000 {
            let n = rng.random_range(2..8);
            let s = cat(n);
            let p = random_belief(&mut rng, &s);
            let q = random_belief(&mut rng, &s);
            let ab = jsd(&p, &q).unwrap();
            let ba = jsd(&q, &p).unwrap();
            assert!((0.0..=1.0).contains(&ab));
            assert_abs_diff_eq!(ab, ba, epsilon = 1e-12);
        }
    }

    /// sqrt(JSD) is a metric; check the triangle inequality on random triples.
    #[test]
    fn jsd_sqrt_satisfies_triangle_inequality() {
        let mut rng = ChaCha8Rng::seed_from_u64(202);
        for _ in 0..1000 {
            let n = rng.random_range(2..7);
            let s = cat(n);
            let p = random_belief(&mut rng, &s);
            let q = random_belief(&mut rng, &s);
            let r = random_belief(&mut rng, &s);
            let dpq = jsd(&p, &q).unwrap().sqrt();
            let dqr = jsd(&q, &r).unwrap().sqrt();
            let dpr = jsd(&p, &r).unwrap().sqrt();
            assert!(dpr <= dpq + dqr + 1e-9, "triangle violated: {dpr} > {dpq} + {dqr}");
        }
    }

    #[test]
    fn generalized_jsd_of_three_disjoint_point_masses() {
        let s = cat(3);
        let beliefs = vec![
            b(&s, &[1.0, 0.0, 0.0]),
            b(&s, &[0.0, 1.0, 0.0]),
            b(&s, &[0.0, 0.0, 1.0]),
        ];
        let w = vec![1.0 / 3.0; 3];
        assert_abs_diff_eq!(generalized_jsd(&beliefs, &w).unwrap(), 3f64.log2(), epsilon = 1e-12);
    }

    #[test]
    fn generalized_jsd_matches_pairwise_at_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(303);
        let s = cat(5);
        for _ in 0..200 {
            let p = random_belief(&mut rng, &s);
            let q = random_belief(&mut rng, &s);
            let a = generalized_jsd(&[p.clone(), q.clone()], &[0.5, 0.5]).unwrap();
            let c = jsd(&p, &q).unwrap();
            assert_abs_diff_eq!(a, c, epsilon = 1e-12);
        }
    }

    #[test]
    fn generalized_jsd_rejects_bad_weights() {
        let s = cat(2);
        let beliefs = vec![b(&s, &[1.0, 0.0]), b(&s, &[0.0, 1.0])];
        assert!(generalized_jsd(&beliefs, &[0.9, 0.9]).is_err());
    }

    #[test]
    fn w1_point_masses_at_opposite_ends() {
        let s = ord(3);
        let p = b(&s, &[1.0, 0.0, 0.0]);
        let q = b(&s, &[0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(wasserstein1_normalized(&p, &q).unwrap(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn w1_identical_is_zero() {
        let s = ord(5);
        let p = b(&s, &[0.2, 0.2, 0.2, 0.2, 0.2]);
        assert_abs_diff_eq!(wasserstein1_normalized(&p, &p).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn w1_rejects_categorical_spaces() {
        let s = cat(3);
        let p = b(&s, &[1.0, 0.0, 0.0]);
        let q = b(&s, &[0.0, 0.0, 1.0]);
        assert!(matches!(wasserstein1_normalized(&p, &q), Err(Error::Kind(_))));
    }

    /// Independent transport oracle: for the line metric |i - j| the optimal
    /// plan is the monotone coupling, computable by a greedy two-pointer
    /// sweep that always ships the lowest remaining supply to the lowest
    /// remaining demand.
    fn w1_transport_oracle(p: &[f64], q: &[f64]) -> f64 {
        let mut supply = p.to_vec();
        let mut demand = q.to_vec();
        let (mut i, mut j, mut cost) = (0usize, 0usize, 0.0f64);
        while i < supply.len() && j < demand.len() {
            let moved = supply[i].min(demand[j]);
            cost += moved * (i as f64 - j as f64).abs();
            supply[i] -= moved;
            demand[j] -= moved;
            if supply[i] <= 1e-15 {
                i += 1;
            }
            if demand[j] <= 1e-15 {
                j += 1;
            }
        }
        cost
    }

    #[test]
    fn w1_matches_transport_oracle_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(404);
        for _ in 0..200 {
            let n = rng.random_range(2..=5);
            let s = ord(n);
            let p = random_belief(&mut rng, &s);
            let q = random_belief(&mut rng, &s);
            let fast = wasserstein1_normalized(&p, &q).unwrap();
            let oracle = w1_transport_oracle(p.probs(), q.probs()) / (n - 1) as f64;
            assert_abs_diff_eq!(fast, oracle, epsilon = 1e-9);
        }
    }

    #[test]
    fn unified_distance_dispatches_on_space_kind() {
        let sc = cat(3);
        let p = b(&sc, &[1.0, 0.0, 0.0]);
        let q = b(&sc, &[0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(
            unified_distance(&[p.clone(), q.clone()]).unwrap(),
            jsd(&p, &q).unwrap(),
            epsilon = 1e-12
        );

        let so = ord(3);
        let p = b(&so, &[1.0, 0.0, 0.0]);
        let q = b(&so, &[0.0, 0.0, 1.0]);
        assert_abs_diff_eq!(unified_distance(&[p.clone(), q.clone()]).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn unified_distance_structured_uses_mean_pairwise() {
        let s = ord(3);
        let p = b(&s, &[1.0, 0.0, 0.0]);
        let q = b(&s, &[0.0, 0.0, 1.0]);
        let r = b(&s, &[0.0, 1.0, 0.0]);
        // pairs: (p,q)=1.0, (p,r)=0.5, (q,r)=0.5 -> mean 2/3
        let v = unified_distance(&[p, q, r]).unwrap();
        assert_abs_diff_eq!(v, 2.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn dispersion_of_mirrored_pair() {
        let s = cat(2);
        let p = b(&s, &[0.75, 0.25]);
        let q = b(&s, &[0.25, 0.75]);
        assert_abs_diff_eq!(dispersion_kl(&[p, q]).unwrap(), 0.188722, epsilon = 5e-7);
    }

    #[test]
    fn dispersion_zero_iff_identical() {
        let s = cat(3);
        let p = b(&s, &[0.2, 0.5, 0.3]);
        assert_abs_diff_eq!(dispersion_kl(&[p.clone(), p.clone()]).unwrap(), 0.0, epsilon = 1e-15);
        let q = b(&s, &[0.21, 0.49, 0.3]);
        assert!(dispersion_kl(&[p, q]).unwrap() > 0.0);
    }

    #[test]
    fn overlap_counts_shared_ids() {
        let a: BTreeSet<String> = ["s1", "s2"].iter().map(|s| s.to_string()).collect();
        let c: BTreeSet<String> = ["s2", "s3"].iter().map(|s| s.to_string()).collect();
        let (v, vac) = span_overlap(&a, &c);
        assert_abs_diff_eq!(v, 1.0 / 3.0, epsilon = 1e-15);
        assert!(!vac);
    }

    #[test]
    fn overlap_empty_sets_score_one_with_flag() {
        let e = BTreeSet::new();
        let (v, vac) = span_overlap(&e, &e);
        assert_eq!(v, 1.0);
        assert!(vac);
    }

    #[test]
    fn overlap_disjoint_sets_score_zero() {
        let a: BTreeSet<String> = ["s1"].iter().map(|s| s.to_string()).collect();
        let c: BTreeSet<String> = ["s2"].iter().map(|s| s.to_string()).collect();
        assert_eq!(span_overlap(&a, &c), (0.0, false));
    }

    #[test]
    fn info_gain_normalizes_by_space_size() {
        let s = cat(4);
        let prev = b(&s, &[0.25, 0.25, 0.25, 0.25]); // H = 2 bits
        let cur = b(&s, &[0.5, 0.5, 0.0, 0.0]); // H = 1 bit
        assert_abs_diff_eq!(information_gain(&prev, &cur).unwrap(), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn info_gain_clamps_entropy_increase_to_zero() {
        let s = cat(4);
        let prev = b(&s, &[0.5, 0.5, 0.0, 0.0]);
        let cur = b(&s, &[0.25, 0.25, 0.25, 0.25]);
        assert_eq!(information_gain(&prev, &cur).unwrap(), 0.0);
    }

    #[test]
    fn info_gain_permutation_invariant() {
        let s = cat(4);
        let prev = b(&s, &[0.4, 0.3, 0.2, 0.1]);
        let cur = b(&s, &[0.7, 0.1, 0.1, 0.1]);
        let g1 = information_gain(&prev, &cur).unwrap();
        let prev_p = b(&s, &[0.1, 0.2, 0.3, 0.4]);
        let cur_p = b(&s, &[0.1, 0.1, 0.1, 0.7]);
        let g2 = information_gain(&prev_p, &cur_p).unwrap();
        assert_abs_diff_eq!(g1, g2, epsilon = 1e-15);
    }

    #[test]
    fn logged_mi_of_disjoint_point_masses_is_one() {
        let s = cat(2);
        let beliefs = vec![b(&s, &[1.0, 0.0]), b(&s, &[0.0, 1.0])];
        let m = logged_metrics(&beliefs, &[0.5, 0.5]).unwrap();
        assert_abs_diff_eq!(m.mi, 1.0, epsilon = 1e-12);
    }

    /// Cross-entropy to the mixture dominates the weighted mean entropy
    /// (Gibbs' inequality), with equality only when all beliefs coincide.
    #[test]
    fn logged_ce_dominates_weighted_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(505);
        for _ in 0..1000 {
            let n = rng.random_range(2..6);
            let s = cat(n);
            let p = random_belief(&mut rng, &s);
            let q = random_belief(&mut rng, &s);
            let w: f64 = rng.random_range(0.05..0.95);
            let metrics = logged_metrics(&[p.clone(), q.clone()], &[w, 1.0 - w]).unwrap();
            let mean_h = w * p.entropy_bits() + (1.0 - w) * q.entropy_bits();
            assert!(metrics.ce >= mean_h - 1e-9);
        }
    }

    struct FixedEmbedder {
        dim: usize,
        map: std::collections::BTreeMap<String, Vec<f64>>,
    }

    impl EmbeddingProvider for FixedEmbedder {
        fn dimension(&self) -> usize {
            self.dim
        }
        fn embed(&self, span: &EvidenceSpan) -> Result<EmbeddingVector> {
            self.map
                .get(&span.id)
                .cloned()
                .map(EmbeddingVector)
                .ok_or_else(|| Error::Backend {
                    backend: "fixed-embedder".into(),
                    reason: format!("unknown span {}", span.id),
                })
        }
    }

    fn span(id: &str) -> EvidenceSpan {
        EvidenceSpan { id: id.into(), text: format!("text {id}"), source: "test".into() }
    }

    #[test]
    fn evidence_quality_clamps_and_reports_raw() {
        let mut map = std::collections::BTreeMap::new();
        map.insert("s1".to_string(), vec![-1.0, 0.0]);
        let provider = FixedEmbedder { dim: 2, map };
        let theta = EmbeddingVector(vec![1.0, 0.0]);
        let eq = evidence_quality(&[span("s1")], &provider, &theta).unwrap();
        assert_eq!(eq.gate, 0.0);
        assert_abs_diff_eq!(eq.raw, -1.0, epsilon = 1e-12);
    }

    #[test]
    fn evidence_quality_ignores_duplicates_and_rescaling() {
        let mut map = std::collections::BTreeMap::new();
        map.insert("s1".to_string(), vec![1.0, 1.0]);
        map.insert("s2".to_string(), vec![1.0, 0.0]);
        let provider = FixedEmbedder { dim: 2, map: map.clone() };
        let theta = EmbeddingVector(vec![1.0, 0.0]);
        let base = evidence_quality(&[span("s1"), span("s2")], &provider, &theta).unwrap();
        let dup = evidence_quality(&[span("s1"), span("s2"), span("s1")], &provider, &theta).unwrap();
        assert_abs_diff_eq!(base.gate, dup.gate, epsilon = 1e-15);

        let mut scaled = map;
        scaled.insert("s1".to_string(), vec![42.0, 42.0]);
        let provider2 = FixedEmbedder { dim: 2, map: scaled };
        let rescaled = evidence_quality(&[span("s1"), span("s2")], &provider2, &theta).unwrap();
        assert_abs_diff_eq!(base.gate, rescaled.gate, epsilon = 1e-12);
    }

    #[test]
    fn evidence_quality_rejects_empty_span_set() {
        let provider = FixedEmbedder { dim: 2, map: Default::default() };
        let theta = EmbeddingVector(vec![1.0, 0.0]);
        assert!(evidence_quality(&[], &provider, &theta).is_err());
    }
}
