//! Seeded, hash-based span embeddings for simulation and replay.
//!
//! Every span id maps to a stable unit vector derived from a SHA-256 hash of
//! (seed, id), so embeddings are identical across runs and platforms. Spans
//! whose `source` is tagged "on-target" are planted close to the debate's
//! target direction theta (cosine well above 0.8); "off-target" spans are
//! planted nearly orthogonal (cosine below 0.2); anything else gets an
//! arbitrary hashed direction.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::belief::EvidenceSpan;
use crate::error::{Error, Result};
use crate::signals::{EmbeddingProvider, EmbeddingVector};

pub const ON_TARGET: &str = "on-target";
pub const OFF_TARGET: &str = "off-target";

/// Planted cosine ranges for tagged spans.
const ON_RANGE: (f64, f64) = (0.93, 0.97);
const OFF_RANGE: (f64, f64) = (0.03, 0.12);

#[derive(Debug, Clone)]
pub struct DeterministicEmbedder {
    dimension: usize,
    seed: u64,
    theta: EmbeddingVector,
}

impl DeterministicEmbedder {
    pub fn new(dimension: usize, seed: u64) -> Result<Self> {
        if dimension < 2 {
            return Err(Error::Parameter("embedding dimension must be at least 2".into()));
        }
        let mut partial = Self { dimension, seed, theta: EmbeddingVector(vec![0.0; dimension]) };
        partial.theta = partial.unit_from_tag("__theta__")?;
        Ok(partial)
    }

    /// The target direction evidence quality is measured against.
    pub fn theta(&self) -> &EmbeddingVector {
        &self.theta
    }

    fn rng_for(&self, tag: &str) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update([0x1f]);
        h.update(tag.as_bytes());
        let digest = h.finalize();
        let mut key = [0u8; 32];
        key.copy_from_slice(&digest);
        ChaCha8Rng::from_seed(key)
    }

    fn unit_from_tag(&self, tag: &str) -> Result<EmbeddingVector> {
        let mut rng = self.rng_for(tag);
        for attempt in 0..16 {
            let v: Vec<f64> = (0..self.dimension).map(|_| rng.random_range(-1.0..1.0)).collect();
            let vec = EmbeddingVector(v);
            if vec.norm() > 1e-6 {
                return vec.normalized();
            }
            let _ = attempt;
        }
        Err(Error::Domain(format!("could not derive a unit vector for '{tag}'")))
    }

    /// Unit vector at a planted cosine to theta, direction seeded by the tag.
    fn planted(&self, tag: &str, range: (f64, f64)) -> Result<EmbeddingVector> {
        let mut rng = self.rng_for(tag);
        let cos = rng.random_range(range.0..range.1);
        // Build a direction orthogonal to theta out of a hashed draw.
        let mut ortho = None;
        for salt in 0..16 {
            let u = self.unit_from_tag(&format!("{tag}#ortho{salt}"))?;
            let along = u.dot(&self.theta)?;
            let mut w: Vec<f64> = u
                .0
                .iter()
                .zip(&self.theta.0)
                .map(|(ui, ti)| ui - along * ti)
                .collect();
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-6 {
                for x in w.iter_mut() {
                    *x /= norm;
                }
                ortho = Some(EmbeddingVector(w));
                break;
            }
        }
        let w = ortho.ok_or_else(|| Error::Domain("no orthogonal direction found".into()))?;
        let sin = (1.0 - cos * cos).sqrt();
        let v: Vec<f64> = self
            .theta
            .0
            .iter()
            .zip(&w.0)
            .map(|(t, o)| cos * t + sin * o)
            .collect();
        EmbeddingVector(v).normalized()
    }
}

impl EmbeddingProvider for DeterministicEmbedder {
    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, span: &EvidenceSpan) -> Result<EmbeddingVector> {
        match span.source.as_str() {
            ON_TARGET => self.planted(&span.id, ON_RANGE),
            OFF_TARGET => self.planted(&span.id, OFF_RANGE),
            _ => self.unit_from_tag(&span.id),
        }
    }
}
