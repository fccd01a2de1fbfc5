use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_p: f64,
    /// Upper bound on the whole output sequence, prompt included.
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { temperature: 1.0, top_p: 0.95, max_tokens: 1024, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(ModelError::InvalidSampler(format!("temperature must be positive, got {}", self.temperature)));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(ModelError::InvalidSampler(format!("top_p must be in (0, 1], got {}", self.top_p)));
        }
        Ok(())
    }
}

/// Absorbs rounding in the cumulative sum.
const TOP_P_TOLERANCE: f64 = 1e-12;

/// Probabilities of the nucleus: the smallest set of most likely allowed
/// tokens whose mass reaches `top_p`, renormalized. Returned as
/// `(token, probability)` in descending probability order.
pub fn nucleus(logits: &[f64], allowed: &[bool], temperature: f64, top_p: f64) -> Vec<(usize, f64)> {
    let mut cand: Vec<(usize, f64)> =
        (0..logits.len()).filter(|&i| allowed[i]).map(|i| (i, logits[i] / temperature)).collect();
    if cand.is_empty() {
        return cand;
    }
    let max = cand.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for c in &mut cand {
        c.1 = (c.1 - max).exp();
        sum += c.1;
    }
    for c in &mut cand {
        c.1 /= sum;
    }
    cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut mass = 0.0;
    let mut keep = 0;
    let target = top_p - TOP_P_TOLERANCE;
    while keep < cand.len() {
        mass += cand[keep].1;
        keep += 1;
        if mass >= target {
            break;
        }
    }
    cand.truncate(keep);
    let kept: f64 = cand.iter().map(|c| c.1).sum();
    cand.iter_mut().for_each(|c| c.1 /= kept);
    cand
}

/// Draws one token from the nucleus. Returns `None` when nothing is allowed.
pub fn sample(logits: &[f64], allowed: &[bool], temperature: f64, top_p: f64, rng: &mut impl Rng) -> Option<usize> {
    let cand = nucleus(logits, allowed, temperature, top_p);
    let last = cand.last()?.0;
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in &cand {
        acc += p;
        if u < acc {
            return Some(*i);
        }
    }
    Some(last)
}
