//! Temperature softmax, the CTRL-style repetition penalty, and the
//! truncation/sampling helpers built on normalized probability vectors.
//!
//! Logits may contain `-inf` entries (masked tokens such as bos); these get
//! probability exactly zero. `NaN` and `+inf` are rejected.

use rand::Rng;

use crate::error::{invalid, Result};
use crate::types::TokenId;

fn check_logits(logits: &[f64]) -> Result<f64> {
    if logits.is_empty() {
        return Err(invalid("empty logit vector"));
    }
    let mut max = f64::NEG_INFINITY;
    for &z in logits {
        if z.is_nan() || z == f64::INFINITY {
            return Err(invalid("non-finite logit"));
        }
        if z > max {
            max = z;
        }
    }
    if max == f64::NEG_INFINITY {
        return Err(invalid("every logit is masked"));
    }
    Ok(max)
}

fn check_temperature(tau: f64) -> Result<()> {
    if !tau.is_finite() || tau <= 0.0 {
        return Err(invalid("temperature must be positive and finite"));
    }
    Ok(())
}

/// Normalizes already-scaled logits with max subtraction.
fn normalize_scaled(scaled: &mut [f64]) {
    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for z in scaled.iter_mut() {
        *z = (*z - max).exp();
        sum += *z;
    }
    for z in scaled.iter_mut() {
        *z /= sum;
    }
}

pub fn softmax_with_temperature(logits: &[f64], tau: f64) -> Result<Vec<f64>> {
    check_temperature(tau)?;
    check_logits(logits)?;
    let mut out: Vec<f64> = logits.iter().map(|z| z / tau).collect();
    normalize_scaled(&mut out);
    Ok(out)
}

/// Log-softmax at temperature 1.
pub fn log_softmax(logits: &[f64]) -> Result<Vec<f64>> {
    let max = check_logits(logits)?;
    let lse = max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
    Ok(logits.iter().map(|z| z - lse).collect())
}

/// Every token present in `context` has its logit divided by `tau * penalty`,
/// every other token by `tau`, then the result is normalized.
///
/// The division is applied verbatim: a negative logit moves towards zero, so
/// with log-probability logits a repeated token *gains* mass.
pub fn apply_repetition_penalty(logits: &[f64], context: &[TokenId], penalty: f64, tau: f64) -> Result<Vec<f64>> {
    check_temperature(tau)?;
    if !penalty.is_finite() || penalty < 1.0 {
        return Err(invalid("repetition penalty must be >= 1"));
    }
    check_logits(logits)?;
    let mut seen = vec![false; logits.len()];
    for &t in context {
        if let Some(s) = seen.get_mut(t) {
            *s = true;
        }
    }
    let mut out: Vec<f64> =
        logits.iter().zip(&seen).map(|(z, &s)| if s { z / (tau * penalty) } else { z / tau }).collect();
    normalize_scaled(&mut out);
    Ok(out)
}

/// Index of the largest entry; lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Draws one index proportionally to `weights` using a single uniform draw.
pub fn sample_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> usize {
    let total: f64 = weights.iter().sum();
    let u: f64 = rng.gen::<f64>() * total;
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > 0.0 {
            cum += w;
            last_nonzero = i;
            if u < cum {
                return i;
            }
        }
    }
    last_nonzero
}

/// Indices sorted by descending probability, ties by ascending index.
fn sorted_indices(probs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..probs.len()).collect();
    idx.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    idx
}

fn renormalize_subset(probs: &[f64], keep: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; probs.len()];
    for &i in keep {
        out[i] = probs[i];
    }
    if out == probs {
        return out;
    }
    let mass: f64 = keep.iter().map(|&i| probs[i]).sum();
    for &i in keep {
        out[i] /= mass;
    }
    out
}

/// Zeroes all but the `k` most probable entries and renormalizes.
pub fn top_k_filter(probs: &[f64], k: usize) -> Result<Vec<f64>> {
    if k < 1 {
        return Err(invalid("top-k requires k >= 1"));
    }
    let idx = sorted_indices(probs);
    let keep = &idx[..k.min(idx.len())];
    Ok(renormalize_subset(probs, keep))
}

/// Keeps the smallest probability-sorted prefix whose mass reaches `p`.
pub fn nucleus_filter(probs: &[f64], p: f64) -> Result<Vec<f64>> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid("nucleus mass must lie in (0, 1]"));
    }
    let idx = sorted_indices(probs);
    let mut cum = 0.0;
    let mut cut = idx.len();
    for (n, &i) in idx.iter().enumerate() {
        cum += probs[i];
        if cum >= p - 1e-12 {
            cut = n + 1;
            break;
        }
    }
    Ok(renormalize_subset(probs, &idx[..cut]))
}

pub fn topk_sample<R: Rng + ?Sized>(probs: &[f64], k: usize, rng: &mut R) -> Result<TokenId> {
    Ok(sample_index(&top_k_filter(probs, k)?, rng))
}

pub fn nucleus_sample<R: Rng + ?Sized>(probs: &[f64], p: f64, rng: &mut R) -> Result<TokenId> {
    Ok(sample_index(&nucleus_filter(probs, p)?, rng))
}
