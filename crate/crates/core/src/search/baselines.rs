use std::cmp::Ordering;
use std::time::Instant;

use rand::Rng;

use super::{make_record, step};
use crate::dist::{argmax, nucleus_filter, sample_index, top_k_filter};
use crate::error::{invalid, Result};
use crate::lm::LanguageModel;
use crate::types::{GenerationParams, GenerationRecord, TokenId, TokenSequence};

fn start<L: LanguageModel + ?Sized>(lm: &L, prompt: &[TokenId], gen: &GenerationParams) -> Result<TokenSequence> {
    gen.validate()?;
    lm.vocabulary().check_ids(prompt)?;
    Ok(TokenSequence::from_prompt(prompt.to_vec()))
}

/// Applies the top-k then top-p truncation configured in `gen`.
fn truncate(probs: Vec<f64>, gen: &GenerationParams) -> Result<Vec<f64>> {
    let probs = match gen.top_k {
        Some(k) => top_k_filter(&probs, k)?,
        None => probs,
    };
    match gen.top_p {
        Some(p) => nucleus_filter(&probs, p),
        None => Ok(probs),
    }
}

/// Picks the most probable token of the penalized distribution at every step.
pub fn greedy_decode<L: LanguageModel + ?Sized>(
    prompt: &[TokenId],
    lm: &L,
    gen: &GenerationParams,
) -> Result<GenerationRecord> {
    let started = Instant::now();
    let mut seq = start(lm, prompt, gen)?;
    let eos = lm.vocabulary().eos_id();
    let mut loglik = 0.0;
    while !seq.is_terminal() {
        let s = step(lm, &seq, gen)?;
        let tok = argmax(&s.probs);
        loglik += s.raw_logprobs[tok];
        seq.push(tok, eos, gen.max_new_tokens);
    }
    Ok(make_record(lm, "greedy", gen, seq, loglik, gen.seed, started))
}

/// Ancestral sampling with the top-k / nucleus truncation configured in `gen`.
/// One uniform draw per generated token.
pub fn sample_decode<L: LanguageModel + ?Sized, R: Rng + ?Sized>(
    prompt: &[TokenId],
    lm: &L,
    gen: &GenerationParams,
    rng: &mut R,
) -> Result<GenerationRecord> {
    let started = Instant::now();
    let mut seq = start(lm, prompt, gen)?;
    let eos = lm.vocabulary().eos_id();
    let mut loglik = 0.0;
    while !seq.is_terminal() {
        let s = step(lm, &seq, gen)?;
        let tok = sample_index(&truncate(s.probs, gen)?, rng);
        loglik += s.raw_logprobs[tok];
        seq.push(tok, eos, gen.max_new_tokens);
    }
    Ok(make_record(lm, "sample", gen, seq, loglik, gen.seed, started))
}

#[derive(Clone)]
struct Hypothesis {
    seq: TokenSequence,
    /// Joint log-probability under the decoding distribution.
    score: f64,
    loglik: f64,
}

fn by_score(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.seq.tokens().cmp(b.seq.tokens()))
}

fn finish<L: LanguageModel + ?Sized>(
    lm: &L,
    method: &str,
    params: serde_json::Value,
    beams: Vec<Hypothesis>,
    seed: u64,
    started: Instant,
) -> Vec<GenerationRecord> {
    let mut records: Vec<GenerationRecord> =
        beams.into_iter().map(|h| make_record(lm, method, &params, h.seq, h.loglik, seed, started)).collect();
    records.sort_by(|a, b| b.loglik.total_cmp(&a.loglik).then_with(|| a.output.tokens().cmp(b.output.tokens())));
    records
}

/// Length-synchronized beam search; finished hypotheses stay in the beam
/// with their final score. Records come back sorted by log-likelihood.
pub fn beam_search<L: LanguageModel + ?Sized>(
    prompt: &[TokenId],
    lm: &L,
    gen: &GenerationParams,
    beam_width: usize,
) -> Result<Vec<GenerationRecord>> {
    if beam_width < 1 {
        return Err(invalid("beam width must be >= 1"));
    }
    let started = Instant::now();
    let root = start(lm, prompt, gen)?;
    let eos = lm.vocabulary().eos_id();
    let mut beams = vec![Hypothesis { seq: root, score: 0.0, loglik: 0.0 }];
    while beams.iter().any(|h| !h.seq.is_terminal()) {
        let mut candidates = Vec::new();
        for h in beams {
            if h.seq.is_terminal() {
                candidates.push(h);
                continue;
            }
            let s = step(lm, &h.seq, gen)?;
            for (tok, &p) in s.probs.iter().enumerate() {
                if p > 0.0 {
                    candidates.push(Hypothesis {
                        seq: h.seq.with_token(tok, eos, gen.max_new_tokens),
                        score: h.score + p.ln(),
                        loglik: h.loglik + s.raw_logprobs[tok],
                    });
                }
            }
        }
        candidates.sort_by(by_score);
        candidates.truncate(beam_width);
        beams = candidates;
    }
    let params = serde_json::json!({ "generation": gen, "beam_width": beam_width });
    Ok(finish(lm, "beam", params, beams, gen.seed, started))
}

/// Draws up to `k` distinct indices without replacement, one uniform draw each.
fn sample_distinct<R: Rng + ?Sized>(weights: &[f64], k: usize, rng: &mut R) -> Vec<usize> {
    let mut w = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    while out.len() < k && w.iter().any(|&x| x > 0.0) {
        let i = sample_index(&w, rng);
        out.push(i);
        w[i] = 0.0;
    }
    out
}

/// Beam sampling: every live beam samples `k` distinct continuations, the
/// at most `k²` candidates (plus frozen finished beams) are pruned back to the
/// `k` most probable, until every beam is finished.
pub fn beam_sample<L: LanguageModel + ?Sized, R: Rng + ?Sized>(
    prompt: &[TokenId],
    lm: &L,
    gen: &GenerationParams,
    k: usize,
    rng: &mut R,
) -> Result<Vec<GenerationRecord>> {
    if k < 1 {
        return Err(invalid("beam width must be >= 1"));
    }
    let started = Instant::now();
    let root = start(lm, prompt, gen)?;
    let eos = lm.vocabulary().eos_id();
    let mut beams = vec![Hypothesis { seq: root, score: 0.0, loglik: 0.0 }];
    while beams.iter().any(|h| !h.seq.is_terminal()) {
        let mut candidates = Vec::with_capacity(k * k);
        for h in beams {
            if h.seq.is_terminal() {
                candidates.push(h);
                continue;
            }
            let s = step(lm, &h.seq, gen)?;
            let probs = truncate(s.probs, gen)?;
            for tok in sample_distinct(&probs, k, rng) {
                candidates.push(Hypothesis {
                    seq: h.seq.with_token(tok, eos, gen.max_new_tokens),
                    score: h.score + probs[tok].ln(),
                    loglik: h.loglik + s.raw_logprobs[tok],
                });
            }
        }
        assert!(candidates.len() <= k * k, "beam sampling produced more than k^2 candidates");
        candidates.sort_by(by_score);
        candidates.truncate(k);
        beams = candidates;
    }
    let params = serde_json::json!({ "generation": gen, "beam_width": k });
    Ok(finish(lm, "beam_sample", params, beams, gen.seed, started))
}
