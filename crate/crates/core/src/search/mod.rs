//! Decoders: discriminator-guided tree search and the likelihood-only
//! baselines (greedy, top-k / nucleus sampling, beam search, beam sampling).

mod baselines;
mod mcts;

pub use baselines::{beam_sample, beam_search, greedy_decode, sample_decode};
pub use mcts::{
    mcts_decode_token, mcts_generate, puct, Aggregation, Commitment, MctsDecoder, MctsParams, NodeId, Rollout,
    SearchNode, SearchTree,
};

use std::time::Instant;

use serde::Serialize;

use crate::dist::{apply_repetition_penalty, log_softmax};
use crate::error::{Error, Result};
use crate::lm::LanguageModel;
use crate::types::{GenerationParams, GenerationRecord, TokenSequence};

/// The decoding distribution for one step and the model's own
/// log-probabilities (temperature 1, no penalty) for likelihood bookkeeping.
pub(crate) struct Step {
    pub probs: Vec<f64>,
    pub raw_logprobs: Vec<f64>,
}

pub(crate) fn step<L: LanguageModel + ?Sized>(lm: &L, seq: &TokenSequence, gen: &GenerationParams) -> Result<Step> {
    let vocab = lm.vocabulary();
    let mut logits = lm.next_logits(seq.tokens())?.logits;
    if logits.len() != vocab.len() {
        return Err(Error::Protocol(format!("expected {} logits, got {}", vocab.len(), logits.len())));
    }
    let raw_logprobs = log_softmax(&logits)?;
    logits[vocab.bos_id()] = f64::NEG_INFINITY;
    if gen.fixed_length {
        logits[vocab.eos_id()] = f64::NEG_INFINITY;
    }
    let probs = apply_repetition_penalty(&logits, seq.tokens(), gen.repetition_penalty, gen.temperature)?;
    Ok(Step { probs, raw_logprobs })
}

pub(crate) fn make_record<L: LanguageModel + ?Sized, P: Serialize>(
    lm: &L,
    method: &str,
    params: &P,
    seq: TokenSequence,
    loglik: f64,
    seed: u64,
    started: Instant,
) -> GenerationRecord {
    GenerationRecord {
        method: method.to_string(),
        params: serde_json::to_value(params).unwrap_or(serde_json::Value::Null),
        text: lm.vocabulary().decode(seq.generated()),
        output: seq,
        target: None,
        loglik,
        class_prob: None,
        seed,
        duration_ms: started.elapsed().as_secs_f64() * 1e3,
    }
}
