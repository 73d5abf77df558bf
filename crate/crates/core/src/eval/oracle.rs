//! Brute-force search over every terminal continuation of a prompt.

use crate::discriminator::{mix_scores, Discriminator};
use crate::error::{invalid, Error, Result};
use crate::lm::{next_log_probs, LanguageModel};
use crate::types::{ConstraintSpec, TokenId, TokenSequence};

/// Largest `|emit vocab|^max_len` the oracle agrees to enumerate.
pub const ORACLE_LIMIT: u128 = 1_000_000;

#[derive(Debug, Clone)]
pub struct ScoredSequence {
    pub sequence: TokenSequence,
    pub loglik: f64,
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct OracleResult {
    pub best: TokenSequence,
    pub best_score: f64,
    /// Every terminal sequence in lexicographic order of generated tokens.
    pub table: Vec<ScoredSequence>,
}

impl OracleResult {
    /// True when `tokens` is a prefix of some sequence attaining the best score.
    pub fn is_optimal_prefix(&self, tokens: &[TokenId]) -> bool {
        self.table.iter().any(|s| s.score == self.best_score && s.sequence.generated().starts_with(tokens))
    }
}

/// Number of terminal sequences of `1..=max_len` tokens over `words` non-eos
/// emit tokens: every eos-ended prefix plus the length-capped ones.
pub fn leaf_count(words: usize, max_len: usize) -> u128 {
    let w = words as u128;
    let mut total = 0u128;
    let mut level = 1u128;
    for _ in 0..max_len {
        total += level;
        level *= w;
    }
    total + level
}

/// Scores every terminal continuation of `prompt` of at most `max_len`
/// generated tokens under the raw model likelihood. Tokens with zero model
/// probability are not extended. Ties go to the lexicographically first
/// sequence.
pub fn exhaustive_oracle<L, D>(
    lm: &L,
    disc: &D,
    spec: &ConstraintSpec,
    prompt: &[TokenId],
    max_len: usize,
) -> Result<OracleResult>
where
    L: LanguageModel + ?Sized,
    D: Discriminator + ?Sized,
{
    let vocab = lm.vocabulary();
    spec.validate(disc.num_classes())?;
    if prompt.is_empty() {
        return Err(invalid("empty prompt"));
    }
    if max_len == 0 {
        return Err(invalid("max_len must be >= 1"));
    }
    vocab.check_ids(prompt)?;
    let size = (vocab.emit_size() as u128).checked_pow(max_len as u32).unwrap_or(u128::MAX);
    if size > ORACLE_LIMIT {
        return Err(Error::GuardExceeded { size, limit: ORACLE_LIMIT });
    }
    let eos = vocab.eos_id();
    let mut table = Vec::new();
    // explicit stack, children pushed in reverse so ids come out ascending
    let mut stack = vec![(TokenSequence::from_prompt(prompt.to_vec()), 0.0f64)];
    while let Some((seq, ll)) = stack.pop() {
        if seq.is_terminal() {
            let p = if spec.alpha > 0.0 { disc.class_prob(seq.generated(), spec.class_id)? } else { 1.0 };
            let score = mix_scores(p, ll, seq.generated_len(), spec);
            table.push(ScoredSequence { sequence: seq, loglik: ll, score });
            continue;
        }
        let lp = next_log_probs(lm, seq.tokens())?;
        for tok in vocab.emit_ids().collect::<Vec<_>>().into_iter().rev() {
            if lp[tok] == f64::NEG_INFINITY {
                continue;
            }
            stack.push((seq.with_token(tok, eos, max_len), ll + lp[tok]));
        }
    }
    let mut best = 0;
    for (i, s) in table.iter().enumerate() {
        if s.score > table[best].score {
            best = i;
        }
    }
    let Some(top) = table.get(best) else {
        return Err(invalid("model assigns zero probability to every continuation"));
    };
    Ok(OracleResult { best: top.sequence.clone(), best_score: top.score, table })
}
