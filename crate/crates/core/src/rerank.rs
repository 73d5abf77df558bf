//! Generate-then-re-rank: build a pool of complete proposals with a
//! likelihood-only decoder, then pick one with the discriminator.

use std::cmp::Ordering;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::{mix_log_scores, Discriminator};
use crate::dist::sample_index;
use crate::error::{invalid, Result};
use crate::lm::LanguageModel;
use crate::search::{beam_sample, beam_search, sample_decode};
use crate::types::{ConstraintSpec, GenerationParams, GenerationRecord, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolMethod {
    Beam,
    Sampling,
    BeamSampling,
}

impl PoolMethod {
    /// 50 proposals for beam search and sampling, 10 for beam sampling.
    pub fn default_size(self) -> usize {
        match self {
            PoolMethod::Beam | PoolMethod::Sampling => 50,
            PoolMethod::BeamSampling => 10,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            PoolMethod::Beam => "beam",
            PoolMethod::Sampling => "sampling",
            PoolMethod::BeamSampling => "beam_sampling",
        }
    }
}

impl std::str::FromStr for PoolMethod {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beam" => Ok(PoolMethod::Beam),
            "sampling" => Ok(PoolMethod::Sampling),
            "beam_sampling" | "beam-sampling" => Ok(PoolMethod::BeamSampling),
            _ => Err(invalid(format!("unknown pool method {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectRule {
    Argmax,
    FirstTrue,
    Sampling,
}

impl SelectRule {
    pub fn name(self) -> &'static str {
        match self {
            SelectRule::Argmax => "argmax",
            SelectRule::FirstTrue => "first_true",
            SelectRule::Sampling => "sampling",
        }
    }
}

impl std::str::FromStr for SelectRule {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "argmax" => Ok(SelectRule::Argmax),
            "first_true" | "first-true" => Ok(SelectRule::FirstTrue),
            "sampling" => Ok(SelectRule::Sampling),
            _ => Err(invalid(format!("unknown selection rule {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposalPool {
    pub records: Vec<GenerationRecord>,
    pub generator: PoolMethod,
}

impl ProposalPool {
    pub fn new(records: Vec<GenerationRecord>, generator: PoolMethod) -> Result<Self> {
        let first = records.first().ok_or_else(|| invalid("empty proposal pool"))?;
        if records.iter().any(|r| r.prompt() != first.prompt()) {
            return Err(invalid("pool records must share one prompt"));
        }
        Ok(ProposalPool { records, generator })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

pub fn generate_pool<L: LanguageModel + ?Sized, R: Rng + ?Sized>(
    prompt: &[TokenId],
    lm: &L,
    method: PoolMethod,
    size: usize,
    gen: &GenerationParams,
    rng: &mut R,
) -> Result<ProposalPool> {
    if size < 1 {
        return Err(invalid("pool size must be >= 1"));
    }
    let records = match method {
        PoolMethod::Beam => beam_search(prompt, lm, gen, size)?,
        PoolMethod::Sampling => (0..size).map(|_| sample_decode(prompt, lm, gen, rng)).collect::<Result<_>>()?,
        PoolMethod::BeamSampling => beam_sample(prompt, lm, gen, size, rng)?,
    };
    ProposalPool::new(records, method)
}

/// Whether the guiding discriminator assigns `tokens` to `target`:
/// probability above one half for two classes, argmax otherwise.
pub fn classified_as<D: Discriminator + ?Sized>(disc: &D, tokens: &[TokenId], target: usize) -> Result<bool> {
    if disc.num_classes() == 2 {
        Ok(disc.class_prob(tokens, target)? > 0.5)
    } else {
        Ok(disc.predict(tokens)? == target)
    }
}

fn by_loglik(a: &GenerationRecord, b: &GenerationRecord) -> Ordering {
    b.loglik.total_cmp(&a.loglik).then_with(|| a.output.tokens().cmp(b.output.tokens()))
}

/// Chooses one proposal.
///
/// Scores are `p_D(c|x)^α · L^(1-α)` computed from each record's stored
/// log-likelihood; with `α = 1` this is the discriminator probability alone.
pub fn select<D: Discriminator + ?Sized, R: Rng + ?Sized>(
    pool: &ProposalPool,
    disc: &D,
    spec: &ConstraintSpec,
    rule: SelectRule,
    rng: &mut R,
) -> Result<GenerationRecord> {
    spec.validate(disc.num_classes())?;
    let seqs: Vec<&[TokenId]> = pool.records.iter().map(|r| r.generated()).collect();
    let probs = disc.class_prob_batch(&seqs, spec.class_id)?;
    let log_scores: Vec<f64> = pool
        .records
        .iter()
        .zip(&probs)
        .map(|(r, &p)| mix_log_scores(p, r.loglik, r.output.generated_len(), spec))
        .collect();

    let argmax_index = || {
        (0..pool.len())
            .min_by(|&a, &b| {
                log_scores[b].total_cmp(&log_scores[a]).then_with(|| by_loglik(&pool.records[a], &pool.records[b]))
            })
            .expect("non-empty pool")
    };

    let chosen = match rule {
        SelectRule::Argmax => argmax_index(),
        SelectRule::FirstTrue => {
            let mut order: Vec<usize> = (0..pool.len()).collect();
            order.sort_by(|&a, &b| by_loglik(&pool.records[a], &pool.records[b]));
            let mut hit = None;
            for i in order {
                if classified_as(disc, seqs[i], spec.class_id)? {
                    hit = Some(i);
                    break;
                }
            }
            hit.unwrap_or_else(argmax_index)
        }
        SelectRule::Sampling => {
            let max = log_scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = if max == f64::NEG_INFINITY {
                vec![1.0; pool.len()]
            } else {
                log_scores.iter().map(|s| (s - max).exp()).collect()
            };
            sample_index(&weights, rng)
        }
    };

    let mut rec = pool.records[chosen].clone();
    rec.method = format!("rerank:{}-{}", pool.generator.name(), rule.name());
    rec.target = Some(spec.class_id);
    rec.class_prob = Some(probs[chosen]);
    rec.params = serde_json::json!({
        "pool": pool.generator,
        "pool_size": pool.len(),
        "select": rule,
        "constraint": spec,
        "proposal": rec.params,
    });
    Ok(rec)
}

/// Pool generation followed by selection, timed as one job.
#[allow(clippy::too_many_arguments)]
pub fn rerank_generate<L, D, R>(
    prompt: &[TokenId],
    lm: &L,
    disc: &D,
    spec: &ConstraintSpec,
    method: PoolMethod,
    size: usize,
    rule: SelectRule,
    gen: &GenerationParams,
    rng: &mut R,
) -> Result<GenerationRecord>
where
    L: LanguageModel + ?Sized,
    D: Discriminator + ?Sized,
    R: Rng + ?Sized,
{
    let started = Instant::now();
    let pool = generate_pool(prompt, lm, method, size, gen, rng)?;
    let mut rec = select(&pool, disc, spec, rule, rng)?;
    rec.duration_ms = started.elapsed().as_secs_f64() * 1e3;
    Ok(rec)
}
