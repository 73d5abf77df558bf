//! Oracle accuracy, oracle perplexity and Self-BLEU.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::discriminator::Discriminator;
use crate::error::{invalid, Result};
use crate::lm::{next_log_probs, LanguageModel};
use crate::types::{GenerationRecord, TokenId};

/// Fraction of records the oracle assigns to their target class.
pub fn accuracy<D: Discriminator + ?Sized>(records: &[GenerationRecord], oracle: &D, targets: &[usize]) -> Result<f64> {
    Ok(mean_bool(&correctness(records, oracle, targets)?))
}

/// Per-record oracle verdicts; useful for standard errors.
pub fn correctness<D: Discriminator + ?Sized>(
    records: &[GenerationRecord],
    oracle: &D,
    targets: &[usize],
) -> Result<Vec<bool>> {
    if records.is_empty() {
        return Err(invalid("no records to evaluate"));
    }
    if records.len() != targets.len() {
        return Err(invalid("one target per record required"));
    }
    records.iter().zip(targets).map(|(r, &t)| Ok(oracle.predict(r.generated())? == t)).collect()
}

fn mean_bool(v: &[bool]) -> f64 {
    v.iter().filter(|&&b| b).count() as f64 / v.len() as f64
}

/// Targets stored on the records themselves.
pub fn record_targets(records: &[GenerationRecord]) -> Result<Vec<usize>> {
    records.iter().map(|r| r.target.ok_or_else(|| invalid("record has no target class"))).collect()
}

/// `exp(-mean log p)` pooled over every generated token of every record,
/// each token conditioned on its full preceding context.
pub fn oracle_perplexity<L: LanguageModel + ?Sized>(records: &[GenerationRecord], oracle: &L) -> Result<f64> {
    if records.is_empty() {
        return Err(invalid("no records to evaluate"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for r in records {
        let toks = r.output.tokens();
        for t in r.output.prompt_len()..toks.len() {
            total += next_log_probs(oracle, &toks[..t])?[toks[t]];
            count += 1;
        }
    }
    if count == 0 {
        return Err(invalid("records contain no generated tokens"));
    }
    Ok((-total / count as f64).exp())
}

fn ngram_counts(tokens: &[TokenId], n: usize) -> HashMap<&[TokenId], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU with uniform weights over `1..=max_n`, clipping against the
/// maximum count in any single reference and the usual brevity penalty
/// (closest reference length, shorter on ties). No smoothing: any zero
/// precision makes the score 0.
pub fn bleu(candidate: &[TokenId], references: &[&[TokenId]], max_n: usize) -> f64 {
    if candidate.is_empty() || references.is_empty() || max_n == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let total: usize = cand.values().sum();
        if total == 0 {
            return 0.0;
        }
        let ref_counts: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
        let clipped: usize = cand
            .iter()
            .map(|(g, &c)| {
                let best = ref_counts.iter().map(|m| m.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
                c.min(best)
            })
            .sum();
        if clipped == 0 {
            return 0.0;
        }
        log_sum += (clipped as f64 / total as f64).ln();
    }
    let c = candidate.len() as i64;
    let r = references.iter().map(|x| x.len() as i64).min_by_key(|&len| ((len - c).abs(), len)).unwrap_or(0);
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    bp * (log_sum / max_n as f64).exp()
}

/// Mean BLEU of each record's generated tokens against all other records.
pub fn self_bleu(records: &[GenerationRecord], max_n: usize) -> Result<f64> {
    if records.len() < 2 {
        return Err(invalid("Self-BLEU needs at least two records"));
    }
    let seqs: Vec<&[TokenId]> = records.iter().map(|r| r.generated()).collect();
    let mut total = 0.0;
    for i in 0..seqs.len() {
        let refs: Vec<&[TokenId]> = seqs.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, s)| *s).collect();
        total += bleu(seqs[i], &refs, max_n);
    }
    Ok(total / seqs.len() as f64)
}

/// Free-form parameter columns of a metric row; absent values stay empty.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportParams {
    pub temperature: Option<f64>,
    pub repetition_penalty: Option<f64>,
    pub c_puct: Option<f64>,
    pub iterations: Option<usize>,
    pub rollout: Option<String>,
    pub alpha: Option<f64>,
    pub pool_size: Option<usize>,
    pub max_new_tokens: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    #[serde(flatten)]
    pub params: ReportParams,
    pub accuracy: f64,
    pub self_bleu: f64,
    pub oracle_perplexity: f64,
    pub n: usize,
    pub seed: u64,
}

impl MetricReport {
    pub fn compute<D, L>(
        method: impl Into<String>,
        params: ReportParams,
        records: &[GenerationRecord],
        oracle_disc: &D,
        oracle_lm: &L,
        seed: u64,
    ) -> Result<Self>
    where
        D: Discriminator + ?Sized,
        L: LanguageModel + ?Sized,
    {
        let targets = record_targets(records)?;
        Ok(MetricReport {
            method: method.into(),
            params,
            accuracy: accuracy(records, oracle_disc, &targets)?,
            self_bleu: self_bleu(records, 5)?,
            oracle_perplexity: oracle_perplexity(records, oracle_lm)?,
            n: records.len(),
            seed,
        })
    }
}
