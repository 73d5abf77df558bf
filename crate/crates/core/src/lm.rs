//! Language-model interface, an add-λ smoothed n-gram model, and
//! likelihood scoring.

use std::collections::{BTreeMap, HashMap};
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dist::log_softmax;
use crate::error::{invalid, Error, Result};
use crate::types::{Distribution, TokenId, TokenSequence, Vocabulary};

/// Anything that maps a context to next-token logits over a fixed vocabulary.
///
/// Implementations must be deterministic for a fixed context and return one
/// logit per vocabulary entry.
pub trait LanguageModel: Send + Sync {
    fn vocabulary(&self) -> &Vocabulary;

    fn next_logits(&self, context: &[TokenId]) -> Result<Distribution>;

    /// Element-wise identical to repeated [`LanguageModel::next_logits`] calls.
    fn next_logits_batch(&self, contexts: &[&[TokenId]]) -> Result<Vec<Distribution>> {
        contexts.iter().map(|c| self.next_logits(c)).collect()
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for &M {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }
    fn next_logits(&self, context: &[TokenId]) -> Result<Distribution> {
        (**self).next_logits(context)
    }
    fn next_logits_batch(&self, contexts: &[&[TokenId]]) -> Result<Vec<Distribution>> {
        (**self).next_logits_batch(contexts)
    }
}

impl<M: LanguageModel + ?Sized> LanguageModel for Box<M> {
    fn vocabulary(&self) -> &Vocabulary {
        (**self).vocabulary()
    }
    fn next_logits(&self, context: &[TokenId]) -> Result<Distribution> {
        (**self).next_logits(context)
    }
    fn next_logits_batch(&self, contexts: &[&[TokenId]]) -> Result<Vec<Distribution>> {
        (**self).next_logits_batch(contexts)
    }
}

/// Log-probabilities of the model at temperature 1 for `context`.
pub fn next_log_probs<M: LanguageModel + ?Sized>(lm: &M, context: &[TokenId]) -> Result<Vec<f64>> {
    let d = lm.next_logits(context)?;
    if d.len() != lm.vocabulary().len() {
        return Err(Error::Protocol(format!("expected {} logits, got {}", lm.vocabulary().len(), d.len())));
    }
    log_softmax(&d.logits)
}

/// Sum of log p(token | preceding tokens) over the generated part of `seq`,
/// and over the prompt as well when `include_prompt` is set.
pub fn sequence_log_likelihood<M: LanguageModel + ?Sized>(
    lm: &M,
    seq: &TokenSequence,
    include_prompt: bool,
) -> Result<f64> {
    if seq.is_empty() {
        return Err(invalid("empty sequence"));
    }
    let start = if include_prompt { 0 } else { seq.prompt_len() };
    let tokens = seq.tokens();
    let mut total = 0.0;
    for t in start..tokens.len() {
        let lp = next_log_probs(lm, &tokens[..t])?;
        total += lp[tokens[t]];
    }
    Ok(total)
}

/// Every emit token equally likely after any context.
#[derive(Debug, Clone)]
pub struct UniformLm {
    vocab: Vocabulary,
    logits: Vec<f64>,
}

impl UniformLm {
    pub fn new(vocab: Vocabulary) -> Self {
        let lp = -(vocab.emit_size() as f64).ln();
        let mut logits = vec![lp; vocab.len()];
        logits[vocab.bos_id()] = f64::NEG_INFINITY;
        UniformLm { vocab, logits }
    }
}

impl LanguageModel for UniformLm {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Distribution> {
        self.vocab.check_ids(context)?;
        Ok(Distribution::from_logits(self.logits.clone()))
    }
}

/// Wraps a closure as a language model; handy for hand-built fixtures.
pub struct ClosureLm<F> {
    vocab: Vocabulary,
    f: F,
}

impl<F> ClosureLm<F>
where
    F: Fn(&[TokenId]) -> Vec<f64> + Send + Sync,
{
    pub fn new(vocab: Vocabulary, f: F) -> Self {
        ClosureLm { vocab, f }
    }
}

impl<F> LanguageModel for ClosureLm<F>
where
    F: Fn(&[TokenId]) -> Vec<f64> + Send + Sync,
{
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Distribution> {
        Ok(Distribution::from_logits((self.f)(context)))
    }
}

type CountTable = BTreeMap<Vec<TokenId>, BTreeMap<TokenId, u64>>;

/// Add-λ smoothed n-gram model without backoff.
///
/// Contexts are the last `order - 1` tokens, left-padded with bos. Each
/// training document is terminated with a single eos.
#[derive(Debug, Clone)]
pub struct NGramModel {
    vocab: Vocabulary,
    order: usize,
    lambda: f64,
    counts: CountTable,
    table: HashMap<Vec<TokenId>, Vec<f64>>,
    unseen: Vec<f64>,
}

impl PartialEq for NGramModel {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
            && self.order == other.order
            && self.lambda.to_bits() == other.lambda.to_bits()
            && self.counts == other.counts
    }
}

pub fn train_ngram(corpus: &[Vec<TokenId>], vocab: Vocabulary, order: usize, lambda: f64) -> Result<NGramModel> {
    if order < 1 {
        return Err(invalid("n-gram order must be >= 1"));
    }
    if corpus.is_empty() {
        return Err(invalid("empty corpus"));
    }
    let mut counts: CountTable = BTreeMap::new();
    let (bos, eos) = (vocab.bos_id(), vocab.eos_id());
    for doc in corpus {
        vocab.check_ids(doc)?;
        if doc.contains(&eos) {
            return Err(invalid("training documents must not contain eos"));
        }
        let mut padded = vec![bos; order - 1];
        padded.extend_from_slice(doc);
        padded.push(eos);
        for w in padded.windows(order) {
            let (ctx, next) = w.split_at(order - 1);
            *counts.entry(ctx.to_vec()).or_default().entry(next[0]).or_insert(0) += 1;
        }
    }
    NGramModel::from_counts(vocab, order, lambda, counts)
}

impl NGramModel {
    fn from_counts(vocab: Vocabulary, order: usize, lambda: f64, counts: CountTable) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(invalid("smoothing constant must be positive"));
        }
        if order < 1 {
            return Err(invalid("n-gram order must be >= 1"));
        }
        let emit = vocab.emit_size() as f64;
        let bos = vocab.bos_id();
        let mut unseen = vec![-(emit).ln(); vocab.len()];
        unseen[bos] = f64::NEG_INFINITY;
        let mut table = HashMap::with_capacity(counts.len());
        for (ctx, next) in &counts {
            if ctx.len() != order - 1 {
                return Err(Error::Format("context length does not match order".into()));
            }
            let total: u64 = next.values().sum();
            let denom = total as f64 + lambda * emit;
            let mut logits = vec![(lambda / denom).ln(); vocab.len()];
            for (&w, &c) in next {
                if w >= vocab.len() || w == bos {
                    return Err(Error::Format(format!("bad next-token id {w}")));
                }
                logits[w] = ((c as f64 + lambda) / denom).ln();
            }
            logits[bos] = f64::NEG_INFINITY;
            table.insert(ctx.clone(), logits);
        }
        Ok(NGramModel { vocab, order, lambda, counts, table, unseen })
    }

    /// Model with no observations: the uniform distribution over emit tokens.
    pub fn untrained(vocab: Vocabulary, order: usize, lambda: f64) -> Result<Self> {
        NGramModel::from_counts(vocab, order, lambda, BTreeMap::new())
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn count(&self, context: &[TokenId], next: TokenId) -> u64 {
        self.counts.get(context).and_then(|m| m.get(&next)).copied().unwrap_or(0)
    }

    fn context_key(&self, context: &[TokenId]) -> Vec<TokenId> {
        let n = self.order - 1;
        let mut key = vec![self.vocab.bos_id(); n.saturating_sub(context.len())];
        key.extend_from_slice(&context[context.len().saturating_sub(n)..]);
        key
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let file = NGramFile {
            format: NGRAM_FORMAT.into(),
            version: FORMAT_VERSION,
            vocabulary: self.vocab.clone(),
            order: self.order,
            lambda: self.lambda,
            counts: self
                .counts
                .iter()
                .map(|(ctx, next)| ContextCounts {
                    context: ctx.clone(),
                    next: next.iter().map(|(&t, &c)| (t, c)).collect(),
                })
                .collect(),
        };
        serde_json::to_writer_pretty(w, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let file: NGramFile = serde_json::from_reader(r)?;
        if file.format != NGRAM_FORMAT {
            return Err(Error::Format(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", file.version)));
        }
        let mut counts: CountTable = BTreeMap::new();
        for entry in file.counts {
            let slot = counts.entry(entry.context).or_default();
            for (t, c) in entry.next {
                slot.insert(t, c);
            }
        }
        NGramModel::from_counts(file.vocabulary, file.order, file.lambda, counts)
    }
}

impl LanguageModel for NGramModel {
    fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    fn next_logits(&self, context: &[TokenId]) -> Result<Distribution> {
        self.vocab.check_ids(context)?;
        let key = self.context_key(context);
        let logits = self.table.get(&key).unwrap_or(&self.unseen).clone();
        Ok(Distribution::from_logits(logits))
    }
}

pub(crate) const FORMAT_VERSION: u32 = 1;
const NGRAM_FORMAT: &str = "mcts-decode/ngram";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NGramFile {
    format: String,
    version: u32,
    vocabulary: Vocabulary,
    order: usize,
    lambda: f64,
    counts: Vec<ContextCounts>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ContextCounts {
    context: Vec<TokenId>,
    next: Vec<(TokenId, u64)>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ab_vocab() -> Vocabulary {
        Vocabulary::from_words(["a", "b"]).unwrap()
    }

    fn abab_model() -> NGramModel {
        train_ngram(&[vec![0, 1, 0, 1]], ab_vocab(), 2, 1.0).unwrap()
    }

    #[test]
    fn bigram_hand_counts() {
        let m = abab_model();
        let p: Vec<f64> = m.next_logits(&[0]).unwrap().logits.iter().map(|z| z.exp()).collect();
        // [P(a|a), P(b|a), P(eos|a), bos]
        assert!((p[0] - 0.2).abs() < 1e-12);
        assert!((p[1] - 0.6).abs() < 1e-12);
        assert!((p[2] - 0.2).abs() < 1e-12);
        assert_eq!(p[3], 0.0);
    }

    #[test]
    fn single_token_doc_eos_probability() {
        let m = train_ngram(&[vec![0]], ab_vocab(), 2, 1.0).unwrap();
        let lp = next_log_probs(&m, &[0]).unwrap();
        assert!((lp[2].exp() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn heavy_smoothing_is_uniform() {
        let m = train_ngram(&[vec![0, 0, 0, 1]], ab_vocab(), 1, 1e9).unwrap();
        let p: Vec<f64> = m.next_logits(&[]).unwrap().logits.iter().map(|z| z.exp()).collect();
        for &x in &p[..3] {
            assert!((x - 1.0 / 3.0).abs() < 1e-6);
        }
    }

    #[test]
    fn untrained_model_is_flat() {
        let m = NGramModel::untrained(ab_vocab(), 3, 1.0).unwrap();
        let d = m.next_logits(&[0, 1]).unwrap();
        assert_eq!(d.logits[0], d.logits[1]);
        assert_eq!(d.logits[1], d.logits[2]);
    }

    #[test]
    fn markov_property() {
        let m = abab_model();
        assert_eq!(m.next_logits(&[0]).unwrap(), m.next_logits(&[1, 1, 0, 0]).unwrap());
    }

    #[test]
    fn training_errors() {
        assert!(train_ngram(&[], ab_vocab(), 2, 1.0).is_err());
        assert!(train_ngram(&[vec![0]], ab_vocab(), 0, 1.0).is_err());
        assert!(train_ngram(&[vec![0]], ab_vocab(), 2, 0.0).is_err());
        assert!(train_ngram(&[vec![0, 2]], ab_vocab(), 2, 1.0).is_err());
        assert!(train_ngram(&[vec![3]], ab_vocab(), 2, 1.0).is_err());
    }

    #[test]
    fn log_likelihood_fixtures() {
        let u = UniformLm::new(ab_vocab());
        let seq = TokenSequence::from_parts(&[], &[1], false);
        assert!((sequence_log_likelihood(&u, &seq, false).unwrap() - (1.0f64 / 3.0).ln()).abs() < 1e-12);

        let m = abab_model();
        let seq = TokenSequence::from_parts(&[0], &[1, 2], true);
        let ll = sequence_log_likelihood(&m, &seq, false).unwrap();
        // P(b|a) = (2+1)/(2+3); b is followed by eos once: P(eos|b) = (1+1)/(2+3)
        assert!((ll - (0.6f64.ln() + 0.4f64.ln())).abs() < 1e-12);

        let empty = TokenSequence::from_prompt(vec![]);
        assert!(sequence_log_likelihood(&m, &empty, true).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let m = abab_model();
        let mut buf = Vec::new();
        m.save(&mut buf).unwrap();
        let back = NGramModel::load(buf.as_slice()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.next_logits(&[1]).unwrap(), m.next_logits(&[1]).unwrap());

        let text = String::from_utf8(buf).unwrap().replace("\"version\": 1", "\"version\": 9");
        assert!(matches!(NGramModel::load(text.as_bytes()), Err(Error::Format(_))));
    }

    #[test]
    fn retraining_is_reproducible() {
        let docs = vec![vec![0, 1, 1, 0], vec![1, 1], vec![0]];
        let a = train_ngram(&docs, ab_vocab(), 3, 0.5).unwrap();
        let b = train_ngram(&docs, ab_vocab(), 3, 0.5).unwrap();
        assert_eq!(a.counts, b.counts);
    }

    proptest! {
        #[test]
        fn conditionals_normalize(
            docs in prop::collection::vec(prop::collection::vec(0usize..3, 0..8), 1..6),
            ctx in prop::collection::vec(0usize..4, 0..5),
            order in 1usize..4,
            lambda in 0.01f64..5.0,
        ) {
            let vocab = Vocabulary::from_words(["a", "b", "c"]).unwrap();
            let m = train_ngram(&docs, vocab, order, lambda).unwrap();
            let d = m.next_logits(&ctx).unwrap();
            let total: f64 = d.logits.iter().map(|z| z.exp()).sum();
            prop_assert!((total - 1.0).abs() < 1e-9);
            prop_assert_eq!(d.logits[4], f64::NEG_INFINITY);
            prop_assert_eq!(&d, &m.next_logits(&ctx).unwrap());
        }

        #[test]
        fn chain_rule(
            docs in prop::collection::vec(prop::collection::vec(0usize..3, 1..8), 1..4),
            toks in prop::collection::vec(0usize..4, 2..7),
        ) {
            let vocab = Vocabulary::from_words(["a", "b", "c"]).unwrap();
            let m = train_ngram(&docs, vocab, 2, 1.0).unwrap();
            let full = TokenSequence::from_parts(&toks[..1], &toks[1..], false);
            let head = TokenSequence::from_parts(&toks[..1], &toks[1..toks.len() - 1], false);
            let last = next_log_probs(&m, &toks[..toks.len() - 1]).unwrap()[toks[toks.len() - 1]];
            let lhs = sequence_log_likelihood(&m, &full, false).unwrap();
            let rhs = sequence_log_likelihood(&m, &head, false).unwrap() + last;
            prop_assert!((lhs - rhs).abs() < 1e-12);
        }
    }
}
