//! Constraint scoring: `p_D(c | x)` implementations and the α-mixed
//! constraint score used by tree search and re-ranking.
//!
//! Discriminators only ever see the generated part of a sequence; callers
//! slice the prompt off before scoring.

use std::collections::BTreeSet;
use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::dist::argmax;
use crate::error::{invalid, Error, Result};
use crate::lm::{sequence_log_likelihood, LanguageModel, FORMAT_VERSION};
use crate::types::{ConstraintSpec, LikelihoodMode, TokenId, TokenSequence, Vocabulary};

pub trait Discriminator: Send + Sync {
    fn num_classes(&self) -> usize;

    /// Probability that `tokens` belong to `class`.
    fn class_prob(&self, tokens: &[TokenId], class: usize) -> Result<f64>;

    fn class_prob_batch(&self, seqs: &[&[TokenId]], class: usize) -> Result<Vec<f64>> {
        seqs.iter().map(|s| self.class_prob(s, class)).collect()
    }

    /// Posterior over every class.
    fn class_probs(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        (0..self.num_classes()).map(|c| self.class_prob(tokens, c)).collect()
    }

    /// Most probable class, lowest index on ties.
    fn predict(&self, tokens: &[TokenId]) -> Result<usize> {
        Ok(argmax(&self.class_probs(tokens)?))
    }
}

impl<D: Discriminator + ?Sized> Discriminator for &D {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn class_prob(&self, tokens: &[TokenId], class: usize) -> Result<f64> {
        (**self).class_prob(tokens, class)
    }
    fn class_prob_batch(&self, seqs: &[&[TokenId]], class: usize) -> Result<Vec<f64>> {
        (**self).class_prob_batch(seqs, class)
    }
    fn class_probs(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        (**self).class_probs(tokens)
    }
}

impl<D: Discriminator + ?Sized> Discriminator for Box<D> {
    fn num_classes(&self) -> usize {
        (**self).num_classes()
    }
    fn class_prob(&self, tokens: &[TokenId], class: usize) -> Result<f64> {
        (**self).class_prob(tokens, class)
    }
    fn class_prob_batch(&self, seqs: &[&[TokenId]], class: usize) -> Result<Vec<f64>> {
        (**self).class_prob_batch(seqs, class)
    }
    fn class_probs(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        (**self).class_probs(tokens)
    }
}

fn check_class(class: usize, n: usize) -> Result<()> {
    if class >= n {
        return Err(invalid(format!("class {class} out of range for {n} classes")));
    }
    Ok(())
}

fn softmax_scores(scores: &[f64]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Returns the same discriminator value for every sequence; for tests.
#[derive(Debug, Clone)]
pub struct ConstantDiscriminator {
    probs: Vec<f64>,
}

impl ConstantDiscriminator {
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(invalid("need at least two classes"));
        }
        if (probs.iter().sum::<f64>() - 1.0).abs() > 1e-9 || probs.iter().any(|p| *p < 0.0) {
            return Err(invalid("class probabilities must form a distribution"));
        }
        Ok(ConstantDiscriminator { probs })
    }
}

impl Discriminator for ConstantDiscriminator {
    fn num_classes(&self) -> usize {
        self.probs.len()
    }

    fn class_prob(&self, _tokens: &[TokenId], class: usize) -> Result<f64> {
        check_class(class, self.probs.len())?;
        Ok(self.probs[class])
    }
}

/// Multinomial naive Bayes with add-λ smoothing over word tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct NaiveBayesModel {
    vocab: Vocabulary,
    class_names: Vec<String>,
    lambda: f64,
    doc_counts: Vec<u64>,
    token_counts: Vec<Vec<u64>>,
    log_priors: Vec<f64>,
    log_likelihoods: Vec<Vec<f64>>,
}

pub fn train_naive_bayes(
    docs: &[(Vec<TokenId>, usize)],
    class_names: Vec<String>,
    vocab: Vocabulary,
    lambda: f64,
) -> Result<NaiveBayesModel> {
    let n = class_names.len();
    if n < 2 {
        return Err(invalid("naive Bayes needs at least two classes"));
    }
    let mut doc_counts = vec![0u64; n];
    let mut token_counts = vec![vec![0u64; vocab.len()]; n];
    for (doc, class) in docs {
        check_class(*class, n)?;
        vocab.check_ids(doc)?;
        doc_counts[*class] += 1;
        for &t in doc {
            if t != vocab.eos_id() {
                token_counts[*class][t] += 1;
            }
        }
    }
    if let Some(c) = doc_counts.iter().position(|&d| d == 0) {
        return Err(invalid(format!("class {} has no training documents", class_names[c])));
    }
    NaiveBayesModel::from_counts(vocab, class_names, lambda, doc_counts, token_counts)
}

impl NaiveBayesModel {
    fn from_counts(
        vocab: Vocabulary,
        class_names: Vec<String>,
        lambda: f64,
        doc_counts: Vec<u64>,
        token_counts: Vec<Vec<u64>>,
    ) -> Result<Self> {
        if !lambda.is_finite() || lambda <= 0.0 {
            return Err(invalid("smoothing constant must be positive"));
        }
        let n = class_names.len();
        if n < 2 || doc_counts.len() != n || token_counts.len() != n {
            return Err(Error::Format("class tables disagree in size".into()));
        }
        if token_counts.iter().any(|row| row.len() != vocab.len()) {
            return Err(Error::Format("token table width differs from vocabulary".into()));
        }
        let total_docs: u64 = doc_counts.iter().sum();
        if total_docs == 0 || doc_counts.contains(&0) {
            return Err(invalid("every class needs at least one document"));
        }
        let log_priors = doc_counts.iter().map(|&d| (d as f64 / total_docs as f64).ln()).collect();
        let words: Vec<TokenId> = vocab.word_ids().collect();
        let width = words.len() as f64;
        let log_likelihoods = token_counts
            .iter()
            .map(|row| {
                let total: u64 = words.iter().map(|&w| row[w]).sum();
                let denom = total as f64 + lambda * width;
                let mut ll = vec![0.0; vocab.len()];
                for &w in &words {
                    ll[w] = ((row[w] as f64 + lambda) / denom).ln();
                }
                ll
            })
            .collect();
        Ok(NaiveBayesModel { vocab, class_names, lambda, doc_counts, token_counts, log_priors, log_likelihoods })
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn vocabulary(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn posterior(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.vocab.check_ids(tokens)?;
        let mut scores = self.log_priors.clone();
        for &t in tokens {
            if t == self.vocab.eos_id() {
                continue;
            }
            for (s, ll) in scores.iter_mut().zip(&self.log_likelihoods) {
                *s += ll[t];
            }
        }
        Ok(softmax_scores(&scores))
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let file = NaiveBayesFile {
            format: NB_FORMAT.into(),
            version: FORMAT_VERSION,
            vocabulary: self.vocab.clone(),
            class_names: self.class_names.clone(),
            lambda: self.lambda,
            doc_counts: self.doc_counts.clone(),
            token_counts: self
                .token_counts
                .iter()
                .map(|row| row.iter().enumerate().filter(|(_, &c)| c > 0).map(|(t, &c)| (t, c)).collect())
                .collect(),
        };
        serde_json::to_writer_pretty(w, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R) -> Result<Self> {
        let file: NaiveBayesFile = serde_json::from_reader(r)?;
        if file.format != NB_FORMAT {
            return Err(Error::Format(format!("unexpected format tag {:?}", file.format)));
        }
        if file.version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported version {}", file.version)));
        }
        let width = file.vocabulary.len();
        let mut token_counts = Vec::with_capacity(file.token_counts.len());
        for sparse in file.token_counts {
            let mut row = vec![0u64; width];
            for (t, c) in sparse {
                *row.get_mut(t).ok_or_else(|| Error::Format(format!("token id {t} out of range")))? = c;
            }
            token_counts.push(row);
        }
        NaiveBayesModel::from_counts(file.vocabulary, file.class_names, file.lambda, file.doc_counts, token_counts)
    }
}

impl Discriminator for NaiveBayesModel {
    fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    fn class_prob(&self, tokens: &[TokenId], class: usize) -> Result<f64> {
        check_class(class, self.num_classes())?;
        Ok(self.posterior(tokens)?[class])
    }

    fn class_probs(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.posterior(tokens)
    }
}

const NB_FORMAT: &str = "mcts-decode/naive-bayes";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NaiveBayesFile {
    format: String,
    version: u32,
    vocabulary: Vocabulary,
    class_names: Vec<String>,
    lambda: f64,
    doc_counts: Vec<u64>,
    token_counts: Vec<Vec<(TokenId, u64)>>,
}

/// Scores each class by `beta` times the number of its keywords present,
/// then applies a softmax across classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeywordDiscriminator {
    keywords: Vec<BTreeSet<TokenId>>,
    beta: f64,
}

impl KeywordDiscriminator {
    pub fn new(keywords: Vec<BTreeSet<TokenId>>, beta: f64, vocab: &Vocabulary) -> Result<Self> {
        if keywords.len() < 2 {
            return Err(invalid("need at least two classes"));
        }
        if !beta.is_finite() || beta <= 0.0 {
            return Err(invalid("sharpness must be positive"));
        }
        for set in &keywords {
            for &k in set {
                if k >= vocab.len() || k == vocab.bos_id() || k == vocab.eos_id() {
                    return Err(invalid(format!("keyword id {k} is not a word token")));
                }
            }
        }
        Ok(KeywordDiscriminator { keywords, beta })
    }

    pub fn keywords(&self) -> &[BTreeSet<TokenId>] {
        &self.keywords
    }

    fn scores(&self, tokens: &[TokenId]) -> Vec<f64> {
        self.keywords.iter().map(|set| self.beta * tokens.iter().filter(|t| set.contains(t)).count() as f64).collect()
    }

    pub fn save<W: Write>(&self, w: W) -> Result<()> {
        let file = KeywordFile {
            format: KEYWORD_FORMAT.into(),
            version: FORMAT_VERSION,
            keywords: self.keywords.clone(),
            beta: self.beta,
        };
        serde_json::to_writer_pretty(w, &file)?;
        Ok(())
    }

    pub fn load<R: Read>(r: R, vocab: &Vocabulary) -> Result<Self> {
        let file: KeywordFile = serde_json::from_reader(r)?;
        if file.format != KEYWORD_FORMAT || file.version != FORMAT_VERSION {
            return Err(Error::Format("not a keyword discriminator file".into()));
        }
        KeywordDiscriminator::new(file.keywords, file.beta, vocab)
    }
}

impl Discriminator for KeywordDiscriminator {
    fn num_classes(&self) -> usize {
        self.keywords.len()
    }

    fn class_prob(&self, tokens: &[TokenId], class: usize) -> Result<f64> {
        check_class(class, self.num_classes())?;
        Ok(softmax_scores(&self.scores(tokens))[class])
    }

    fn class_probs(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        Ok(softmax_scores(&self.scores(tokens)))
    }
}

const KEYWORD_FORMAT: &str = "mcts-decode/keywords";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeywordFile {
    format: String,
    version: u32,
    keywords: Vec<BTreeSet<TokenId>>,
    beta: f64,
}

/// Either discriminator kind loaded from disk, dispatching on the format tag.
#[derive(Debug, Clone)]
pub enum StoredDiscriminator {
    NaiveBayes(NaiveBayesModel),
    Keywords(KeywordDiscriminator),
}

impl StoredDiscriminator {
    pub fn load_str(text: &str, vocab: &Vocabulary) -> Result<Self> {
        let v: serde_json::Value = serde_json::from_str(text)?;
        match v.get("format").and_then(|f| f.as_str()) {
            Some(NB_FORMAT) => Ok(StoredDiscriminator::NaiveBayes(NaiveBayesModel::load(text.as_bytes())?)),
            Some(KEYWORD_FORMAT) => {
                Ok(StoredDiscriminator::Keywords(KeywordDiscriminator::load(text.as_bytes(), vocab)?))
            }
            other => Err(Error::Format(format!("unknown discriminator format {other:?}"))),
        }
    }

    fn inner(&self) -> &dyn Discriminator {
        match self {
            StoredDiscriminator::NaiveBayes(m) => m,
            StoredDiscriminator::Keywords(k) => k,
        }
    }
}

impl Discriminator for StoredDiscriminator {
    fn num_classes(&self) -> usize {
        self.inner().num_classes()
    }
    fn class_prob(&self, tokens: &[TokenId], class: usize) -> Result<f64> {
        self.inner().class_prob(tokens, class)
    }
    fn class_probs(&self, tokens: &[TokenId]) -> Result<Vec<f64>> {
        self.inner().class_probs(tokens)
    }
}

/// Combines a discriminator probability with the generator likelihood:
/// `p^α · L^(1-α)`, where `L` is either the joint probability of the
/// generated tokens or its per-token geometric mean.
pub fn mix_scores(class_prob: f64, loglik: f64, generated_len: usize, spec: &ConstraintSpec) -> f64 {
    mix_log_scores(class_prob, loglik, generated_len, spec).exp()
}

/// Natural log of [`mix_scores`]; stays finite where the product underflows.
pub fn mix_log_scores(class_prob: f64, loglik: f64, generated_len: usize, spec: &ConstraintSpec) -> f64 {
    let like = match spec.likelihood {
        LikelihoodMode::Raw => loglik,
        LikelihoodMode::Normalized if generated_len == 0 => 0.0,
        LikelihoodMode::Normalized => loglik / generated_len as f64,
    };
    if spec.alpha == 1.0 {
        class_prob.ln()
    } else if spec.alpha == 0.0 {
        like
    } else {
        spec.alpha * class_prob.ln() + (1.0 - spec.alpha) * like
    }
}

/// `p_D(c | x)^α · L(x)^(1-α)` for the generated part of `seq`.
pub fn constraint_score<L, D>(seq: &TokenSequence, lm: &L, disc: &D, spec: &ConstraintSpec) -> Result<f64>
where
    L: LanguageModel + ?Sized,
    D: Discriminator + ?Sized,
{
    if seq.is_empty() {
        return Err(invalid("empty sequence"));
    }
    let p = if spec.alpha > 0.0 { disc.class_prob(seq.generated(), spec.class_id)? } else { 1.0 };
    if spec.alpha == 1.0 {
        return Ok(p);
    }
    let ll = sequence_log_likelihood(lm, seq, false)?;
    Ok(mix_scores(p, ll, seq.generated_len(), spec))
}
