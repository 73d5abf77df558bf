//! Value types shared by every decoder: vocabulary, sequences, distributions,
//! parameter snapshots and generation records.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type TokenId = usize;

/// Ordered set of distinct token strings with two special symbols.
///
/// `bos` only ever appears as left padding inside model contexts and is never
/// emitted; `eos` terminates a sequence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    eos_id: TokenId,
    bos_id: TokenId,
    index: HashMap<String, TokenId>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    tokens: Vec<String>,
    eos_id: TokenId,
    bos_id: TokenId,
}

impl TryFrom<VocabularyRepr> for Vocabulary {
    type Error = Error;

    fn try_from(r: VocabularyRepr) -> Result<Self> {
        Vocabulary::new(r.tokens, r.eos_id, r.bos_id)
    }
}

impl From<Vocabulary> for VocabularyRepr {
    fn from(v: Vocabulary) -> Self {
        VocabularyRepr { tokens: v.tokens, eos_id: v.eos_id, bos_id: v.bos_id }
    }
}

pub const EOS_TOKEN: &str = "<eos>";
pub const BOS_TOKEN: &str = "<bos>";

impl Vocabulary {
    pub fn new(tokens: Vec<String>, eos_id: TokenId, bos_id: TokenId) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(invalid("vocabulary needs at least two tokens"));
        }
        if eos_id >= tokens.len() || bos_id >= tokens.len() {
            return Err(invalid("special token id out of range"));
        }
        if eos_id == bos_id {
            return Err(invalid("eos and bos must differ"));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(invalid(format!("duplicate token {t:?}")));
            }
        }
        Ok(Vocabulary { tokens, eos_id, bos_id, index })
    }

    /// Builds `words..., <eos>, <bos>` so word ids start at zero.
    pub fn from_words<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens: Vec<String> = words.into_iter().map(Into::into).collect();
        let eos = tokens.len();
        tokens.push(EOS_TOKEN.to_string());
        tokens.push(BOS_TOKEN.to_string());
        Vocabulary::new(tokens, eos, eos + 1)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn eos_id(&self) -> TokenId {
        self.eos_id
    }

    pub fn bos_id(&self) -> TokenId {
        self.bos_id
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Number of tokens that can be emitted (everything except bos).
    pub fn emit_size(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn emit_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len()).filter(move |&i| i != self.bos_id)
    }

    /// Ids that are neither eos nor bos.
    pub fn word_ids(&self) -> impl Iterator<Item = TokenId> + '_ {
        (0..self.tokens.len()).filter(move |&i| i != self.bos_id && i != self.eos_id)
    }

    pub fn encode<'a, I>(&self, words: I) -> Result<Vec<TokenId>>
    where
        I: IntoIterator<Item = &'a str>,
    {
        words.into_iter().map(|w| self.id(w).ok_or_else(|| invalid(format!("token {w:?} not in vocabulary")))).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> String {
        ids.iter().map(|&i| self.token(i).unwrap_or("<unk>")).collect::<Vec<_>>().join(" ")
    }

    /// Ids must be in range and never bos.
    pub fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        for &i in ids {
            if i >= self.len() {
                return Err(invalid(format!("token id {i} out of range")));
            }
            if i == self.bos_id {
                return Err(invalid("bos may not appear in a sequence"));
            }
        }
        Ok(())
    }
}

/// Prompt followed by generated tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TokenSequence {
    prompt_len: usize,
    tokens: Vec<TokenId>,
    terminal: bool,
}

impl TokenSequence {
    pub fn from_prompt(prompt: Vec<TokenId>) -> Self {
        TokenSequence { prompt_len: prompt.len(), tokens: prompt, terminal: false }
    }

    pub fn from_parts(prompt: &[TokenId], generated: &[TokenId], terminal: bool) -> Self {
        let mut tokens = Vec::with_capacity(prompt.len() + generated.len());
        tokens.extend_from_slice(prompt);
        tokens.extend_from_slice(generated);
        TokenSequence { prompt_len: prompt.len(), tokens, terminal }
    }

    pub fn prompt_len(&self) -> usize {
        self.prompt_len
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[TokenId] {
        &self.tokens
    }

    pub fn prompt(&self) -> &[TokenId] {
        &self.tokens[..self.prompt_len]
    }

    pub fn generated(&self) -> &[TokenId] {
        &self.tokens[self.prompt_len..]
    }

    pub fn generated_len(&self) -> usize {
        self.tokens.len() - self.prompt_len
    }

    pub fn is_terminal(&self) -> bool {
        self.terminal
    }

    /// Appends a token; the sequence becomes terminal on eos or once
    /// `max_new_tokens` tokens have been generated.
    pub fn push(&mut self, token: TokenId, eos_id: TokenId, max_new_tokens: usize) {
        debug_assert!(!self.terminal, "push on a terminal sequence");
        self.tokens.push(token);
        self.terminal = token == eos_id || self.generated_len() >= max_new_tokens;
    }

    pub fn with_token(&self, token: TokenId, eos_id: TokenId, max_new_tokens: usize) -> Self {
        let mut s = self.clone();
        s.push(token, eos_id, max_new_tokens);
        s
    }

    pub fn contains(&self, token: TokenId) -> bool {
        self.tokens.contains(&token)
    }
}

/// Next-token scores over a vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    pub logits: Vec<f64>,
    pub probs: Option<Vec<f64>>,
}

impl Distribution {
    pub fn from_logits(logits: Vec<f64>) -> Self {
        Distribution { logits, probs: None }
    }

    pub fn len(&self) -> usize {
        self.logits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.logits.is_empty()
    }

    /// Probabilities at temperature 1, computed from the logits when absent.
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        match &self.probs {
            Some(p) => Ok(p.clone()),
            None => crate::dist::softmax_with_temperature(&self.logits, 1.0),
        }
    }
}

/// Decoding parameters shared by every method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerationParams {
    pub temperature: f64,
    pub repetition_penalty: f64,
    pub top_k: Option<usize>,
    pub top_p: Option<f64>,
    pub max_new_tokens: usize,
    pub seed: u64,
    /// Suppress eos so every output has exactly `max_new_tokens` new tokens.
    pub fixed_length: bool,
}

impl Default for GenerationParams {
    fn default() -> Self {
        GenerationParams {
            temperature: 1.0,
            repetition_penalty: 1.2,
            top_k: None,
            top_p: None,
            max_new_tokens: 20,
            seed: 0,
            fixed_length: false,
        }
    }
}

impl GenerationParams {
    pub fn validate(&self) -> Result<()> {
        if !self.temperature.is_finite() || self.temperature <= 0.0 {
            return Err(invalid("temperature must be positive"));
        }
        if !self.repetition_penalty.is_finite() || self.repetition_penalty < 1.0 {
            return Err(invalid("repetition penalty must be >= 1"));
        }
        if let Some(k) = self.top_k {
            if k == 0 {
                return Err(invalid("top_k must be positive"));
            }
        }
        if let Some(p) = self.top_p {
            if !(p > 0.0 && p <= 1.0) {
                return Err(invalid("top_p must lie in (0, 1]"));
            }
        }
        if self.max_new_tokens == 0 {
            return Err(invalid("max_new_tokens must be positive"));
        }
        Ok(())
    }
}

/// How the likelihood factor enters the constraint score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LikelihoodMode {
    /// exp(mean log-probability per generated token).
    #[default]
    Normalized,
    /// Joint probability of the generated tokens.
    Raw,
}

/// Target class plus the discriminator/likelihood mixing exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintSpec {
    pub class_id: usize,
    pub alpha: f64,
    #[serde(default)]
    pub likelihood: LikelihoodMode,
}

impl ConstraintSpec {
    pub fn new(class_id: usize, alpha: f64) -> Self {
        ConstraintSpec { class_id, alpha, likelihood: LikelihoodMode::Normalized }
    }

    pub fn with_likelihood(mut self, mode: LikelihoodMode) -> Self {
        self.likelihood = mode;
        self
    }

    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("alpha must lie in [0, 1]"));
        }
        if self.class_id >= num_classes {
            return Err(invalid(format!("class {} out of range for {} classes", self.class_id, num_classes)));
        }
        Ok(())
    }
}

/// One decoded sample plus its provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RecordRepr", into = "RecordRepr")]
pub struct GenerationRecord {
    pub method: String,
    pub params: serde_json::Value,
    pub output: TokenSequence,
    pub text: String,
    pub target: Option<usize>,
    /// Log-likelihood of the generated tokens under the generator LM.
    pub loglik: f64,
    pub class_prob: Option<f64>,
    pub seed: u64,
    pub duration_ms: f64,
}

impl GenerationRecord {
    pub fn prompt(&self) -> &[TokenId] {
        self.output.prompt()
    }

    pub fn generated(&self) -> &[TokenId] {
        self.output.generated()
    }

    /// Equality ignoring wall-clock duration.
    pub fn same_result(&self, other: &GenerationRecord) -> bool {
        let mut a = self.clone();
        a.duration_ms = other.duration_ms;
        &a == other
    }
}

#[derive(Serialize, Deserialize)]
struct RecordRepr {
    method: String,
    params: serde_json::Value,
    prompt: Vec<TokenId>,
    tokens: Vec<TokenId>,
    terminal: bool,
    text: String,
    target: Option<usize>,
    loglik: f64,
    class_prob: Option<f64>,
    seed: u64,
    duration_ms: f64,
}

impl From<GenerationRecord> for RecordRepr {
    fn from(r: GenerationRecord) -> Self {
        RecordRepr {
            method: r.method,
            params: r.params,
            prompt: r.output.prompt().to_vec(),
            tokens: r.output.generated().to_vec(),
            terminal: r.output.is_terminal(),
            text: r.text,
            target: r.target,
            loglik: r.loglik,
            class_prob: r.class_prob,
            seed: r.seed,
            duration_ms: r.duration_ms,
        }
    }
}

impl TryFrom<RecordRepr> for GenerationRecord {
    type Error = Error;

    fn try_from(r: RecordRepr) -> Result<Self> {
        if r.loglik > 0.0 {
            return Err(Error::Format("record log-likelihood must be <= 0".into()));
        }
        if let Some(p) = r.class_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Format("class probability outside [0, 1]".into()));
            }
        }
        Ok(GenerationRecord {
            method: r.method,
            params: r.params,
            output: TokenSequence::from_parts(&r.prompt, &r.tokens, r.terminal),
            text: r.text,
            target: r.target,
            loglik: r.loglik,
            class_prob: r.class_prob,
            seed: r.seed,
            duration_ms: r.duration_ms,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_invariants() {
        assert!(Vocabulary::new(vec!["a".into()], 0, 0).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "a".into()], 0, 1).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "b".into()], 1, 1).is_err());
        assert!(Vocabulary::new(vec!["a".into(), "b".into()], 0, 2).is_err());
        let v = Vocabulary::from_words(["a", "b"]).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.eos_id(), 2);
        assert_eq!(v.bos_id(), 3);
        assert_eq!(v.emit_size(), 3);
        assert_eq!(v.emit_ids().collect::<Vec<_>>(), vec![0, 1, 2]);
        assert_eq!(v.encode(["b", "a"]).unwrap(), vec![1, 0]);
        assert!(v.encode(["zzz"]).is_err());
        assert!(v.check_ids(&[3]).is_err());
    }

    #[test]
    fn sequence_terminal_rules() {
        let mut s = TokenSequence::from_prompt(vec![0]);
        s.push(1, 2, 3);
        assert!(!s.is_terminal());
        s.push(2, 2, 3);
        assert!(s.is_terminal());
        assert_eq!(s.generated(), &[1, 2]);

        let mut s = TokenSequence::from_prompt(vec![0]);
        s.push(1, 2, 1);
        assert!(s.is_terminal(), "length cap makes the sequence terminal");
    }

    #[test]
    fn params_validation() {
        assert!(GenerationParams::default().validate().is_ok());
        let bad = [
            GenerationParams { temperature: 0.0, ..Default::default() },
            GenerationParams { repetition_penalty: 0.9, ..Default::default() },
            GenerationParams { top_p: Some(0.0), ..Default::default() },
            GenerationParams { top_p: Some(1.5), ..Default::default() },
            GenerationParams { top_k: Some(0), ..Default::default() },
        ];
        for p in bad {
            assert!(p.validate().is_err(), "{p:?}");
        }
        assert!(ConstraintSpec::new(0, 1.5).validate(2).is_err());
        assert!(ConstraintSpec::new(2, 0.5).validate(2).is_err());
    }

    #[test]
    fn record_json_shape() {
        let rec = GenerationRecord {
            method: "greedy".into(),
            params: serde_json::json!({"temperature": 1.0}),
            output: TokenSequence::from_parts(&[0], &[1, 2], true),
            text: "b <eos>".into(),
            target: Some(1),
            loglik: -1.5,
            class_prob: Some(0.25),
            seed: 7,
            duration_ms: 0.0,
        };
        let line = serde_json::to_string(&rec).unwrap();
        let v: serde_json::Value = serde_json::from_str(&line).unwrap();
        for key in ["method", "params", "prompt", "tokens", "text", "loglik", "class_prob", "seed", "duration_ms"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: GenerationRecord = serde_json::from_str(&line).unwrap();
        assert_eq!(back, rec);
    }
}
