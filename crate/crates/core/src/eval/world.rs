//! The toy experiment: generation models on one half of a corpus, oracles on
//! the other, prompts cut from held-out oracle-side documents.

use serde::{Deserialize, Serialize};

use super::corpus::{make_split, synth_corpus, LabeledCorpus, SplitPlan, SynthConfig};
use crate::discriminator::{train_naive_bayes, NaiveBayesModel};
use crate::error::{invalid, Result};
use crate::lm::{train_ngram, NGramModel};
use crate::types::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WorldConfig {
    pub corpus: SynthConfig,
    pub split_seed: u64,
    pub lm_order: usize,
    pub lm_lambda: f64,
    pub nb_lambda: f64,
    pub prompt_tokens: usize,
    pub num_prompts: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        WorldConfig {
            corpus: SynthConfig::default(),
            split_seed: 0,
            lm_order: 2,
            lm_lambda: 0.1,
            nb_lambda: 1.0,
            prompt_tokens: 4,
            num_prompts: 100,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        self.corpus.validate()?;
        if self.lm_order < 1 {
            return Err(invalid("lm_order must be >= 1"));
        }
        if !(self.lm_lambda > 0.0 && self.nb_lambda > 0.0) {
            return Err(invalid("smoothing constants must be positive"));
        }
        if self.prompt_tokens < 1 || self.num_prompts < 1 {
            return Err(invalid("need at least one prompt of at least one token"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub corpus: LabeledCorpus,
    pub vocab: Vocabulary,
    pub plan: SplitPlan,
    /// Generation-side models, trained on part 1.
    pub lm: NGramModel,
    pub guide: NaiveBayesModel,
    /// Evaluation-side models, trained on part 2.
    pub oracle_lm: NGramModel,
    pub oracle_disc: NaiveBayesModel,
    pub prompts: Vec<Vec<TokenId>>,
    /// Prompt `i` targets class `i % classes`.
    pub targets: Vec<usize>,
}

impl ToyWorld {
    pub fn build(cfg: &WorldConfig) -> Result<Self> {
        cfg.validate()?;
        Self::from_corpus(synth_corpus(&cfg.corpus)?, cfg)
    }

    /// Uses `corpus` instead of synthesizing one; `cfg.corpus` is ignored.
    pub fn from_corpus(corpus: LabeledCorpus, cfg: &WorldConfig) -> Result<Self> {
        let vocab = corpus.vocabulary()?;
        let plan = make_split(corpus.len(), cfg.split_seed)?;

        let part1 = corpus.encode(&vocab, &plan.part1.train)?;
        let part2 = corpus.encode(&vocab, &plan.part2.train)?;
        let texts = |docs: &[(Vec<TokenId>, usize)]| docs.iter().map(|(d, _)| d.clone()).collect::<Vec<_>>();
        let lm = train_ngram(&texts(&part1), vocab.clone(), cfg.lm_order, cfg.lm_lambda)?;
        let oracle_lm = train_ngram(&texts(&part2), vocab.clone(), cfg.lm_order, cfg.lm_lambda)?;
        let guide = train_naive_bayes(&part1, corpus.class_names.clone(), vocab.clone(), cfg.nb_lambda)?;
        let oracle_disc = train_naive_bayes(&part2, corpus.class_names.clone(), vocab.clone(), cfg.nb_lambda)?;

        let (prompts, targets) = make_prompts(&corpus, &vocab, &plan, cfg.prompt_tokens, cfg.num_prompts)?;
        Ok(ToyWorld { corpus, vocab, plan, lm, guide, oracle_lm, oracle_disc, prompts, targets })
    }
}

/// The first `prompt_tokens` tokens of part-2 test documents, cycling when
/// there are fewer than `num_prompts`; prompt `i` targets class `i % classes`.
pub fn make_prompts(
    corpus: &LabeledCorpus,
    vocab: &Vocabulary,
    plan: &SplitPlan,
    prompt_tokens: usize,
    num_prompts: usize,
) -> Result<(Vec<Vec<TokenId>>, Vec<usize>)> {
    let held_out = corpus.encode(vocab, &plan.part2.test)?;
    if held_out.is_empty() {
        return Err(invalid("no held-out documents to draw prompts from"));
    }
    let prompts = (0..num_prompts)
        .map(|i| {
            let doc = &held_out[i % held_out.len()].0;
            doc[..prompt_tokens.min(doc.len())].to_vec()
        })
        .collect();
    let classes = corpus.class_names.len();
    Ok((prompts, (0..num_prompts).map(|i| i % classes).collect()))
}
