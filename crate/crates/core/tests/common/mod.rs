#![allow(dead_code)]

use std::collections::BTreeSet;

use mcts_decode::lm::train_ngram;
use mcts_decode::{job_rng, KeywordDiscriminator, NGramModel, TokenId, Vocabulary};
use rand::Rng;

/// A bigram model over at most four words plus eos, a random two-class
/// keyword discriminator and a one-word prompt.
pub struct TinyWorld {
    pub words: usize,
    pub max_len: usize,
    pub vocab: Vocabulary,
    pub lm: NGramModel,
    pub disc: KeywordDiscriminator,
    pub prompt: Vec<TokenId>,
}

pub fn tiny_world(seed: u64) -> TinyWorld {
    let mut rng = job_rng(seed);
    let words = rng.gen_range(1..=4);
    let max_len = rng.gen_range(1..=4);
    let vocab = Vocabulary::from_words((0..words).map(|i| format!("t{i}"))).unwrap();
    let docs: Vec<Vec<TokenId>> = (0..rng.gen_range(2..=8))
        .map(|_| (0..rng.gen_range(1..=5)).map(|_| rng.gen_range(0..words)).collect())
        .collect();
    let lm = train_ngram(&docs, vocab.clone(), 2, rng.gen_range(0.1..2.0)).unwrap();
    let mut keywords = vec![BTreeSet::new(), BTreeSet::new()];
    for w in 0..words {
        match rng.gen_range(0..3) {
            0 => {
                keywords[0].insert(w);
            }
            1 => {
                keywords[1].insert(w);
            }
            _ => {}
        }
    }
    let disc = KeywordDiscriminator::new(keywords, rng.gen_range(0.5..3.0), &vocab).unwrap();
    let prompt = vec![rng.gen_range(0..words)];
    TinyWorld { words, max_len, vocab, lm, disc, prompt }
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of a group mean using the variance pooled over all groups
/// (equal group sizes).
pub fn pooled_se(groups: &[Vec<f64>]) -> f64 {
    let pooled = mean(&groups.iter().map(|g| variance(g)).collect::<Vec<_>>());
    (pooled / groups[0].len() as f64).sqrt()
}
