// Greedy, top-k / nucleus sampling, beam search and beam sampling on a
// bigram model trained from a handful of sentences.
//
// ```text
// cargo run --example decode_baselines
// ```

use mcts_decode::lm::train_ngram;
use mcts_decode::search::{beam_sample, beam_search, greedy_decode, sample_decode};
use mcts_decode::{job_rng, GenerationParams, GenerationRecord, LanguageModel, NGramModel, Vocabulary};

const SENTENCES: &[&str] = &[
    "the cat sat on the mat",
    "the dog sat on the rug",
    "a cat saw the dog",
    "the dog saw a cat on the mat",
    "a dog sat",
];

pub fn bigram() -> mcts_decode::Result<NGramModel> {
    let words = SENTENCES.iter().flat_map(|s| s.split_whitespace());
    let vocab = Vocabulary::from_words(words.collect::<std::collections::BTreeSet<_>>())?;
    let docs = SENTENCES.iter().map(|s| vocab.encode(s.split_whitespace())).collect::<Result<Vec<_>, _>>()?;
    train_ngram(&docs, vocab, 2, 0.1)
}

fn show(label: &str, r: &GenerationRecord) {
    println!("{label:<14} {:<32} loglik {:>7.3}", r.text, r.loglik);
}

pub fn run_example() -> mcts_decode::Result<Vec<GenerationRecord>> {
    let lm = bigram()?;
    let prompt = lm.vocabulary().encode(["the"])?;
    let gen = GenerationParams { max_new_tokens: 8, repetition_penalty: 1.0, ..GenerationParams::default() };
    let mut rng = job_rng(7);

    let mut out = vec![greedy_decode(&prompt, &lm, &gen)?];
    show("greedy", &out[0]);

    let top_k = GenerationParams { top_k: Some(3), ..gen.clone() };
    let nucleus = GenerationParams { top_p: Some(0.9), ..gen.clone() };
    for (label, params) in [("sample", &gen), ("top-k 3", &top_k), ("top-p 0.9", &nucleus)] {
        let r = sample_decode(&prompt, &lm, params, &mut rng)?;
        show(label, &r);
        out.push(r);
    }

    for r in beam_search(&prompt, &lm, &gen, 3)? {
        show("beam", &r);
        out.push(r);
    }
    for r in beam_sample(&prompt, &lm, &gen, 3, &mut rng)? {
        show("beam-sample", &r);
        out.push(r);
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> mcts_decode::Result<()> {
    run_example().map(drop)
}
