// Steering a bigram model toward a topic with MCTS: a keyword
// discriminator rewards weather words, and the search trades them off
// against the model's own preferences.
//
// ```text
// cargo run --example mcts_generate
// ```

use std::collections::BTreeSet;

use mcts_decode::lm::train_ngram;
use mcts_decode::search::{greedy_decode, mcts_decode_token, mcts_generate, MctsParams, Rollout, SearchTree};
use mcts_decode::{
    job_rng, ConstraintSpec, Discriminator, GenerationParams, KeywordDiscriminator, LanguageModel, TokenSequence,
    Vocabulary,
};

const SENTENCES: &[&str] = &[
    "we went to the shop and bought bread",
    "we went to the park and saw friends",
    "the park was full of rain and wind",
    "we saw friends at the shop",
    "rain and cold wind all day",
];

pub struct Outcome {
    pub greedy_prob: f64,
    pub mcts_prob: f64,
}

pub fn run_example() -> mcts_decode::Result<Outcome> {
    let words: BTreeSet<&str> = SENTENCES.iter().flat_map(|s| s.split_whitespace()).collect();
    let vocab = Vocabulary::from_words(words)?;
    let docs = SENTENCES.iter().map(|s| vocab.encode(s.split_whitespace())).collect::<Result<Vec<_>, _>>()?;
    let lm = train_ngram(&docs, vocab.clone(), 2, 0.1)?;

    let weather: BTreeSet<_> = vocab.encode(["rain", "wind", "cold"])?.into_iter().collect();
    let errands: BTreeSet<_> = vocab.encode(["shop", "bread", "friends"])?.into_iter().collect();
    let disc = KeywordDiscriminator::new(vec![weather, errands], 1.5, &vocab)?;
    let spec = ConstraintSpec::new(0, 1.0);

    let prompt = vocab.encode(["we", "went"])?;
    let gen = GenerationParams { max_new_tokens: 8, ..GenerationParams::default() };
    let params = MctsParams { iterations_per_token: 100, rollout: Rollout::Fixed(4), ..MctsParams::default() };

    // one search step, to look at the statistics behind the committed token
    let mut tree = SearchTree::new(TokenSequence::from_prompt(prompt.clone()));
    let first = mcts_decode_token(&mut tree, &lm, &disc, &spec, &gen, &params, &mut job_rng(1))?;
    let mut kids: Vec<_> = tree.children(tree.root()).iter().map(|&c| tree.node(c)).collect();
    kids.sort_by_key(|n| std::cmp::Reverse(n.visits));
    println!("first step committed {:?}; most visited children:", vocab.decode(&[first]));
    for n in kids.iter().take(4) {
        println!(
            "  {:<8} visits {:>3}  prior {:.3}  mean value {:.3}",
            vocab.decode(&[n.token]),
            n.visits,
            n.prior,
            n.mean()
        );
    }

    let greedy = greedy_decode(&prompt, &lm, &gen)?;
    let mcts = mcts_generate(&prompt, &lm, &disc, &spec, &gen, &params, &mut job_rng(1))?;
    let greedy_prob = disc.class_prob(greedy.generated(), 0)?;
    let mcts_prob = disc.class_prob(mcts.generated(), 0)?;
    println!("greedy: we went {}  (weather prob {greedy_prob:.3})", greedy.text);
    println!("mcts:   we went {}  (weather prob {mcts_prob:.3})", mcts.text);
    println!("vocabulary size {}", lm.vocabulary().len());
    Ok(Outcome { greedy_prob, mcts_prob })
}

#[allow(dead_code)]
fn main() -> mcts_decode::Result<()> {
    run_example().map(drop)
}
