// Enumerating every continuation of a tiny model to find the
// constraint-score optimum, then checking what MCTS commits to.
//
// ```text
// cargo run --example exhaustive_oracle
// ```

use std::collections::BTreeSet;

use mcts_decode::eval::{exhaustive_oracle, leaf_count};
use mcts_decode::lm::train_ngram;
use mcts_decode::search::{mcts_decode_token, MctsParams, Rollout, SearchTree};
use mcts_decode::{job_rng, ConstraintSpec, GenerationParams, KeywordDiscriminator, TokenSequence, Vocabulary};

pub fn run_example() -> mcts_decode::Result<bool> {
    let vocab = Vocabulary::from_words(["sun", "rain", "tea", "toast"])?;
    let docs = ["tea toast", "sun tea", "toast tea toast", "rain"]
        .iter()
        .map(|s| vocab.encode(s.split_whitespace()))
        .collect::<Result<Vec<_>, _>>()?;
    let lm = train_ngram(&docs, vocab.clone(), 2, 0.5)?;
    let weather: BTreeSet<_> = vocab.encode(["sun", "rain"])?.into_iter().collect();
    let breakfast: BTreeSet<_> = vocab.encode(["tea", "toast"])?.into_iter().collect();
    let disc = KeywordDiscriminator::new(vec![weather, breakfast], 1.0, &vocab)?;

    let prompt = vocab.encode(["tea"])?;
    let max_len = 3;
    for alpha in [1.0, 0.5] {
        let spec = ConstraintSpec::new(0, alpha);
        let res = exhaustive_oracle(&lm, &disc, &spec, &prompt, max_len)?;
        println!(
            "alpha {alpha}: {} sequences, best {:?} score {:.4}",
            res.table.len(),
            vocab.decode(res.best.generated()),
            res.best_score
        );
    }

    let spec = ConstraintSpec::new(0, 1.0);
    let oracle = exhaustive_oracle(&lm, &disc, &spec, &prompt, max_len)?;
    let budget = 32 * leaf_count(vocab.word_ids().count(), max_len) as usize;
    let gen = GenerationParams { max_new_tokens: max_len, ..GenerationParams::default() };
    let params = MctsParams { iterations_per_token: budget, rollout: Rollout::Full, ..MctsParams::default() };
    let mut tree = SearchTree::new(TokenSequence::from_prompt(prompt));
    let first = mcts_decode_token(&mut tree, &lm, &disc, &spec, &gen, &params, &mut job_rng(0))?;
    let on_optimum = oracle.is_optimal_prefix(&[first]);
    println!(
        "mcts with {budget} iterations commits {:?}; on an optimal sequence: {on_optimum}",
        vocab.decode(&[first])
    );
    Ok(on_optimum)
}

#[allow(dead_code)]
fn main() -> mcts_decode::Result<()> {
    run_example().map(drop)
}
