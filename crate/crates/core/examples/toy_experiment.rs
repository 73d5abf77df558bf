// The two-class synthetic task: generation models trained on one half of
// the corpus, oracle classifier and language model on the other. Compares
// MCTS with nucleus sampling and sampling-then-argmax re-ranking.
//
// ```text
// cargo run --release --example toy_experiment
// ```

use mcts_decode::config::{DecodeConfig, Method};
use mcts_decode::eval::{evaluate_config, write_csv, MetricReport, ToyWorld, WorldConfig};
use mcts_decode::rerank::{PoolMethod, SelectRule};
use mcts_decode::search::{MctsParams, Rollout};
use mcts_decode::GenerationParams;

pub fn run_example() -> mcts_decode::Result<Vec<MetricReport>> {
    let world = ToyWorld::build(&WorldConfig::default())?;
    println!("{} documents, {} word types, {} prompts", world.corpus.len(), world.vocab.len() - 2, world.prompts.len());

    let generation = GenerationParams { temperature: 1.0, max_new_tokens: 20, ..GenerationParams::default() };
    let mcts = DecodeConfig {
        method: Method::Mcts,
        generation: generation.clone(),
        mcts: MctsParams { iterations_per_token: 50, c_puct: 3.0, rollout: Rollout::Fixed(5), ..MctsParams::default() },
        ..DecodeConfig::default()
    };
    let nucleus = DecodeConfig {
        method: Method::Sample,
        generation: GenerationParams { top_p: Some(0.9), ..generation.clone() },
        ..DecodeConfig::default()
    };
    let rerank = DecodeConfig {
        method: Method::Rerank,
        generation,
        pool: PoolMethod::Sampling,
        select: SelectRule::Argmax,
        pool_size: Some(50),
        ..DecodeConfig::default()
    };

    let reports =
        [mcts, nucleus, rerank].iter().map(|c| evaluate_config(&world, c, 0)).collect::<Result<Vec<_>, _>>()?;
    write_csv(std::io::stdout().lock(), &reports)?;
    Ok(reports)
}

#[allow(dead_code)]
fn main() -> mcts_decode::Result<()> {
    run_example().map(drop)
}
