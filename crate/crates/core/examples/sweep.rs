// A small grid over roll-out length and c_puct, streamed both to CSV on
// stdout and to an in-memory list.
//
// ```text
// cargo run --release --example sweep
// ```

use mcts_decode::config::{DecodeConfig, Method};
use mcts_decode::eval::{run_sweep, CsvSink, MetricReport, SweepGrid, SynthConfig, Tee, ToyWorld, WorldConfig};
use mcts_decode::search::{MctsParams, Rollout};
use mcts_decode::GenerationParams;

pub fn run_example() -> mcts_decode::Result<Vec<MetricReport>> {
    let world = ToyWorld::build(&WorldConfig {
        corpus: SynthConfig { docs_per_class: 200, ..SynthConfig::default() },
        num_prompts: 40,
        ..WorldConfig::default()
    })?;
    let base = DecodeConfig {
        generation: GenerationParams { max_new_tokens: 12, ..GenerationParams::default() },
        mcts: MctsParams { iterations_per_token: 30, ..MctsParams::default() },
        ..DecodeConfig::default()
    };
    let grid = SweepGrid {
        methods: vec![Method::Mcts, Method::Sample],
        temperature: vec![1.0],
        c_puct: vec![1.0, 3.0],
        alpha: vec![1.0],
        rollout: vec![Rollout::None, Rollout::Fixed(3), Rollout::Fixed(10)],
        seeds: vec![0, 1],
    };

    let mut csv = CsvSink::new(std::io::stdout().lock());
    let mut kept: Vec<MetricReport> = Vec::new();
    run_sweep(&grid, &base, &world, &mut Tee(vec![&mut csv, &mut kept]))?;
    use std::io::Write;
    csv.into_inner()?.flush()?;
    Ok(kept)
}

#[allow(dead_code)]
fn main() -> mcts_decode::Result<()> {
    run_example().map(drop)
}
