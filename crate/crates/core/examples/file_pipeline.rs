// The file-based workflow: save trained models, describe a run in a
// config, write self-describing JSON lines, and score them with oracles.
//
// ```text
// cargo run --example file_pipeline
// ```

use std::fs::File;

use mcts_decode::config::{DecodeConfig, RunConfig};
use mcts_decode::eval::{MetricReport, SynthConfig, ToyWorld, WorldConfig};
use mcts_decode::pipeline::{evaluate_file, run_generate, write_prompts, write_records, Header};
use mcts_decode::search::{MctsParams, Rollout};
use mcts_decode::GenerationParams;

pub fn run_example() -> mcts_decode::Result<MetricReport> {
    let dir = tempfile::tempdir()?;
    let path = |name: &str| dir.path().join(name);
    let world = ToyWorld::build(&WorldConfig {
        corpus: SynthConfig { docs_per_class: 100, ..SynthConfig::default() },
        num_prompts: 12,
        ..WorldConfig::default()
    })?;
    world.lm.save(File::create(path("lm.json"))?)?;
    world.guide.save(File::create(path("guide.json"))?)?;
    world.oracle_lm.save(File::create(path("oracle_lm.json"))?)?;
    world.oracle_disc.save(File::create(path("oracle_clf.json"))?)?;
    write_prompts(
        File::create(path("prompts.tsv"))?,
        &world.vocab,
        &world.prompts,
        &world.targets,
        &world.corpus.class_names,
    )?;

    let config = RunConfig {
        lm: path("lm.json"),
        discriminator: path("guide.json"),
        prompts: path("prompts.tsv"),
        output: Some(path("records.jsonl")),
        seed: 42,
        omit_timing: true,
        decode: DecodeConfig {
            generation: GenerationParams { max_new_tokens: 15, ..GenerationParams::default() },
            mcts: MctsParams { iterations_per_token: 30, rollout: Rollout::Fixed(5), ..MctsParams::default() },
            ..DecodeConfig::default()
        },
    };
    let records = run_generate(&config, None)?;
    write_records(File::create(path("records.jsonl"))?, &Header::new(config), &records)?;

    let report = evaluate_file(&path("records.jsonl"), &path("oracle_lm.json"), &path("oracle_clf.json"))?;
    println!(
        "{}: accuracy {:.2}, self-BLEU {:.3}, oracle perplexity {:.2} over {} records",
        report.method, report.accuracy, report.self_bleu, report.oracle_perplexity, report.n
    );
    Ok(report)
}

#[allow(dead_code)]
fn main() -> mcts_decode::Result<()> {
    run_example().map(drop)
}
