// Generate-then-select: pools from beam search, sampling and beam
// sampling, each filtered with the argmax, first-true and sampling rules.
//
// ```text
// cargo run --example rerank_pools
// ```

use mcts_decode::eval::{SynthConfig, ToyWorld, WorldConfig};
use mcts_decode::rerank::{generate_pool, select, PoolMethod, SelectRule};
use mcts_decode::{job_rng, ConstraintSpec, Discriminator, GenerationParams};

pub fn run_example() -> mcts_decode::Result<Vec<(String, f64)>> {
    let world = ToyWorld::build(&WorldConfig {
        corpus: SynthConfig { docs_per_class: 80, ..SynthConfig::default() },
        num_prompts: 2,
        ..WorldConfig::default()
    })?;
    let (prompt, target) = (&world.prompts[1], world.targets[1]);
    let spec = ConstraintSpec::new(target, 1.0);
    let gen = GenerationParams { max_new_tokens: 12, ..GenerationParams::default() };
    println!("prompt {:?}, target class {}", world.vocab.decode(prompt), world.corpus.class_names[target]);

    let mut rng = job_rng(3);
    let mut picked = Vec::new();
    for method in [PoolMethod::Beam, PoolMethod::Sampling, PoolMethod::BeamSampling] {
        let pool = generate_pool(prompt, &world.lm, method, 10, &gen, &mut rng)?;
        for rule in [SelectRule::Argmax, SelectRule::FirstTrue, SelectRule::Sampling] {
            let r = select(&pool, &world.guide, &spec, rule, &mut rng)?;
            let p = world.guide.class_prob(r.generated(), target)?;
            let label = format!("{}-{}", method.name(), rule.name());
            println!("{label:<22} p={p:.3}  {}", r.text);
            picked.push((label, p));
        }
    }
    Ok(picked)
}

#[allow(dead_code)]
fn main() -> mcts_decode::Result<()> {
    run_example().map(drop)
}
