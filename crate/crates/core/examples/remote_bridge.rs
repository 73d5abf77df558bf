// Serving a model over TCP with the line-delimited JSON protocol and
// decoding against it. A Rust server stands in for an external one here;
// the records match an in-process run exactly.
//
// ```text
// cargo run --example remote_bridge
// ```

use std::io::BufReader;
use std::net::TcpListener;
use std::sync::Arc;
use std::time::Duration;

use mcts_decode::bridge::{connect, serve, Endpoint};
use mcts_decode::config::DecodeConfig;
use mcts_decode::eval::{SynthConfig, ToyWorld, WorldConfig};
use mcts_decode::search::{MctsParams, Rollout};
use mcts_decode::GenerationParams;

pub fn run_example() -> mcts_decode::Result<u64> {
    let world = Arc::new(ToyWorld::build(&WorldConfig {
        corpus: SynthConfig { docs_per_class: 80, ..SynthConfig::default() },
        num_prompts: 4,
        ..WorldConfig::default()
    })?);

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?.to_string();
    let served = world.clone();
    std::thread::spawn(move || {
        if let Ok((stream, _)) = listener.accept() {
            let _ = stream.set_nodelay(true);
            let input = BufReader::new(stream.try_clone().expect("clone socket"));
            let _ = serve(&served.lm, Some(&served.guide), input, stream);
        }
    });

    let remote = connect(&format!("tcp:{addr}").parse::<Endpoint>()?, Duration::from_secs(10))?;
    let cfg = DecodeConfig {
        generation: GenerationParams { max_new_tokens: 10, ..GenerationParams::default() },
        mcts: MctsParams { iterations_per_token: 20, rollout: Rollout::Fixed(3), ..MctsParams::default() },
        ..DecodeConfig::default()
    };
    let local = cfg.run_all(&world.prompts, &world.targets, &world.lm, &world.guide, 0)?;
    let over_wire = cfg.run_all(&world.prompts, &world.targets, &remote, &remote, 0)?;
    for (a, b) in local.iter().zip(&over_wire) {
        assert!(a.same_result(b), "remote decoding diverged");
        println!("{:<40} p={:.3}", b.text, b.class_prob.unwrap_or(f64::NAN));
    }
    println!("{} requests over {addr}", remote.num_requests());
    Ok(remote.num_requests())
}

#[allow(dead_code)]
fn main() -> mcts_decode::Result<()> {
    run_example().map(drop)
}
