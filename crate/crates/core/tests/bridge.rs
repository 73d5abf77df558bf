use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use mcts_decode::bridge::{connect, serve, Endpoint};
use mcts_decode::config::{DecodeConfig, Method};
use mcts_decode::eval::{SynthConfig, ToyWorld, WorldConfig};
use mcts_decode::pipeline::load_models;
use mcts_decode::rerank::PoolMethod;
use mcts_decode::search::{MctsParams, Rollout};
use mcts_decode::{Discriminator, Error, GenerationParams, LanguageModel};

fn small_world() -> ToyWorld {
    ToyWorld::build(&WorldConfig {
        corpus: SynthConfig { docs_per_class: 60, ..SynthConfig::default() },
        num_prompts: 6,
        ..WorldConfig::default()
    })
    .unwrap()
}

/// Serves `world`'s generation-side models to every incoming connection.
fn spawn_server(world: Arc<ToyWorld>) -> String {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        for stream in listener.incoming() {
            let stream = stream.unwrap();
            stream.set_nodelay(true).unwrap();
            let world = world.clone();
            std::thread::spawn(move || {
                let input = BufReader::new(stream.try_clone().unwrap());
                let _ = serve(&world.lm, Some(&world.guide), input, stream);
            });
        }
    });
    addr
}

/// Accepts one connection, answers each request line with the next canned
/// reply, and returns every line it received once the client hangs up.
fn scripted(replies: Vec<&'static str>) -> (String, JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    let handle = std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut out = stream.try_clone().unwrap();
        let mut replies = replies.into_iter();
        let mut got = Vec::new();
        for line in BufReader::new(stream).lines() {
            let Ok(line) = line else { break };
            got.push(line);
            if let Some(r) = replies.next() {
                writeln!(out, "{r}").unwrap();
            }
        }
        got
    });
    (addr, handle)
}

const HELLO: &str = r#"{"type":"hello","vocab":["a","b","<eos>","<bos>"],"eos_id":2,"bos_id":3,"classes":2}"#;

fn configs() -> Vec<DecodeConfig> {
    let gen = GenerationParams { max_new_tokens: 6, ..GenerationParams::default() };
    let mcts = MctsParams { iterations_per_token: 12, rollout: Rollout::Fixed(3), ..MctsParams::default() };
    let base = DecodeConfig { generation: gen, mcts, beam_width: 3, pool_size: Some(4), ..DecodeConfig::default() };
    let mut out: Vec<DecodeConfig> = [Method::Greedy, Method::Sample, Method::Beam, Method::BeamSample, Method::Mcts]
        .into_iter()
        .map(|method| DecodeConfig { method, ..base.clone() })
        .collect();
    for pool in [PoolMethod::Beam, PoolMethod::Sampling, PoolMethod::BeamSampling] {
        out.push(DecodeConfig { method: Method::Rerank, pool, ..base.clone() });
    }
    let mut full = DecodeConfig { method: Method::Mcts, alpha: 0.5, ..base.clone() };
    full.mcts.rollout = Rollout::Full;
    out.push(full);
    out
}

#[test]
fn remote_models_reproduce_in_process_records() {
    let world = Arc::new(small_world());
    let addr = spawn_server(world.clone());
    let source = format!("tcp:{addr}");
    let remote = load_models(Path::new(&source), Path::new(&source)).unwrap();
    assert_eq!(remote.lm.vocabulary(), world.lm.vocabulary());
    assert_eq!(remote.disc.num_classes(), 2);
    for cfg in configs() {
        let local = cfg.run_all(&world.prompts, &world.targets, &world.lm, &world.guide, 5).unwrap();
        let served = cfg.run_all(&world.prompts, &world.targets, &remote.lm, &remote.disc, 5).unwrap();
        assert_eq!(local.len(), served.len());
        for (a, b) in local.iter().zip(&served) {
            assert!(a.same_result(b), "{} differs:\n{a:?}\n{b:?}", cfg.label());
        }
    }
}

#[test]
fn separate_endpoints_for_model_and_discriminator() {
    let world = Arc::new(small_world());
    let lm_addr = format!("tcp:{}", spawn_server(world.clone()));
    let disc_addr = format!("tcp:{}", spawn_server(world.clone()));
    let remote = load_models(Path::new(&lm_addr), Path::new(&disc_addr)).unwrap();
    let cfg = &configs()[4];
    let local = cfg.run_all(&world.prompts, &world.targets, &world.lm, &world.guide, 1).unwrap();
    let served = cfg.run_all(&world.prompts, &world.targets, &remote.lm, &remote.disc, 1).unwrap();
    assert!(local.iter().zip(&served).all(|(a, b)| a.same_result(b)));
}

#[test]
fn request_transcript() {
    let (addr, server) = scripted(vec![
        HELLO,
        r#"{"type":"logits","id":1,"values":[[-0.5,"-inf",-1.5,null],[-0.1,-2.0,"-Infinity",null]]}"#,
        r#"{"type":"prob","id":2,"values":[0.25]}"#,
    ]);
    let m = connect(&Endpoint::Tcp(addr), Duration::from_secs(5)).unwrap();
    assert_eq!(m.vocabulary().len(), 4);
    let rows = m.next_logits_batch(&[&[3, 0], &[3, 1, 1]]).unwrap();
    assert_eq!(rows[0].logits, vec![-0.5, f64::NEG_INFINITY, -1.5, f64::NEG_INFINITY]);
    assert_eq!(rows[1].logits[2], f64::NEG_INFINITY);
    assert_eq!(m.class_prob(&[0, 1], 1).unwrap(), 0.25);
    assert_eq!(m.num_requests(), 2);
    drop(m);
    let got = server.join().unwrap();
    assert_eq!(
        got,
        vec![
            r#"{"type":"hello"}"#,
            r#"{"id":1,"sequences":[[3,0],[3,1,1]],"type":"next_logits_batch"}"#,
            r#"{"class":1,"id":2,"sequences":[[0,1]],"type":"class_prob_batch"}"#,
            r#"{"type":"shutdown"}"#,
        ]
    );
}

#[test]
fn wrong_length_logits_poison_the_connection() {
    let (addr, server) = scripted(vec![
        HELLO,
        r#"{"type":"logits","id":1,"values":[[-0.5,-1.0]]}"#,
        r#"{"type":"logits","id":2,"values":[[-0.5,-1.0,-2.0,null]]}"#,
    ]);
    let m = connect(&Endpoint::Tcp(addr), Duration::from_secs(5)).unwrap();
    let err = m.next_logits(&[0]).unwrap_err();
    assert!(matches!(err, Error::Protocol(ref s) if s.contains("expected 4 logits")), "{err}");
    let err = m.next_logits(&[0]).unwrap_err();
    assert!(matches!(err, Error::Protocol(ref s) if s.contains("earlier failure")), "{err}");
    drop(m);
    // the second request never went out
    assert_eq!(server.join().unwrap().len(), 3);
}

#[test]
fn server_errors_are_reported_and_recoverable() {
    let (addr, server) = scripted(vec![
        HELLO,
        r#"{"type":"error","id":1,"message":"class out of range"}"#,
        r#"{"type":"prob","id":2,"values":[0.5]}"#,
    ]);
    let m = connect(&Endpoint::Tcp(addr), Duration::from_secs(5)).unwrap();
    let err = m.class_prob(&[0], 1).unwrap_err();
    assert!(matches!(err, Error::Remote { id: 1, ref message } if message == "class out of range"), "{err}");
    assert_eq!(m.class_prob(&[0], 1).unwrap(), 0.5);
    assert!(m.class_prob(&[0], 2).is_err(), "class bound is checked locally");
    drop(m);
    assert_eq!(server.join().unwrap().len(), 4);
}

#[test]
fn mismatched_ids_and_bad_probabilities_fail() {
    let (addr, _server) = scripted(vec![HELLO, r#"{"type":"prob","id":7,"values":[0.5]}"#]);
    let m = connect(&Endpoint::Tcp(addr), Duration::from_secs(5)).unwrap();
    assert!(matches!(m.class_prob(&[0], 0), Err(Error::Protocol(s)) if s.contains("has id 7")));

    let (addr, _server) = scripted(vec![HELLO, r#"{"type":"prob","id":1,"values":[1.5]}"#]);
    let m = connect(&Endpoint::Tcp(addr), Duration::from_secs(5)).unwrap();
    assert!(matches!(m.class_prob(&[0], 0), Err(Error::Protocol(s)) if s.contains("bad probability")));

    let (addr, _server) = scripted(vec![r#"{"type":"logits","id":0,"values":[]}"#]);
    assert!(matches!(connect(&Endpoint::Tcp(addr), Duration::from_secs(5)), Err(Error::Protocol(_))));
}

#[test]
fn silent_server_times_out() {
    let (addr, _server) = scripted(vec![HELLO]);
    let m = connect(&Endpoint::Tcp(addr), Duration::from_millis(200)).unwrap();
    assert!(matches!(m.next_logits(&[0]), Err(Error::Timeout)));
}

#[test]
fn closed_connection_is_an_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap().to_string();
    std::thread::spawn(move || {
        let (stream, _) = listener.accept().unwrap();
        let mut out: &TcpStream = &stream;
        let mut line = String::new();
        BufReader::new(&stream).read_line(&mut line).unwrap();
        writeln!(out, "{HELLO}").unwrap();
    });
    let m = connect(&Endpoint::Tcp(addr), Duration::from_secs(5)).unwrap();
    assert!(matches!(m.next_logits(&[0]), Err(Error::Protocol(s)) if s.contains("closed")));
}

const UNIFORM_SERVER: &str = r#"
import json, math, sys
vocab = ["x", "y", "z", "<eos>", "<bos>"]
for line in sys.stdin:
    msg = json.loads(line)
    t = msg["type"]
    if t == "shutdown":
        break
    if t == "hello":
        out = {"type": "hello", "vocab": vocab, "eos_id": 3, "bos_id": 4, "classes": 2}
    elif t == "next_logits_batch":
        row = [math.log(0.25)] * 4 + ["-inf"]
        out = {"type": "logits", "id": msg["id"], "values": [row for _ in msg["sequences"]]}
    elif t == "class_prob_batch":
        vals = [min(1.0, s.count(0) / 3) if msg["class"] == 0 else 1 - min(1.0, s.count(0) / 3) for s in msg["sequences"]]
        out = {"type": "prob", "id": msg["id"], "values": vals}
    else:
        out = {"type": "error", "id": msg.get("id"), "message": "unknown type " + t}
    print(json.dumps(out), flush=True)
"#;

#[test]
fn stdio_child_process_server() {
    if std::process::Command::new("python3").arg("--version").output().is_err() {
        eprintln!("python3 not available, skipping");
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let script = dir.path().join("uniform.py");
    std::fs::write(&script, UNIFORM_SERVER).unwrap();
    let ep: Endpoint = format!("stdio:python3 {}", script.display()).parse().unwrap();
    let m = connect(&ep, Duration::from_secs(10)).unwrap();
    let d = m.next_logits(&[4]).unwrap();
    assert_eq!(d.logits.len(), 5);
    assert_eq!(d.logits[4], f64::NEG_INFINITY);

    let cfg = DecodeConfig {
        generation: GenerationParams { max_new_tokens: 3, ..GenerationParams::default() },
        mcts: MctsParams { iterations_per_token: 40, rollout: Rollout::Full, ..MctsParams::default() },
        ..DecodeConfig::default()
    };
    let rec = cfg.run_one(&[1], 0, &m, &m, 0).unwrap();
    // keyword 0 appears as often as the budget allows
    assert_eq!(rec.output.generated(), &[0, 0, 0]);
    assert_eq!(rec.class_prob, Some(1.0));
}
