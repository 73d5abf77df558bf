use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mcts-decode"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn mcts-decode")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

/// The single stderr line of a failed run, parsed.
fn fails(dir: &Path, args: &[&str]) -> Value {
    let out = run_in(dir, args);
    assert_eq!(out.status.code(), Some(1), "{args:?} should fail");
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    serde_json::from_str(stderr.trim()).unwrap()
}

struct Trained {
    dir: tempfile::TempDir,
}

impl Trained {
    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }
}

fn trained_world() -> Trained {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &["corpus-synth", "--out", "w", "--docs-per-class", "120", "--num-prompts", "20"]);
    for part in ["1", "2"] {
        for kind in ["lm", "clf"] {
            let out = format!("{kind}{part}.json");
            ok(
                d,
                &["train", kind, "--corpus", "w/corpus.tsv", "--split", "w/split.json", "--part", part, "--out", &out],
            );
        }
    }
    Trained { dir }
}

fn csv_rows(text: &str) -> Vec<std::collections::HashMap<String, String>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    let headers = r.headers().unwrap().clone();
    r.records()
        .map(|rec| headers.iter().map(String::from).zip(rec.unwrap().iter().map(String::from)).collect())
        .collect()
}

#[test]
fn toy_pipeline_end_to_end() {
    let started = Instant::now();
    let t = trained_world();
    let d = t.dir.path();
    for f in ["w/corpus.tsv", "w/split.json", "w/prompts.tsv"] {
        assert!(t.path(f).exists(), "{f} missing");
    }
    let gen = |method: &[&str], out: &str| {
        let mut args =
            vec!["generate", "--lm", "lm1.json", "--clf", "clf1.json", "--prompts", "w/prompts.tsv", "--out", out];
        args.extend_from_slice(method);
        ok(d, &args);
    };
    gen(&["--method", "mcts", "--iterations", "30", "--rollout", "5"], "mcts.jsonl");
    gen(&["--method", "sample", "--top-p", "0.9"], "nucleus.jsonl");
    gen(&["--method", "rerank", "--pool", "sampling", "--pool-size", "10"], "rerank.jsonl");

    let lines = std::fs::read_to_string(t.path("mcts.jsonl")).unwrap();
    let mut lines = lines.lines();
    let header: Value = serde_json::from_str(lines.next().unwrap()).unwrap();
    assert_eq!(header["header"]["config"]["decode"]["mcts"]["rollout"], "5");
    let records: Vec<Value> = lines.map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(records.len(), 20);
    for key in ["method", "params", "prompt", "tokens", "text", "loglik", "class_prob", "seed", "duration_ms"] {
        assert!(records[0].get(key).is_some(), "record lacks {key}");
    }

    let eval = |records: &str| {
        let out = ok(d, &["evaluate", "--records", records, "--oracle-lm", "lm2.json", "--oracle-clf", "clf2.json"]);
        csv_rows(&out).remove(0)
    };
    let mcts = eval("mcts.jsonl");
    let nucleus = eval("nucleus.jsonl");
    assert_eq!(mcts["method"], "mcts");
    assert_eq!(mcts["n"], "20");
    let acc = |row: &std::collections::HashMap<String, String>| row["accuracy"].parse::<f64>().unwrap();
    assert!(acc(&mcts) > acc(&nucleus), "mcts {} vs nucleus {}", acc(&mcts), acc(&nucleus));
    let rerank = eval("rerank.jsonl");
    assert_eq!(rerank["method"], "rerank:sampling-argmax");

    let oracle = ok(
        d,
        &["oracle-search", "--lm", "lm1.json", "--clf", "clf1.json", "--prompt", "w0", "--max-len", "2", "--table"],
    );
    let rows: Vec<Value> = oracle.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let best = rows.last().unwrap();
    assert_eq!(best["sequences"].as_u64().unwrap() as usize, rows.len() - 1);
    let top = rows[..rows.len() - 1].iter().map(|r| r["score"].as_f64().unwrap()).fold(f64::MIN, f64::max);
    assert_eq!(best["best"]["score"].as_f64().unwrap(), top);
    assert!(best["best"]["loglik"].as_f64().is_some());

    std::fs::write(
        t.path("sweep.toml"),
        r#"
jsonl = "sweep.jsonl"

[world]
num_prompts = 10
corpus = { docs_per_class = 60 }

[base.generation]
max_new_tokens = 8

[base.mcts]
iterations_per_token = 10

[grid]
methods = ["mcts", "sample"]
temperature = [1.0]
c_puct = [1.0, 3.0]
alpha = [1.0]
rollout = [0, 3]
seeds = [0]
"#,
    )
    .unwrap();
    let table = ok(d, &["sweep", "--config", "sweep.toml", "--jobs", "2"]);
    let rows = csv_rows(&table);
    // 4 MCTS points, one sampling point once the MCTS-only axes collapse
    assert_eq!(rows.len(), 5);
    assert_eq!(rows.iter().filter(|r| r["method"] == "mcts").count(), 4);
    let jsonl = std::fs::read_to_string(t.path("sweep.jsonl")).unwrap();
    assert_eq!(jsonl.lines().count(), 5);
    assert_eq!(ok(d, &["sweep", "--config", "sweep.toml", "--jobs", "1"]), table);

    let took = started.elapsed();
    assert!(took.as_secs() < 60, "pipeline took {took:?}");
}

#[test]
fn replay_and_job_count_are_byte_identical() {
    let t = trained_world();
    let d = t.dir.path();
    let base = [
        "generate",
        "--lm",
        "lm1.json",
        "--clf",
        "clf1.json",
        "--prompts",
        "w/prompts.tsv",
        "--iterations",
        "15",
        "--rollout",
        "3",
        "--tokens",
        "10",
        "--seed",
        "9",
        "--omit-timing",
    ];
    let with = |extra: &[&'static str]| [&base[..], extra].concat();
    ok(d, &with(&["--out", "a.jsonl", "--jobs", "1"]));
    ok(d, &with(&["--out", "b.jsonl", "--jobs", "4"]));
    ok(d, &["generate", "--replay", "a.jsonl", "--out", "c.jsonl"]);
    let a = std::fs::read(t.path("a.jsonl")).unwrap();
    assert_eq!(a, std::fs::read(t.path("b.jsonl")).unwrap());
    assert_eq!(a, std::fs::read(t.path("c.jsonl")).unwrap());

    // flags given with --replay override the stored configuration
    ok(d, &["generate", "--replay", "a.jsonl", "--seed", "10", "--out", "e.jsonl"]);
    assert_ne!(a, std::fs::read(t.path("e.jsonl")).unwrap());

    std::fs::write(
        t.path("run.toml"),
        "lm = \"lm1.json\"\ndiscriminator = \"clf1.json\"\nprompts = \"w/prompts.tsv\"\nseed = 9\nomit_timing = true\n\n[decode.generation]\nmax_new_tokens = 10\n\n[decode.mcts]\niterations_per_token = 15\nrollout = 3\n",
    )
    .unwrap();
    ok(d, &["generate", "--config", "run.toml", "--out", "f.jsonl"]);
    assert_eq!(a, std::fs::read(t.path("f.jsonl")).unwrap());
}

#[test]
fn failures_are_single_json_lines() {
    let t = trained_world();
    let d = t.dir.path();
    let e = fails(d, &["generate", "--lm", "missing.json", "--clf", "clf1.json", "--prompts", "w/prompts.tsv"]);
    assert_eq!(e["error"], "io");
    assert!(e["message"].as_str().unwrap().contains("missing.json"));

    let e =
        fails(d, &["generate", "--lm", "lm1.json", "--clf", "clf1.json", "--prompts", "w/prompts.tsv", "--temp", "0"]);
    assert_eq!(e["error"], "invalid_argument");

    let e = fails(d, &["generate", "--method", "bogus"]);
    assert_eq!(e["error"], "usage");
    assert_eq!(fails(d, &["no-such-command"])["error"], "usage");

    std::fs::write(t.path("bad.toml"), "lm = \"lm1.json\"\ncolour = \"blue\"\n").unwrap();
    let e = fails(d, &["generate", "--config", "bad.toml"]);
    assert!(e["message"].as_str().unwrap().contains("colour"), "{e}");

    let e = fails(d, &["oracle-search", "--lm", "lm1.json", "--clf", "clf1.json", "--prompt", "w0", "--max-len", "9"]);
    assert!(e["message"].as_str().unwrap().contains("sequences"), "{e}");

    let e =
        fails(d, &["evaluate", "--records", "w/prompts.tsv", "--oracle-lm", "lm2.json", "--oracle-clf", "clf2.json"]);
    assert_eq!(e["error"], "format");
}
