use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mcts_decode::config::{read_toml, with_jobs, DecodeConfig, Method, RunConfig, SweepConfig};
use mcts_decode::discriminator::train_naive_bayes;
use mcts_decode::eval::{
    exhaustive_oracle, make_prompts, make_split, run_sweep, synth_corpus, CsvSink, JsonlSink, LabeledCorpus,
    ReportSink, SplitPlan, SynthConfig, Tee, ToyWorld,
};
use mcts_decode::lm::train_ngram;
use mcts_decode::pipeline::{
    evaluate_file, load_models, read_records_file, run_generate, write_prompts, write_records, Header,
};
use mcts_decode::rerank::{PoolMethod, SelectRule};
use mcts_decode::search::Rollout;
use mcts_decode::{ConstraintSpec, Error, LanguageModel, LikelihoodMode, Result};

#[derive(Parser)]
#[command(name = "mcts-decode", version, about = "Discriminator-guided decoding toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic keyword corpus, its split plan and prompts
    CorpusSynth(SynthArgs),
    /// Write a seeded six-way split plan for a corpus
    Split {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a language model or a classifier
    Train(TrainArgs),
    /// Decode prompts and write JSON-lines records
    Generate(Box<GenerateArgs>),
    /// Score a generation file with oracle models (CSV)
    Evaluate {
        #[arg(long)]
        records: PathBuf,
        #[arg(long)]
        oracle_lm: PathBuf,
        #[arg(long)]
        oracle_clf: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a parameter grid on a toy world (CSV)
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use this labeled TSV corpus instead of a synthetic one
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jsonl: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Enumerate every continuation of a prompt and report the best one
    OracleSearch {
        #[arg(long)]
        lm: PathBuf,
        #[arg(long)]
        clf: PathBuf,
        #[arg(long)]
        prompt: String,
        #[arg(long, default_value_t = 0)]
        class: usize,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Likelihood::Normalized)]
        likelihood: Likelihood,
        #[arg(long, default_value_t = 4)]
        max_len: usize,
        /// Print the whole score table, not just the best sequence
        #[arg(long)]
        table: bool,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 2)]
    classes: usize,
    #[arg(long, default_value_t = 500)]
    docs_per_class: usize,
    #[arg(long, default_value_t = 15)]
    min_len: usize,
    #[arg(long, default_value_t = 30)]
    max_len: usize,
    #[arg(long, default_value_t = 0.9)]
    skew: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
    #[arg(long, default_value_t = 4)]
    prompt_tokens: usize,
    #[arg(long, default_value_t = 100)]
    num_prompts: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelKind {
    Lm,
    Clf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitSet {
    Train,
    Val,
    Test,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Likelihood {
    Normalized,
    Raw,
}

impl From<Likelihood> for LikelihoodMode {
    fn from(l: Likelihood) -> Self {
        match l {
            Likelihood::Normalized => LikelihoodMode::Normalized,
            Likelihood::Raw => LikelihoodMode::Raw,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[arg(value_enum)]
    kind: ModelKind,
    #[arg(long)]
    corpus: PathBuf,
    /// Split plan; without it every document is used
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=2))]
    part: u8,
    #[arg(long, value_enum, default_value_t = SplitSet::Train)]
    set: SplitSet,
    #[arg(long, default_value_t = 2)]
    order: usize,
    /// Smoothing constant; defaults to 0.1 for LMs and 1.0 for classifiers
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    /// TOML run configuration; flags override it
    #[arg(long)]
    config: Option<PathBuf>,
    /// Rerun the configuration stored in an earlier output file
    #[arg(long, conflicts_with = "config")]
    replay: Option<PathBuf>,
    /// n-gram file, or tcp:HOST:PORT / stdio:COMMAND
    #[arg(long)]
    lm: Option<PathBuf>,
    #[arg(long)]
    clf: Option<PathBuf>,
    #[arg(long)]
    prompts: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    pool: Option<PoolMethod>,
    #[arg(long)]
    select: Option<SelectRule>,
    #[arg(long)]
    pool_size: Option<usize>,
    #[arg(long)]
    beam_width: Option<usize>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    c_puct: Option<f64>,
    #[arg(long)]
    rollout: Option<Rollout>,
    #[arg(long)]
    temp: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, value_enum)]
    likelihood: Option<Likelihood>,
    #[arg(long)]
    rep_penalty: Option<f64>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    top_p: Option<f64>,
    /// New-token budget per prompt
    #[arg(long)]
    tokens: Option<usize>,
    #[arg(long)]
    fixed_length: bool,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Record zero durations so reruns are byte-identical
    #[arg(long)]
    omit_timing: bool,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f =
        File::create(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(BufWriter::new(f))
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn read_corpus(path: &Path) -> Result<LabeledCorpus> {
    let f =
        File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    LabeledCorpus::read_tsv(BufReader::new(f), None)
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let f =
        File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    Ok(serde_json::from_reader(BufReader::new(f))?)
}

fn corpus_synth(a: &SynthArgs) -> Result<()> {
    let cfg = SynthConfig {
        num_classes: a.classes,
        docs_per_class: a.docs_per_class,
        min_len: a.min_len,
        max_len: a.max_len,
        keyword_skew: a.skew,
        seed: a.seed,
        ..SynthConfig::default()
    };
    let corpus = synth_corpus(&cfg)?;
    let vocab = corpus.vocabulary()?;
    let plan = make_split(corpus.len(), a.split_seed)?;
    let (prompts, targets) = make_prompts(&corpus, &vocab, &plan, a.prompt_tokens, a.num_prompts)?;
    std::fs::create_dir_all(&a.out)?;
    corpus.write_tsv(create(&a.out.join("corpus.tsv"))?)?;
    serde_json::to_writer_pretty(create(&a.out.join("split.json"))?, &plan)?;
    write_prompts(create(&a.out.join("prompts.tsv"))?, &vocab, &prompts, &targets, &corpus.class_names)?;
    Ok(())
}

fn train(a: &TrainArgs) -> Result<()> {
    let corpus = read_corpus(&a.corpus)?;
    let vocab = corpus.vocabulary()?;
    let indices: Vec<usize> = match &a.split {
        None => (0..corpus.len()).collect(),
        Some(p) => {
            let plan: SplitPlan = read_json(p)?;
            let part = if a.part == 1 { &plan.part1 } else { &plan.part2 };
            match a.set {
                SplitSet::Train => part.train.clone(),
                SplitSet::Val => part.val.clone(),
                SplitSet::Test => part.test.clone(),
                SplitSet::All => [part.train.clone(), part.val.clone(), part.test.clone()].concat(),
            }
        }
    };
    let docs = corpus.encode(&vocab, &indices)?;
    let out = create(&a.out)?;
    match a.kind {
        ModelKind::Lm => {
            let texts: Vec<_> = docs.into_iter().map(|(d, _)| d).collect();
            train_ngram(&texts, vocab, a.order, a.lambda.unwrap_or(0.1))?.save(out)
        }
        ModelKind::Clf => {
            train_naive_bayes(&docs, corpus.class_names.clone(), vocab, a.lambda.unwrap_or(1.0))?.save(out)
        }
    }
}

fn generate(a: &GenerateArgs) -> Result<()> {
    // --replay or --config supply the base; flags override either
    let mut cfg = match (&a.replay, &a.config) {
        (Some(path), _) => {
            let (header, _) = read_records_file(path)?;
            header.ok_or_else(|| Error::Format(format!("{} has no header line", path.display())))?.config
        }
        (None, Some(p)) => read_toml::<RunConfig>(p)?,
        (None, None) => RunConfig {
            lm: a.lm.clone().ok_or_else(|| Error::InvalidArgument("--lm is required".into()))?,
            discriminator: a.clf.clone().ok_or_else(|| Error::InvalidArgument("--clf is required".into()))?,
            prompts: a.prompts.clone().ok_or_else(|| Error::InvalidArgument("--prompts is required".into()))?,
            output: None,
            seed: 0,
            omit_timing: false,
            decode: DecodeConfig::default(),
        },
    };
    {
        let d = &mut cfg.decode;
        macro_rules! set {
            ($flag:expr, $field:expr) => {
                if let Some(v) = $flag.clone() {
                    $field = v;
                }
            };
        }
        set!(a.lm, cfg.lm);
        set!(a.clf, cfg.discriminator);
        set!(a.prompts, cfg.prompts);
        set!(a.seed, cfg.seed);
        set!(a.method, d.method);
        set!(a.pool, d.pool);
        set!(a.select, d.select);
        set!(a.beam_width, d.beam_width);
        set!(a.iterations, d.mcts.iterations_per_token);
        set!(a.c_puct, d.mcts.c_puct);
        set!(a.rollout, d.mcts.rollout);
        set!(a.temp, d.generation.temperature);
        set!(a.alpha, d.alpha);
        set!(a.rep_penalty, d.generation.repetition_penalty);
        set!(a.tokens, d.generation.max_new_tokens);
        if let Some(l) = a.likelihood {
            d.likelihood = l.into();
        }
        if a.pool_size.is_some() {
            d.pool_size = a.pool_size;
        }
        if a.top_k.is_some() {
            d.generation.top_k = a.top_k;
        }
        if a.top_p.is_some() {
            d.generation.top_p = a.top_p;
        }
        d.generation.fixed_length |= a.fixed_length;
        cfg.omit_timing |= a.omit_timing;
    }
    if a.out.is_some() {
        cfg.output = a.out.clone();
    }
    let records = run_generate(&cfg, a.jobs)?;
    let out = output(cfg.output.as_deref())?;
    write_records(out, &Header::new(cfg), &records)
}

fn sweep(
    config: Option<&Path>,
    corpus: Option<&Path>,
    out: Option<&Path>,
    jsonl: Option<&Path>,
    jobs: Option<usize>,
) -> Result<()> {
    let cfg: SweepConfig = match config {
        Some(p) => read_toml(p)?,
        None => SweepConfig {
            world: Default::default(),
            base: Default::default(),
            grid: Default::default(),
            output: None,
            jsonl: None,
        },
    };
    cfg.validate()?;
    let world = match corpus {
        Some(p) => ToyWorld::from_corpus(read_corpus(p)?, &cfg.world)?,
        None => ToyWorld::build(&cfg.world)?,
    };
    let mut csv = CsvSink::new(output(out.or(cfg.output.as_deref()))?);
    let mut lines = match jsonl.or(cfg.jsonl.as_deref()) {
        Some(p) => Some(JsonlSink(create(p)?)),
        None => None,
    };
    let reports = with_jobs(jobs, || run_sweep(&cfg.grid, &cfg.base, &world, &mut Vec::new()))??;
    let mut sinks: Vec<&mut dyn ReportSink> = vec![&mut csv];
    if let Some(l) = lines.as_mut() {
        sinks.push(l);
    }
    let mut tee = Tee(sinks);
    for r in &reports {
        tee.emit(r)?;
    }
    csv.into_inner()?.flush()?;
    if let Some(JsonlSink(mut w)) = lines {
        w.flush()?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn oracle_search(
    lm: &Path,
    clf: &Path,
    prompt: &str,
    class: usize,
    alpha: f64,
    likelihood: Likelihood,
    max_len: usize,
    table: bool,
) -> Result<()> {
    let models = load_models(lm, clf)?;
    let vocab = models.lm.vocabulary().clone();
    let prompt = vocab.encode(prompt.split_whitespace())?;
    let spec = ConstraintSpec::new(class, alpha).with_likelihood(likelihood.into());
    let res = exhaustive_oracle(&models.lm, &models.disc, &spec, &prompt, max_len)?;
    let mut out = output(None)?;
    let row = |s: &mcts_decode::TokenSequence, score: f64, loglik: f64| {
        serde_json::json!({
            "text": vocab.decode(s.generated()),
            "tokens": s.generated(),
            "score": score,
            "loglik": loglik,
        })
    };
    if table {
        for s in &res.table {
            writeln!(out, "{}", row(&s.sequence, s.score, s.loglik))?;
        }
    }
    let best = res.table.iter().find(|s| s.sequence == res.best).expect("best comes from the table");
    let best = serde_json::json!({"best": row(&best.sequence, best.score, best.loglik), "sequences": res.table.len()});
    writeln!(out, "{best}")?;
    out.flush()?;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::CorpusSynth(a) => corpus_synth(&a),
        Command::Split { corpus, seed, out } => {
            let plan = make_split(read_corpus(&corpus)?.len(), seed)?;
            Ok(serde_json::to_writer_pretty(create(&out)?, &plan)?)
        }
        Command::Train(a) => train(&a),
        Command::Generate(a) => generate(&a),
        Command::Evaluate { records, oracle_lm, oracle_clf, out } => {
            let report = evaluate_file(&records, &oracle_lm, &oracle_clf)?;
            let mut sink = CsvSink::new(output(out.as_deref())?);
            sink.emit(&report)?;
            sink.into_inner()?.flush()?;
            Ok(())
        }
        Command::Sweep { config, corpus, out, jsonl, jobs } => {
            sweep(config.as_deref(), corpus.as_deref(), out.as_deref(), jsonl.as_deref(), jobs)
        }
        Command::OracleSearch { lm, clf, prompt, class, alpha, likelihood, max_len, table } => {
            oracle_search(&lm, &clf, &prompt, class, alpha, likelihood, max_len, table)
        }
    }
}

fn fail(kind: &str, message: &str) -> ExitCode {
    eprintln!("{}", serde_json::json!({"error": kind, "message": message}));
    ExitCode::FAILURE
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            return fail("usage", msg.lines().next().unwrap_or("bad arguments"));
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e.kind(), &e.to_string()),
    }
}
