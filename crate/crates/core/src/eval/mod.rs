//! Evaluation: oracle metrics, brute-force ground truth, synthetic corpora
//! and parameter sweeps.

mod corpus;
mod metrics;
mod oracle;
mod sweep;
mod world;

pub use corpus::{keyword, make_split, synth_corpus, LabeledCorpus, LabeledDoc, PartSplit, SplitPlan, SynthConfig};
pub use metrics::{
    accuracy, bleu, correctness, oracle_perplexity, record_targets, self_bleu, MetricReport, ReportParams,
};
pub use oracle::{exhaustive_oracle, leaf_count, OracleResult, ScoredSequence, ORACLE_LIMIT};
pub use sweep::{evaluate_config, run_sweep, write_csv, CsvSink, JsonlSink, ReportSink, SweepGrid, Tee};
pub use world::{make_prompts, ToyWorld, WorldConfig};
