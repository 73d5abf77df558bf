//! File-based pipeline: model loading (local files or bridge endpoints),
//! prompt files, and self-describing JSON-lines generation output.

use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bridge::{connect, Endpoint, RemoteModel};
use crate::config::{with_jobs, RunConfig};
use crate::discriminator::{Discriminator, StoredDiscriminator};
use crate::error::{invalid, Error, Result};
use crate::eval::{MetricReport, ReportParams};
use crate::lm::{LanguageModel, NGramModel};
use crate::types::{GenerationRecord, TokenId, Vocabulary};

/// How long a remote model may take to answer one request.
pub const REMOTE_TIMEOUT: Duration = Duration::from_secs(30);

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

fn endpoint(source: &Path) -> Option<Result<Endpoint>> {
    let s = source.to_str()?;
    (s.starts_with("tcp:") || s.starts_with("stdio:")).then(|| s.parse())
}

pub struct Models {
    pub lm: Box<dyn LanguageModel>,
    pub disc: Box<dyn Discriminator>,
    /// Known when the discriminator file records them.
    pub class_names: Option<Vec<String>>,
}

/// Loads an n-gram file or connects to `tcp:`/`stdio:` endpoints. When both
/// sources name the same endpoint a single connection serves both.
pub fn load_models(lm_source: &Path, disc_source: &Path) -> Result<Models> {
    let remote_lm = endpoint(lm_source).transpose()?;
    let remote_disc = endpoint(disc_source).transpose()?;
    let lm: Box<dyn LanguageModel>;
    let mut shared: Option<RemoteModel> = None;
    let vocab: Vocabulary = match &remote_lm {
        Some(ep) => {
            let m = connect(ep, REMOTE_TIMEOUT)?;
            let v = m.vocabulary().clone();
            lm = Box::new(m.clone());
            shared = Some(m);
            v
        }
        None => {
            let m = NGramModel::load(BufReader::new(open(lm_source)?))?;
            let v = m.vocabulary().clone();
            lm = Box::new(m);
            v
        }
    };
    let (disc, class_names): (Box<dyn Discriminator>, _) = match remote_disc {
        Some(ep) if Some(&ep) == remote_lm.as_ref() => (Box::new(shared.take().expect("connected above")), None),
        Some(ep) => {
            let m = connect(&ep, REMOTE_TIMEOUT)?;
            if m.vocabulary() != &vocab {
                return Err(invalid("discriminator endpoint serves a different vocabulary"));
            }
            (Box::new(m), None)
        }
        None => {
            let text = std::fs::read_to_string(disc_source)
                .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", disc_source.display()))))?;
            let d = StoredDiscriminator::load_str(&text, &vocab)?;
            let names = match &d {
                StoredDiscriminator::NaiveBayes(nb) => {
                    if nb.vocabulary() != &vocab {
                        return Err(invalid("language model and discriminator use different vocabularies"));
                    }
                    Some(nb.class_names().to_vec())
                }
                StoredDiscriminator::Keywords(_) => None,
            };
            (Box::new(d), names)
        }
    };
    Ok(Models { lm, disc, class_names })
}

/// Reads `target<TAB>prompt words` lines; the target is a class index or,
/// when `class_names` is known, a class name.
pub fn read_prompts(
    path: &Path,
    vocab: &Vocabulary,
    class_names: Option<&[String]>,
) -> Result<(Vec<Vec<TokenId>>, Vec<usize>)> {
    let mut prompts = Vec::new();
    let mut targets = Vec::new();
    for (n, line) in BufReader::new(open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (target, text) = line
            .split_once('\t')
            .ok_or_else(|| Error::Format(format!("{}:{}: expected target<TAB>prompt", path.display(), n + 1)))?;
        let class = match (target.parse::<usize>(), class_names) {
            (Ok(i), _) => i,
            (Err(_), Some(names)) => names
                .iter()
                .position(|c| c == target)
                .ok_or_else(|| Error::Format(format!("{}:{}: unknown class {target:?}", path.display(), n + 1)))?,
            (Err(_), None) => {
                return Err(Error::Format(format!(
                    "{}:{}: class names unavailable, use a numeric target",
                    path.display(),
                    n + 1
                )))
            }
        };
        prompts.push(vocab.encode(text.split_whitespace())?);
        targets.push(class);
    }
    if prompts.is_empty() {
        return Err(invalid(format!("{} holds no prompts", path.display())));
    }
    Ok((prompts, targets))
}

pub fn write_prompts<W: Write>(
    mut w: W,
    vocab: &Vocabulary,
    prompts: &[Vec<TokenId>],
    targets: &[usize],
    class_names: &[String],
) -> Result<()> {
    for (p, &t) in prompts.iter().zip(targets) {
        writeln!(w, "{}\t{}", class_names[t], vocab.decode(p))?;
    }
    Ok(())
}

/// First line of every generation file: enough to rerun it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub tool: String,
    pub version: String,
    pub config: RunConfig,
}

impl Header {
    /// The output path is dropped: it does not affect the records, and a
    /// replay usually writes somewhere else.
    pub fn new(mut config: RunConfig) -> Self {
        config.output = None;
        Header { tool: env!("CARGO_PKG_NAME").into(), version: env!("CARGO_PKG_VERSION").into(), config }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: Header,
}

/// Runs a generation config end to end (`jobs` bounds the thread pool).
pub fn run_generate(config: &RunConfig, jobs: Option<usize>) -> Result<Vec<GenerationRecord>> {
    config.validate()?;
    let models = load_models(&config.lm, &config.discriminator)?;
    let (prompts, targets) = read_prompts(&config.prompts, models.lm.vocabulary(), models.class_names.as_deref())?;
    let mut records =
        with_jobs(jobs, || config.decode.run_all(&prompts, &targets, &models.lm, &models.disc, config.seed))??;
    if config.omit_timing {
        for r in &mut records {
            r.duration_ms = 0.0;
        }
    }
    Ok(records)
}

pub fn write_records<W: Write>(mut w: W, header: &Header, records: &[GenerationRecord]) -> Result<()> {
    serde_json::to_writer(&mut w, &HeaderLine { header: header.clone() })?;
    w.write_all(b"\n")?;
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a generation file; the header line is optional.
pub fn read_records<R: BufRead>(r: R) -> Result<(Option<Header>, Vec<GenerationRecord>)> {
    let mut header = None;
    let mut records = Vec::new();
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if n == 0 && line.starts_with("{\"header\"") {
            header = Some(serde_json::from_str::<HeaderLine>(&line)?.header);
            continue;
        }
        records.push(serde_json::from_str(&line).map_err(|e| Error::Format(format!("record on line {}: {e}", n + 1)))?);
    }
    Ok((header, records))
}

pub fn read_records_file(path: &Path) -> Result<(Option<Header>, Vec<GenerationRecord>)> {
    read_records(BufReader::new(open(path)?))
}

/// Oracle metrics for one generation file.
pub fn evaluate_file(records_path: &Path, oracle_lm: &Path, oracle_disc: &Path) -> Result<MetricReport> {
    let (header, records) = read_records_file(records_path)?;
    let first = records.first().ok_or_else(|| invalid("no records to evaluate"))?;
    let models = load_models(oracle_lm, oracle_disc)?;
    let (label, params, seed) = match &header {
        Some(h) => (h.config.decode.label(), h.config.decode.report_params(), h.config.seed),
        None => (first.method.clone(), ReportParams::default(), 0),
    };
    MetricReport::compute(label, params, &records, &models.disc, &models.lm, seed)
}
