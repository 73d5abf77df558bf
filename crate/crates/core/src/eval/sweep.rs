//! Grid sweeps over decoder settings on a fixed prompt set.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::MetricReport;
use super::world::ToyWorld;
use crate::config::{DecodeConfig, Method};
use crate::error::{invalid, Error, Result};
use crate::search::Rollout;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepGrid {
    pub methods: Vec<Method>,
    pub temperature: Vec<f64>,
    pub c_puct: Vec<f64>,
    pub alpha: Vec<f64>,
    pub rollout: Vec<Rollout>,
    pub seeds: Vec<u64>,
}

impl Default for SweepGrid {
    fn default() -> Self {
        SweepGrid {
            methods: vec![Method::Mcts],
            temperature: vec![1.0, 1.1, 1.2],
            c_puct: vec![1.0, 3.0, 5.0, 8.0],
            alpha: vec![1.0],
            rollout: [0, 3, 5, 10, 20]
                .into_iter()
                .map(|j| if j == 0 { Rollout::None } else { Rollout::Fixed(j) })
                .collect(),
            seeds: vec![0],
        }
    }
}

impl SweepGrid {
    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty()
            || self.temperature.is_empty()
            || self.c_puct.is_empty()
            || self.alpha.is_empty()
            || self.rollout.is_empty()
            || self.seeds.is_empty()
        {
            return Err(invalid("every sweep axis needs at least one value"));
        }
        Ok(())
    }

    /// Cartesian product in axis order method, τ, c_puct, α, rollout, seed.
    /// Axes a method ignores (c_puct and rollout outside MCTS, α outside MCTS
    /// and re-ranking) collapse to their first value.
    pub fn points(&self, base: &DecodeConfig) -> Vec<(DecodeConfig, u64)> {
        let mut out = Vec::new();
        for &method in &self.methods {
            let searches = method == Method::Mcts;
            let mixes = searches || method == Method::Rerank;
            let c_axis = if searches { &self.c_puct[..] } else { &self.c_puct[..1] };
            let r_axis = if searches { &self.rollout[..] } else { &self.rollout[..1] };
            let a_axis = if mixes { &self.alpha[..] } else { &self.alpha[..1] };
            for &t in &self.temperature {
                for &c in c_axis {
                    for &a in a_axis {
                        for &r in r_axis {
                            for &seed in &self.seeds {
                                let mut cfg = base.clone();
                                cfg.method = method;
                                cfg.generation.temperature = t;
                                cfg.alpha = a;
                                if searches {
                                    cfg.mcts.c_puct = c;
                                    cfg.mcts.rollout = r;
                                }
                                out.push((cfg, seed));
                            }
                        }
                    }
                }
            }
        }
        out
    }
}

/// Receives metric rows in grid order.
pub trait ReportSink {
    fn emit(&mut self, report: &MetricReport) -> Result<()>;
}

impl ReportSink for Vec<MetricReport> {
    fn emit(&mut self, report: &MetricReport) -> Result<()> {
        self.push(report.clone());
        Ok(())
    }
}

#[derive(Serialize)]
struct CsvRow<'a> {
    method: &'a str,
    temperature: Option<f64>,
    repetition_penalty: Option<f64>,
    c_puct: Option<f64>,
    iterations: Option<usize>,
    rollout: Option<&'a str>,
    alpha: Option<f64>,
    pool_size: Option<usize>,
    max_new_tokens: Option<usize>,
    accuracy: f64,
    self_bleu: f64,
    oracle_perplexity: f64,
    n: usize,
    seed: u64,
}

impl<'a> From<&'a MetricReport> for CsvRow<'a> {
    fn from(r: &'a MetricReport) -> Self {
        let p = &r.params;
        CsvRow {
            method: &r.method,
            temperature: p.temperature,
            repetition_penalty: p.repetition_penalty,
            c_puct: p.c_puct,
            iterations: p.iterations,
            rollout: p.rollout.as_deref(),
            alpha: p.alpha,
            pool_size: p.pool_size,
            max_new_tokens: p.max_new_tokens,
            accuracy: r.accuracy,
            self_bleu: r.self_bleu,
            oracle_perplexity: r.oracle_perplexity,
            n: r.n,
            seed: r.seed,
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Format(format!("{other:?}")),
    }
}

/// One header row, then one row per report; empty cells for parameters a
/// method does not use.
pub struct CsvSink<W: Write> {
    writer: csv::Writer<W>,
}

impl<W: Write> CsvSink<W> {
    pub fn new(w: W) -> Self {
        CsvSink { writer: csv::Writer::from_writer(w) }
    }

    pub fn into_inner(self) -> Result<W> {
        self.writer.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

impl<W: Write> ReportSink for CsvSink<W> {
    fn emit(&mut self, report: &MetricReport) -> Result<()> {
        self.writer.serialize(CsvRow::from(report)).map_err(csv_error)?;
        self.writer.flush()?;
        Ok(())
    }
}

pub fn write_csv<W: Write>(w: W, reports: &[MetricReport]) -> Result<()> {
    let mut sink = CsvSink::new(w);
    for r in reports {
        sink.emit(r)?;
    }
    sink.into_inner().map(drop)
}

pub struct JsonlSink<W: Write>(pub W);

impl<W: Write> ReportSink for JsonlSink<W> {
    fn emit(&mut self, report: &MetricReport) -> Result<()> {
        serde_json::to_writer(&mut self.0, report)?;
        self.0.write_all(b"\n")?;
        Ok(())
    }
}

/// Fans every report out to several sinks.
pub struct Tee<'a>(pub Vec<&'a mut dyn ReportSink>);

impl ReportSink for Tee<'_> {
    fn emit(&mut self, report: &MetricReport) -> Result<()> {
        for s in self.0.iter_mut() {
            s.emit(report)?;
        }
        Ok(())
    }
}

/// Scores one decoder configuration on the world's prompts with the oracles.
pub fn evaluate_config(world: &ToyWorld, cfg: &DecodeConfig, seed: u64) -> Result<MetricReport> {
    let records = cfg.run_all(&world.prompts, &world.targets, &world.lm, &world.guide, seed)?;
    MetricReport::compute(cfg.label(), cfg.report_params(), &records, &world.oracle_disc, &world.oracle_lm, seed)
}

/// Runs every grid point (in parallel) and emits the reports in grid order.
pub fn run_sweep(
    grid: &SweepGrid,
    base: &DecodeConfig,
    world: &ToyWorld,
    sink: &mut dyn ReportSink,
) -> Result<Vec<MetricReport>> {
    grid.validate()?;
    base.validate()?;
    let reports: Vec<MetricReport> =
        grid.points(base).par_iter().map(|(cfg, seed)| evaluate_config(world, cfg, *seed)).collect::<Result<_>>()?;
    for r in &reports {
        sink.emit(r)?;
    }
    Ok(reports)
}
