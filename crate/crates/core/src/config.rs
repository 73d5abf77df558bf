//! Decoder selection and the TOML run/sweep configuration files.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discriminator::Discriminator;
use crate::error::{invalid, Error, Result};
use crate::eval::{ReportParams, SweepGrid, WorldConfig};
use crate::job_rng;
use crate::lm::LanguageModel;
use crate::rerank::{rerank_generate, PoolMethod, SelectRule};
use crate::search::{beam_sample, beam_search, greedy_decode, mcts_generate, sample_decode, MctsParams};
use crate::types::{ConstraintSpec, GenerationParams, GenerationRecord, LikelihoodMode, TokenId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Greedy,
    Sample,
    Beam,
    BeamSample,
    #[default]
    Mcts,
    Rerank,
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "greedy" => Ok(Method::Greedy),
            "sample" | "sampling" => Ok(Method::Sample),
            "beam" => Ok(Method::Beam),
            "beam_sample" | "beam-sample" => Ok(Method::BeamSample),
            "mcts" => Ok(Method::Mcts),
            "rerank" => Ok(Method::Rerank),
            _ => Err(invalid(format!("unknown method {s:?}"))),
        }
    }
}

/// Everything needed to decode one prompt except the prompt, the target
/// class and the models.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub method: Method,
    pub generation: GenerationParams,
    pub mcts: MctsParams,
    pub alpha: f64,
    pub likelihood: LikelihoodMode,
    /// Beam width for `beam` and `beam_sample`; the top record is kept.
    pub beam_width: usize,
    pub pool: PoolMethod,
    pub select: SelectRule,
    /// Defaults to the pool method's own default size.
    pub pool_size: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            method: Method::Mcts,
            generation: GenerationParams::default(),
            mcts: MctsParams::default(),
            alpha: 1.0,
            likelihood: LikelihoodMode::Normalized,
            beam_width: 5,
            pool: PoolMethod::Sampling,
            select: SelectRule::Argmax,
            pool_size: None,
        }
    }
}

/// splitmix64 of `base + index`, so every prompt of a run gets its own
/// well-separated stream.
pub fn job_seed(base: u64, index: usize) -> u64 {
    let mut z = base.wrapping_add((index as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        self.generation.validate()?;
        self.mcts.validate()?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(invalid("alpha must lie in [0, 1]"));
        }
        if self.beam_width < 1 {
            return Err(invalid("beam width must be >= 1"));
        }
        if self.pool_size == Some(0) {
            return Err(invalid("pool size must be >= 1"));
        }
        Ok(())
    }

    pub fn spec(&self, class_id: usize) -> ConstraintSpec {
        ConstraintSpec::new(class_id, self.alpha).with_likelihood(self.likelihood)
    }

    pub fn pool_size(&self) -> usize {
        self.pool_size.unwrap_or_else(|| self.pool.default_size())
    }

    /// Method name as it appears in reports, e.g. `mcts` or
    /// `rerank:sampling-argmax`.
    pub fn label(&self) -> String {
        match self.method {
            Method::Greedy => "greedy".into(),
            Method::Sample => "sample".into(),
            Method::Beam => "beam".into(),
            Method::BeamSample => "beam_sample".into(),
            Method::Mcts => "mcts".into(),
            Method::Rerank => format!("rerank:{}-{}", self.pool.name(), self.select.name()),
        }
    }

    pub fn report_params(&self) -> ReportParams {
        let g = &self.generation;
        let mut p = ReportParams {
            temperature: Some(g.temperature),
            repetition_penalty: Some(g.repetition_penalty),
            max_new_tokens: Some(g.max_new_tokens),
            ..ReportParams::default()
        };
        match self.method {
            Method::Mcts => {
                p.c_puct = Some(self.mcts.c_puct);
                p.iterations = Some(self.mcts.iterations_per_token);
                p.rollout = Some(self.mcts.rollout.to_string());
                p.alpha = Some(self.alpha);
            }
            Method::Rerank => {
                p.alpha = Some(self.alpha);
                p.pool_size = Some(self.pool_size());
            }
            Method::Beam | Method::BeamSample => p.pool_size = Some(self.beam_width),
            Method::Greedy | Method::Sample => {}
        }
        p
    }

    /// Decodes one prompt towards `target` with the given job seed. The
    /// record's `seed` is that job seed, so `job_rng(record.seed)` replays it.
    pub fn run_one<L, D>(
        &self,
        prompt: &[TokenId],
        target: usize,
        lm: &L,
        disc: &D,
        seed: u64,
    ) -> Result<GenerationRecord>
    where
        L: LanguageModel + ?Sized,
        D: Discriminator + ?Sized,
    {
        let gen = GenerationParams { seed, ..self.generation.clone() };
        let spec = self.spec(target);
        spec.validate(disc.num_classes())?;
        let mut rng = job_rng(seed);
        let mut rec = match self.method {
            Method::Greedy => greedy_decode(prompt, lm, &gen)?,
            Method::Sample => sample_decode(prompt, lm, &gen, &mut rng)?,
            Method::Beam => beam_search(prompt, lm, &gen, self.beam_width)?.swap_remove(0),
            Method::BeamSample => beam_sample(prompt, lm, &gen, self.beam_width, &mut rng)?.swap_remove(0),
            Method::Mcts => return mcts_generate(prompt, lm, disc, &spec, &gen, &self.mcts, &mut rng),
            Method::Rerank => {
                return rerank_generate(
                    prompt,
                    lm,
                    disc,
                    &spec,
                    self.pool,
                    self.pool_size(),
                    self.select,
                    &gen,
                    &mut rng,
                )
            }
        };
        rec.target = Some(target);
        rec.class_prob = Some(disc.class_prob(rec.generated(), target)?);
        Ok(rec)
    }

    /// Decodes every prompt in parallel; job `i` uses `job_seed(seed, i)`.
    /// Output order follows the prompts regardless of scheduling.
    pub fn run_all<L, D>(
        &self,
        prompts: &[Vec<TokenId>],
        targets: &[usize],
        lm: &L,
        disc: &D,
        seed: u64,
    ) -> Result<Vec<GenerationRecord>>
    where
        L: LanguageModel + ?Sized,
        D: Discriminator + ?Sized,
    {
        self.validate()?;
        if prompts.len() != targets.len() {
            return Err(invalid("one target per prompt required"));
        }
        prompts
            .par_iter()
            .zip(targets.par_iter())
            .enumerate()
            .map(|(i, (p, &t))| self.run_one(p, t, lm, disc, job_seed(seed, i)))
            .collect()
    }
}

/// Runs `f` on a pool of `jobs` threads, or on the global pool when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(invalid("--jobs must be >= 1")),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build().map_err(|e| invalid(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

/// A `generate` run: models, prompts and decoder settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub lm: PathBuf,
    pub discriminator: PathBuf,
    /// TSV of `target<TAB>prompt text`; the target is a class name or index.
    pub prompts: PathBuf,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
    /// Write `duration_ms = 0` so reruns are byte-identical.
    #[serde(default)]
    pub omit_timing: bool,
    #[serde(default)]
    pub decode: DecodeConfig,
}

/// A sweep: a toy world, base decoder settings and the grid to vary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default)]
    pub world: WorldConfig,
    #[serde(default)]
    pub base: DecodeConfig,
    #[serde(default)]
    pub grid: SweepGrid,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub jsonl: Option<PathBuf>,
}

pub fn parse_toml<T: serde::de::DeserializeOwned>(text: &str) -> Result<T> {
    toml::from_str(text).map_err(|e| Error::Format(e.to_string().replace('\n', " ")))
}

pub fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    parse_toml(&text)
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        self.decode.validate()
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        self.base.validate()?;
        self.world.validate()?;
        self.grid.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discriminator::ConstantDiscriminator;
    use crate::lm::UniformLm;
    use crate::search::Rollout;
    use crate::types::Vocabulary;

    #[test]
    fn unknown_keys_rejected() {
        let ok = r#"
            lm = "lm.json"
            discriminator = "clf.json"
            prompts = "prompts.tsv"
            [decode]
            method = "mcts"
            alpha = 0.5
            [decode.mcts]
            c_puct = 5.0
            rollout = 3
        "#;
        let cfg: RunConfig = parse_toml(ok).unwrap();
        assert_eq!(cfg.decode.mcts.c_puct, 5.0);
        assert_eq!(cfg.decode.mcts.rollout, Rollout::Fixed(3));
        assert_eq!(cfg.decode.mcts.iterations_per_token, 50);
        assert!(parse_toml::<RunConfig>(&ok.replace("c_puct", "cpuct")).is_err());
        assert!(parse_toml::<RunConfig>(&format!("{ok}\nextra = 1")).is_err());
        let bad_alpha: RunConfig = parse_toml(&ok.replace("0.5", "1.5")).unwrap();
        assert!(bad_alpha.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = DecodeConfig {
            method: Method::Rerank,
            pool: PoolMethod::BeamSampling,
            mcts: MctsParams { rollout: Rollout::Full, ..MctsParams::default() },
            ..DecodeConfig::default()
        };
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<DecodeConfig>(&text).unwrap(), cfg);
        assert_eq!(cfg.label(), "rerank:beam_sampling-argmax");
        assert_eq!(cfg.pool_size(), 10);
    }

    #[test]
    fn run_all_is_deterministic_and_ordered() {
        let vocab = Vocabulary::from_words(["a", "b", "c"]).unwrap();
        let lm = UniformLm::new(vocab);
        let d = ConstantDiscriminator::new(vec![0.4, 0.6]).unwrap();
        let prompts: Vec<Vec<TokenId>> = (0..8).map(|i| vec![i % 3]).collect();
        let targets: Vec<usize> = (0..8).map(|i| i % 2).collect();
        for method in [Method::Sample, Method::Mcts, Method::Rerank, Method::BeamSample] {
            let cfg = DecodeConfig { method, ..DecodeConfig::default() };
            let a = cfg.run_all(&prompts, &targets, &lm, &d, 7).unwrap();
            let b = with_jobs(Some(1), || cfg.run_all(&prompts, &targets, &lm, &d, 7)).unwrap().unwrap();
            for (i, (x, y)) in a.iter().zip(&b).enumerate() {
                assert!(x.same_result(y));
                assert_eq!(x.prompt(), &prompts[i][..]);
                assert_eq!(x.target, Some(targets[i]));
                assert_eq!(x.seed, job_seed(7, i));
            }
        }
    }

    #[test]
    fn job_seeds_differ() {
        let seeds: std::collections::BTreeSet<u64> = (0..1000).map(|i| job_seed(0, i)).collect();
        assert_eq!(seeds.len(), 1000);
        assert_ne!(job_seed(0, 0), job_seed(1, 0));
    }
}
