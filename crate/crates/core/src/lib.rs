//! Constrained sequence decoding with discriminator-guided Monte Carlo Tree
//! Search.
//!
//! A [`LanguageModel`] supplies next-token logits, a [`Discriminator`] scores
//! how well a (possibly unfinished) sequence satisfies a target class, and the
//! decoders in [`search`] and [`rerank`] combine the two. [`eval`] holds the
//! metrics, the exhaustive-search oracle, the synthetic corpus generator and
//! the sweep runner; [`bridge`] lets a remote process stand in for either
//! model.

pub mod bridge;
pub mod config;
pub mod discriminator;
pub mod dist;
mod error;
pub mod eval;
pub mod lm;
pub mod pipeline;
pub mod rerank;
pub mod search;
pub mod types;

pub use discriminator::{constraint_score, Discriminator, KeywordDiscriminator, NaiveBayesModel};
pub use error::{Error, Result};
pub use lm::{LanguageModel, NGramModel};
pub use types::{
    ConstraintSpec, Distribution, GenerationParams, GenerationRecord, LikelihoodMode, TokenId, TokenSequence,
    Vocabulary,
};

/// The seeded generator used for every stochastic choice.
pub type JobRng = rand_chacha::ChaCha8Rng;

pub fn job_rng(seed: u64) -> JobRng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(seed)
}
