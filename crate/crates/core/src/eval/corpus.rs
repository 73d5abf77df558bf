//! Labeled corpora: TSV I/O, the synthetic keyword world and the split plan.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dist::sample_index;
use crate::error::{invalid, Error, Result};
use crate::job_rng;
use crate::types::{TokenId, Vocabulary};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledDoc {
    pub label: usize,
    pub words: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledCorpus {
    pub class_names: Vec<String>,
    pub docs: Vec<LabeledDoc>,
}

impl LabeledCorpus {
    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    /// Sorted distinct words, followed by eos and bos.
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let words: BTreeSet<&str> = self.docs.iter().flat_map(|d| d.words.iter().map(String::as_str)).collect();
        Vocabulary::from_words(words)
    }

    pub fn encode(&self, vocab: &Vocabulary, indices: &[usize]) -> Result<Vec<(Vec<TokenId>, usize)>> {
        indices
            .iter()
            .map(|&i| {
                let d = self.docs.get(i).ok_or_else(|| invalid(format!("document index {i} out of range")))?;
                Ok((vocab.encode(d.words.iter().map(String::as_str))?, d.label))
            })
            .collect()
    }

    /// `label<TAB>text` per line; labels are class names, classes are
    /// numbered in order of first appearance unless `class_names` is given.
    pub fn read_tsv<R: BufRead>(r: R, class_names: Option<Vec<String>>) -> Result<Self> {
        let fixed = class_names.is_some();
        let mut names = class_names.unwrap_or_default();
        let mut docs = Vec::new();
        for (n, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (label, text) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("line {}: expected label<TAB>text", n + 1)))?;
            let label = match names.iter().position(|c| c == label) {
                Some(i) => i,
                None if fixed => return Err(Error::Format(format!("line {}: unknown label {label:?}", n + 1))),
                None => {
                    names.push(label.to_string());
                    names.len() - 1
                }
            };
            let words: Vec<String> = text.split_whitespace().map(str::to_string).collect();
            if words.is_empty() {
                return Err(Error::Format(format!("line {}: empty document", n + 1)));
            }
            docs.push(LabeledDoc { label, words });
        }
        Ok(LabeledCorpus { class_names: names, docs })
    }

    pub fn write_tsv<W: Write>(&self, mut w: W) -> Result<()> {
        for d in &self.docs {
            writeln!(w, "{}\t{}", self.class_names[d.label], d.words.join(" "))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub docs_per_class: usize,
    pub min_len: usize,
    pub max_len: usize,
    /// Probability that a keyword slot draws from the document's own class.
    pub keyword_skew: f64,
    /// Probability that a position is a keyword slot at all.
    pub keyword_rate: f64,
    pub keywords_per_class: usize,
    pub common_words: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            num_classes: 2,
            docs_per_class: 500,
            min_len: 15,
            max_len: 30,
            keyword_skew: 0.9,
            keyword_rate: 0.3,
            keywords_per_class: 5,
            common_words: 30,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(invalid("need at least two classes"));
        }
        if self.docs_per_class == 0 {
            return Err(invalid("docs_per_class must be >= 1"));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(invalid("document lengths need 1 <= min_len <= max_len"));
        }
        if !(self.keyword_skew > 0.5 && self.keyword_skew < 1.0) {
            return Err(invalid("keyword_skew must be in (0.5, 1)"));
        }
        if !(self.keyword_rate > 0.0 && self.keyword_rate <= 1.0) {
            return Err(invalid("keyword_rate must be in (0, 1]"));
        }
        if self.keywords_per_class == 0 || self.common_words == 0 {
            return Err(invalid("need at least one keyword per class and one common word"));
        }
        Ok(())
    }
}

pub fn keyword(class: usize, k: usize) -> String {
    format!("c{class}k{k}")
}

/// Documents whose words are mostly Zipf-distributed common words, with
/// keyword slots that name the document's own class with probability
/// `keyword_skew` and a uniformly chosen other class otherwise. Classes are
/// interleaved: document `i` has label `i % num_classes`.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<LabeledCorpus> {
    cfg.validate()?;
    let mut rng = job_rng(cfg.seed);
    let common: Vec<String> = (0..cfg.common_words).map(|i| format!("w{i}")).collect();
    let zipf: Vec<f64> = (0..cfg.common_words).map(|r| 1.0 / (r + 1) as f64).collect();
    let mut docs = Vec::with_capacity(cfg.num_classes * cfg.docs_per_class);
    for i in 0..cfg.num_classes * cfg.docs_per_class {
        let label = i % cfg.num_classes;
        let len = rng.gen_range(cfg.min_len..=cfg.max_len);
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            if rng.gen::<f64>() < cfg.keyword_rate {
                let class = if rng.gen::<f64>() < cfg.keyword_skew {
                    label
                } else {
                    let other = rng.gen_range(0..cfg.num_classes - 1);
                    if other >= label {
                        other + 1
                    } else {
                        other
                    }
                };
                words.push(keyword(class, rng.gen_range(0..cfg.keywords_per_class)));
            } else {
                words.push(common[sample_index(&zipf, &mut rng)].clone());
            }
        }
        docs.push(LabeledDoc { label, words });
    }
    Ok(LabeledCorpus { class_names: (0..cfg.num_classes).map(|c| format!("class{c}")).collect(), docs })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// Two disjoint halves, one for the generation models and one for the
/// evaluation oracles, each cut into train/val/test.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub part1: PartSplit,
    pub part2: PartSplit,
}

impl SplitPlan {
    pub fn sets(&self) -> [&[usize]; 6] {
        [&self.part1.train, &self.part1.val, &self.part1.test, &self.part2.train, &self.part2.val, &self.part2.test]
    }
}

fn cut(indices: &[usize]) -> PartSplit {
    let n = indices.len();
    let val = ((n as f64 * 0.1).round() as usize).max(1);
    let test = ((n as f64 * 0.1).round() as usize).max(1);
    let train = n - val - test;
    PartSplit {
        train: indices[..train].to_vec(),
        val: indices[train..train + val].to_vec(),
        test: indices[train + val..].to_vec(),
    }
}

/// Shuffles `0..n_docs`, halves it, then cuts each half 80/10/10 (at least
/// one document in every val and test set).
pub fn make_split(n_docs: usize, seed: u64) -> Result<SplitPlan> {
    if n_docs < 12 {
        return Err(invalid(format!("corpus of {n_docs} documents is too small to split (need 12)")));
    }
    let mut idx: Vec<usize> = (0..n_docs).collect();
    idx.shuffle(&mut job_rng(seed));
    let half = n_docs / 2;
    Ok(SplitPlan { part1: cut(&idx[..half]), part2: cut(&idx[half..]) })
}
