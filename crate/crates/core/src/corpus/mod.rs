//! Utterance corpora: validated construction, stratified sampling, ratio
//! splits, and the per-category sample schedule.
//!
//! A corpus is an ordered list of utterances with unique ids, one shared
//! embedding dimension (>= 2), and finite components; every constructor
//! enforces that. Sampling and splitting are seeded and process categories in
//! sorted order, so results depend only on (corpus, arguments, seed).
//! Stratified samples drawn with the same seed are nested across sizes: the
//! sample at a smaller step is a prefix selection of the sample at a larger
//! one, which keeps cross-size comparisons (prototype overlap) meaningful.

mod io;
mod synth;

pub use io::{load_corpus, save_corpus, CorpusFormat, BINARY_MAGIC};
pub use synth::{generate_synthetic, GroundTruthTree, SynthSpec, TruthNode};

use std::collections::{BTreeMap, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::linalg::Mat;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance<S> {
    pub id: String,
    pub category: String,
    pub text: Option<String>,
    pub embedding: Vec<S>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus<S> {
    utterances: Vec<Utterance<S>>,
    dim: usize,
}

impl<S: Scalar> Corpus<S> {
    /// Validates and wraps the utterances. The corpus must be non-empty, ids
    /// unique, dimensions equal and >= 2, components finite.
    pub fn new(utterances: Vec<Utterance<S>>) -> Result<Self> {
        let first = utterances.first().ok_or(Error::EmptyCorpus)?;
        let dim = first.embedding.len();
        if dim < 2 {
            return Err(Error::SmallDimension(dim));
        }
        let mut seen = HashSet::with_capacity(utterances.len());
        for (index, u) in utterances.iter().enumerate() {
            if u.embedding.len() != dim {
                return Err(Error::DimensionMismatch {
                    index,
                    expected: dim,
                    found: u.embedding.len(),
                });
            }
            if u.embedding.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index });
            }
            if !seen.insert(u.id.as_str()) {
                return Err(Error::DuplicateId {
                    index,
                    id: u.id.clone(),
                });
            }
        }
        Ok(Corpus { utterances, dim })
    }

    pub fn len(&self) -> usize {
        self.utterances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.utterances.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn utterances(&self) -> &[Utterance<S>] {
        &self.utterances
    }

    pub fn get(&self, i: usize) -> &Utterance<S> {
        &self.utterances[i]
    }

    pub fn ids(&self) -> Vec<String> {
        self.utterances.iter().map(|u| u.id.clone()).collect()
    }

    /// Embeddings as an n x d matrix, rows in corpus order.
    pub fn embedding_matrix(&self) -> Mat<S> {
        let mut m = Mat::zeros(self.len(), self.dim);
        for (i, u) in self.utterances.iter().enumerate() {
            m.row_mut(i).copy_from_slice(&u.embedding);
        }
        m
    }

    /// Category -> member indices (corpus order), categories sorted.
    pub fn by_category(&self) -> BTreeMap<&str, Vec<usize>> {
        let mut map: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, u) in self.utterances.iter().enumerate() {
            map.entry(u.category.as_str()).or_default().push(i);
        }
        map
    }

    pub fn category_counts(&self) -> BTreeMap<String, usize> {
        self.by_category()
            .into_iter()
            .map(|(c, v)| (c.to_string(), v.len()))
            .collect()
    }

    fn subset(&self, indices: &[usize]) -> Corpus<S> {
        Corpus {
            utterances: indices.iter().map(|&i| self.utterances[i].clone()).collect(),
            dim: self.dim,
        }
    }
}

/// Draws up to `per_category` utterances from every category, without
/// replacement, preserving corpus order in the result.
///
/// Selection within a category is a partial Fisher-Yates over its members in
/// corpus order, so for a fixed seed the chosen set at `per_category = a` is a
/// subset of the one at `b > a` (nested samples).
pub fn stratified_sample<S: Scalar>(
    corpus: &Corpus<S>,
    per_category: usize,
    seed: u64,
) -> Result<Corpus<S>> {
    if per_category == 0 {
        return Err(Error::InvalidInput("per-category sample size is 0".into()));
    }
    let mut chosen: Vec<usize> = Vec::new();
    for (category, members) in corpus.by_category() {
        let mut rng = category_rng(seed, category);
        let take = per_category.min(members.len());
        let mut pool = members.clone();
        for i in 0..take {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        chosen.extend_from_slice(&pool[..take]);
    }
    chosen.sort_unstable();
    Ok(corpus.subset(&chosen))
}

#[derive(Debug, Clone)]
pub struct SplitCorpus<S> {
    pub train: Corpus<S>,
    pub validation: Corpus<S>,
    pub ratio: f64,
}

/// Stratified ratio split. Each category contributes `ceil(ratio * count)`
/// rows to train (fractional remainders go to train), the rest to validation.
/// A category with a single member lands entirely in train; that leaves its
/// validation side empty, which is logged, not an error.
pub fn split<S: Scalar>(corpus: &Corpus<S>, ratio: f64, seed: u64) -> Result<SplitCorpus<S>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidInput(format!(
            "split ratio must be in (0, 1), got {ratio}"
        )));
    }
    let mut train_idx: Vec<usize> = Vec::new();
    let mut val_idx: Vec<usize> = Vec::new();
    for (category, members) in corpus.by_category() {
        let mut rng = category_rng(seed, category);
        let mut pool = members.clone();
        pool.shuffle(&mut rng);
        let n_train = ((ratio * members.len() as f64).ceil() as usize).min(members.len());
        if n_train == members.len() {
            log::warn!(
                "category {category:?} has {} member(s); validation side is empty",
                members.len()
            );
        }
        train_idx.extend_from_slice(&pool[..n_train]);
        val_idx.extend_from_slice(&pool[n_train..]);
    }
    train_idx.sort_unstable();
    val_idx.sort_unstable();
    // Degenerate but permitted: every category may round fully to train,
    // leaving an empty validation corpus (bypasses Corpus::new on purpose).
    Ok(SplitCorpus {
        train: corpus.subset(&train_idx),
        validation: corpus.subset(&val_idx),
        ratio,
    })
}

/// Largest dataset with at most `cap` rows per category:
/// sum over categories of min(cap, count). `usize::MAX` means uncapped.
pub fn max_balanced_size<S: Scalar>(corpus: &Corpus<S>, cap: usize) -> usize {
    corpus
        .by_category()
        .values()
        .map(|m| m.len().min(cap))
        .sum()
}

/// Ascending per-category step sizes plus the total sizes they produce against
/// a concrete corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampleSchedule {
    pub per_category_steps: Vec<usize>,
    pub total_sizes: Vec<usize>,
}

impl SampleSchedule {
    /// Validates the steps (positive, strictly ascending) and derives total
    /// sizes: `total[i] = sum_c min(step[i], count_c)`.
    pub fn from_steps<S: Scalar>(corpus: &Corpus<S>, steps: &[usize]) -> Result<Self> {
        if steps.is_empty() {
            return Err(Error::InvalidInput("schedule has no steps".into()));
        }
        for w in steps.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::InvalidInput(format!(
                    "schedule steps must be strictly ascending, got {} then {}",
                    w[0], w[1]
                )));
            }
        }
        if steps[0] == 0 {
            return Err(Error::InvalidInput("schedule steps must be positive".into()));
        }
        let total_sizes = steps
            .iter()
            .map(|&s| max_balanced_size(corpus, s))
            .collect();
        Ok(SampleSchedule {
            per_category_steps: steps.to_vec(),
            total_sizes,
        })
    }

    /// Default schedule rule: large corpora (> 30000 rows) use the fixed
    /// steps [10, 20, 40, 60, 80, 100, 120]; smaller ones get about six even
    /// steps up to the largest category's size.
    pub fn auto<S: Scalar>(corpus: &Corpus<S>) -> Result<Self> {
        if corpus.len() > 30_000 {
            return Self::from_steps(corpus, &[10, 20, 40, 60, 80, 100, 120]);
        }
        let max_avail = corpus
            .by_category()
            .values()
            .map(Vec::len)
            .max()
            .unwrap_or(0);
        let mut steps: Vec<usize> = (1..=6)
            .map(|i| (i * max_avail) as f64 / 6.0)
            .map(|s| s.round() as usize)
            .filter(|&s| s > 0)
            .collect();
        steps.dedup();
        Self::from_steps(corpus, &steps)
    }
}

/// One RNG stream per (seed, category), independent of the other categories,
/// so adding a category never perturbs the rest.
fn category_rng(seed: u64, category: &str) -> ChaCha8Rng {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in category.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    ChaCha8Rng::seed_from_u64(seed ^ h)
}
