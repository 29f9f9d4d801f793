//! Seeded bag-of-words corpora shaped like small UCI collections.
//!
//! Documents mix a dominant topic, a secondary topic and a Zipf background,
//! and a fraction of them are noisy copies of earlier documents so that
//! similar pairs exist at high tolerances.

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::corpus::{Corpus, RawDocument};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub documents: usize,
    pub vocabulary: usize,
    pub topics: usize,
    pub terms_per_topic: usize,
    /// Mean token count per document.
    pub mean_length: usize,
    /// Fraction of documents that are perturbed copies of earlier ones.
    pub duplicate_rate: f64,
    /// Fraction of a copy's tokens that get resampled.
    pub mutation_rate: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// 6,906 terms and about 136 tokens per document.
    pub fn kos_like(documents: usize, seed: u64) -> Self {
        Self {
            documents,
            vocabulary: 6906,
            topics: 24,
            terms_per_topic: 250,
            mean_length: 136,
            duplicate_rate: 0.15,
            mutation_rate: 0.2,
            seed,
        }
    }

    pub fn small(documents: usize, vocabulary: usize, seed: u64) -> Self {
        Self {
            documents,
            vocabulary,
            topics: 8,
            terms_per_topic: (vocabulary / 6).max(2),
            mean_length: 40,
            duplicate_rate: 0.2,
            mutation_rate: 0.2,
            seed,
        }
    }
}

fn zipf_weights(n: usize, exponent: f64) -> Vec<f64> {
    (0..n)
        .map(|k| 1.0 / ((k + 1) as f64).powf(exponent))
        .collect()
}

pub fn generate(spec: &SyntheticSpec) -> Result<Corpus> {
    if spec.vocabulary == 0 || spec.topics == 0 || spec.terms_per_topic == 0 {
        return Err(Error::range("synthetic corpus needs terms and topics"));
    }
    let w = spec.vocabulary;
    let per_topic = spec.terms_per_topic.min(w);
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);

    let mut by_popularity: Vec<u32> = (0..w as u32).collect();
    by_popularity.shuffle(&mut rng);
    let background = WeightedIndex::new(zipf_weights(w, 1.05)).expect("positive weights");

    let topic_weights = WeightedIndex::new(zipf_weights(per_topic, 0.8)).expect("positive weights");
    let topics: Vec<Vec<u32>> = (0..spec.topics)
        .map(|_| {
            rand::seq::index::sample(&mut rng, w, per_topic)
                .into_iter()
                .map(|i| i as u32)
                .collect()
        })
        .collect();

    let mut tokens_of: Vec<(usize, Vec<u32>)> = Vec::with_capacity(spec.documents);
    let mut documents = Vec::with_capacity(spec.documents);
    for doc_id in 0..spec.documents {
        let (main, tokens) = if !tokens_of.is_empty() && rng.gen_bool(spec.duplicate_rate) {
            let (main, source) = tokens_of[rng.gen_range(0..tokens_of.len())].clone();
            let topic = &topics[main];
            let tokens = source
                .into_iter()
                .map(|t| {
                    if rng.gen_bool(spec.mutation_rate) {
                        topic[topic_weights.sample(&mut rng)]
                    } else {
                        t
                    }
                })
                .collect();
            (main, tokens)
        } else {
            let main = rng.gen_range(0..spec.topics);
            let second = rng.gen_range(0..spec.topics);
            let len = ((spec.mean_length as f64) * rng.gen_range(0.4..1.6))
                .round()
                .max(1.0) as usize;
            let tokens = (0..len)
                .map(|_| {
                    let roll: f64 = rng.gen();
                    if roll < 0.45 {
                        topics[main][topic_weights.sample(&mut rng)]
                    } else if roll < 0.6 {
                        topics[second][topic_weights.sample(&mut rng)]
                    } else {
                        by_popularity[background.sample(&mut rng)]
                    }
                })
                .collect();
            (main, tokens)
        };
        let mut counts = vec![0u32; w];
        for &t in &tokens {
            counts[t as usize] += 1;
        }
        let counts = counts
            .into_iter()
            .enumerate()
            .filter(|&(_, c)| c > 0)
            .map(|(i, c)| (i as u32, c))
            .collect();
        documents.push(RawDocument { doc_id, counts });
        tokens_of.push((main, tokens));
    }
    Corpus::from_documents(w, documents)
}
