//! Feature selection: which `f` of the `n` dimensions the filtering step uses.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::corpus::Corpus;
use crate::error::{Error, Result};
use crate::vector::{top_f, zscore, DocumentVector, FeatureIndexSet};

/// `BASE` runs the one-step protocol; the others add a filtering step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SelectionMethod {
    Base,
    Rp,
    Lf,
    Gf,
    Hf,
}

impl SelectionMethod {
    pub const ALL: [SelectionMethod; 5] = [
        SelectionMethod::Base,
        SelectionMethod::Rp,
        SelectionMethod::Lf,
        SelectionMethod::Gf,
        SelectionMethod::Hf,
    ];

    pub fn code(self) -> u8 {
        match self {
            SelectionMethod::Base => 0,
            SelectionMethod::Rp => 1,
            SelectionMethod::Lf => 2,
            SelectionMethod::Gf => 3,
            SelectionMethod::Hf => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }

    pub fn filters(self) -> bool {
        self != SelectionMethod::Base
    }

    /// Index set depends on Alice's current document and travels per query.
    pub fn per_query(self) -> bool {
        matches!(self, SelectionMethod::Lf | SelectionMethod::Hf)
    }

    pub fn needs_whole_vector(self) -> bool {
        matches!(self, SelectionMethod::Gf | SelectionMethod::Hf)
    }

    /// What Bob learns about Alice's documents beyond the base protocol.
    pub fn disclosure_warning(self) -> Option<&'static str> {
        match self {
            SelectionMethod::Lf => {
                Some("LF sends the indexes of each query document's most frequent terms to Bob")
            }
            SelectionMethod::Hf => Some(
                "HF sends per-query indexes derived from the query document's term counts to Bob",
            ),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SelectionMethod::Base => "base",
            SelectionMethod::Rp => "rp",
            SelectionMethod::Lf => "lf",
            SelectionMethod::Gf => "gf",
            SelectionMethod::Hf => "hf",
        }
    }
}

impl fmt::Display for SelectionMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SelectionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::range(format!("unknown method {s:?}")))
    }
}

/// Per-dimension document frequencies.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WholeVector {
    pub counts: Vec<u32>,
}

impl WholeVector {
    pub fn zeros(n: usize) -> Self {
        Self { counts: vec![0; n] }
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    pub fn as_f64(&self) -> Vec<f64> {
        self.counts.iter().map(|&c| c as f64).collect()
    }
}

/// `|zscore(current) − zscore(whole)|` per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceVector {
    pub d: Vec<f64>,
}

pub fn select_rp(rp_seed: u64, n: usize, f: usize) -> Result<FeatureIndexSet> {
    if f == 0 || f > n {
        return Err(Error::range(format!("f = {f} outside 1..={n}")));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(rp_seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, f).into_vec();
    picked.sort_unstable();
    FeatureIndexSet::new(picked, n)
}

/// Top `f` dimensions of Alice's current vector.
pub fn select_lf(current: &[f64], f: usize) -> Result<FeatureIndexSet> {
    top_f(current, f)
}

pub fn local_document_frequency(corpus: &Corpus) -> WholeVector {
    document_frequency(corpus.vocabulary_size(), corpus.vectors())
}

/// Number of documents with a non-zero entry, per dimension.
pub fn document_frequency(n: usize, vectors: &[DocumentVector]) -> WholeVector {
    let mut counts = vec![0u32; n];
    for v in vectors {
        for &(i, _) in v.entries() {
            counts[i as usize] += 1;
        }
    }
    WholeVector { counts }
}

pub fn aggregate_whole_vector(alice: &WholeVector, bob: &WholeVector) -> Result<WholeVector> {
    if alice.len() != bob.len() {
        return Err(Error::dims(alice.len(), bob.len()));
    }
    Ok(WholeVector {
        counts: alice
            .counts
            .iter()
            .zip(&bob.counts)
            .map(|(a, b)| a.saturating_add(*b))
            .collect(),
    })
}

pub fn select_gf(whole: &WholeVector, f: usize) -> Result<FeatureIndexSet> {
    top_f(&whole.as_f64(), f)
}

// Rank keys are snapped to a 2^-40 grid so rounding noise from the two
// normalizations cannot split exact ties.
fn snap(x: f64) -> f64 {
    const GRID: f64 = (1u64 << 40) as f64;
    (x * GRID).round() / GRID
}

pub fn difference_vector(current: &[f64], whole: &WholeVector) -> Result<DifferenceVector> {
    if current.len() != whole.len() {
        return Err(Error::dims(whole.len(), current.len()));
    }
    let u = zscore(current)?;
    let a = zscore(&whole.as_f64())?;
    Ok(DifferenceVector {
        d: u.values
            .as_slice()
            .iter()
            .zip(a.values.as_slice())
            .map(|(x, y)| (x - y).abs())
            .collect(),
    })
}

/// Top `f` dimensions of the difference between the standardized current
/// and whole vectors.
pub fn select_hf(current: &[f64], whole: &WholeVector, f: usize) -> Result<FeatureIndexSet> {
    let diff = difference_vector(current, whole)?;
    let keys: Vec<f64> = diff.d.iter().map(|&x| snap(x)).collect();
    top_f(&keys, f)
}
