//! Sparse and dense vector arithmetic used by every protocol formula.
//!
//! Document vectors are sparse, non-negative and unit length. Feature vectors
//! are their dense projections onto an agreed [`FeatureIndexSet`].

use std::cmp::Ordering;

use crate::error::{Error, Result};

/// Tolerance on the unit-norm invariant of a document vector.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-12;

/// Anything that can enumerate its non-zero coordinates in increasing index order.
pub trait SparseEntries {
    fn dims(&self) -> usize;
    fn nonzeros(&self) -> impl Iterator<Item = (usize, f64)> + '_;
}

/// A sparse, non-negative, unit-L2 term-frequency vector.
///
/// Empty documents cannot be normalized; they are kept as the zero vector
/// with `degenerate` set.
#[derive(Debug, Clone, PartialEq)]
pub struct DocumentVector {
    dims: usize,
    entries: Vec<(u32, f64)>,
    degenerate: bool,
}

impl DocumentVector {
    /// Builds a unit vector from raw term counts (any order, no duplicates).
    pub fn from_counts(dims: usize, counts: &[(u32, u32)]) -> Result<Self> {
        let mut sorted: Vec<(u32, u32)> = counts.to_vec();
        sorted.sort_unstable_by_key(|&(i, _)| i);
        for w in sorted.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(Error::range(format!("duplicate index {}", w[0].0)));
            }
        }
        if let Some(&(i, _)) = sorted.iter().find(|&&(i, _)| i as usize >= dims) {
            return Err(Error::range(format!("index {i} >= dims {dims}")));
        }
        if sorted.iter().any(|&(_, c)| c == 0) {
            return Err(Error::range("term count must be positive"));
        }
        if sorted.is_empty() {
            return Ok(Self::zero(dims));
        }
        let norm = sorted
            .iter()
            .map(|&(_, c)| {
                let c = c as f64;
                c * c
            })
            .sum::<f64>()
            .sqrt();
        let entries = sorted
            .into_iter()
            .map(|(i, c)| (i, c as f64 / norm))
            .collect();
        Ok(Self {
            dims,
            entries,
            degenerate: false,
        })
    }

    /// Wraps already-normalized weights, e.g. from the binary corpus cache.
    ///
    /// Indexes must be strictly increasing and weights positive and finite.
    /// The norm must be 1 within 1e-9; an empty list yields a degenerate vector.
    pub fn from_unit_entries(dims: usize, entries: Vec<(u32, f64)>) -> Result<Self> {
        for w in entries.windows(2) {
            if w[0].0 >= w[1].0 {
                return Err(Error::range("indexes must be strictly increasing"));
            }
        }
        if let Some(&(i, _)) = entries.last() {
            if i as usize >= dims {
                return Err(Error::range(format!("index {i} >= dims {dims}")));
            }
        }
        if entries.iter().any(|&(_, w)| !(w > 0.0 && w.is_finite())) {
            return Err(Error::range("weights must be positive and finite"));
        }
        if entries.is_empty() {
            return Ok(Self::zero(dims));
        }
        let sq: f64 = entries.iter().map(|&(_, w)| w * w).sum();
        if (sq.sqrt() - 1.0).abs() > 1e-9 {
            return Err(Error::range(format!("vector norm {} is not 1", sq.sqrt())));
        }
        Ok(Self {
            dims,
            entries,
            degenerate: false,
        })
    }

    /// Normalizes arbitrary positive weights to unit length.
    pub fn from_weights(dims: usize, mut entries: Vec<(u32, f64)>) -> Result<Self> {
        let sq: f64 = entries.iter().map(|&(_, w)| w * w).sum();
        if sq > 0.0 {
            let norm = sq.sqrt();
            for e in &mut entries {
                e.1 /= norm;
            }
        }
        Self::from_unit_entries(dims, entries)
    }

    pub fn zero(dims: usize) -> Self {
        Self {
            dims,
            entries: Vec::new(),
            degenerate: true,
        }
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn squared_norm(&self) -> f64 {
        self.entries.iter().map(|&(_, w)| w * w).sum()
    }

    pub fn weight(&self, index: usize) -> f64 {
        match self
            .entries
            .binary_search_by_key(&(index as u64), |&(i, _)| i as u64)
        {
            Ok(pos) => self.entries[pos].1,
            Err(_) => 0.0,
        }
    }

    pub fn to_dense(&self) -> DenseVector {
        let mut values = vec![0.0; self.dims];
        for &(i, w) in &self.entries {
            values[i as usize] = w;
        }
        DenseVector(values)
    }
}

impl SparseEntries for DocumentVector {
    fn dims(&self) -> usize {
        self.dims
    }

    fn nonzeros(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|&(i, w)| (i as usize, w))
    }
}

/// Dense projection of a document vector onto `f` selected dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector {
    values: Vec<f64>,
    squared_norm: f64,
}

impl FeatureVector {
    pub fn new(values: Vec<f64>) -> Self {
        let squared_norm = values.iter().map(|x| x * x).sum();
        Self {
            values,
            squared_norm,
        }
    }

    pub fn f(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn squared_norm(&self) -> f64 {
        self.squared_norm
    }
}

impl SparseEntries for FeatureVector {
    fn dims(&self) -> usize {
        self.values.len()
    }

    fn nonzeros(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(i, &w)| (i, w))
    }
}

/// The `f` agreed dimensions defining a feature selection.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct FeatureIndexSet {
    indexes: Vec<usize>,
}

impl FeatureIndexSet {
    /// Validates that `indexes` is non-empty, strictly increasing and below `n`.
    pub fn new(indexes: Vec<usize>, n: usize) -> Result<Self> {
        if indexes.is_empty() {
            return Err(Error::range("feature index set must not be empty"));
        }
        if indexes.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::range("feature indexes must be strictly increasing"));
        }
        if let Some(&last) = indexes.last() {
            if last >= n {
                return Err(Error::range(format!("feature index {last} >= n {n}")));
            }
        }
        Ok(Self { indexes })
    }

    /// Every dimension `0..n`.
    pub fn all(n: usize) -> Result<Self> {
        Self::new((0..n).collect(), n)
    }

    pub fn indexes(&self) -> &[usize] {
        &self.indexes
    }

    pub fn f(&self) -> usize {
        self.indexes.len()
    }
}

/// A plain dense vector of reals.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DenseVector(pub Vec<f64>);

impl DenseVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

impl From<Vec<f64>> for DenseVector {
    fn from(values: Vec<f64>) -> Self {
        DenseVector(values)
    }
}

/// Result of [`zscore`]: `degenerate` is set when the input had zero variance.
#[derive(Debug, Clone, PartialEq)]
pub struct ZScore {
    pub values: DenseVector,
    pub degenerate: bool,
}

/// Exact sparse scalar product; for unit vectors this is the cosine similarity.
pub fn dot(u: &DocumentVector, v: &DocumentVector) -> Result<f64> {
    if u.dims != v.dims {
        return Err(Error::dims(u.dims, v.dims));
    }
    let (a, b) = (&u.entries, &v.entries);
    let (mut i, mut j) = (0, 0);
    let mut sum = 0.0;
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            Ordering::Less => i += 1,
            Ordering::Greater => j += 1,
            Ordering::Equal => {
                sum += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    Ok(sum)
}

/// Picks the weights of `u` at the selected dimensions (0 where absent).
pub fn project(u: &DocumentVector, s: &FeatureIndexSet) -> Result<FeatureVector> {
    if let Some(&last) = s.indexes.last() {
        if last >= u.dims {
            return Err(Error::range(format!(
                "feature index {last} >= dims {}",
                u.dims
            )));
        }
    }
    let mut values = vec![0.0; s.f()];
    let entries = &u.entries;
    let mut k = 0;
    for (j, &idx) in s.indexes.iter().enumerate() {
        while k < entries.len() && (entries[k].0 as usize) < idx {
            k += 1;
        }
        if k == entries.len() {
            break;
        }
        if entries[k].0 as usize == idx {
            values[j] = entries[k].1;
        }
    }
    Ok(FeatureVector::new(values))
}

/// Squared Euclidean distance between two feature vectors.
pub fn squared_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64> {
    if a.f() != b.f() {
        return Err(Error::dims(a.f(), b.f()));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum())
}

/// Standardizes `x` with its mean and population standard deviation.
///
/// Zero variance yields the all-zero vector with `degenerate` set.
pub fn zscore(x: &[f64]) -> Result<ZScore> {
    if x.is_empty() {
        return Err(Error::range("cannot z-score an empty vector"));
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return Ok(ZScore {
            values: DenseVector(vec![0.0; x.len()]),
            degenerate: true,
        });
    }
    Ok(ZScore {
        values: DenseVector(x.iter().map(|v| (v - mean) / sd).collect()),
        degenerate: false,
    })
}

/// Indexes of the `f` largest values, ties going to the lower index, sorted ascending.
pub fn top_f(values: &[f64], f: usize) -> Result<FeatureIndexSet> {
    let n = values.len();
    if f == 0 || f > n {
        return Err(Error::range(format!("f = {f} outside 1..={n}")));
    }
    let rank = |a: &usize, b: &usize| values[*b].total_cmp(&values[*a]).then(a.cmp(b));
    let mut order: Vec<usize> = (0..n).collect();
    if f < n {
        order.select_nth_unstable_by(f - 1, rank);
        order.truncate(f);
    }
    order.sort_unstable();
    FeatureIndexSet::new(order, n)
}
