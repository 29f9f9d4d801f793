//! Random-matrix secure scalar product.
//!
//! Both parties derive the same `n × ⌈n/2⌉` matrix `A` from a shared seed.
//! Alice sends `Z = U + A·r` for a private random `r`; Bob answers with
//! `s = Z·V` and `t = Aᵀ·V`; Alice recovers `U·V = s − r·t`.
//!
//! Matrix entries are uniform on `[-1, 1)` and addressed by counter: row `i`
//! is ChaCha8 stream `i` of the seed, entry `(i, j)` its `j`-th 64-bit word.
//! Bob therefore only ever touches the rows where his vector is non-zero.

use std::borrow::Cow;
use std::sync::atomic::{AtomicU64, Ordering};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::par::{map_range, ExecMode};
use crate::vector::SparseEntries;

/// Matrices with at most this many entries are materialized on generation.
pub const DENSE_ENTRY_LIMIT: usize = 1 << 25;

/// Number of mask columns for `n` rows.
pub fn mask_width(n: usize) -> usize {
    n.div_ceil(2)
}

#[inline]
fn unit_interval(x: u64) -> f64 {
    // 53 random mantissa bits mapped onto [-1, 1)
    ((x >> 11) as f64) * (1.0 / (1u64 << 52) as f64) - 1.0
}

fn row_stream(seed: u64, row: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(row as u64);
    rng
}

fn fill_row(seed: u64, row: usize, out: &mut [f64]) {
    let mut rng = row_stream(seed, row);
    for x in out {
        *x = unit_interval(rng.next_u64());
    }
}

/// The shared masking matrix, a pure function of `(seed, i, j)`.
#[derive(Clone)]
pub struct SharedRandomMatrix {
    seed: u64,
    rows: usize,
    cols: usize,
    dense: Option<Vec<f64>>,
}

impl SharedRandomMatrix {
    /// Handle for the `n × ⌈n/2⌉` matrix, materialized when small enough.
    pub fn generate(seed: u64, n: usize) -> Result<Self> {
        let mut m = Self::generate_lazy(seed, n)?;
        if n.saturating_mul(m.cols) <= DENSE_ENTRY_LIMIT {
            let cols = m.cols;
            let mut dense = vec![0.0; n * cols];
            for (i, row) in dense.chunks_exact_mut(cols).enumerate() {
                fill_row(seed, i, row);
            }
            m.dense = Some(dense);
        }
        Ok(m)
    }

    /// Handle that generates rows on demand and never stores the matrix.
    pub fn generate_lazy(seed: u64, n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::range("matrix needs at least one row"));
        }
        Ok(Self {
            seed,
            rows: n,
            cols: mask_width(n),
            dense: None,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_materialized(&self) -> bool {
        self.dense.is_some()
    }

    /// Entry `(i, j)` straight from the generator, independent of storage.
    pub fn generated_entry(seed: u64, i: usize, j: usize) -> f64 {
        let mut rng = row_stream(seed, i);
        rng.set_word_pos(2 * j as u128);
        unit_interval(rng.next_u64())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        assert!(i < self.rows && j < self.cols, "matrix index out of range");
        match &self.dense {
            Some(d) => d[i * self.cols + j],
            None => Self::generated_entry(self.seed, i, j),
        }
    }

    /// Row `i` as a slice, borrowed when materialized.
    pub fn row(&self, i: usize) -> Cow<'_, [f64]> {
        assert!(i < self.rows, "matrix row out of range");
        match &self.dense {
            Some(d) => Cow::Borrowed(&d[i * self.cols..(i + 1) * self.cols]),
            None => {
                let mut row = vec![0.0; self.cols];
                fill_row(self.seed, i, &mut row);
                Cow::Owned(row)
            }
        }
    }
}

impl std::fmt::Debug for SharedRandomMatrix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SharedRandomMatrix")
            .field("seed", &self.seed)
            .field("rows", &self.rows)
            .field("cols", &self.cols)
            .field("materialized", &self.dense.is_some())
            .finish()
    }
}

/// Alice's private random vector `r`; never leaves her process.
#[derive(Debug, Clone, PartialEq)]
pub struct SecretMask {
    r: Vec<f64>,
}

impl SecretMask {
    /// Draws `r` uniformly from `[-1, 1)^cols`.
    pub fn draw<R: Rng + ?Sized>(cols: usize, rng: &mut R) -> Self {
        Self {
            r: (0..cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        }
    }

    pub fn from_values(r: Vec<f64>) -> Self {
        Self { r }
    }

    pub fn values(&self) -> &[f64] {
        &self.r
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }
}

/// `Z = U + A·r`, the only thing Bob ever sees of Alice's vector.
#[derive(Debug, Clone, PartialEq)]
pub struct MaskedVector {
    pub z: Vec<f64>,
}

/// Bob's answer to one masked vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ProductReply {
    /// `Z·V`
    pub s: f64,
    /// `Aᵀ·V`
    pub t: Vec<f64>,
    /// `‖V‖²`, sent only in the filtering step.
    pub norm_v2: Option<f64>,
}

/// Commutative counter of real multiplications.
#[derive(Debug, Default)]
pub struct OpCounter(AtomicU64);

impl OpCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&self, n: u64) {
        self.0.fetch_add(n, Ordering::Relaxed);
    }

    pub fn get(&self) -> u64 {
        self.0.load(Ordering::Relaxed)
    }
}

/// Masks `u` with `A·r`.
pub fn mask<V: SparseEntries>(
    u: &V,
    m: &SharedRandomMatrix,
    r: &SecretMask,
    mode: ExecMode,
) -> Result<MaskedVector> {
    if u.dims() != m.rows {
        return Err(Error::dims(m.rows, u.dims()));
    }
    if r.len() != m.cols {
        return Err(Error::dims(m.cols, r.len()));
    }
    let rv = r.values();
    let mut z = map_range(mode, m.rows, |i| {
        m.row(i).iter().zip(rv).map(|(a, b)| a * b).sum::<f64>()
    });
    for (i, w) in u.nonzeros() {
        z[i] += w;
    }
    Ok(MaskedVector { z })
}

/// Bob's side: `s = Z·V`, `t = Aᵀ·V`, touching only the non-zero rows of `V`.
pub fn respond<V: SparseEntries>(
    z: &MaskedVector,
    v: &V,
    m: &SharedRandomMatrix,
    include_norm: bool,
    ops: &OpCounter,
) -> Result<ProductReply> {
    if v.dims() != m.rows {
        return Err(Error::dims(m.rows, v.dims()));
    }
    if z.z.len() != m.rows {
        return Err(Error::dims(m.rows, z.z.len()));
    }
    let mut s = 0.0;
    let mut t = vec![0.0; m.cols];
    let mut norm = 0.0;
    let mut nnz = 0u64;
    for (i, w) in v.nonzeros() {
        nnz += 1;
        s += z.z[i] * w;
        norm += w * w;
        for (acc, a) in t.iter_mut().zip(m.row(i).iter()) {
            *acc += a * w;
        }
    }
    let norm_mults = if include_norm { nnz } else { 0 };
    ops.add(nnz * (1 + m.cols as u64) + norm_mults);
    Ok(ProductReply {
        s,
        t,
        norm_v2: include_norm.then_some(norm),
    })
}

/// Alice's side: `δ = s − r·t`, equal to `U·V`.
pub fn recover(reply: &ProductReply, r: &SecretMask) -> Result<f64> {
    if reply.t.len() != r.len() {
        return Err(Error::dims(r.len(), reply.t.len()));
    }
    let rt: f64 = reply.t.iter().zip(r.values()).map(|(a, b)| a * b).sum();
    Ok(reply.s - rt)
}
