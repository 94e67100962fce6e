//! Dense numerics shared by every stage of the pipeline: a seeded generator,
//! a row-major matrix, Euclidean distance, softmax and tie-broken arg-extrema.
//!
//! All arithmetic is `f64`. Ties in every arg-max / arg-min resolve to the
//! smallest index so that runs are reproducible bit for bit.

use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Seeded random source.
///
/// Backed by ChaCha8 (a counter-based stream cipher generator) seeded through
/// `SeedableRng::seed_from_u64`. Independent streams for different purposes
/// (flipping, initialisation, batching, jitter) are obtained with
/// [`Rng::derive`], which mixes the root seed with a purpose label, so one
/// root seed reproduces every stochastic step of an experiment.
#[derive(Debug, Clone)]
pub struct Rng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Sub-generator for a named purpose. Depends only on the root seed and
    /// the label, never on how many draws this generator has made.
    pub fn derive(&self, purpose: &str) -> Rng {
        Rng::new(sub_seed(self.seed, purpose))
    }

    /// Sub-generator for a numbered purpose (task index, variant index...).
    pub fn derive_indexed(&self, purpose: &str, index: u64) -> Rng {
        Rng::new(splitmix64(sub_seed(self.seed, purpose) ^ splitmix64(index)))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.random()
    }

    /// Uniform draw in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random()
    }

    pub fn uniform_range(&mut self, low: f64, high: f64) -> f64 {
        low + (high - low) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// `true` with probability `p`; `p >= 1` is always true, `p <= 0` never.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform index in `0..n`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

fn sub_seed(seed: u64, purpose: &str) -> u64 {
    splitmix64(seed ^ splitmix64(fnv1a(purpose.as_bytes())))
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Appends rows at the bottom; existing entries are untouched.
    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.cols {
            return Err(Error::DimensionMismatch {
                expected: self.cols,
                got: row.len(),
            });
        }
        self.data.extend_from_slice(row);
        self.rows += 1;
        Ok(())
    }

    /// `self * x`.
    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.cols);
        self.data
            .chunks_exact(self.cols)
            .map(|row| dot(row, x))
            .collect()
    }

    /// `selfᵀ * y`.
    pub fn matvec_transposed(&self, y: &[f64]) -> Vec<f64> {
        debug_assert_eq!(y.len(), self.rows);
        let mut out = vec![0.0; self.cols];
        for (row, &yr) in self.data.chunks_exact(self.cols).zip(y) {
            for (o, &w) in out.iter_mut().zip(row) {
                *o += w * yr;
            }
        }
        out
    }

    /// `self += u vᵀ`.
    pub fn add_outer(&mut self, u: &[f64], v: &[f64]) {
        debug_assert_eq!(u.len(), self.rows);
        debug_assert_eq!(v.len(), self.cols);
        for (row, &ur) in self.data.chunks_exact_mut(self.cols).zip(u) {
            if ur == 0.0 {
                continue;
            }
            for (w, &vc) in row.iter_mut().zip(v) {
                *w += ur * vc;
            }
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Euclidean distance `√Σ(aᵢ−bᵢ)²`.
pub fn l2_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(sq_distance(a, b).sqrt())
}

/// Squared distance, unchecked lengths (callers guarantee equal dimension).
pub(crate) fn sq_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Softmax with max-subtraction.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::EmptyInput("softmax logits"));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax logits"));
    }
    Ok(softmax_unchecked(logits))
}

pub(crate) fn softmax_unchecked(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Index in `allowed` with the largest value; ties go to the smallest index.
pub fn argmax_restricted<I>(values: &[f64], allowed: I) -> Result<usize>
where
    I: IntoIterator<Item = usize>,
{
    let mut best: Option<(usize, f64)> = None;
    for idx in allowed {
        let v = *values.get(idx).ok_or(Error::IndexOutOfRange {
            index: idx,
            len: values.len(),
        })?;
        best = match best {
            Some((bi, bv)) if bv > v || (bv == v && bi < idx) => Some((bi, bv)),
            _ => Some((idx, v)),
        };
    }
    best.map(|(i, _)| i)
        .ok_or(Error::EmptyInput("argmax allowed set"))
}

/// Unrestricted arg-max with smallest-index tie-breaking.
pub fn argmax(values: &[f64]) -> Result<usize> {
    argmax_restricted(values, 0..values.len())
}

/// Arg-min over `(index, value)` pairs; ties go to the smallest index.
pub fn argmin_by_key<I>(pairs: I) -> Option<(usize, f64)>
where
    I: IntoIterator<Item = (usize, f64)>,
{
    pairs.into_iter().fold(None, |best, (i, v)| match best {
        Some((bi, bv)) if bv < v || (bv == v && bi < i) => Some((bi, bv)),
        _ => Some((i, v)),
    })
}

/// Arithmetic mean of equal-length vectors.
pub fn mean_vector(vectors: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = vectors
        .first()
        .ok_or(Error::EmptyInput("mean of vectors"))?;
    let mut acc = vec![0.0; first.len()];
    for v in vectors {
        if v.len() != acc.len() {
            return Err(Error::DimensionMismatch {
                expected: acc.len(),
                got: v.len(),
            });
        }
        for (a, x) in acc.iter_mut().zip(v) {
            *a += x;
        }
    }
    let n = vectors.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    Ok(acc)
}
