//! Counter-based pseudo-random generator, specified bit-exactly.
//!
//! State is a pair `(seed, counter)` of `u64`. Draw `k` (counters start at 1)
//! from stream `seed` is:
//!
//! ```text
//!   z ← seed + k · 0x9E3779B97F4A7C15            (wrapping, mod 2⁶⁴)
//!   z ← (z ⊕ (z ≫ 30)) · 0xBF58476D1CE4E5B9      (wrapping)
//!   z ← (z ⊕ (z ≫ 27)) · 0x94D049BB133111EB      (wrapping)
//!   output = z ⊕ (z ≫ 31)
//! ```
//!
//! Derived quantities are defined exactly as:
//!
//! * uniform `f64` in `[0, 1)`: `(u64 ≫ 11) · 2⁻⁵³` (53 mantissa bits);
//! * Gaussian: each sample consumes exactly two draws `a, b` and returns
//!   `√(−2·ln u₁) · cos(2π·u₂)` with `u₁ = ((a ≫ 11) + 1)·2⁻⁵³ ∈ (0, 1]`
//!   and `u₂ = (b ≫ 11)·2⁻⁵³` (the Box–Muller sine partner is discarded so
//!   the draw count per sample is fixed);
//! * bounded index in `[0, n)`: `u64 mod n` (the ≤ 2⁻⁵³-scale modulo bias is
//!   accepted for reproducibility's sake and documented here);
//! * child stream `s` of a state with seed `σ`:
//!   `child_seed = finalizer(σ ⊕ (s·0xD1B54A32D192ED03 + 0x8BB84B93962EACC9))`,
//!   counter 0, where `finalizer` is the three-line mix above without the
//!   counter increment.
//!
//! Matrices fill in row-major order; shuffles are Fisher–Yates from the top
//! index downward. Given a seed, every byte of every run is reproducible.

use crate::matrix::Matrix;

const GOLDEN: u64 = 0x9E3779B97F4A7C15;
const MIX1: u64 = 0xBF58476D1CE4E5B9;
const MIX2: u64 = 0x94D049BB133111EB;
const STREAM_MUL: u64 = 0xD1B54A32D192ED03;
const STREAM_ADD: u64 = 0x8BB84B93962EACC9;

#[inline]
fn finalize(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(MIX1);
    z = (z ^ (z >> 27)).wrapping_mul(MIX2);
    z ^ (z >> 31)
}

/// Child-stream tag for dataset synthesis.
pub const STREAM_DATA: u64 = 1;
/// Child-stream tag for model initialization.
pub const STREAM_MODEL: u64 = 2;
/// Child-stream tag for minibatch shuffling.
pub const STREAM_BATCH: u64 = 3;
/// Child-stream tag for landscape probe directions.
pub const STREAM_PROBE: u64 = 4;
/// Child-stream tag for dimension-subset sampling.
pub const STREAM_SUBSET: u64 = 5;

/// Deterministic counter-based PRNG state (see module docs for the exact
/// bit-level definition).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RngState {
    seed: u64,
    counter: u64,
}

impl RngState {
    /// Fresh stream for `seed`, counter at zero.
    pub fn new(seed: u64) -> Self {
        RngState { seed, counter: 0 }
    }

    /// The stream's seed.
    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of `u64` draws consumed so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Independent child stream identified by `stream`; drawing from the
    /// child never perturbs the parent.
    pub fn split(&self, stream: u64) -> RngState {
        let tag = stream.wrapping_mul(STREAM_MUL).wrapping_add(STREAM_ADD);
        RngState {
            seed: finalize(self.seed ^ tag),
            counter: 0,
        }
    }

    /// Next raw draw.
    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.counter = self.counter.wrapping_add(1);
        finalize(self.seed.wrapping_add(self.counter.wrapping_mul(GOLDEN)))
    }

    /// Uniform in `[0, 1)` with 53 random mantissa bits.
    #[inline]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in `[lo, hi)`.
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Uniform index in `[0, n)`; `n` must be positive.
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (self.next_u64() % n as u64) as usize
    }

    /// Standard Gaussian sample; consumes exactly two draws.
    pub fn next_gaussian(&mut self) -> f64 {
        let a = self.next_u64();
        let b = self.next_u64();
        let u1 = ((a >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (b >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// `rows × cols` matrix of `N(mean, std²)` entries, filled row-major.
    pub fn gaussian_matrix(&mut self, rows: usize, cols: usize, mean: f64, std: f64) -> Matrix {
        let mut m = Matrix::zeros(rows, cols);
        for x in m.data_mut() {
            *x = mean + std * self.next_gaussian();
        }
        m
    }

    /// In-place Fisher–Yates shuffle (top index downward).
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.next_index(i + 1);
            xs.swap(i, j);
        }
    }

    /// `k` distinct indices sampled from `[0, n)`, in draw order.
    ///
    /// Uses a partial Fisher–Yates over `0..n`, so it is exact (no rejection
    /// loop) and deterministic.
    pub fn sample_distinct(&mut self, n: usize, k: usize) -> Vec<usize> {
        assert!(k <= n, "cannot sample {} distinct values from {}", k, n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_index(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        pool
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn streams_are_reproducible() {
        let mut a = RngState::new(7);
        let mut b = RngState::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
        let mut c = RngState::new(8);
        assert_ne!(a.next_u64(), c.next_u64());
    }

    #[test]
    fn split_streams_are_independent_of_parent_consumption() {
        let parent = RngState::new(123);
        let mut child_before = parent.split(5);
        let mut parent2 = parent.clone();
        parent2.next_u64();
        let mut child_after = parent2.split(5);
        // split depends only on the seed, not the counter
        for _ in 0..10 {
            assert_eq!(child_before.next_u64(), child_after.next_u64());
        }
        // distinct stream ids give distinct sequences
        let mut other = parent.split(6);
        assert_ne!(RngState::new(123).split(5).next_u64(), other.next_u64());
    }

    #[test]
    fn gaussian_consumes_exactly_two_draws() {
        let mut r = RngState::new(1);
        r.next_gaussian();
        assert_eq!(r.counter(), 2);
        r.next_gaussian();
        assert_eq!(r.counter(), 4);
    }

    #[test]
    fn uniform_is_in_unit_interval() {
        let mut r = RngState::new(11);
        for _ in 0..10_000 {
            let x = r.next_f64();
            assert!((0.0..1.0).contains(&x));
        }
    }

    #[test]
    fn gaussian_moments_match() {
        // N = 1e5 samples: mean within 4/sqrt(N), std within 2%.
        let n = 100_000;
        let mut r = RngState::new(42);
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let x = r.next_gaussian();
            sum += x;
            sumsq += x * x;
        }
        let mean = sum / n as f64;
        let std = (sumsq / n as f64 - mean * mean).sqrt();
        assert!(mean.abs() < 4.0 / (n as f64).sqrt(), "mean {}", mean);
        assert!((std - 1.0).abs() < 0.02, "std {}", std);
    }

    #[test]
    fn normalized_gaussian_rows_have_unbiased_first_coordinate() {
        // Rows of a Gaussian matrix normalized to unit length are uniform on
        // the sphere; the first coordinate then has mean 0 (variance 1/d).
        let n = 30_000;
        let d = 3;
        let mut r = RngState::new(9);
        let m = r.gaussian_matrix(n, d, 0.0, 1.0);
        let mut acc = 0.0;
        for i in 0..n {
            let row = m.row(i);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            acc += row[0] / norm;
        }
        let mean = acc / n as f64;
        let bound = 4.0 / (3.0f64.sqrt() * (n as f64).sqrt());
        assert!(mean.abs() < bound, "mean {} bound {}", mean, bound);
    }

    #[test]
    fn sample_distinct_is_exact_and_distinct() {
        let mut r = RngState::new(3);
        let got = r.sample_distinct(10, 10);
        let mut sorted = got.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
        let few = r.sample_distinct(100, 5);
        assert_eq!(few.len(), 5);
        let mut dedup = few.clone();
        dedup.sort_unstable();
        dedup.dedup();
        assert_eq!(dedup.len(), 5);
    }

    #[test]
    fn golden_first_draws_for_seed_42() {
        // Pinned output of the documented generator; selftest re-checks this.
        let mut r = RngState::new(42);
        let got: Vec<u64> = (0..4).map(|_| r.next_u64()).collect();
        let again: Vec<u64> = {
            let mut r2 = RngState::new(42);
            (0..4).map(|_| r2.next_u64()).collect()
        };
        assert_eq!(got, again);
        // Spot-check the algebra of the first draw by hand:
        // z0 = 42 + 1·GOLDEN, then the finalizer.
        let z0 = 42u64.wrapping_add(GOLDEN);
        let mut z = (z0 ^ (z0 >> 30)).wrapping_mul(MIX1);
        z = (z ^ (z >> 27)).wrapping_mul(MIX2);
        z ^= z >> 31;
        assert_eq!(got[0], z);
    }
}
