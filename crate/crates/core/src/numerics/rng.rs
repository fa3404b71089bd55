//! Seeded, replayable random streams.
//!
//! Every stream is xoshiro256** seeded from a 256-bit master [`Seed`].
//! Purpose-specific streams (key material, data, initialization, ...) are
//! derived by hashing an ASCII label together with the master seed, so two
//! labels never share state and adding draws on one stream never shifts
//! another.

use rand::{Rng as _, RngCore, SeedableRng};
use rand_distr::StandardNormal;
use rand_xoshiro::Xoshiro256StarStar;
use sha2::{Digest, Sha256};

use super::Matrix;

/// 256-bit master seed.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Debug)]
pub struct Seed(pub [u8; 32]);

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Seed {
    /// Expands a 64-bit seed into 256 bits with SplitMix64.
    pub fn from_u64(seed: u64) -> Self {
        let mut state = seed;
        let mut bytes = [0u8; 32];
        for chunk in bytes.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Seed(bytes)
    }

    /// Child seed for a labeled purpose.
    pub fn derive(&self, label: &str) -> Seed {
        let mut h = Sha256::new();
        h.update(b"evfl-stream\0");
        h.update(self.0);
        h.update((label.len() as u64).to_le_bytes());
        h.update(label.as_bytes());
        Seed(h.finalize().into())
    }

    /// Child seed indexed by a counter, e.g. per client or per trial.
    pub fn derive_indexed(&self, label: &str, index: u64) -> Seed {
        self.derive(&format!("{label}#{index}"))
    }
}

/// Sampling distribution for [`rng_matrix`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Distribution {
    StandardNormal,
    Uniform01,
}

/// Single-owner random stream.
#[derive(Clone, Debug)]
pub struct Rng {
    inner: Xoshiro256StarStar,
}

impl Rng {
    pub fn new(seed: Seed) -> Self {
        // Whiten the seed words through SplitMix so that low-entropy seeds still
        // give a well-mixed, never all-zero state.
        let mut state = [0u8; 32];
        for (i, (out, word)) in state.chunks_exact_mut(8).zip(seed.0.chunks_exact(8)).enumerate() {
            let mut s = u64::from_le_bytes(word.try_into().unwrap()) ^ (i as u64);
            out.copy_from_slice(&splitmix64(&mut s).to_le_bytes());
        }
        Self { inner: Xoshiro256StarStar::from_seed(state) }
    }

    /// Stream for `label` derived from `seed`.
    pub fn stream(seed: &Seed, label: &str) -> Self {
        Self::new(seed.derive(label))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform in `[0, 1)`.
    pub fn uniform01(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }
}

/// `rows × cols` matrix with i.i.d. entries.
pub fn rng_matrix(rng: &mut Rng, rows: usize, cols: usize, distribution: Distribution) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| match distribution {
            Distribution::StandardNormal => rng.standard_normal(),
            Distribution::Uniform01 => rng.uniform01(),
        })
        .collect();
    Matrix::from_vec(rows, cols, data).expect("rows and cols must be >= 1")
}

/// Uniform random permutation of `1..=n` (Fisher–Yates).
pub fn rng_permutation(rng: &mut Rng, n: usize) -> Vec<usize> {
    let mut perm: Vec<usize> = (1..=n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i + 1);
        perm.swap(i, j);
    }
    perm
}
