//! Labeled deterministic random streams.
//!
//! A stream is keyed by (seed, label): the ChaCha key is a SHA-256 digest of
//! both, so the same pair always replays the same sequence and distinct
//! labels behave as independent generators. Pipelines derive one stream per
//! purpose ("corrupt/epoch3/batch7", "init/conv1.weight", ...) so that, for
//! example, corruption draws do not depend on which loss family is training.

use rand::distributions::Uniform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// What to draw; mirrors the supported draw kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DrawKind {
    Uniform,
    StandardNormal,
    Permutation(usize),
    IndexSubset { n: usize, k: usize },
}

/// Deterministic, replayable random stream.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    label: String,
    counter: u64,
    rng: ChaCha12Rng,
}

impl RngStream {
    pub fn new(seed: u64, label: &str) -> Self {
        let mut hasher = Sha256::new();
        hasher.update(seed.to_le_bytes());
        hasher.update([0x1f]);
        hasher.update(label.as_bytes());
        let key: [u8; 32] = hasher.finalize().into();
        RngStream {
            seed,
            label: label.to_string(),
            counter: 0,
            rng: ChaCha12Rng::from_seed(key),
        }
    }

    /// Fresh independent stream labeled `parent/suffix`. Independent of how
    /// many values the parent has already drawn.
    pub fn derive(&self, suffix: &str) -> RngStream {
        RngStream::new(self.seed, &format!("{}/{}", self.label, suffix))
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    /// Number of values drawn so far.
    pub fn counter(&self) -> u64 {
        self.counter
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.counter += 1;
        self.rng.sample(Uniform::new(0.0f64, 1.0))
    }

    /// Uniform draw in [lo, hi].
    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        if lo == hi {
            self.counter += 1;
            return lo;
        }
        self.counter += 1;
        self.rng.sample(Uniform::new_inclusive(lo, hi))
    }

    pub fn standard_normal(&mut self) -> f64 {
        self.counter += 1;
        self.rng.sample(StandardNormal)
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    /// Uniform integer in [0, n).
    pub fn below(&mut self, n: usize) -> usize {
        self.counter += 1;
        self.rng.gen_range(0..n)
    }

    /// Fisher-Yates permutation of 0..n.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut out: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            out.swap(i, j);
        }
        out
    }

    /// k distinct indices drawn uniformly from 0..n (partial Fisher-Yates).
    pub fn index_subset(&mut self, n: usize, k: usize) -> Result<Vec<usize>> {
        if k > n {
            return Err(Error::Domain(format!("index_subset: k {k} exceeds n {n}")));
        }
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.below(n - i);
            pool.swap(i, j);
        }
        pool.truncate(k);
        Ok(pool)
    }
}
