//! Reproducible Monte Carlo plumbing.
//!
//! Every replicate draws from its own ChaCha stream keyed by
//! `(master seed, domain, replicate index)`, so a replicate's randomness does
//! not depend on which thread runs it. Replicates are grouped into chunks of a
//! fixed size; each chunk folds into an accumulator and the accumulators are
//! merged in chunk order. Results are therefore bitwise identical for any
//! thread count and any completion order.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub type ReplicateRng = ChaCha8Rng;

/// Replicates per work item. Fixed so that chunk boundaries never depend on
/// the thread pool.
pub const CHUNK: u64 = 1024;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives independent random streams from a master seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SeedStream {
    master: u64,
    domain: u64,
}

impl SeedStream {
    pub fn new(master: u64) -> Self {
        Self { master, domain: 0 }
    }

    pub fn master(&self) -> u64 {
        self.master
    }

    /// A child stream family, e.g. one per level `u` or per ladder entry.
    pub fn domain(&self, tag: u64) -> Self {
        Self {
            master: self.master,
            domain: splitmix64(self.domain ^ splitmix64(tag.wrapping_add(0x5851_f42d_4c95_7f2d))),
        }
    }

    /// Generator for replicate `index` within this family.
    pub fn rng(&self, index: u64) -> ReplicateRng {
        let mut key = [0u8; 32];
        let mut state = splitmix64(self.master) ^ self.domain;
        for word in key.chunks_exact_mut(8) {
            state = splitmix64(state);
            word.copy_from_slice(&state.to_le_bytes());
        }
        let mut rng = ChaCha8Rng::from_seed(key);
        rng.set_stream(index);
        rng
    }
}

/// Running mean and variance (Welford), mergeable in a fixed order.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let delta = x - self.mean;
        self.mean += delta / self.count as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&mut self, other: &Moments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let delta = other.mean - self.mean;
        self.mean += delta * other.count as f64 / n;
        self.m2 += other.m2 + delta * delta * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Unbiased sample variance; zero for fewer than two observations.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    pub fn std_dev(&self) -> f64 {
        self.variance().sqrt()
    }

    pub fn std_error(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            (self.variance() / self.count as f64).sqrt()
        }
    }
}

/// Running means, variances and covariance of a pair `(y, x)`, for
/// control-variate estimates of E[y] when E[x] is known.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PairMoments {
    pub count: u64,
    pub mean_y: f64,
    pub mean_x: f64,
    m2_y: f64,
    m2_x: f64,
    c_xy: f64,
}

impl PairMoments {
    pub fn push(&mut self, y: f64, x: f64) {
        self.count += 1;
        let n = self.count as f64;
        let dx = x - self.mean_x;
        let dy = y - self.mean_y;
        self.mean_x += dx / n;
        self.mean_y += dy / n;
        self.m2_x += dx * (x - self.mean_x);
        self.m2_y += dy * (y - self.mean_y);
        self.c_xy += dx * (y - self.mean_y);
    }

    pub fn merge(&mut self, other: &PairMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let dx = other.mean_x - self.mean_x;
        let dy = other.mean_y - self.mean_y;
        self.mean_x += dx * nb / n;
        self.mean_y += dy * nb / n;
        self.m2_x += other.m2_x + dx * dx * na * nb / n;
        self.m2_y += other.m2_y + dy * dy * na * nb / n;
        self.c_xy += other.c_xy + dx * dy * na * nb / n;
        self.count += other.count;
    }

    /// Plain mean of y and its standard error.
    pub fn plain(&self) -> (f64, f64) {
        if self.count < 2 {
            return (self.mean_y, 0.0);
        }
        let n = self.count as f64;
        (self.mean_y, (self.m2_y / (n - 1.0) / n).sqrt())
    }

    /// Regression-adjusted mean `ȳ − β(x̄ − known_x)` and its standard error.
    pub fn controlled(&self, known_x: f64) -> (f64, f64) {
        if self.count < 3 || self.m2_x <= 0.0 {
            return self.plain();
        }
        let n = self.count as f64;
        let beta = self.c_xy / self.m2_x;
        let resid = (self.m2_y - beta * self.c_xy).max(0.0) / (n - 2.0);
        (self.mean_y - beta * (self.mean_x - known_x), (resid / n).sqrt())
    }
}

/// Folds `replicates` replicates chunk by chunk in parallel and returns the
/// per-chunk accumulators in chunk order.
///
/// `init` builds the accumulator (and any per-chunk scratch it owns), `fold`
/// consumes one replicate index.
pub fn fold_chunks<A, I, F>(replicates: u64, init: I, fold: F) -> Vec<A>
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64) + Sync,
{
    let chunks = replicates.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut acc = init();
            let end = ((c + 1) * CHUNK).min(replicates);
            for r in c * CHUNK..end {
                fold(&mut acc, r);
            }
            acc
        })
        .collect()
}

/// Merges accumulators tagged with their chunk index. The tags are sorted
/// first, so the outcome does not depend on the order they arrive in.
pub fn merge_in_order<A>(mut tagged: Vec<(u64, A)>, mut merge: impl FnMut(&mut A, A)) -> Option<A> {
    tagged.sort_by_key(|(tag, _)| *tag);
    let mut iter = tagged.into_iter().map(|(_, a)| a);
    let mut first = iter.next()?;
    for next in iter {
        merge(&mut first, next);
    }
    Some(first)
}

/// Convenience wrapper: [`fold_chunks`] followed by an ordered merge.
pub fn map_reduce<A, I, F, M>(replicates: u64, init: I, fold: F, merge: M) -> A
where
    A: Send,
    I: Fn() -> A + Sync,
    F: Fn(&mut A, u64) + Sync,
    M: FnMut(&mut A, A),
{
    let parts = fold_chunks(replicates, &init, fold);
    let tagged = parts.into_iter().enumerate().map(|(i, a)| (i as u64, a)).collect();
    merge_in_order(tagged, merge).unwrap_or_else(init)
}

/// Runs `f` inside a pool capped at `threads` workers (`None` = rayon default).
pub fn with_threads<R: Send>(threads: Option<usize>, f: impl FnOnce() -> R + Send) -> R {
    match threads {
        Some(n) if n > 0 => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(f),
            Err(_) => f(),
        },
        _ => f(),
    }
}
