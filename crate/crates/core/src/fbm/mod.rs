//! Exact fractional Brownian motion on uniform grids.
//!
//! Paths are built by cumulating fractional Gaussian noise, which is drawn
//! exactly by circulant embedding (Cholesky when the embedding fails). At
//! H = ½ the increments are independent and are drawn directly.

pub mod circulant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::mc::SeedStream;
use crate::model::{check_hurst, ModelParams};

pub use circulant::{Method, StationarySampler};

/// Uniform grid `t_i = i * t_max / n_steps`, `i = 0..=n_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    t_max: f64,
    n_steps: usize,
}

impl Grid {
    pub fn new(t_max: f64, n_steps: usize) -> Result<Self> {
        ensure(t_max > 0.0 && t_max.is_finite(), "t_max", t_max, "must be positive")?;
        ensure(n_steps >= 1, "n_steps", n_steps as f64, "must be at least 1")?;
        Ok(Self { t_max, n_steps })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn step(&self) -> f64 {
        self.t_max / self.n_steps as f64
    }

    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.t_max
        } else {
            i as f64 * self.step()
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..=self.n_steps).map(|i| self.time(i))
    }
}

/// A realization on a [`Grid`]; `values[i]` is the value at `grid.time(i)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplePath {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub hurst: f64,
}

impl SamplePath {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Cov(X_H(s), X_H(t)) = ½(t^{2H} + s^{2H} − |t−s|^{2H}).
pub fn fbm_cov(s: f64, t: f64, hurst: f64) -> Result<f64> {
    check_hurst(hurst)?;
    ensure(s >= 0.0, "s", s, "time must be nonnegative")?;
    ensure(t >= 0.0, "t", t, "time must be nonnegative")?;
    Ok(fbm_cov_unchecked(s, t, hurst))
}

/// Two-sided version without domain checks; valid for negative times too.
pub(crate) fn fbm_cov_unchecked(s: f64, t: f64, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    0.5 * (t.abs().powf(h2) + s.abs().powf(h2) - (t - s).abs().powf(h2))
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocov(k: usize, hurst: f64) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

#[derive(Clone)]
enum Increments {
    Independent,
    Correlated(StationarySampler),
}

/// Reusable fBm sampler for a fixed (H, grid). Cheap to clone; the factor
/// is shared.
#[derive(Clone)]
pub struct FbmSampler {
    hurst: f64,
    grid: Grid,
    increments: Increments,
    scale: f64,
}

/// Scratch buffers owned by one worker.
pub struct FbmScratch {
    noise: Vec<f64>,
    inner: Option<circulant::Scratch>,
}

impl FbmSampler {
    pub fn new(hurst: f64, grid: Grid) -> Result<Self> {
        check_hurst(hurst)?;
        let increments = if hurst == 0.5 {
            Increments::Independent
        } else {
            let autocov: Vec<f64> = (0..=grid.n_steps()).map(|k| fgn_autocov(k, hurst)).collect();
            Increments::Correlated(StationarySampler::new(&autocov)?)
        };
        Ok(Self {
            hurst,
            grid,
            increments,
            scale: grid.step().powf(hurst),
        })
    }

    /// Same as [`FbmSampler::new`] but always uses the Cholesky route.
    pub fn with_cholesky(hurst: f64, grid: Grid) -> Result<Self> {
        check_hurst(hurst)?;
        let autocov: Vec<f64> = (0..grid.n_steps()).map(|k| fgn_autocov(k, hurst)).collect();
        Ok(Self {
            hurst,
            grid,
            increments: Increments::Correlated(StationarySampler::cholesky(&autocov)?),
            scale: grid.step().powf(hurst),
        })
    }

    pub fn hurst(&self) -> f64 {
        self.hurst
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    /// `None` when increments are independent (H = ½).
    pub fn method(&self) -> Option<Method> {
        match &self.increments {
            Increments::Independent => None,
            Increments::Correlated(s) => Some(s.method()),
        }
    }

    pub fn scratch(&self) -> FbmScratch {
        FbmScratch {
            noise: vec![0.0; self.grid.n_steps()],
            inner: match &self.increments {
                Increments::Independent => None,
                Increments::Correlated(s) => Some(s.scratch()),
            },
        }
    }

    /// Fills `out[0..=n_steps]` with one path; `out[0] = 0`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut FbmScratch, out: &mut [f64]) {
        let n = self.grid.n_steps();
        assert!(out.len() > n, "output buffer shorter than grid");
        match &self.increments {
            Increments::Independent => {
                for v in scratch.noise.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
            }
            Increments::Correlated(s) => {
                let inner = scratch.inner.as_mut().expect("scratch built for this sampler");
                s.sample_into(rng, inner, &mut scratch.noise);
            }
        }
        out[0] = 0.0;
        let mut acc = 0.0;
        for (o, dz) in out[1..=n].iter_mut().zip(&scratch.noise) {
            acc += self.scale * dz;
            *o = acc;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> SamplePath {
        let mut scratch = self.scratch();
        let mut values = vec![0.0; self.grid.len()];
        self.sample_into(rng, &mut scratch, &mut values);
        SamplePath {
            grid: self.grid,
            values,
            hurst: self.hurst,
        }
    }
}

/// One fBm path, reproducible from `seed`.
pub fn sample_fbm(hurst: f64, grid: Grid, seed: u64) -> Result<SamplePath> {
    let sampler = FbmSampler::new(hurst, grid)?;
    Ok(sampler.sample(&mut SeedStream::new(seed).rng(0)))
}

/// Subtracts the linear drift `c·t_i` from an fBm path in place.
pub fn apply_drift(values: &mut [f64], grid: &Grid, drift: f64) {
    let step = grid.step();
    for (i, v) in values.iter_mut().enumerate() {
        *v -= drift * step * i as f64;
    }
}

/// Y_H(t) = X_H(t) − c·t on the grid, using the same noise as
/// [`sample_fbm`] with this seed.
pub fn sample_drifted_input(params: &ModelParams, grid: Grid, seed: u64) -> Result<SamplePath> {
    params.validate()?;
    let mut path = sample_fbm(params.hurst, grid, seed)?;
    apply_drift(&mut path.values, &grid, params.drift);
    Ok(path)
}
