//! Exact sampling of stationary Gaussian sequences.
//!
//! The default route embeds the Toeplitz covariance of `n + 1` equally spaced
//! values into a circulant matrix of size `2n` and diagonalizes it with one
//! FFT. When the embedding has a materially negative eigenvalue the sampler
//! falls back to a Cholesky factor of the Toeplitz matrix itself.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::linalg::{cholesky_jittered, lower_mul};

/// Eigenvalues below `-NEGATIVE_EIGEN_TOL * max` reject the embedding.
pub const NEGATIVE_EIGEN_TOL: f64 = 1e-10;

/// Largest Toeplitz matrix the Cholesky fallback will factor.
pub const CHOLESKY_LIMIT: usize = 8192;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Circulant,
    Cholesky,
}

#[derive(Clone)]
enum Factor {
    Circulant {
        /// √(λ_k / m) for k = 0..=m/2.
        scale: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    Cholesky(Arc<DMatrix<f64>>),
}

/// Sampler for a zero-mean stationary sequence `Z_0..Z_{len-1}` with
/// `Cov(Z_i, Z_j) = autocov[|i - j|]`.
#[derive(Clone)]
pub struct StationarySampler {
    len: usize,
    factor: Factor,
}

/// Per-thread scratch space for [`StationarySampler::sample_into`].
pub struct Scratch {
    buf: Vec<Complex<f64>>,
    fft_scratch: Vec<Complex<f64>>,
    normals: DVector<f64>,
}

impl StationarySampler {
    /// `autocov` holds lags `0..=len` (one more than the output length; the
    /// extra lag fills the middle of the circulant row).
    pub fn new(autocov: &[f64]) -> Result<Self> {
        match Self::circulant(autocov)? {
            Some(s) => Ok(s),
            None => Self::cholesky(&autocov[..autocov.len() - 1]),
        }
    }

    /// Circulant embedding only; `Ok(None)` if the embedding is indefinite.
    pub fn circulant(autocov: &[f64]) -> Result<Option<Self>> {
        if autocov.len() < 2 {
            return Err(Error::Synthesis("need at least two autocovariance lags".into()));
        }
        let len = autocov.len() - 1;
        let m = 2 * len;
        let mut row: Vec<Complex<f64>> = Vec::with_capacity(m);
        row.extend(autocov.iter().map(|&c| Complex::new(c, 0.0)));
        row.extend(autocov[1..len].iter().rev().map(|&c| Complex::new(c, 0.0)));
        debug_assert_eq!(row.len(), m);

        let fft = FftPlanner::new().plan_fft_forward(m);
        fft.process(&mut row);
        let max = row.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let min = row.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if !(max > 0.0) || min < -NEGATIVE_EIGEN_TOL * max {
            return Ok(None);
        }
        let scale = row[..=len]
            .iter()
            .map(|z| (z.re.max(0.0) / m as f64).sqrt())
            .collect();
        Ok(Some(Self {
            len,
            factor: Factor::Circulant { scale, fft },
        }))
    }

    /// Cholesky factor of the `len × len` Toeplitz matrix built from
    /// `autocov[0..len]`.
    pub fn cholesky(autocov: &[f64]) -> Result<Self> {
        let len = autocov.len();
        if len == 0 {
            return Err(Error::Synthesis("empty autocovariance".into()));
        }
        if len > CHOLESKY_LIMIT {
            return Err(Error::Budget {
                what: "Cholesky fallback dimension",
                requested: len as u64,
                limit: CHOLESKY_LIMIT as u64,
            });
        }
        let cov = DMatrix::from_fn(len, len, |i, j| autocov[i.abs_diff(j)]);
        let (lower, _) = cholesky_jittered(&cov)?;
        Ok(Self {
            len,
            factor: Factor::Cholesky(Arc::new(lower)),
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn method(&self) -> Method {
        match self.factor {
            Factor::Circulant { .. } => Method::Circulant,
            Factor::Cholesky(_) => Method::Cholesky,
        }
    }

    pub fn scratch(&self) -> Scratch {
        let (buf, fft_scratch) = match &self.factor {
            Factor::Circulant { fft, .. } => (
                vec![Complex::new(0.0, 0.0); 2 * self.len],
                vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()],
            ),
            Factor::Cholesky(_) => (Vec::new(), Vec::new()),
        };
        let normals = match &self.factor {
            Factor::Cholesky(_) => DVector::zeros(self.len),
            Factor::Circulant { .. } => DVector::zeros(0),
        };
        Scratch {
            buf,
            fft_scratch,
            normals,
        }
    }

    /// Writes one exact sample into `out[..len]`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, scratch: &mut Scratch, out: &mut [f64]) {
        let n = self.len;
        assert!(out.len() >= n, "output buffer shorter than sequence");
        match &self.factor {
            Factor::Circulant { scale, fft } => {
                let m = 2 * n;
                let w = &mut scratch.buf;
                w[0] = Complex::new(scale[0] * rng.sample::<f64, _>(StandardNormal), 0.0);
                w[n] = Complex::new(scale[n] * rng.sample::<f64, _>(StandardNormal), 0.0);
                for k in 1..n {
                    let a = scale[k] * std::f64::consts::FRAC_1_SQRT_2;
                    let re = a * rng.sample::<f64, _>(StandardNormal);
                    let im = a * rng.sample::<f64, _>(StandardNormal);
                    w[k] = Complex::new(re, im);
                    w[m - k] = Complex::new(re, -im);
                }
                fft.process_with_scratch(w, &mut scratch.fft_scratch);
                for (o, z) in out[..n].iter_mut().zip(w.iter()) {
                    *o = z.re;
                }
            }
            Factor::Cholesky(lower) => {
                let z = &mut scratch.normals;
                for v in z.iter_mut() {
                    *v = rng.sample(StandardNormal);
                }
                lower_mul(lower, z.as_slice(), out);
            }
        }
    }
}
