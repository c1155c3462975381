use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Jitter ladder, relative to the largest diagonal entry.
const JITTERS: [f64; 7] = [0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7];

/// Lower Cholesky factor of a covariance matrix. Smooth kernels on fine
/// grids are numerically singular, so a small multiple of the identity is
/// added when the plain factorization fails. Returns the factor and the
/// jitter that was needed (absolute).
pub(crate) fn cholesky_jittered(cov: &DMatrix<f64>) -> Result<(DMatrix<f64>, f64)> {
    let scale = cov.diagonal().iter().cloned().fold(0.0, f64::max);
    for rel in JITTERS {
        let jitter = rel * scale;
        let mut m = cov.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = m.cholesky() {
            if jitter > 0.0 {
                log::debug!("cholesky needed jitter {jitter:e}");
            }
            return Ok((chol.unpack(), jitter));
        }
    }
    Err(Error::Synthesis(format!(
        "covariance of size {} is not positive definite even with jitter {:e}",
        cov.nrows(),
        JITTERS[JITTERS.len() - 1] * scale
    )))
}

/// `out = L z` for lower-triangular `L`.
pub(crate) fn lower_mul(lower: &DMatrix<f64>, z: &[f64], out: &mut [f64]) {
    let n = lower.nrows();
    for (i, o) in out[..n].iter_mut().enumerate() {
        let mut acc = 0.0;
        for (j, zj) in z[..=i].iter().enumerate() {
            acc += lower[(i, j)] * zj;
        }
        *o = acc;
    }
}
