//! Small shared linear-algebra helpers.

use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::error::{Error, Result};

/// Jitter added to a symmetric matrix that fails to factorize:
/// `1e-12 * trace / n`, escalated by factors of 10 if the retry also fails.
pub(crate) const JITTER_REL: f64 = 1e-12;
const JITTER_ESCALATIONS: u32 = 4;

/// Cholesky-factorize a symmetric PSD matrix, adding diagonal jitter on failure.
///
/// Returns the factorization and the jitter that was actually applied.
pub(crate) fn cholesky_with_jitter(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = a.nrows();
    if let Some(ch) = a.clone().cholesky() {
        return Ok((ch, 0.0));
    }
    let base = JITTER_REL * a.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
    let mut jitter = base;
    for _ in 0..=JITTER_ESCALATIONS {
        let mut shifted = a.clone();
        for i in 0..n {
            shifted[(i, i)] += jitter;
        }
        if let Some(ch) = shifted.cholesky() {
            return Ok((ch, jitter));
        }
        jitter *= 10.0;
    }
    Err(Error::DegenerateCenters)
}

/// Largest singular value of a (rectangular) matrix.
pub(crate) fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    a.clone().svd(false, false).singular_values.max()
}

/// Max eigenvalue of the symmetric part (B + B^T)/2.
pub(crate) fn max_symmetric_eigenvalue(b: &DMatrix<f64>) -> f64 {
    let sym = (b + b.transpose()) * 0.5;
    sym.symmetric_eigen().eigenvalues.max()
}
