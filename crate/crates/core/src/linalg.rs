use log::warn;
use nalgebra::{Cholesky, DMatrix, Dyn};

use crate::{Error, Result};

pub(crate) const JITTER_FACTOR: f64 = 1e-12;

/// Cholesky factorization, retried once with a diagonal jitter of
/// `1e-12 * max diag` when the plain factorization fails.
pub(crate) fn cholesky_with_jitter(
    matrix: DMatrix<f64>,
    what: &str,
) -> Result<(Cholesky<f64, Dyn>, bool)> {
    let scale = (0..matrix.nrows())
        .map(|i| matrix[(i, i)].abs())
        .fold(0.0_f64, f64::max);
    if let Some(chol) = Cholesky::new(matrix.clone()) {
        return Ok((chol, false));
    }
    let jitter = JITTER_FACTOR * scale.max(f64::MIN_POSITIVE);
    let mut jittered = matrix;
    for i in 0..jittered.nrows() {
        jittered[(i, i)] += jitter;
    }
    match Cholesky::new(jittered) {
        Some(chol) => {
            warn!("{what}: Cholesky needed a diagonal jitter of {jitter:e}");
            Ok((chol, true))
        }
        None => Err(Error::NotPositiveDefinite(what.to_string())),
    }
}

/// Quantile with linear interpolation between order statistics (the
/// "type 7" convention). `sorted` must be ascending and non-empty.
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}
