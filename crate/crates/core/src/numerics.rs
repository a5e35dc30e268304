//! Shared numeric kernels: normalization, squared distances, Gaussian
//! similarity, log-domain reductions, and a finite-difference gradient probe.
//!
//! Everything here works on `f64` slices. Functions that take two vectors
//! check lengths and report `DimensionMismatch` rather than panicking, since
//! mismatches can originate from user-supplied files.

use crate::{Error, Result};

/// Norms below this are treated as zero and refuse to normalize.
pub const NORM_EPSILON: f64 = 1e-12;

/// Default step for central finite differences.
pub const FD_STEP: f64 = 1e-5;

#[inline]
pub(crate) fn sq_dist_raw(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

/// Squared Euclidean distance between two vectors of equal length.
pub fn sq_dist(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    Ok(sq_dist_raw(a, b))
}

/// Euclidean norm.
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Scales `v` to unit norm. Returns the unit vector together with the
/// original norm so callers can differentiate through the scaling.
pub fn l2_normalize(v: &[f64]) -> Result<(Vec<f64>, f64)> {
    let n = norm(v);
    if n < NORM_EPSILON {
        return Err(Error::ZeroVector { norm: n });
    }
    Ok((v.iter().map(|x| x / n).collect(), n))
}

/// Gaussian similarity `exp(-d2 / (2 sigma^2))` of a squared distance.
pub fn gaussian_kernel(d2: f64, sigma: f64) -> Result<f64> {
    if !(sigma.is_finite() && sigma > 0.0) {
        return Err(Error::InvalidSigma { sigma });
    }
    debug_assert!(d2 >= 0.0);
    Ok((-d2 / (2.0 * sigma * sigma)).exp())
}

/// `ln(mean(exp(t)))` evaluated with a max shift so that large negative
/// terms neither underflow to `-inf` nor produce NaN.
pub fn log_mean_exp(terms: &[f64]) -> Result<f64> {
    if terms.is_empty() {
        return Err(Error::EmptyInput);
    }
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mean: f64 = terms.iter().map(|t| (t - max).exp()).sum::<f64>() / terms.len() as f64;
    Ok(max + mean.ln())
}

/// Central-difference gradient of `f` at `x` with step `h`.
///
/// Used by tests as an independent oracle for analytic gradients; the cost
/// is two evaluations of `f` per coordinate.
pub fn finite_diff_grad<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let plus = f(&probe);
        probe[i] = orig - h;
        let minus = f(&probe);
        probe[i] = orig;
        grad[i] = (plus - minus) / (2.0 * h);
    }
    grad
}
