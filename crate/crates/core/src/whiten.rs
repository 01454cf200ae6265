//! Empirical covariance estimation and the symmetric (ZCA-style) whitening
//! transform.
//!
//! Covariance uses the 1/n population convention; the square-root factors
//! come from the symmetric eigendecomposition so the whitener is compatible
//! with the `(A A^T)^{1/2}` algebra of the reference vectors.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::linalg;

/// Fitted whitening transform `z = Sigma^{-1/2} (x - mean)`.
#[derive(Debug, Clone)]
pub struct Whitener {
    pub mean: Array1<f64>,
    pub cov: Array2<f64>,
    pub inv_sqrt: Array2<f64>,
    pub sqrt: Array2<f64>,
    pub n_fit: usize,
}

/// Estimate mean and covariance and factor the covariance.
pub fn fit_whitener(x: &Array2<f64>) -> Result<Whitener> {
    let (n, d) = x.dim();
    if n < 10 * d {
        return Err(Error::TooFewSamples {
            required: 10 * d,
            actual: n,
        });
    }
    let mean = x.sum_axis(ndarray::Axis(0)) / n as f64;
    let centered = x - &mean;
    let cov = centered.t().dot(&centered) / n as f64;
    let (vals, _) = linalg::sym_eigen(&cov)?;
    let lambda_min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if lambda_min < 1e-10 {
        return Err(Error::DegenerateCovariance { lambda_min });
    }
    let inv_sqrt = linalg::inv_sqrt_spd(&cov)?;
    let sqrt = linalg::sqrt_spd(&cov)?;
    Ok(Whitener {
        mean,
        cov,
        inv_sqrt,
        sqrt,
        n_fit: n,
    })
}

/// Apply the whitening transform row-wise.
pub fn apply_whitener(w: &Whitener, x: &Array2<f64>) -> Result<Array2<f64>> {
    if x.ncols() != w.mean.len() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "whitener is {}-dimensional, block has {} columns",
                w.mean.len(),
                x.ncols()
            ),
        });
    }
    let centered = x - &w.mean;
    // inv_sqrt is symmetric, so row-wise M (x - mean) is (X - mean) M
    Ok(centered.dot(&w.inv_sqrt))
}
