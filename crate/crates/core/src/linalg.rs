//! Dense small-matrix kernels: SVD-based distance to and projection onto
//! SO(d), polar decomposition, symmetric inverse square root, and the
//! undercomplete distance through singular values.
//!
//! All routines are pure functions on `ndarray` matrices; nalgebra provides
//! the SVD and symmetric eigendecomposition backends internally. Matrices
//! below sigma_min = 1e-12 are rejected rather than regularized.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Hard floor below which matrices are treated as rank deficient.
pub const SIGMA_MIN_GUARD: f64 = 1e-12;

pub(crate) fn to_na(a: &Array2<f64>) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_row_iterator(a.nrows(), a.ncols(), a.iter().cloned())
}

pub(crate) fn from_na(m: &nalgebra::DMatrix<f64>) -> Array2<f64> {
    Array2::from_shape_fn((m.nrows(), m.ncols()), |(i, j)| m[(i, j)])
}

/// Thin singular value decomposition `a = U diag(sigma) V^T`.
///
/// `u` is rows x k, `v` is cols x k with k = min(rows, cols), and `sigma`
/// is sorted in descending order.
#[derive(Debug, Clone)]
pub struct SvdFactors {
    pub u: Array2<f64>,
    pub sigma: Array1<f64>,
    pub v: Array2<f64>,
}

/// Compute a thin SVD with descending singular values.
pub fn svd(a: &Array2<f64>) -> SvdFactors {
    let m = to_na(a);
    let f = m.svd(true, true);
    let u = f.u.expect("svd requested u");
    let vt = f.v_t.expect("svd requested v_t");
    let k = f.singular_values.len();
    let mut idx: Vec<usize> = (0..k).collect();
    // nalgebra sorts already, but the ordering is part of our contract.
    idx.sort_by(|&i, &j| f.singular_values[j].total_cmp(&f.singular_values[i]));
    let sigma = Array1::from_iter(idx.iter().map(|&i| f.singular_values[i]));
    let u = Array2::from_shape_fn((a.nrows(), k), |(r, c)| u[(r, idx[c])]);
    let v = Array2::from_shape_fn((a.ncols(), k), |(r, c)| vt[(idx[c], r)]);
    SvdFactors { u, sigma, v }
}

/// Determinant via LU; errors on non-square input.
pub fn determinant(a: &Array2<f64>) -> Result<f64> {
    ensure_square(a)?;
    Ok(to_na(a).determinant())
}

fn ensure_square(a: &Array2<f64>) -> Result<()> {
    if a.nrows() != a.ncols() {
        return Err(Error::NonSquare {
            rows: a.nrows(),
            cols: a.ncols(),
        });
    }
    Ok(())
}

fn ensure_positive_det(a: &Array2<f64>) -> Result<()> {
    let det = determinant(a)?;
    if det <= 0.0 {
        return Err(Error::NonPositiveDeterminant { det });
    }
    Ok(())
}

fn ensure_full_rank(sigma: &Array1<f64>) -> Result<()> {
    let sigma_min = sigma[sigma.len() - 1];
    if sigma_min < SIGMA_MIN_GUARD {
        return Err(Error::RankDeficient { sigma_min });
    }
    Ok(())
}

/// Frobenius distance from a square, positively oriented matrix to SO(d):
/// `sqrt(sum_i (sigma_i - 1)^2)`.
pub fn dist_to_so(a: &Array2<f64>) -> Result<f64> {
    ensure_positive_det(a)?;
    let f = svd(a);
    ensure_full_rank(&f.sigma)?;
    Ok(so_defect(&f.sigma))
}

/// `sqrt(sum_i (sigma_i - 1)^2)` for a given singular spectrum.
pub fn so_defect(sigma: &Array1<f64>) -> f64 {
    sigma.iter().map(|s| (s - 1.0) * (s - 1.0)).sum::<f64>().sqrt()
}

/// Nearest rotation `Q = U V^T` in Frobenius norm.
pub fn project_to_so(a: &Array2<f64>) -> Result<Array2<f64>> {
    ensure_positive_det(a)?;
    let f = svd(a);
    ensure_full_rank(&f.sigma)?;
    Ok(f.u.dot(&f.v.t()))
}

/// Distance of a tall full-column-rank matrix to the isometric embeddings
/// SO(d, range): again `sqrt(sum_i (sigma_i - 1)^2)`.
pub fn dist_to_so_undercomplete(a: &Array2<f64>) -> Result<f64> {
    if a.nrows() < a.ncols() {
        return Err(Error::DimensionMismatch {
            context: format!("need rows >= cols, got {}x{}", a.nrows(), a.ncols()),
        });
    }
    let f = svd(a);
    ensure_full_rank(&f.sigma)?;
    Ok(so_defect(&f.sigma))
}

/// Polar decomposition `a = U P` with orthonormal `U` (D x d) and symmetric
/// positive definite `P = (a^T a)^{1/2}`.
pub fn polar_factors(a: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
    if a.nrows() < a.ncols() {
        return Err(Error::DimensionMismatch {
            context: format!("need rows >= cols, got {}x{}", a.nrows(), a.ncols()),
        });
    }
    let f = svd(a);
    ensure_full_rank(&f.sigma)?;
    let u = f.u.dot(&f.v.t());
    let scaled = &f.v * &f.sigma; // scales column j by sigma_j
    let p = scaled.dot(&f.v.t());
    Ok((u, symmetrize(&p)))
}

fn symmetrize(m: &Array2<f64>) -> Array2<f64> {
    let mt = m.t();
    (m + &mt) / 2.0
}

fn symmetry_deviation(s: &Array2<f64>) -> f64 {
    let mut dev: f64 = 0.0;
    for i in 0..s.nrows() {
        for j in (i + 1)..s.ncols() {
            dev = dev.max((s[[i, j]] - s[[j, i]]).abs());
        }
    }
    dev
}

/// Eigendecomposition of a symmetric matrix; errors when the input is not
/// symmetric within `1e-10 * (1 + max|s|)`.
pub fn sym_eigen(s: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>)> {
    ensure_square(s)?;
    let scale = 1.0 + s.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let dev = symmetry_deviation(s);
    if dev > 1e-10 * scale {
        return Err(Error::NotSymmetric { dev });
    }
    let e = nalgebra::SymmetricEigen::new(to_na(&symmetrize(s)));
    let vals = Array1::from_iter(e.eigenvalues.iter().cloned());
    let vecs = from_na(&e.eigenvectors);
    Ok((vals, vecs))
}

fn spd_map(s: &Array2<f64>, f: impl Fn(f64) -> f64) -> Result<Array2<f64>> {
    let (vals, vecs) = sym_eigen(s)?;
    let lambda_min = vals.iter().cloned().fold(f64::INFINITY, f64::min);
    if lambda_min <= SIGMA_MIN_GUARD {
        return Err(Error::NotSpd { lambda_min });
    }
    let mapped = vals.mapv(f);
    let scaled = &vecs * &mapped;
    Ok(symmetrize(&scaled.dot(&vecs.t())))
}

/// Symmetric inverse square root: returns `M` with `M s M = Id`.
pub fn inv_sqrt_spd(s: &Array2<f64>) -> Result<Array2<f64>> {
    spd_map(s, |l| 1.0 / l.sqrt())
}

/// Symmetric square root of an SPD matrix.
pub fn sqrt_spd(s: &Array2<f64>) -> Result<Array2<f64>> {
    spd_map(s, f64::sqrt)
}

/// Matrix inverse; errors when singular.
pub fn inverse(a: &Array2<f64>) -> Result<Array2<f64>> {
    ensure_square(a)?;
    match to_na(a).try_inverse() {
        Some(inv) => Ok(from_na(&inv)),
        None => Err(Error::SingularMatrix),
    }
}

/// Orientation fix: for `det(a) < 0`, flip the sign of the column aligned
/// with the smallest singular direction so the result has positive
/// determinant and unchanged singular values.
pub fn fix_orientation(a: &Array2<f64>) -> Result<Array2<f64>> {
    let det = determinant(a)?;
    if det >= 0.0 {
        return Ok(a.clone());
    }
    let f = svd(a);
    let v_last = f.v.column(f.v.ncols() - 1);
    // a (Id - 2 v v^T): reflect across the hyperplane orthogonal to v.
    let av = a.dot(&v_last);
    let mut out = a.clone();
    for i in 0..out.nrows() {
        for j in 0..out.ncols() {
            out[[i, j]] -= 2.0 * av[i] * v_last[j];
        }
    }
    Ok(out)
}

/// Product bound check `dist(ab, SO) <= 1.5 dist(a, SO) + 1.5 dist(b, SO)`.
///
/// Returns `(lhs, rhs, holds)` with `holds = lhs <= rhs + 1e-9`.
pub fn dist_product_bound_check(a: &Array2<f64>, b: &Array2<f64>) -> Result<(f64, f64, bool)> {
    if a.ncols() != b.nrows() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "product of {}x{} and {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols()
            ),
        });
    }
    let lhs = dist_to_so(&a.dot(b))?;
    let rhs = 1.5 * dist_to_so(a)? + 1.5 * dist_to_so(b)?;
    Ok((lhs, rhs, lhs <= rhs + 1e-9))
}

/// 2x2 rotation by `theta`.
pub fn rotation2(theta: f64) -> Array2<f64> {
    ndarray::array![[theta.cos(), -theta.sin()], [theta.sin(), theta.cos()]]
}

/// Frobenius norm.
pub fn frobenius(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum::<f64>().sqrt()
}
