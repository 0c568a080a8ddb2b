//! Dense kernels shared by the estimator, the generators and the metrics.
//!
//! Matrices are `nalgebra` column-major `DMatrix<f64>`; a column of an
//! `n x p` data matrix is therefore a contiguous `n`-slice, which is what the
//! residual and correlation routines work on.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub type DenseMatrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

const SYMMETRY_TOL: f64 = 1e-10;

/// Contiguous view of column `j` of a column-major matrix.
pub fn column(m: &DenseMatrix, j: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[j * n..(j + 1) * n]
}

/// Lower-triangular factor `L` with `L * L^T = A`.
#[derive(Debug, Clone)]
pub struct CholeskyFactor {
    lower: DenseMatrix,
}

impl CholeskyFactor {
    pub fn dim(&self) -> usize {
        self.lower.nrows()
    }

    pub fn lower(&self) -> &DenseMatrix {
        &self.lower
    }

    /// `L * L^T`.
    pub fn reassemble(&self) -> DenseMatrix {
        &self.lower * self.lower.transpose()
    }

    pub fn log_det(&self) -> f64 {
        2.0 * self.lower.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    /// Solves `A X = B` in place by forward then backward substitution.
    pub fn solve_in_place(&self, b: &mut DenseMatrix) {
        let p = self.dim();
        let l = &self.lower;
        for c in 0..b.ncols() {
            for i in 0..p {
                let mut s = b[(i, c)];
                for k in 0..i {
                    s -= l[(i, k)] * b[(k, c)];
                }
                b[(i, c)] = s / l[(i, i)];
            }
            for i in (0..p).rev() {
                let mut s = b[(i, c)];
                for k in i + 1..p {
                    s -= l[(k, i)] * b[(k, c)];
                }
                b[(i, c)] = s / l[(i, i)];
            }
        }
    }

    pub fn inverse(&self) -> DenseMatrix {
        let p = self.dim();
        let mut inv = DenseMatrix::identity(p, p);
        self.solve_in_place(&mut inv);
        symmetrize(&mut inv);
        inv
    }
}

fn check_square(a: &DenseMatrix, what: &str) -> Result<()> {
    if a.nrows() != a.ncols() || a.nrows() == 0 {
        return Err(Error::contract(format!(
            "{what}: expected a non-empty square matrix, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    Ok(())
}

pub fn is_symmetric(a: &DenseMatrix, tol: f64) -> bool {
    let p = a.nrows();
    if p != a.ncols() {
        return false;
    }
    let scale = a.amax().max(1.0);
    for i in 0..p {
        for j in 0..i {
            if (a[(i, j)] - a[(j, i)]).abs() > tol * scale {
                return false;
            }
        }
    }
    true
}

/// Replaces `a` by `(a + a^T) / 2`.
pub fn symmetrize(a: &mut DenseMatrix) {
    let p = a.nrows();
    for i in 0..p {
        for j in 0..i {
            let m = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = m;
            a[(j, i)] = m;
        }
    }
}

/// Cholesky factorisation of a symmetric positive-definite matrix.
///
/// Only the lower triangle is read once symmetry has been checked. A
/// non-positive (or non-finite) pivot yields `NotPositiveDefinite` carrying
/// the zero-based pivot index.
pub fn cholesky(a: &DenseMatrix) -> Result<CholeskyFactor> {
    check_square(a, "cholesky")?;
    if !is_symmetric(a, SYMMETRY_TOL) {
        return Err(Error::contract("cholesky: matrix is not symmetric"));
    }
    let p = a.nrows();
    let mut l = DenseMatrix::zeros(p, p);
    for j in 0..p {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::NotPositiveDefinite { pivot: j });
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..p {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    Ok(CholeskyFactor { lower: l })
}

/// Inverse of a symmetric positive-definite matrix; the result is exactly
/// symmetric.
pub fn invert_pd(a: &DenseMatrix) -> Result<DenseMatrix> {
    Ok(cholesky(a)?.inverse())
}

/// Natural log-determinant of a symmetric positive-definite matrix.
pub fn log_det_pd(a: &DenseMatrix) -> Result<f64> {
    Ok(cholesky(a)?.log_det())
}

/// Eigenvalues of the symmetric part of `a`, ascending.
pub fn symmetric_eigenvalues(a: &DenseMatrix) -> Vec<f64> {
    let mut s = a.clone();
    symmetrize(&mut s);
    let mut ev: Vec<f64> = s.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Minimum-norm least-squares coefficients of `y` on the columns of `z`
/// (no intercept). Singular directions are cut at the usual
/// `max(n, q) * eps * sigma_max` level.
pub fn least_squares_coefficients(y: &[f64], z: &DenseMatrix) -> Result<Vector> {
    let n = y.len();
    if z.nrows() != n {
        return Err(Error::contract(format!(
            "least squares: response has {n} rows, design has {}",
            z.nrows()
        )));
    }
    let q = z.ncols();
    if q == 0 {
        return Ok(Vector::zeros(0));
    }
    let svd = z.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * (n.max(q) as f64) * f64::EPSILON;
    let rhs = Vector::from_column_slice(y);
    if smax == 0.0 {
        return Ok(Vector::zeros(q));
    }
    svd.solve(&rhs, eps).map_err(|e| Error::contract(e.to_string()))
}

/// Residual `y - Z * beta` of the least-squares fit of `y` on `z`.
///
/// With no predictors the residual is `y` minus its own mean, i.e. the
/// empty regression predicts the sample mean. Rank-deficient designs use the
/// minimum-norm solution.
pub fn least_squares_residuals(y: &[f64], z: &DenseMatrix) -> Result<Vector> {
    if y.is_empty() {
        return Err(Error::contract("least squares: empty response"));
    }
    if z.ncols() == 0 {
        if z.nrows() != y.len() && z.nrows() != 0 {
            return Err(Error::contract("least squares: dimension mismatch"));
        }
        let m = mean(y);
        return Ok(Vector::from_iterator(y.len(), y.iter().map(|v| v - m)));
    }
    let beta = least_squares_coefficients(y, z)?;
    let fitted = z * beta;
    Ok(Vector::from_iterator(
        y.len(),
        y.iter().zip(fitted.iter()).map(|(a, b)| a - b),
    ))
}

/// Sample Pearson correlation. A constant input gives 0.
pub fn pearson_correlation(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::contract(format!(
            "pearson: lengths differ ({} vs {})",
            u.len(),
            v.len()
        )));
    }
    if u.len() < 2 {
        return Err(Error::contract("pearson: need at least two observations"));
    }
    let (mu, mv) = (mean(u), mean(v));
    let (mut suv, mut suu, mut svv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        let (da, db) = (a - mu, b - mv);
        suv += da * db;
        suu += da * da;
        svv += db * db;
    }
    if suu == 0.0 || svv == 0.0 {
        return Ok(0.0);
    }
    Ok((suv / (suu.sqrt() * svv.sqrt())).clamp(-1.0, 1.0))
}
