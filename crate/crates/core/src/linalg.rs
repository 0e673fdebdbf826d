//! Dense row-major helpers for the small matrices the curvature code uses.

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

/// Inverse of a row-major `n×n` matrix, or `None` when singular.
pub fn inverse(n: usize, a: &[f64]) -> Option<Vec<f64>> {
    let m = DMatrix::from_row_slice(n, n, a);
    let lu = m.lu();
    if lu.determinant().abs() < 1e-300 {
        return None;
    }
    let inv = lu.try_inverse()?;
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = inv[(i, j)];
        }
    }
    // symmetrize: inputs are symmetric, rounding is not
    for i in 0..n {
        for j in i + 1..n {
            let s = 0.5 * (out[i * n + j] + out[j * n + i]);
            out[i * n + j] = s;
            out[j * n + i] = s;
        }
    }
    Some(out)
}

/// Inverse of a symmetric positive definite matrix via Cholesky, or `None`
/// when the matrix is not positive definite.
pub fn spd_inverse(n: usize, a: &[f64]) -> Option<Vec<f64>> {
    let chol = Cholesky::new(DMatrix::from_row_slice(n, n, a))?;
    let inv = chol.inverse();
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[i * n + j] = 0.5 * (inv[(i, j)] + inv[(j, i)]);
        }
    }
    Some(out)
}

pub fn determinant(n: usize, a: &[f64]) -> f64 {
    DMatrix::from_row_slice(n, n, a).determinant()
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(n: usize, a: &[f64]) -> Vec<f64> {
    let m = DMatrix::from_row_slice(n, n, a);
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.partial_cmp(y).unwrap());
    ev
}

pub fn identity(n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        out[i * n + i] = 1.0;
    }
    out
}

pub fn matmul(n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    matmul_into(n, a, b, &mut out);
    out
}

/// `out = a b` for row-major `n×n` slices.
pub fn matmul_into(n: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    for (arow, orow) in a.chunks_exact(n).zip(out.chunks_exact_mut(n)) {
        orow.fill(0.0);
        for (aik, brow) in arow.iter().zip(b.chunks_exact(n)) {
            for (o, bkj) in orow.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
}

pub fn transpose(n: usize, a: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            out[j * n + i] = a[i * n + j];
        }
    }
    out
}

pub fn max_asymmetry(n: usize, a: &[f64]) -> f64 {
    let mut m: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            m = m.max((a[i * n + j] - a[j * n + i]).abs());
        }
    }
    m
}
