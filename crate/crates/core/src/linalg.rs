//! Small dense helpers. Matrices are row-major `d * d` slices unless they are
//! nalgebra types.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_sq(a: &[f64]) -> f64 {
    dot(a, a)
}

pub fn norm(a: &[f64]) -> f64 {
    norm_sq(a).sqrt()
}

pub fn dist_sq(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `out += m * v` for a row-major `d x d` matrix.
pub fn mat_vec_acc(m: &[f64], v: &[f64], scale: f64, out: &mut [f64]) {
    let d = v.len();
    for i in 0..d {
        let row = &m[i * d..(i + 1) * d];
        out[i] += scale * dot(row, v);
    }
}

/// `v' M v` for a row-major square matrix.
pub fn quad_form(m: &[f64], u: &[f64], v: &[f64]) -> f64 {
    let d = u.len();
    let mut s = 0.0;
    for i in 0..d {
        for j in 0..d {
            s += u[i] * m[i * d + j] * v[j];
        }
    }
    s
}

pub fn to_dmatrix(m: &[f64], d: usize) -> DMatrix<f64> {
    DMatrix::from_row_slice(d, d, m)
}

/// Inverse square root of a symmetric matrix through its eigendecomposition.
/// Fails when an eigenvalue sits below `floor`.
pub fn sym_inv_sqrt(m: &DMatrix<f64>, floor: f64) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let min = eig.eigenvalues.min();
    if !(min >= floor) {
        return Err(Error::ConvexityFloor {
            eigenvalue: min,
            floor,
        });
    }
    let inv_sqrt = DVector::from_iterator(
        eig.eigenvalues.len(),
        eig.eigenvalues.iter().map(|l| 1.0 / l.sqrt()),
    );
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&inv_sqrt) * eig.eigenvectors.transpose())
}

pub fn min_eigenvalue(m: &[f64], d: usize) -> f64 {
    let mat = to_dmatrix(m, d);
    ((&mat + mat.transpose()) * 0.5).symmetric_eigen().eigenvalues.min()
}

/// Thomas algorithm for `lower[i] x[i-1] + diag[i] x[i] + upper[i] x[i+1] = rhs[i]`.
/// `lower[0]` and `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut x = vec![0.0; n];
    let mut denom = diag[0];
    if denom.abs() < 1e-300 {
        return Err(Error::SingularSystem { row: 0 });
    }
    c[0] = if n > 1 { upper[0] / denom } else { 0.0 };
    x[0] = rhs[0] / denom;
    for i in 1..n {
        denom = diag[i] - lower[i] * c[i - 1];
        if denom.abs() < 1e-300 || !denom.is_finite() {
            return Err(Error::SingularSystem { row: i });
        }
        if i + 1 < n {
            c[i] = upper[i] / denom;
        }
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / denom;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(x)
}

/// Dense LU solve with partial pivoting; `a` is row-major `n x n`.
pub fn solve_dense(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let m = DMatrix::from_row_slice(n, n, a);
    m.lu()
        .solve(&DVector::from_column_slice(b))
        .map(|v| v.as_slice().to_vec())
        .ok_or(Error::SingularSystem { row: 0 })
}

pub fn invert(a: &[f64], d: usize) -> Result<Vec<f64>> {
    let m = to_dmatrix(a, d);
    let inv = m.try_inverse().ok_or(Error::SingularSystem { row: 0 })?;
    Ok(row_major(&inv))
}

pub fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let (r, c) = m.shape();
    let mut out = Vec::with_capacity(r * c);
    for i in 0..r {
        for j in 0..c {
            out.push(m[(i, j)]);
        }
    }
    out
}

pub fn mat_mul(a: &[f64], b: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for k in 0..d {
            let aik = a[i * d + k];
            for j in 0..d {
                out[i * d + j] += aik * b[k * d + j];
            }
        }
    }
    out
}

pub fn transpose(a: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            out[j * d + i] = a[i * d + j];
        }
    }
    out
}

pub fn identity(d: usize) -> Vec<f64> {
    let mut out = vec![0.0; d * d];
    for i in 0..d {
        out[i * d + i] = 1.0;
    }
    out
}
