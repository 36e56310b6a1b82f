//! Small dense linear algebra: symmetric eigendecomposition, Cholesky
//! factorization and ridge-stabilized inversion. Matrices here are at most
//! a few dozen columns wide, so straightforward O(p^3) routines suffice.

use ndarray::{Array1, Array2, ArrayView2};
use thiserror::Error;

use crate::scalar::Scalar;

/// Diagonal ridge added before inversion when a matrix is not numerically
/// positive definite.
pub const RIDGE: f64 = 1e-8;

pub const JACOBI_TOLERANCE: f64 = 1e-12;
pub const JACOBI_MAX_SWEEPS: usize = 10_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix contains non-finite entries")]
    NonFinite,
    #[error("Jacobi eigensolver did not converge in {sweeps} sweeps")]
    NoConvergence { sweeps: usize },
    #[error("matrix is singular even after ridge regularization")]
    Singular,
}

/// Eigenpairs of a symmetric matrix, eigenvalues descending.
/// Column `j` of `vectors` pairs with `values[j]`.
#[derive(Debug, Clone)]
pub struct SymmetricEigen<T> {
    pub values: Array1<T>,
    pub vectors: Array2<T>,
    pub sweeps: usize,
}

fn check_square<T>(a: &ArrayView2<T>) -> Result<usize, LinalgError> {
    let (r, c) = a.dim();
    if r != c {
        return Err(LinalgError::NotSquare { rows: r, cols: c });
    }
    Ok(r)
}

/// Cyclic Jacobi eigendecomposition of a symmetric matrix.
///
/// Sweeps until the off-diagonal Frobenius norm falls below
/// `tol * ||A||_F`. Only the upper triangle is trusted; the input is
/// symmetrized first.
pub fn symmetric_eigen<T: Scalar>(
    a: ArrayView2<T>,
    tol: f64,
    max_sweeps: usize,
) -> Result<SymmetricEigen<T>, LinalgError> {
    let n = check_square(&a)?;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let half = T::lit(0.5);
    let mut m = Array2::<T>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            m[[i, j]] = (a[[i, j]] + a[[j, i]]) * half;
        }
    }
    let mut v = Array2::<T>::eye(n);
    let norm = m.iter().map(|&x| x * x).sum::<T>().sqrt();
    let threshold = T::solver_tolerance(tol) * norm;

    let mut sweeps = 0;
    loop {
        let off = off_diagonal_norm(&m);
        if off <= threshold || off == T::zero() {
            break;
        }
        if sweeps >= max_sweeps {
            return Err(LinalgError::NoConvergence { sweeps });
        }
        sweeps += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq == T::zero() {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (T::lit(2.0) * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[[k, p]];
                    let akq = m[[k, q]];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    m[[k, p]] = new_kp;
                    m[[p, k]] = new_kp;
                    m[[k, q]] = new_kq;
                    m[[q, k]] = new_kq;
                }
                m[[p, p]] -= t * apq;
                m[[q, q]] += t * apq;
                m[[p, q]] = T::zero();
                m[[q, p]] = T::zero();
                for k in 0..n {
                    let vkp = v[[k, p]];
                    let vkq = v[[k, q]];
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    // Descending by value; equal values keep their diagonal position.
    order.sort_by(|&i, &j| m[[j, j]].partial_cmp(&m[[i, i]]).unwrap_or(std::cmp::Ordering::Equal).then(i.cmp(&j)));
    let values = Array1::from_iter(order.iter().map(|&i| m[[i, i]]));
    let mut vectors = Array2::<T>::zeros((n, n));
    for (dst, &src) in order.iter().enumerate() {
        vectors.column_mut(dst).assign(&v.column(src));
    }
    Ok(SymmetricEigen { values, vectors, sweeps })
}

fn off_diagonal_norm<T: Scalar>(m: &Array2<T>) -> T {
    let n = m.nrows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += m[[i, j]] * m[[i, j]];
            }
        }
    }
    acc.sqrt()
}

/// Lower-triangular Cholesky factor, or `None` when a pivot is not
/// meaningfully positive relative to the largest diagonal entry.
pub fn cholesky<T: Scalar>(a: ArrayView2<T>) -> Option<Array2<T>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let max_diag = (0..n).map(|i| a[[i, i]].abs()).fold(T::zero(), T::max);
    let floor = T::epsilon() * T::from_usize_lossy(n.max(1)) * max_diag;
    let mut l = Array2::<T>::zeros((n, n));
    for j in 0..n {
        let mut d = a[[j, j]];
        for k in 0..j {
            d -= l[[j, k]] * l[[j, k]];
        }
        if !(d > floor) || !d.is_finite() {
            return None;
        }
        let djj = d.sqrt();
        l[[j, j]] = djj;
        for i in (j + 1)..n {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            l[[i, j]] = s / djj;
        }
    }
    Some(l)
}

/// Solves `L L^T x = b` for each column of `b`.
pub fn cholesky_solve<T: Scalar>(l: &Array2<T>, b: ArrayView2<T>) -> Array2<T> {
    let n = l.nrows();
    let mut x = b.to_owned();
    for col in 0..x.ncols() {
        for i in 0..n {
            let mut s = x[[i, col]];
            for k in 0..i {
                s -= l[[i, k]] * x[[k, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
        for i in (0..n).rev() {
            let mut s = x[[i, col]];
            for k in (i + 1)..n {
                s -= l[[k, i]] * x[[k, col]];
            }
            x[[i, col]] = s / l[[i, i]];
        }
    }
    x
}

/// Inverse of a symmetric positive-definite matrix. When the plain
/// factorization fails, [`RIDGE`] is added to the diagonal and the
/// factorization retried once; the second field reports whether that
/// happened.
pub fn spd_inverse_with_ridge<T: Scalar>(a: ArrayView2<T>) -> Result<(Array2<T>, bool), LinalgError> {
    let n = check_square(&a)?;
    if a.iter().any(|v| !v.is_finite()) {
        return Err(LinalgError::NonFinite);
    }
    let eye = Array2::<T>::eye(n);
    if let Some(l) = cholesky(a) {
        return Ok((cholesky_solve(&l, eye.view()), false));
    }
    let mut ridged = a.to_owned();
    for i in 0..n {
        ridged[[i, i]] += T::lit(RIDGE);
    }
    match cholesky(ridged.view()) {
        Some(l) => Ok((cholesky_solve(&l, eye.view()), true)),
        None => Err(LinalgError::Singular),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eigen_of_2x2_correlation() {
        let r: Array2<f64> = array![[1.0, 0.6], [0.6, 1.0]];
        let e = symmetric_eigen(r.view(), JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS).unwrap();
        assert!((e.values[0] - 1.6).abs() < 1e-14);
        assert!((e.values[1] - 0.4).abs() < 1e-14);
        let vtv = e.vectors.t().dot(&e.vectors);
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((vtv[[i, j]] - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eigen_reconstructs_matrix() {
        let a: Array2<f64> = array![[4.0, 1.0, 0.5], [1.0, 3.0, 0.2], [0.5, 0.2, 1.0]];
        let e = symmetric_eigen(a.view(), JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS).unwrap();
        let d = Array2::from_diag(&e.values);
        let back = e.vectors.dot(&d).dot(&e.vectors.t());
        for (x, y) in back.iter().zip(a.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(e.values[0] >= e.values[1] && e.values[1] >= e.values[2]);
    }

    #[test]
    fn eigen_works_in_f32() {
        let a = array![[2.0f32, 1.0], [1.0, 2.0]];
        let e = symmetric_eigen(a.view(), JACOBI_TOLERANCE, JACOBI_MAX_SWEEPS).unwrap();
        assert!((e.values[0] - 3.0).abs() < 1e-5);
        assert!((e.values[1] - 1.0).abs() < 1e-5);
    }

    #[test]
    fn inverse_and_ridge() {
        let a: Array2<f64> = array![[2.0, 0.5], [0.5, 1.0]];
        let (inv, ridged) = spd_inverse_with_ridge(a.view()).unwrap();
        assert!(!ridged);
        let prod = a.dot(&inv);
        assert!((prod[[0, 0]] - 1.0).abs() < 1e-12 && prod[[0, 1]].abs() < 1e-12);

        let singular: Array2<f64> = array![[1.0, 1.0], [1.0, 1.0]];
        let (_, ridged) = spd_inverse_with_ridge(singular.view()).unwrap();
        assert!(ridged);
    }

    #[test]
    fn rejects_non_square() {
        let a = Array2::<f64>::zeros((2, 3));
        assert!(matches!(symmetric_eigen(a.view(), 1e-12, 10), Err(LinalgError::NotSquare { .. })));
    }
}
