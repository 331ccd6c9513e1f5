//! Small dense helpers on top of faer: Gram matrices, orthonormalization
//! in a matrix inner product, and dense symmetric-definite pencils.

use faer::linalg::triangular_solve::{solve_lower_triangular_in_place, solve_upper_triangular_in_place};
use faer::{Mat, MatRef, Side};

use crate::error::{Error, Result};
use crate::fem::SymSparseMatrix;

/// Relative eigenvalue floor of a Gram matrix below which a basis is rank deficient.
pub const RANK_TOL: f64 = 1e-12;

fn par() -> faer::Par {
    faer::get_global_parallelism()
}

/// `x^T op x`, symmetrized.
pub fn gram(x: MatRef<'_, f64>, op: &SymSparseMatrix) -> Mat<f64> {
    let ox = op.mul_mat(x);
    symmetrize(x.transpose() * &ox)
}

/// `x^T op y`.
pub fn cross(x: MatRef<'_, f64>, y: MatRef<'_, f64>, op: &SymSparseMatrix) -> Mat<f64> {
    let oy = op.mul_mat(y);
    x.transpose() * &oy
}

pub fn symmetrize(mut g: Mat<f64>) -> Mat<f64> {
    let n = g.nrows();
    for i in 0..n {
        for j in 0..i {
            let v = 0.5 * (g[(i, j)] + g[(j, i)]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Eigenvalues (ascending) and orthonormal eigenvectors of a symmetric matrix.
pub fn symmetric_eigen(s: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let evd = s
        .self_adjoint_eigen(Side::Lower)
        .map_err(|e| Error::LinearAlgebra(format!("symmetric eigensolver failed: {e:?}")))?;
    let d = evd.S().column_vector();
    let values: Vec<f64> = (0..s.nrows()).map(|i| d[i]).collect();
    Ok((values, evd.U().to_owned()))
}

/// Solves `a x = lambda m x` for symmetric `a` and SPD `m` by reduction with
/// the Cholesky factor of `m`. Eigenvalues ascend; eigenvectors are
/// `m`-orthonormal.
pub fn generalized_eigen(a: MatRef<'_, f64>, m: MatRef<'_, f64>) -> Result<(Vec<f64>, Mat<f64>)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((Vec::new(), Mat::zeros(0, 0)));
    }
    let llt = m
        .llt(Side::Lower)
        .map_err(|e| Error::NotPositiveDefinite(format!("mass matrix Cholesky failed: {e:?}")))?;
    let l = llt.L();
    // c = L^-1 a L^-T, formed as L^-1 (L^-1 a)^T
    let mut w = a.to_owned();
    solve_lower_triangular_in_place(l, w.as_mut(), par());
    let mut c = w.transpose().to_owned();
    solve_lower_triangular_in_place(l, c.as_mut(), par());
    let (values, mut y) = symmetric_eigen(symmetrize(c).as_ref())?;
    solve_upper_triangular_in_place(l.transpose(), y.as_mut(), par());
    Ok((values, y))
}

/// Returns a basis of the same span orthonormal in the `op` inner product.
pub fn orthonormalize(basis: MatRef<'_, f64>, op: &SymSparseMatrix) -> Result<Mat<f64>> {
    let g = gram(basis, op);
    let (d, u) = symmetric_eigen(g.as_ref())?;
    let top = d.last().copied().unwrap_or(0.0);
    if d.is_empty() || !(d[0] > RANK_TOL * top) {
        return Err(Error::RankDeficient(format!(
            "Gram eigenvalues span [{:e}, {:e}]",
            d.first().copied().unwrap_or(0.0),
            top
        )));
    }
    let scaled = Mat::from_fn(u.nrows(), u.ncols(), |i, j| u[(i, j)] / d[j].sqrt());
    Ok(basis * &scaled)
}

/// Singular values in nonincreasing order.
pub fn singular_values(m: MatRef<'_, f64>) -> Result<Vec<f64>> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return Ok(Vec::new());
    }
    m.singular_values()
        .map_err(|e| Error::LinearAlgebra(format!("SVD failed: {e:?}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generalized_eigen_small_pencil() {
        let a = Mat::from_fn(2, 2, |i, j| [[2.0, 1.0], [1.0, 3.0]][i][j]);
        let m = Mat::from_fn(2, 2, |i, j| [[2.0, 0.0], [0.0, 1.0]][i][j]);
        let (vals, vecs) = generalized_eigen(a.as_ref(), m.as_ref()).unwrap();
        // det(a - t m) = 2 t^2 - 8 t + 5 = 0
        let r = 1.5f64.sqrt();
        assert!((vals[0] - (2.0 - r)).abs() < 1e-14);
        assert!((vals[1] - (2.0 + r)).abs() < 1e-14);
        let g = vecs.transpose() * &m * &vecs;
        for i in 0..2 {
            for j in 0..2 {
                assert!((g[(i, j)] - if i == j { 1.0 } else { 0.0 }).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn indefinite_mass_rejected() {
        let a = Mat::<f64>::identity(2, 2);
        let m = Mat::from_fn(2, 2, |i, j| [[1.0, 0.0], [0.0, -1.0]][i][j]);
        assert!(matches!(
            generalized_eigen(a.as_ref(), m.as_ref()),
            Err(Error::NotPositiveDefinite(_))
        ));
    }

    #[test]
    fn orthonormalize_detects_rank_deficiency() {
        let op = SymSparseMatrix::from_dense(Mat::<f64>::identity(3, 3).as_ref()).unwrap();
        let b = Mat::from_fn(3, 2, |i, _| i as f64 + 1.0);
        assert!(matches!(orthonormalize(b.as_ref(), &op), Err(Error::RankDeficient(_))));
        let b = Mat::from_fn(3, 2, |i, j| if i == j { 2.0 } else { 1.0 });
        let q = orthonormalize(b.as_ref(), &op).unwrap();
        let g = gram(q.as_ref(), &op);
        assert!((g[(0, 0)] - 1.0).abs() < 1e-14 && g[(0, 1)].abs() < 1e-14);
    }
}
