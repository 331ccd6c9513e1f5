//! Lowest eigenpairs of the pencil `A x = lambda M x`.
//!
//! Two independent paths: a dense symmetric-definite reduction, used as the
//! oracle, and a block shift-and-invert Krylov method with Rayleigh-Ritz
//! restarts backed by a sparse Cholesky factorization. Both return
//! `M`-orthonormal eigenvectors; for multiple eigenvalues only the spanned
//! subspace is meaningful.

use std::fmt::Write as _;

use faer::linalg::solvers::Solve;
use faer::sparse::linalg::solvers::Llt;
use faer::{Mat, MatRef, Side};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::SymSparseMatrix;
use crate::linalg::{self, RANK_TOL};

/// Default relative residual tolerance `||Av - lambda Mv|| / ||Av||`.
pub const DEFAULT_TOL: f64 = 1e-10;

/// Largest dimension the dense path accepts by default.
pub const DEFAULT_DENSE_CAP: usize = 4000;

#[derive(Debug, Clone)]
pub struct EigenSolution {
    pub values: Vec<f64>,
    /// Column `i` holds the eigenvector of `values[i]` over the interior dofs.
    pub vectors: Mat<f64>,
    pub residual_norms: Vec<f64>,
}

impl EigenSolution {
    pub fn k(&self) -> usize {
        self.values.len()
    }

    /// Discrete eigenvalue with 1-based index, as in `lambda_{h,i}`.
    pub fn value(&self, index: usize) -> Result<f64> {
        index
            .checked_sub(1)
            .and_then(|i| self.values.get(i).copied())
            .ok_or(Error::IndexOutOfRange {
                index,
                available: self.k(),
            })
    }

    /// Columns `first..=last` (1-based) of the eigenvector block.
    pub fn basis(&self, first: usize, last: usize) -> Result<MatRef<'_, f64>> {
        if first == 0 || last < first || last > self.k() {
            return Err(Error::IndexOutOfRange {
                index: last.max(first),
                available: self.k(),
            });
        }
        Ok(self.vectors.as_ref().subcols(first - 1, last - first + 1))
    }

    /// `index,value,residual` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,value,residual\n");
        for (i, (v, r)) in self.values.iter().zip(&self.residual_norms).enumerate() {
            let _ = writeln!(out, "{},{:e},{:e}", i + 1, v, r);
        }
        out
    }
}

fn residuals(a: &SymSparseMatrix, m: &SymSparseMatrix, values: &[f64], vectors: MatRef<'_, f64>) -> Vec<f64> {
    let av = a.mul_mat(vectors);
    let mv = m.mul_mat(vectors);
    values
        .iter()
        .enumerate()
        .map(|(c, &lam)| {
            let (mut num, mut den) = (0.0, 0.0);
            for i in 0..av.nrows() {
                num += (av[(i, c)] - lam * mv[(i, c)]).powi(2);
                den += av[(i, c)].powi(2);
            }
            if den > 0.0 {
                (num / den).sqrt()
            } else {
                num.sqrt()
            }
        })
        .collect()
}

fn check_dims(a: &SymSparseMatrix, m: &SymSparseMatrix, k: usize) -> Result<()> {
    if a.dim() != m.dim() {
        return Err(Error::InvalidParameter(format!(
            "pencil dimensions differ: {} vs {}",
            a.dim(),
            m.dim()
        )));
    }
    if k > a.dim() {
        return Err(Error::InvalidParameter(format!(
            "requested {k} eigenpairs of a {}-dimensional pencil",
            a.dim()
        )));
    }
    Ok(())
}

fn empty(n: usize) -> EigenSolution {
    EigenSolution {
        values: Vec::new(),
        vectors: Mat::zeros(n, 0),
        residual_norms: Vec::new(),
    }
}

/// Full dense reduction; the reference path.
pub fn solve_dense(a: &SymSparseMatrix, m: &SymSparseMatrix, k: usize, max_dim: usize) -> Result<EigenSolution> {
    check_dims(a, m, k)?;
    let n = a.dim();
    if n > max_dim {
        return Err(Error::InvalidParameter(format!(
            "dimension {n} exceeds the dense solver cap {max_dim}"
        )));
    }
    if k == 0 {
        return Ok(empty(n));
    }
    let (values, vectors) = linalg::generalized_eigen(a.to_dense().as_ref(), m.to_dense().as_ref())?;
    let values = values[..k].to_vec();
    let vectors = vectors.as_ref().subcols(0, k).to_owned();
    let residual_norms = residuals(a, m, &values, vectors.as_ref());
    Ok(EigenSolution {
        values,
        vectors,
        residual_norms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterativeOptions {
    /// Spectral shift; must lie below the smallest eigenvalue.
    pub shift: f64,
    pub tol: f64,
    /// Extra block columns beyond the requested count.
    pub guard: usize,
    /// Krylov blocks generated per restart.
    pub blocks: usize,
    pub max_restarts: usize,
    pub seed: u64,
}

impl Default for IterativeOptions {
    fn default() -> Self {
        IterativeOptions {
            shift: 0.0,
            tol: DEFAULT_TOL,
            guard: 4,
            blocks: 6,
            max_restarts: 50,
            seed: 0x5eed,
        }
    }
}

/// Removes from `w` its `M`-components along the basis `v` (with `mv = M v`).
fn project_out(w: &mut Mat<f64>, v: MatRef<'_, f64>, mv: MatRef<'_, f64>) {
    if v.ncols() == 0 {
        return;
    }
    let coef = mv.transpose() * w.as_ref();
    *w -= v * &coef;
}

/// `M`-orthonormalizes `w` against `v` and internally, dropping directions
/// already (numerically) contained in `v`.
fn extend_basis(mut w: Mat<f64>, v: MatRef<'_, f64>, mv: MatRef<'_, f64>, m: &SymSparseMatrix) -> Result<Mat<f64>> {
    let norms_before: Vec<f64> = {
        let g = linalg::gram(w.as_ref(), m);
        (0..g.nrows()).map(|i| g[(i, i)].max(0.0).sqrt()).collect()
    };
    for _ in 0..2 {
        project_out(&mut w, v, mv);
    }
    let g = linalg::gram(w.as_ref(), m);
    let (d, u) = linalg::symmetric_eigen(g.as_ref())?;
    let scale = norms_before.iter().fold(0.0f64, |a, &b| a.max(b)).powi(2);
    let keep: Vec<usize> = (0..d.len()).filter(|&i| d[i] > 1e-20 * scale.max(f64::MIN_POSITIVE)).collect();
    let mut q = Mat::from_fn(w.nrows(), keep.len(), |_, _| 0.0);
    let wu = w.as_ref() * &u;
    for (c, &i) in keep.iter().enumerate() {
        let s = 1.0 / d[i].sqrt();
        for r in 0..w.nrows() {
            q[(r, c)] = wu[(r, i)] * s;
        }
    }
    // second pass for the rounding left by the first
    project_out(&mut q, v, mv);
    if q.ncols() == 0 {
        return Ok(q);
    }
    let g = linalg::gram(q.as_ref(), m);
    let (d, u) = linalg::symmetric_eigen(g.as_ref())?;
    let top = d.last().copied().unwrap_or(0.0);
    let keep: Vec<usize> = (0..d.len()).filter(|&i| d[i] > RANK_TOL * top).collect();
    let qu = q.as_ref() * &u;
    Ok(Mat::from_fn(q.nrows(), keep.len(), |r, c| qu[(r, keep[c])] / d[keep[c]].sqrt()))
}

fn hcat(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let ca = a.ncols();
    Mat::from_fn(a.nrows(), ca + b.ncols(), |i, j| if j < ca { a[(i, j)] } else { b[(i, j - ca)] })
}

/// Block shift-and-invert Krylov solver with Rayleigh-Ritz restarts.
pub fn solve_iterative(
    a: &SymSparseMatrix,
    m: &SymSparseMatrix,
    k: usize,
    opts: &IterativeOptions,
) -> Result<EigenSolution> {
    check_dims(a, m, k)?;
    let n = a.dim();
    if k == 0 {
        return Ok(empty(n));
    }
    if !(opts.tol >= 1e-12) {
        return Err(Error::InvalidParameter(format!("tolerance {} is below 1e-12", opts.tol)));
    }
    let shifted = a.shifted_lower(opts.shift, m)?;
    let llt: Llt<usize, f64> = shifted.sp_cholesky(Side::Lower).map_err(|e| {
        Error::NotPositiveDefinite(format!(
            "A - {} M is not positive definite ({e:?}); the shift must lie below the smallest eigenvalue",
            opts.shift
        ))
    })?;

    let p = (k + opts.guard).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let start = Mat::from_fn(n, p, |_, _| rng.gen_range(-1.0..1.0));
    let mut x = linalg::orthonormalize(start.as_ref(), m)?;

    let mut last_residuals = Vec::new();
    for restart in 0..opts.max_restarts {
        let mut v = x.clone();
        let mut mv = m.mul_mat(v.as_ref());
        let mut w = x.clone();
        for block in 1..opts.blocks {
            if v.ncols() >= n || w.ncols() == 0 {
                break;
            }
            let mut next = if block == 1 {
                // K^-1 (A x - theta M x) spans the same space as K^-1 M x
                // modulo x, but keeps full relative accuracy as x converges
                let ax = a.mul_mat(x.as_ref());
                let theta: Vec<f64> = (0..x.ncols())
                    .map(|j| (0..n).map(|r| x[(r, j)] * ax[(r, j)]).sum())
                    .collect();
                Mat::from_fn(n, x.ncols(), |i, j| ax[(i, j)] - theta[j] * mv[(i, j)])
            } else {
                m.mul_mat(w.as_ref())
            };
            llt.solve_in_place(next.as_mut());
            let fresh = extend_basis(next, v.as_ref(), mv.as_ref(), m)?;
            if fresh.ncols() == 0 {
                break;
            }
            let take = fresh.ncols().min(n - v.ncols());
            let fresh = fresh.as_ref().subcols(0, take).to_owned();
            mv = hcat(mv.as_ref(), m.mul_mat(fresh.as_ref()).as_ref());
            v = hcat(v.as_ref(), fresh.as_ref());
            w = fresh;
        }

        let ah = linalg::gram(v.as_ref(), a);
        let mh = linalg::symmetrize(v.transpose() * &mv);
        let (theta, y) = linalg::generalized_eigen(ah.as_ref(), mh.as_ref())?;
        let keep = p.min(theta.len());
        x = v.as_ref() * y.as_ref().subcols(0, keep);

        let values = theta[..k].to_vec();
        let vectors = x.as_ref().subcols(0, k).to_owned();
        let res = residuals(a, m, &values, vectors.as_ref());
        log::debug!("restart {restart}: basis {} residual max {:e}", v.ncols(), res.iter().fold(0.0f64, |s, &r| s.max(r)));
        if res.iter().all(|&r| r <= opts.tol) {
            let closest = values
                .iter()
                .map(|&l| (l - opts.shift).abs() / l.abs().max(1.0))
                .fold(f64::INFINITY, f64::min);
            if closest < 1e-8 {
                log::warn!(
                    "shift {} is within {closest:e} (relative) of an eigenvalue; the factorization is ill-conditioned",
                    opts.shift
                );
            }
            return Ok(EigenSolution {
                values,
                residual_norms: res,
                vectors,
            });
        }
        last_residuals = res;
    }
    Err(Error::NoConvergence {
        iterations: opts.max_restarts,
        residuals: last_residuals,
    })
}

/// Largest Rayleigh quotient `(v^T A v) / (v^T M v)` over the span of `basis`.
pub fn rayleigh_quotient_max(basis: MatRef<'_, f64>, a: &SymSparseMatrix, m: &SymSparseMatrix) -> Result<f64> {
    if basis.ncols() == 0 {
        return Err(Error::RankDeficient("empty basis".into()));
    }
    let mh = linalg::gram(basis, m);
    let (d, _) = linalg::symmetric_eigen(mh.as_ref())?;
    let top = d.last().copied().unwrap_or(0.0);
    if !(d[0] > RANK_TOL * top) {
        return Err(Error::RankDeficient(format!(
            "mass Gram eigenvalues span [{:e}, {:e}]",
            d[0], top
        )));
    }
    let ah = linalg::gram(basis, a);
    let (theta, _) = linalg::generalized_eigen(ah.as_ref(), mh.as_ref())?;
    Ok(*theta.last().expect("nonempty basis"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fem::assemble;
    use crate::mesh::{build_lshape_mesh, build_unit_square_mesh};
    use std::f64::consts::PI;

    fn pencil(n: usize) -> (SymSparseMatrix, SymSparseMatrix) {
        let asm = assemble(&build_unit_square_mesh(n).unwrap()).unwrap();
        (asm.stiffness, asm.mass)
    }

    fn assert_invariants(sol: &EigenSolution, a: &SymSparseMatrix, m: &SymSparseMatrix, orth_tol: f64) {
        for w in sol.values.windows(2) {
            assert!(w[0] <= w[1]);
        }
        let gm = linalg::gram(sol.vectors.as_ref(), m);
        let ga = linalg::gram(sol.vectors.as_ref(), a);
        for i in 0..sol.k() {
            for j in 0..sol.k() {
                let delta = if i == j { 1.0 } else { 0.0 };
                assert!((gm[(i, j)] - delta).abs() <= orth_tol, "M-orth ({i},{j}): {}", gm[(i, j)]);
                assert!(
                    (ga[(i, j)] - sol.values[i] * delta).abs() / sol.values[i] <= 1e-8,
                    "A-orth ({i},{j})"
                );
            }
        }
    }

    #[test]
    fn single_dof_pencil() {
        let (a, m) = pencil(2);
        let sol = solve_dense(&a, &m, 1, DEFAULT_DENSE_CAP).unwrap();
        // 4 / (1/8)
        assert!((sol.values[0] - 32.0).abs() < 1e-12);
    }

    #[test]
    fn identity_pencil() {
        let (_, m) = pencil(5);
        let sol = solve_dense(&m, &m, 4, DEFAULT_DENSE_CAP).unwrap();
        for v in &sol.values {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dense_invariants_and_upper_bound() {
        let (a, m) = pencil(8);
        let sol = solve_dense(&a, &m, 6, DEFAULT_DENSE_CAP).unwrap();
        assert_invariants(&sol, &a, &m, 1e-12);
        assert!(sol.residual_norms.iter().all(|&r| r <= 1e-11), "{:?}", sol.residual_norms);
        assert!(sol.values[0] >= 2.0 * PI * PI);
        // the mesh is only symmetric under x <-> y, which splits the (1,2)/(2,1)
        // pair into an even and an odd mode
        assert!(sol.values[2] > sol.values[1] * (1.0 + 1e-6));
        let mesh = build_unit_square_mesh(8).unwrap();
        let dofs = assemble(&mesh).unwrap().dofs;
        for col in [1, 2] {
            let v = sol.vectors.col(col);
            let (mut even, mut odd) = (0.0f64, 0.0f64);
            for d in 0..dofs.n_dofs() {
                let p = mesh.vertices()[dofs.vertex(d)];
                let q = (0..mesh.vertices().len())
                    .find(|&w| {
                        let u = mesh.vertices()[w];
                        (u.x - p.y).abs() < 1e-12 && (u.y - p.x).abs() < 1e-12
                    })
                    .and_then(|w| dofs.dof(w))
                    .unwrap();
                even = even.max((v[d] - v[q]).abs());
                odd = odd.max((v[d] + v[q]).abs());
            }
            assert!(even.min(odd) < 1e-8, "mode {col} neither even nor odd");
        }
    }

    #[test]
    fn dense_cap_enforced() {
        let (a, m) = pencil(8);
        assert!(matches!(solve_dense(&a, &m, 2, 10), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn iterative_matches_dense() {
        for (a, m) in [pencil(16), {
            let asm = assemble(&build_lshape_mesh(8).unwrap()).unwrap();
            (asm.stiffness, asm.mass)
        }] {
            let dense = solve_dense(&a, &m, 8, DEFAULT_DENSE_CAP).unwrap();
            let iter = solve_iterative(&a, &m, 8, &IterativeOptions::default()).unwrap();
            for (d, i) in dense.values.iter().zip(&iter.values) {
                assert!((d - i).abs() / d <= 1e-8, "{d} vs {i}");
            }
            assert_invariants(&iter, &a, &m, 1e-10);
            assert!(iter.residual_norms.iter().all(|&r| r <= DEFAULT_TOL));
        }
    }

    #[test]
    fn iterative_is_deterministic_and_handles_k_zero() {
        let (a, m) = pencil(12);
        let opts = IterativeOptions::default();
        let s1 = solve_iterative(&a, &m, 5, &opts).unwrap();
        let s2 = solve_iterative(&a, &m, 5, &opts).unwrap();
        for (x, y) in s1.values.iter().zip(&s2.values) {
            assert!((x - y).abs() <= 1e-12 * x);
        }
        assert_eq!(solve_iterative(&a, &m, 0, &opts).unwrap().k(), 0);
        assert_eq!(solve_dense(&a, &m, 0, DEFAULT_DENSE_CAP).unwrap().k(), 0);
    }

    #[test]
    fn shift_above_spectrum_bottom_rejected() {
        let (a, m) = pencil(8);
        let opts = IterativeOptions {
            shift: 60.0,
            ..Default::default()
        };
        assert!(matches!(solve_iterative(&a, &m, 3, &opts), Err(Error::NotPositiveDefinite(_))));
    }

    #[test]
    fn small_pencil_whole_space() {
        // dimension below the block size: the Krylov space saturates
        let (a, m) = pencil(3);
        let dense = solve_dense(&a, &m, 4, DEFAULT_DENSE_CAP).unwrap();
        let iter = solve_iterative(&a, &m, 4, &IterativeOptions::default()).unwrap();
        for (d, i) in dense.values.iter().zip(&iter.values) {
            assert!((d - i).abs() <= 1e-10 * d);
        }
    }

    #[test]
    fn rayleigh_quotient_over_eigenspaces() {
        let (a, m) = pencil(8);
        let sol = solve_dense(&a, &m, 4, DEFAULT_DENSE_CAP).unwrap();
        for i in 1..=4 {
            let rq = rayleigh_quotient_max(sol.basis(i, i).unwrap(), &a, &m).unwrap();
            assert!((rq - sol.values[i - 1]).abs() <= 1e-10 * rq);
        }
        let rq = rayleigh_quotient_max(sol.basis(2, 3).unwrap(), &a, &m).unwrap();
        assert!((rq - sol.values[2]).abs() <= 1e-9 * rq);

        // random combinations inside span{v1, v2}; oracle: the 2x2 projected
        // pencil solved by the quadratic formula
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let c = Mat::from_fn(2, 2, |_, _| rng.gen_range(-1.0..1.0));
            let b = sol.basis(1, 2).unwrap() * &c;
            let ah = linalg::gram(b.as_ref(), &a);
            let mh = linalg::gram(b.as_ref(), &m);
            let qa = mh[(0, 0)] * mh[(1, 1)] - mh[(0, 1)].powi(2);
            let qb = -(ah[(0, 0)] * mh[(1, 1)] + ah[(1, 1)] * mh[(0, 0)] - 2.0 * ah[(0, 1)] * mh[(0, 1)]);
            let qc = ah[(0, 0)] * ah[(1, 1)] - ah[(0, 1)].powi(2);
            let top = (-qb + (qb * qb - 4.0 * qa * qc).max(0.0).sqrt()) / (2.0 * qa);
            let rq = rayleigh_quotient_max(b.as_ref(), &a, &m).unwrap();
            assert!((rq - top).abs() <= 1e-8 * top);
            assert!(rq >= sol.values[0] - 1e-9 && rq <= sol.values[1] + 1e-9);
        }
    }

    #[test]
    fn rank_deficient_basis_rejected() {
        let (a, m) = pencil(6);
        let sol = solve_dense(&a, &m, 1, DEFAULT_DENSE_CAP).unwrap();
        let v = sol.basis(1, 1).unwrap();
        let b = hcat(v, v);
        assert!(matches!(rayleigh_quotient_max(b.as_ref(), &a, &m), Err(Error::RankDeficient(_))));
    }

    #[test]
    fn csv_dump() {
        let (a, m) = pencil(4);
        let sol = solve_dense(&a, &m, 3, DEFAULT_DENSE_CAP).unwrap();
        let csv = sol.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("index,value,residual\n1,"));
    }
}
