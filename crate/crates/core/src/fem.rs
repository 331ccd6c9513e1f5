//! P1 conforming stiffness and mass matrices with Dirichlet conditions
//! imposed by eliminating boundary vertices.

use std::io::{self, Write};

use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatRef};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::mesh::Mesh;

/// Relative area below which an element is treated as degenerate.
const DEGENERATE_REL_AREA: f64 = 1e-14;

pub type LocalMatrix = [[f64; 3]; 3];

/// Twice the signed area plus the barycentric gradient numerators.
fn element_geometry(c: &[[f64; 2]; 3]) -> Result<(f64, [f64; 3], [f64; 3])> {
    let area2 = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
    let scale = (0..3)
        .map(|i| {
            let j = (i + 1) % 3;
            (c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)
        })
        .fold(0.0, f64::max);
    if !(area2.abs() > DEGENERATE_REL_AREA * scale) {
        return Err(Error::SingularElement { area: 0.5 * area2 });
    }
    let mut b = [0.0; 3];
    let mut g = [0.0; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        b[i] = c[j][1] - c[k][1];
        g[i] = c[k][0] - c[j][0];
    }
    Ok((area2, b, g))
}

/// Gradients of the three barycentric coordinates (constant on the element).
pub fn barycentric_gradients(coords: &[[f64; 2]; 3]) -> Result<[[f64; 2]; 3]> {
    let (area2, b, g) = element_geometry(coords)?;
    Ok([0, 1, 2].map(|i| [b[i] / area2, g[i] / area2]))
}

pub fn local_stiffness(coords: &[[f64; 2]; 3]) -> Result<LocalMatrix> {
    let (area2, b, g) = element_geometry(coords)?;
    let denom = 2.0 * area2.abs();
    let mut k = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in i..3 {
            let v = (b[i] * b[j] + g[i] * g[j]) / denom;
            k[i][j] = v;
            k[j][i] = v;
        }
    }
    Ok(k)
}

pub fn local_mass(coords: &[[f64; 2]; 3]) -> Result<LocalMatrix> {
    let (area2, _, _) = element_geometry(coords)?;
    let s = area2.abs() / 24.0;
    let mut m = [[s; 3]; 3];
    for (i, row) in m.iter_mut().enumerate() {
        row[i] = 2.0 * s;
    }
    Ok(m)
}

/// Numbering of the interior vertices, which carry the degrees of freedom.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DofMap {
    vertex_to_dof: Vec<Option<usize>>,
    dof_to_vertex: Vec<usize>,
}

impl DofMap {
    pub fn new(mesh: &Mesh) -> Self {
        let mut vertex_to_dof = Vec::with_capacity(mesh.vertices().len());
        let mut dof_to_vertex = Vec::new();
        for (i, v) in mesh.vertices().iter().enumerate() {
            if v.on_boundary {
                vertex_to_dof.push(None);
            } else {
                vertex_to_dof.push(Some(dof_to_vertex.len()));
                dof_to_vertex.push(i);
            }
        }
        DofMap {
            vertex_to_dof,
            dof_to_vertex,
        }
    }

    pub fn n_dofs(&self) -> usize {
        self.dof_to_vertex.len()
    }

    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.vertex_to_dof[vertex]
    }

    pub fn vertex(&self, dof: usize) -> usize {
        self.dof_to_vertex[dof]
    }

    /// Nodal values on all vertices (zero on the boundary) of a dof vector.
    pub fn expand(&self, coeffs: &[f64]) -> Vec<f64> {
        self.vertex_to_dof
            .iter()
            .map(|d| d.map_or(0.0, |d| coeffs[d]))
            .collect()
    }
}

/// Symmetric sparse matrix in compressed-row storage holding both triangles.
#[derive(Debug, Clone, PartialEq)]
pub struct SymSparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SymSparseMatrix {
    /// Sparsity pattern from per-row neighbor lists (each sorted, with the diagonal).
    fn from_pattern(rows: Vec<Vec<usize>>) -> Self {
        let dim = rows.len();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for r in rows {
            col_idx.extend(r);
            row_ptr.push(col_idx.len());
        }
        let values = vec![0.0; col_idx.len()];
        SymSparseMatrix {
            dim,
            row_ptr,
            col_idx,
            values,
        }
    }

    /// Builds a matrix from a dense symmetric one (tests and toy problems).
    pub fn from_dense(dense: MatRef<'_, f64>) -> Result<Self> {
        let dim = dense.nrows();
        if dense.ncols() != dim {
            return Err(Error::InvalidParameter("matrix must be square".into()));
        }
        let mut rows = Vec::with_capacity(dim);
        for i in 0..dim {
            let mut r = Vec::new();
            for j in 0..dim {
                if dense[(i, j)] != dense[(j, i)] {
                    return Err(Error::InvalidParameter(format!("matrix is not symmetric at ({i}, {j})")));
                }
                if dense[(i, j)] != 0.0 || i == j {
                    r.push(j);
                }
            }
            rows.push(r);
        }
        let mut m = Self::from_pattern(rows);
        for i in 0..dim {
            for p in m.row_ptr[i]..m.row_ptr[i + 1] {
                m.values[p] = dense[(i, m.col_idx[p])];
            }
        }
        Ok(m)
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let cols = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        cols.binary_search(&j).ok().map(|k| self.row_ptr[i] + k)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let p = self.slot(i, j).expect("entry outside the assembled pattern");
        self.values[p] += v;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |p| self.values[p])
    }

    /// Column indices and values of row `i`.
    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = self.row(i).map(|(j, v)| v * x[j]).sum();
        }
    }

    /// `self * x` for a block of column vectors.
    pub fn mul_mat(&self, x: MatRef<'_, f64>) -> Mat<f64> {
        assert_eq!(x.nrows(), self.dim);
        let mut y = Mat::zeros(self.dim, x.ncols());
        for c in 0..x.ncols() {
            let col = x.col(c);
            for i in 0..self.dim {
                y[(i, c)] = self.row(i).map(|(j, v)| v * col[j]).sum();
            }
        }
        y
    }

    /// `x^T self x`.
    pub fn quadratic_form(&self, x: &[f64]) -> f64 {
        (0..self.dim)
            .map(|i| x[i] * self.row(i).map(|(j, v)| v * x[j]).sum::<f64>())
            .sum()
    }

    pub fn to_dense(&self) -> Mat<f64> {
        let mut d = Mat::zeros(self.dim, self.dim);
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                d[(i, j)] = v;
            }
        }
        d
    }

    /// Lower triangle of `self - shift * other` as a faer column matrix.
    pub(crate) fn shifted_lower(&self, shift: f64, other: &SymSparseMatrix) -> Result<SparseColMat<usize, f64>> {
        let mut triplets = Vec::with_capacity(self.nnz() / 2 + self.dim);
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                if j <= i {
                    triplets.push(Triplet::new(i, j, v));
                }
            }
            if shift != 0.0 {
                for (j, v) in other.row(i) {
                    if j <= i {
                        triplets.push(Triplet::new(i, j, -shift * v));
                    }
                }
            }
        }
        SparseColMat::try_new_from_triplets(self.dim, self.dim, &triplets)
            .map_err(|e| Error::LinearAlgebra(format!("sparse matrix construction failed: {e:?}")))
    }

    /// Coordinate text dump: one `row col value` triplet per line, 0-based.
    pub fn write_coordinate<W: Write>(&self, mut out: W) -> io::Result<()> {
        for i in 0..self.dim {
            for (j, v) in self.row(i) {
                writeln!(out, "{i} {j} {v:e}")?;
            }
        }
        Ok(())
    }
}

/// Stiffness `A`, mass `M` and the dof numbering of one mesh.
#[derive(Debug, Clone)]
pub struct Assembly {
    pub stiffness: SymSparseMatrix,
    pub mass: SymSparseMatrix,
    pub dofs: DofMap,
}

pub fn assemble(mesh: &Mesh) -> Result<Assembly> {
    let dofs = DofMap::new(mesh);
    let n = dofs.n_dofs();
    if n == 0 {
        return Err(Error::EmptyProblem);
    }

    let mut rows: Vec<Vec<usize>> = (0..n).map(|d| vec![d]).collect();
    for tri in mesh.triangles() {
        let local: Vec<usize> = tri.0.iter().filter_map(|&v| dofs.dof(v)).collect();
        for &a in &local {
            rows[a].extend(local.iter().copied());
        }
    }
    for r in &mut rows {
        r.sort_unstable();
        r.dedup();
    }
    let mut stiffness = SymSparseMatrix::from_pattern(rows);
    let mut mass = stiffness.clone();

    for tri in mesh.triangles() {
        let coords = mesh.coords(tri);
        let k = local_stiffness(&coords)?;
        let m = local_mass(&coords)?;
        let local = tri.0.map(|v| dofs.dof(v));
        for a in 0..3 {
            let Some(i) = local[a] else { continue };
            for b in 0..3 {
                let Some(j) = local[b] else { continue };
                stiffness.add(i, j, k[a][b]);
                mass.add(i, j, m[a][b]);
            }
        }
    }
    Ok(Assembly { stiffness, mass, dofs })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_unit_square_mesh;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const REF: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

    /// Exact integrals over the reference triangle with the basis 1-x-y, x, y:
    /// gradients (-1,-1), (1,0), (0,1) and area 1/2.
    #[test]
    fn reference_element_matrices() {
        let grads = [[-1.0, -1.0], [1.0, 0.0], [0.0, 1.0]];
        let k = local_stiffness(&REF).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let oracle = 0.5 * (grads[i][0] * grads[j][0] + grads[i][1] * grads[j][1]);
                assert_eq!(k[i][j], oracle);
            }
        }
        // integral of x^a y^b over the reference triangle is a! b! / (a+b+2)!
        let m = local_mass(&REF).unwrap();
        assert!((m[0][0] - 2.0 / 24.0).abs() < 1e-16);
        assert!((m[1][2] - 1.0 / 24.0).abs() < 1e-16);
        assert!((m[1][1] - 2.0 / 24.0).abs() < 1e-16);
    }

    #[test]
    fn element_invariants_random_triangles() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let c: [[f64; 2]; 3] = std::array::from_fn(|_| [rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
            let Ok(k) = local_stiffness(&c) else { continue };
            let m = local_mass(&c).unwrap();
            let area = 0.5 * ((c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1])).abs();
            let scale = k.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
            for i in 0..3 {
                assert!(k[i].iter().sum::<f64>().abs() <= 1e-14 * scale.max(1.0));
                for j in 0..3 {
                    assert_eq!(k[i][j], k[j][i]);
                }
            }
            let total: f64 = m.iter().flatten().sum();
            assert!((total - area).abs() <= 1e-14 * area.max(1.0));

            let s = rng.gen_range(0.1..10.0);
            let cs = c.map(|p| [s * p[0], s * p[1]]);
            let ks = local_stiffness(&cs).unwrap();
            let ms = local_mass(&cs).unwrap();
            for i in 0..3 {
                for j in 0..3 {
                    assert!((ks[i][j] - k[i][j]).abs() <= 1e-10 * scale.max(1.0));
                    assert!((ms[i][j] - s * s * m[i][j]).abs() <= 1e-12 * (s * s * area).max(1.0));
                }
            }
        }
    }

    #[test]
    fn degenerate_element_rejected() {
        let flat = [[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!(matches!(local_stiffness(&flat), Err(Error::SingularElement { .. })));
        assert!(matches!(local_mass(&flat), Err(Error::SingularElement { .. })));
    }

    #[test]
    fn single_interior_vertex() {
        // n = 2: the center vertex touches six triangles of leg 1/2
        let a = assemble(&build_unit_square_mesh(2).unwrap()).unwrap();
        assert_eq!(a.dofs.n_dofs(), 1);
        assert!((a.stiffness.get(0, 0) - 4.0).abs() < 1e-15);
        assert!((a.mass.get(0, 0) - 0.125).abs() < 1e-15);
    }

    #[test]
    fn empty_problem() {
        assert!(matches!(assemble(&build_unit_square_mesh(1).unwrap()), Err(Error::EmptyProblem)));
    }

    /// Independent dense assembly: loop over triangles, scatter into a full
    /// vertex matrix, then strike out boundary rows and columns.
    fn dense_oracle(mesh: &Mesh) -> (Mat<f64>, Mat<f64>) {
        let nv = mesh.vertices().len();
        let mut kf = Mat::<f64>::zeros(nv, nv);
        let mut mf = Mat::<f64>::zeros(nv, nv);
        for t in mesh.triangles() {
            let c = mesh.coords(t);
            let area = 0.5 * ((c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]));
            // gradient of the barycentric coordinate at vertex i: rotate the opposite edge
            let grad = |i: usize| {
                let (j, k) = ((i + 1) % 3, (i + 2) % 3);
                [(c[j][1] - c[k][1]) / (2.0 * area), (c[k][0] - c[j][0]) / (2.0 * area)]
            };
            for a in 0..3 {
                for b in 0..3 {
                    let (ga, gb) = (grad(a), grad(b));
                    kf[(t.0[a], t.0[b])] += area * (ga[0] * gb[0] + ga[1] * gb[1]);
                    mf[(t.0[a], t.0[b])] += area * if a == b { 1.0 / 6.0 } else { 1.0 / 12.0 };
                }
            }
        }
        let interior: Vec<usize> = (0..nv).filter(|&i| !mesh.vertices()[i].on_boundary).collect();
        let n = interior.len();
        let k = Mat::from_fn(n, n, |i, j| kf[(interior[i], interior[j])]);
        let m = Mat::from_fn(n, n, |i, j| mf[(interior[i], interior[j])]);
        (k, m)
    }

    #[test]
    fn matches_dense_oracle_and_is_symmetric() {
        let mesh = build_unit_square_mesh(4).unwrap();
        let a = assemble(&mesh).unwrap();
        let (k, m) = dense_oracle(&mesh);
        let (kd, md) = (a.stiffness.to_dense(), a.mass.to_dense());
        for i in 0..k.nrows() {
            for j in 0..k.ncols() {
                assert!((kd[(i, j)] - k[(i, j)]).abs() <= 1e-13);
                assert!((md[(i, j)] - m[(i, j)]).abs() <= 1e-13);
                assert_eq!(kd[(i, j)], kd[(j, i)]);
                assert_eq!(md[(i, j)], md[(j, i)]);
            }
        }
    }

    #[test]
    fn five_point_stencil_on_uniform_square() {
        let mesh = build_unit_square_mesh(6).unwrap();
        let a = assemble(&mesh).unwrap();
        // interior vertex (3,3) and its grid neighbors
        let v = |i: usize, j: usize| a.dofs.dof(j * 7 + i).unwrap();
        let c = v(3, 3);
        assert!((a.stiffness.get(c, c) - 4.0).abs() < 1e-14);
        for nb in [v(2, 3), v(4, 3), v(3, 2), v(3, 4)] {
            assert!((a.stiffness.get(c, nb) + 1.0).abs() < 1e-14);
        }
        // diagonal neighbors share an edge but carry zero stiffness
        assert!(a.stiffness.get(c, v(4, 4)).abs() < 1e-14);
        assert!(a.stiffness.get(c, v(2, 2)).abs() < 1e-14);
        assert_eq!(a.stiffness.row(c).count(), 7);
    }

    #[test]
    fn mass_positive_on_random_vectors() {
        let a = assemble(&build_unit_square_mesh(5).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10 {
            let x: Vec<f64> = (0..a.dofs.n_dofs()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            assert!(a.mass.quadratic_form(&x) > 0.0);
            assert!(a.stiffness.quadratic_form(&x) > 0.0);
        }
    }

    #[test]
    fn energy_of_bubble_interpolant() {
        // u = x(1-x)y(1-y) has Dirichlet energy 1/45; the interpolant's energy
        // converges to it at O(h^2)
        let exact = 1.0 / 45.0;
        let mut prev_err = f64::INFINITY;
        for n in [8, 16, 32] {
            let mesh = build_unit_square_mesh(n).unwrap();
            let a = assemble(&mesh).unwrap();
            let x: Vec<f64> = (0..a.dofs.n_dofs())
                .map(|d| {
                    let v = mesh.vertices()[a.dofs.vertex(d)];
                    v.x * (1.0 - v.x) * v.y * (1.0 - v.y)
                })
                .collect();
            let err = (a.stiffness.quadratic_form(&x) - exact).abs();
            assert!(err < 0.5 / (n * n) as f64, "n = {n}: {err}");
            assert!(err < prev_err);
            prev_err = err;
        }
    }

    #[test]
    fn coordinate_dump() {
        let a = assemble(&build_unit_square_mesh(3).unwrap()).unwrap();
        let mut buf = Vec::new();
        a.stiffness.write_coordinate(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), a.stiffness.nnz());
        let first: Vec<&str> = text.lines().next().unwrap().split_whitespace().collect();
        assert_eq!((first[0], first[1]), ("0", "0"));
        assert_eq!(first[2].parse::<f64>().unwrap(), a.stiffness.get(0, 0));
    }
}
