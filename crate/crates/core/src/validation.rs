//! True directed distances against the analytic unit-square eigenfunctions,
//! and a nested fine-mesh proxy where no closed form exists.
//!
//! None of this is part of the certified chain; it is the yardstick the
//! certified bounds are checked against.

use std::f64::consts::PI;

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::cluster::ClusterSpec;
use crate::eigensolve::EigenSolution;
use crate::enclosures::unit_square_modes;
use crate::error::{Error, Result};
use crate::fem::{barycentric_gradients, Assembly, DofMap, SymSparseMatrix};
use crate::linalg;
use crate::mesh::Mesh;
use crate::quadrature::QuadratureRule;

/// Lowest quadrature degree accepted for sine-times-P1 integrands.
pub const MIN_QUADRATURE_DEGREE: usize = 10;

/// Largest admissible singular value of a cross-Gram of orthonormal bases.
const GRAM_SLACK: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Norm {
    L2,
    Energy,
}

/// `2 sin(i pi x) sin(j pi y)`, unit in L2 on the unit square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticEigenfunction {
    pub i: usize,
    pub j: usize,
    pub eigenvalue: f64,
}

impl AnalyticEigenfunction {
    pub fn new(i: usize, j: usize) -> Self {
        AnalyticEigenfunction {
            i,
            j,
            eigenvalue: ((i * i + j * j) as f64) * PI * PI,
        }
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        2.0 * (self.i as f64 * PI * x).sin() * (self.j as f64 * PI * y).sin()
    }

    pub fn gradient(&self, x: f64, y: f64) -> [f64; 2] {
        let (a, b) = (self.i as f64 * PI, self.j as f64 * PI);
        [
            2.0 * a * (a * x).cos() * (b * y).sin(),
            2.0 * b * (a * x).sin() * (b * y).cos(),
        ]
    }
}

/// Analytic eigenfunctions belonging to the 1-based index range of `cluster`.
pub fn square_cluster_functions(cluster: &ClusterSpec) -> Vec<AnalyticEigenfunction> {
    unit_square_modes(cluster.last)[cluster.first - 1..]
        .iter()
        .map(|&(i, j, _)| AnalyticEigenfunction::new(i, j))
        .collect()
}

/// `G[p][q]` = inner product of analytic function `p` with the discrete
/// function whose interior coefficients are column `q` of `basis`.
pub fn cross_gram(
    analytic: &[AnalyticEigenfunction],
    basis: MatRef<'_, f64>,
    mesh: &Mesh,
    dofs: &DofMap,
    rule: &QuadratureRule,
    inner: Norm,
) -> Result<Mat<f64>> {
    if rule.degree < MIN_QUADRATURE_DEGREE {
        return Err(Error::QuadratureTooCoarse {
            degree: rule.degree,
            required: MIN_QUADRATURE_DEGREE,
        });
    }
    if basis.nrows() != dofs.n_dofs() {
        return Err(Error::InvalidParameter(format!(
            "basis has {} rows for {} dofs",
            basis.nrows(),
            dofs.n_dofs()
        )));
    }
    let (np, nq) = (analytic.len(), basis.ncols());
    let mut g = Mat::<f64>::zeros(np, nq);
    for tri in mesh.triangles() {
        let c = mesh.coords(tri);
        let local: [Option<usize>; 3] = tri.0.map(|v| dofs.dof(v));
        if local.iter().all(Option::is_none) {
            continue;
        }
        let jac = mesh.signed_area(tri) * 2.0;
        let coeff = |k: usize, q: usize| local[k].map_or(0.0, |d| basis[(d, q)]);
        match inner {
            Norm::L2 => {
                for (pt, w) in rule.points.iter().zip(&rule.weights) {
                    let bary = [1.0 - pt[0] - pt[1], pt[0], pt[1]];
                    let x = bary[0] * c[0][0] + bary[1] * c[1][0] + bary[2] * c[2][0];
                    let y = bary[0] * c[0][1] + bary[1] * c[1][1] + bary[2] * c[2][1];
                    for (p, f) in analytic.iter().enumerate() {
                        let fw = f.value(x, y) * w * jac;
                        for q in 0..nq {
                            let phi: f64 = (0..3).map(|k| bary[k] * coeff(k, q)).sum();
                            g[(p, q)] += fw * phi;
                        }
                    }
                }
            }
            Norm::Energy => {
                let grads = barycentric_gradients(&c)?;
                for q in 0..nq {
                    let mut gp = [0.0; 2];
                    for k in 0..3 {
                        let a = coeff(k, q);
                        gp[0] += a * grads[k][0];
                        gp[1] += a * grads[k][1];
                    }
                    for (p, f) in analytic.iter().enumerate() {
                        let s = rule.integrate(|u, v| {
                            let x = c[0][0] + u * (c[1][0] - c[0][0]) + v * (c[2][0] - c[0][0]);
                            let y = c[0][1] + u * (c[1][1] - c[0][1]) + v * (c[2][1] - c[0][1]);
                            let du = f.gradient(x, y);
                            du[0] * gp[0] + du[1] * gp[1]
                        });
                        g[(p, q)] += s * jac;
                    }
                }
            }
        }
    }
    Ok(g)
}

/// `sqrt(1 - sigma_min^2)` of a cross-Gram between orthonormal bases of
/// equal dimension.
pub fn distance_from_gram(g: MatRef<'_, f64>) -> Result<f64> {
    if g.nrows() != g.ncols() || g.nrows() == 0 {
        return Err(Error::InvalidParameter(format!(
            "directed distance needs equal nonzero dimensions, got {}x{}",
            g.nrows(),
            g.ncols()
        )));
    }
    let s = linalg::singular_values(g)?;
    if s[0] > 1.0 + GRAM_SLACK {
        return Err(Error::GramInconsistency { sigma: s[0] });
    }
    let smin = *s.last().expect("nonempty");
    Ok((1.0 - smin * smin).max(0.0).sqrt())
}

fn orthonormal_in(norm: Norm, basis: MatRef<'_, f64>, asm: &Assembly) -> Result<Mat<f64>> {
    match norm {
        Norm::L2 => linalg::orthonormalize(basis, &asm.mass),
        Norm::Energy => linalg::orthonormalize(basis, &asm.stiffness),
    }
}

/// Directed distance from the span of `analytic` to the span of `basis`.
pub fn true_delta(
    analytic: &[AnalyticEigenfunction],
    basis: MatRef<'_, f64>,
    mesh: &Mesh,
    asm: &Assembly,
    rule: &QuadratureRule,
    norm: Norm,
) -> Result<f64> {
    let q = orthonormal_in(norm, basis, asm)?;
    let mut g = cross_gram(analytic, q.as_ref(), mesh, &asm.dofs, rule, norm)?;
    if norm == Norm::Energy {
        // |grad u|^2 = lambda for unit-L2 eigenfunctions
        for (p, f) in analytic.iter().enumerate() {
            let s = 1.0 / f.eigenvalue.sqrt();
            for c in 0..g.ncols() {
                g[(p, c)] *= s;
            }
        }
    }
    distance_from_gram(g.as_ref())
}

/// Uniform-grid bucket index over the triangles of a mesh.
struct Locator<'a> {
    mesh: &'a Mesh,
    origin: [f64; 2],
    cell: f64,
    dims: [usize; 2],
    buckets: Vec<Vec<usize>>,
}

impl<'a> Locator<'a> {
    fn new(mesh: &'a Mesh) -> Self {
        let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
        for v in mesh.vertices() {
            lo = [lo[0].min(v.x), lo[1].min(v.y)];
            hi = [hi[0].max(v.x), hi[1].max(v.y)];
        }
        let cell = mesh.h().max(1e-12);
        let dims = [
            ((hi[0] - lo[0]) / cell).ceil() as usize + 1,
            ((hi[1] - lo[1]) / cell).ceil() as usize + 1,
        ];
        let mut buckets = vec![Vec::new(); dims[0] * dims[1]];
        let mut loc = Locator {
            mesh,
            origin: lo,
            cell,
            dims,
            buckets: Vec::new(),
        };
        for (t, tri) in mesh.triangles().iter().enumerate() {
            let c = mesh.coords(tri);
            let (x0, x1) = (c.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min), c.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max));
            let (y0, y1) = (c.iter().map(|p| p[1]).fold(f64::INFINITY, f64::min), c.iter().map(|p| p[1]).fold(f64::NEG_INFINITY, f64::max));
            let (i0, j0) = loc.cell_of(x0, y0);
            let (i1, j1) = loc.cell_of(x1, y1);
            for j in j0..=j1 {
                for i in i0..=i1 {
                    buckets[j * dims[0] + i].push(t);
                }
            }
        }
        loc.buckets = buckets;
        loc
    }

    fn cell_of(&self, x: f64, y: f64) -> (usize, usize) {
        let f = |v: f64, o: f64, d: usize| (((v - o) / self.cell).floor().max(0.0) as usize).min(d - 1);
        (f(x, self.origin[0], self.dims[0]), f(y, self.origin[1], self.dims[1]))
    }

    /// Containing triangle and barycentric coordinates of `(x, y)`.
    fn locate(&self, x: f64, y: f64) -> Option<(usize, [f64; 3])> {
        let (i, j) = self.cell_of(x, y);
        self.buckets[j * self.dims[0] + i].iter().find_map(|&t| {
            let b = barycentric(&self.mesh.coords(&self.mesh.triangles()[t]), x, y);
            b.iter().all(|&l| l >= -1e-10).then_some((t, b))
        })
    }
}

fn barycentric(c: &[[f64; 2]; 3], x: f64, y: f64) -> [f64; 3] {
    let det = (c[1][0] - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (c[1][1] - c[0][1]);
    let l1 = ((x - c[0][0]) * (c[2][1] - c[0][1]) - (c[2][0] - c[0][0]) * (y - c[0][1])) / det;
    let l2 = ((c[1][0] - c[0][0]) * (y - c[0][1]) - (x - c[0][0]) * (c[1][1] - c[0][1])) / det;
    [1.0 - l1 - l2, l1, l2]
}

/// Interpolates coarse P1 functions (columns of `coarse`, over coarse
/// interior dofs) onto the fine mesh, which must be nested in the coarse one.
pub fn prolongate(
    coarse_mesh: &Mesh,
    coarse_dofs: &DofMap,
    coarse: MatRef<'_, f64>,
    fine_mesh: &Mesh,
    fine_dofs: &DofMap,
) -> Result<Mat<f64>> {
    let loc = Locator::new(coarse_mesh);
    // every fine element must sit inside one coarse element
    for tri in fine_mesh.triangles() {
        let c = fine_mesh.coords(tri);
        let (cx, cy) = ((c[0][0] + c[1][0] + c[2][0]) / 3.0, (c[0][1] + c[1][1] + c[2][1]) / 3.0);
        let (t, _) = loc
            .locate(cx, cy)
            .ok_or_else(|| Error::NotNested(format!("fine element centred at ({cx}, {cy}) lies outside the coarse mesh")))?;
        let parent = coarse_mesh.coords(&coarse_mesh.triangles()[t]);
        for p in &c {
            if barycentric(&parent, p[0], p[1]).iter().any(|&l| l < -1e-10) {
                return Err(Error::NotNested(format!("fine element centred at ({cx}, {cy}) straddles coarse elements")));
            }
        }
    }
    let mut out = Mat::<f64>::zeros(fine_dofs.n_dofs(), coarse.ncols());
    for d in 0..fine_dofs.n_dofs() {
        let v = fine_mesh.vertices()[fine_dofs.vertex(d)];
        let (t, b) = loc
            .locate(v.x, v.y)
            .ok_or_else(|| Error::NotNested(format!("vertex ({}, {}) lies outside the coarse mesh", v.x, v.y)))?;
        let tri = coarse_mesh.triangles()[t];
        for (k, &cv) in tri.0.iter().enumerate() {
            if let Some(cd) = coarse_dofs.dof(cv) {
                for q in 0..coarse.ncols() {
                    out[(d, q)] += b[k] * coarse[(cd, q)];
                }
            }
        }
    }
    Ok(out)
}

fn op(norm: Norm, asm: &Assembly) -> &SymSparseMatrix {
    match norm {
        Norm::L2 => &asm.mass,
        Norm::Energy => &asm.stiffness,
    }
}

/// Directed distance from the fine discrete cluster space to the coarse one,
/// both measured on the fine mesh. A truth proxy, not a guaranteed value.
#[allow(clippy::too_many_arguments)]
pub fn reference_proxy(
    cluster: &ClusterSpec,
    coarse_mesh: &Mesh,
    coarse_asm: &Assembly,
    coarse: &EigenSolution,
    fine_mesh: &Mesh,
    fine_asm: &Assembly,
    fine: &EigenSolution,
    norm: Norm,
) -> Result<f64> {
    if fine_mesh.h() > coarse_mesh.h() / 4.0 * (1.0 + 1e-9) {
        return Err(Error::InvalidParameter(format!(
            "reference mesh h = {} is not at least 4x finer than {}",
            fine_mesh.h(),
            coarse_mesh.h()
        )));
    }
    let cb = coarse.basis(cluster.first, cluster.last)?;
    let fb = fine.basis(cluster.first, cluster.last)?;
    let embedded = prolongate(coarse_mesh, &coarse_asm.dofs, cb, fine_mesh, &fine_asm.dofs)?;
    subspace_distance(fb, embedded.as_ref(), op(norm, fine_asm))
}

/// Directed distance from `span(from)` to `span(to)` in the `op` inner product.
pub fn subspace_distance(from: MatRef<'_, f64>, to: MatRef<'_, f64>, op: &SymSparseMatrix) -> Result<f64> {
    let qf = linalg::orthonormalize(from, op)?;
    let qt = linalg::orthonormalize(to, op)?;
    distance_from_gram(linalg::cross(qf.as_ref(), qt.as_ref(), op).as_ref())
}
