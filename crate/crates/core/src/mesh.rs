//! Conforming triangulations of the unit square and the L-shaped domain.
//!
//! Generated meshes are uniform grids of isosceles right triangles whose
//! diagonals all run from the lower-left to the upper-right corner of each
//! grid cell. Vertices are numbered row-major (x fastest, then y).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for the area-sum and boundary checks on generated meshes.
pub const AREA_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub x: f64,
    pub y: f64,
    pub on_boundary: bool,
}

/// Vertex indices of a triangle, counterclockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triangle(pub [usize; 3]);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainTag {
    UnitSquare,
    LShape,
    External,
}

impl DomainTag {
    /// Area of the generating domain, when known.
    pub fn area(self) -> Option<f64> {
        match self {
            DomainTag::UnitSquare => Some(1.0),
            DomainTag::LShape => Some(3.0),
            DomainTag::External => None,
        }
    }

    /// Whether `(x, y)` lies on the analytic boundary of the domain.
    pub fn on_boundary(self, x: f64, y: f64) -> Option<bool> {
        let near = |a: f64, b: f64| (a - b).abs() <= AREA_TOL;
        match self {
            DomainTag::UnitSquare => Some(near(x, 0.0) || near(x, 1.0) || near(y, 0.0) || near(y, 1.0)),
            DomainTag::LShape => Some(
                near(x, -1.0)
                    || near(x, 1.0)
                    || near(y, -1.0)
                    || near(y, 1.0)
                    || (near(x, 0.0) && y <= AREA_TOL)
                    || (near(y, 0.0) && x <= AREA_TOL),
            ),
            DomainTag::External => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mesh {
    vertices: Vec<Vertex>,
    triangles: Vec<Triangle>,
    h: f64,
    domain: DomainTag,
}

fn signed_area(a: &Vertex, b: &Vertex, c: &Vertex) -> f64 {
    0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y))
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Builds a mesh and checks index ranges, orientation and conformity.
    pub fn new(vertices: Vec<Vertex>, triangles: Vec<Triangle>, domain: DomainTag) -> Result<Self> {
        let nv = vertices.len();
        if triangles.is_empty() {
            return Err(Error::InvalidMesh("mesh has no triangles".into()));
        }
        for (t, tri) in triangles.iter().enumerate() {
            let [a, b, c] = tri.0;
            if a >= nv || b >= nv || c >= nv {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} references a vertex out of range (have {nv})"
                )));
            }
            if a == b || b == c || a == c {
                return Err(Error::InvalidMesh(format!("triangle {t} repeats a vertex")));
            }
            let area = signed_area(&vertices[a], &vertices[b], &vertices[c]);
            if !(area > 0.0) {
                return Err(Error::InvalidMesh(format!(
                    "triangle {t} is not counterclockwise (signed area {area:e})"
                )));
            }
        }

        let mut census: HashMap<(usize, usize), u32> = HashMap::new();
        let mut h: f64 = 0.0;
        for tri in &triangles {
            for (a, b) in tri.edges() {
                *census.entry(edge_key(a, b)).or_default() += 1;
                let (p, q) = (&vertices[a], &vertices[b]);
                h = h.max((p.x - q.x).hypot(p.y - q.y));
            }
        }
        for (&(a, b), &count) in &census {
            match count {
                2 => {}
                1 if vertices[a].on_boundary && vertices[b].on_boundary => {}
                1 => {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({a}, {b}) belongs to one triangle but is not on the boundary"
                    )))
                }
                _ => {
                    return Err(Error::InvalidMesh(format!(
                        "edge ({a}, {b}) is shared by {count} triangles"
                    )))
                }
            }
        }

        Ok(Mesh {
            vertices,
            triangles,
            h,
            domain,
        })
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    /// Maximum edge length.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn domain(&self) -> DomainTag {
        self.domain
    }

    /// Largest leg length: the maximum over triangles of the middle edge length.
    /// For right triangles this is the longer leg.
    pub fn h_leg(&self) -> f64 {
        self.triangles
            .iter()
            .map(|tri| {
                let mut e: Vec<f64> = tri
                    .edges()
                    .map(|(a, b)| {
                        let (p, q) = (&self.vertices[a], &self.vertices[b]);
                        (p.x - q.x).hypot(p.y - q.y)
                    })
                    .collect();
                e.sort_by(f64::total_cmp);
                e[1]
            })
            .fold(0.0, f64::max)
    }

    pub fn coords(&self, tri: &Triangle) -> [[f64; 2]; 3] {
        tri.0.map(|i| [self.vertices[i].x, self.vertices[i].y])
    }

    pub fn signed_area(&self, tri: &Triangle) -> f64 {
        let [a, b, c] = tri.0;
        signed_area(&self.vertices[a], &self.vertices[b], &self.vertices[c])
    }

    pub fn total_area(&self) -> f64 {
        self.triangles.iter().map(|t| self.signed_area(t)).sum()
    }

    pub fn interior_vertex_count(&self) -> usize {
        self.vertices.iter().filter(|v| !v.on_boundary).count()
    }

    /// Edges with their incidence counts, in first-encounter order.
    pub fn edge_census(&self) -> Vec<((usize, usize), u32)> {
        let mut order: Vec<((usize, usize), u32)> = Vec::new();
        let mut counts: HashMap<(usize, usize), usize> = HashMap::new();
        for tri in &self.triangles {
            for (a, b) in tri.edges() {
                let key = edge_key(a, b);
                match counts.get(&key) {
                    Some(&slot) => order[slot] = (key, order[slot].1 + 1),
                    None => {
                        counts.insert(key, order.len());
                        order.push((key, 1));
                    }
                }
            }
        }
        order
    }
}

impl Triangle {
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> {
        let [a, b, c] = self.0;
        [(a, b), (b, c), (c, a)].into_iter()
    }
}

/// Uniform `n x n` grid on (0,1)^2, two triangles per cell.
pub fn build_unit_square_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidParameter("subdivision count must be at least 1".into()));
    }
    let side = n + 1;
    let mut vertices = Vec::with_capacity(side * side);
    for j in 0..=n {
        for i in 0..=n {
            vertices.push(Vertex {
                x: i as f64 / n as f64,
                y: j as f64 / n as f64,
                on_boundary: i == 0 || i == n || j == 0 || j == n,
            });
        }
    }
    let idx = |i: usize, j: usize| j * side + i;
    let mut triangles = Vec::with_capacity(2 * n * n);
    for j in 0..n {
        for i in 0..n {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            triangles.push(Triangle([v00, v10, v11]));
            triangles.push(Triangle([v00, v11, v01]));
        }
    }
    Mesh::new(vertices, triangles, DomainTag::UnitSquare)
}

/// Uniform grid with `n` cells per unit length on (-1,1)^2 \ (-1,0]^2.
pub fn build_lshape_mesh(n: usize) -> Result<Mesh> {
    if n == 0 {
        return Err(Error::InvalidParameter("subdivision count must be at least 1".into()));
    }
    let m = 2 * n;
    let removed = |i: usize, j: usize| i < n && j < n;
    let mut index = vec![usize::MAX; (m + 1) * (m + 1)];
    let mut vertices = Vec::new();
    for j in 0..=m {
        for i in 0..=m {
            if removed(i, j) {
                continue;
            }
            index[j * (m + 1) + i] = vertices.len();
            let on_boundary = i == 0 || i == m || j == 0 || j == m || (i == n && j <= n) || (j == n && i <= n);
            vertices.push(Vertex {
                x: -1.0 + i as f64 / n as f64,
                y: -1.0 + j as f64 / n as f64,
                on_boundary,
            });
        }
    }
    let idx = |i: usize, j: usize| index[j * (m + 1) + i];
    let mut triangles = Vec::with_capacity(6 * n * n);
    for j in 0..m {
        for i in 0..m {
            // a cell is removed when its lower-left corner lies in the removed quadrant
            if i < n && j < n {
                continue;
            }
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            triangles.push(Triangle([v00, v10, v11]));
            triangles.push(Triangle([v00, v11, v01]));
        }
    }
    Mesh::new(vertices, triangles, DomainTag::LShape)
}

/// Splits every triangle into four by its edge midpoints.
///
/// Parent vertices keep their indices; midpoints are appended in the order
/// their edges are first met. A midpoint is on the boundary iff its edge is.
pub fn refine_uniform(mesh: &Mesh) -> Result<Mesh> {
    let census = mesh.edge_census();
    let nv = mesh.vertices.len();
    let mut vertices = mesh.vertices.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::with_capacity(census.len());
    for (k, &((a, b), count)) in census.iter().enumerate() {
        let (p, q) = (&mesh.vertices[a], &mesh.vertices[b]);
        vertices.push(Vertex {
            x: 0.5 * (p.x + q.x),
            y: 0.5 * (p.y + q.y),
            on_boundary: count == 1,
        });
        midpoint.insert((a, b), nv + k);
    }
    let mid = |a: usize, b: usize| midpoint[&edge_key(a, b)];
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for tri in &mesh.triangles {
        let [a, b, c] = tri.0;
        let (ab, bc, ca) = (mid(a, b), mid(b, c), mid(c, a));
        triangles.push(Triangle([a, ab, ca]));
        triangles.push(Triangle([ab, b, bc]));
        triangles.push(Triangle([ca, bc, c]));
        triangles.push(Triangle([ab, bc, ca]));
    }
    Mesh::new(vertices, triangles, mesh.domain)
}

/// Plain-text node/element format: `NV NT`, then `x y b` rows, then `i j k` rows.
pub fn write_mesh(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# eigencert mesh ({:?})", mesh.domain);
    let _ = writeln!(out, "{} {}", mesh.vertices.len(), mesh.triangles.len());
    for v in &mesh.vertices {
        let _ = writeln!(out, "{} {} {}", v.x, v.y, u8::from(v.on_boundary));
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "{} {} {}", t.0[0], t.0[1], t.0[2]);
    }
    out
}

pub fn save_mesh(mesh: &Mesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, write_mesh(mesh)).map_err(|e| Error::io(path, e))
}

pub fn load_mesh(path: impl AsRef<Path>) -> Result<Mesh> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_mesh(&text, path)
}

/// Parses the mesh text format; `origin` is only used in error messages.
pub fn parse_mesh(text: &str, origin: &Path) -> Result<Mesh> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate().filter_map(|(k, raw)| {
        let content = raw.split('#').next().unwrap_or("").trim();
        (!content.is_empty()).then_some((k + 1, content))
    });

    let (line, header) = lines.next().ok_or_else(|| err(1, "missing `NV NT` header".into()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 2 {
        return Err(err(line, format!("expected `NV NT`, found `{header}`")));
    }
    let nv: usize = head[0].parse().map_err(|_| err(line, format!("bad vertex count `{}`", head[0])))?;
    let nt: usize = head[1].parse().map_err(|_| err(line, format!("bad triangle count `{}`", head[1])))?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (line, content) = lines.next().ok_or_else(|| err(line, format!("expected {nv} vertex rows")))?;
        let f: Vec<&str> = content.split_whitespace().collect();
        if f.len() != 3 {
            return Err(err(line, format!("expected `x y b`, found `{content}`")));
        }
        let x: f64 = f[0].parse().map_err(|_| err(line, format!("bad coordinate `{}`", f[0])))?;
        let y: f64 = f[1].parse().map_err(|_| err(line, format!("bad coordinate `{}`", f[1])))?;
        let on_boundary = match f[2] {
            "0" => false,
            "1" => true,
            other => return Err(err(line, format!("boundary flag must be 0 or 1, found `{other}`"))),
        };
        vertices.push(Vertex { x, y, on_boundary });
    }
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (line, content) = lines.next().ok_or_else(|| err(line, format!("expected {nt} triangle rows")))?;
        let f: Vec<&str> = content.split_whitespace().collect();
        if f.len() != 3 {
            return Err(err(line, format!("expected `i j k`, found `{content}`")));
        }
        let mut tri = [0usize; 3];
        for (slot, s) in tri.iter_mut().zip(&f) {
            *slot = s.parse().map_err(|_| err(line, format!("bad vertex index `{s}`")))?;
            if *slot >= nv {
                return Err(err(line, format!("vertex index {} out of range (NV = {nv})", *slot)));
            }
        }
        triangles.push(Triangle(tri));
    }
    if let Some((line, extra)) = lines.next() {
        return Err(err(line, format!("unexpected trailing content `{extra}`")));
    }
    Mesh::new(vertices, triangles, DomainTag::External)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sorted_triangles(mesh: &Mesh) -> Vec<[(i64, i64); 3]> {
        // coordinates on a 1/1024 lattice, so rounding is exact
        let key = |v: &Vertex| ((v.x * 1024.0).round() as i64, (v.y * 1024.0).round() as i64);
        let mut out: Vec<[(i64, i64); 3]> = mesh
            .triangles()
            .iter()
            .map(|t| {
                let mut k = t.0.map(|i| key(&mesh.vertices()[i]));
                k.sort();
                k
            })
            .collect();
        out.sort();
        out
    }

    #[test]
    fn unit_square_counts() {
        let m = build_unit_square_mesh(4).unwrap();
        assert_eq!(m.vertices().len(), 25);
        assert_eq!(m.triangles().len(), 32);
        assert!((m.total_area() - 1.0).abs() < AREA_TOL);
        assert!((m.h() - 2f64.sqrt() / 4.0).abs() < 1e-15);
        assert!((m.h_leg() - 0.25).abs() < 1e-15);

        let m = build_unit_square_mesh(1).unwrap();
        assert_eq!((m.vertices().len(), m.triangles().len()), (4, 2));
        assert_eq!(m.interior_vertex_count(), 0);
    }

    #[test]
    fn zero_subdivisions_rejected() {
        assert!(matches!(build_unit_square_mesh(0), Err(Error::InvalidParameter(_))));
        assert!(matches!(build_lshape_mesh(0), Err(Error::InvalidParameter(_))));
    }

    #[test]
    fn lshape_coarsest() {
        let m = build_lshape_mesh(1).unwrap();
        assert_eq!(m.vertices().len(), 8);
        assert_eq!(m.triangles().len(), 6);
        assert!(m.vertices().iter().all(|v| v.on_boundary));
        assert!((m.total_area() - 3.0).abs() < AREA_TOL);
        // reentrant corner is a vertex
        assert!(m.vertices().iter().any(|v| v.x == 0.0 && v.y == 0.0));
    }

    #[test]
    fn lshape_counts_match_grid_enumeration() {
        // oracle: enumerate the nodes of the three unit squares and drop duplicates
        for n in 1..=5usize {
            let mut nodes = std::collections::BTreeSet::new();
            for (ox, oy) in [(0i64, -1i64), (0, 0), (-1, 0)] {
                for j in 0..=n as i64 {
                    for i in 0..=n as i64 {
                        nodes.insert((ox * n as i64 + i, oy * n as i64 + j));
                    }
                }
            }
            let m = build_lshape_mesh(n).unwrap();
            assert_eq!(m.vertices().len(), nodes.len(), "n = {n}");
            assert_eq!(m.triangles().len(), 3 * 2 * n * n);
            assert!((m.total_area() - 3.0).abs() < AREA_TOL);
        }
        let m = build_lshape_mesh(2).unwrap();
        assert_eq!((m.vertices().len(), m.triangles().len()), (21, 24));
    }

    #[test]
    fn boundary_flags_match_domain() {
        for mesh in [build_unit_square_mesh(6).unwrap(), build_lshape_mesh(3).unwrap()] {
            for v in mesh.vertices() {
                assert_eq!(Some(v.on_boundary), mesh.domain().on_boundary(v.x, v.y), "{v:?}");
            }
        }
    }

    #[test]
    fn refinement_of_square_matches_direct_construction() {
        let coarse = build_unit_square_mesh(2).unwrap();
        let fine = refine_uniform(&coarse).unwrap();
        let direct = build_unit_square_mesh(4).unwrap();
        assert_eq!(fine.triangles().len(), 4 * coarse.triangles().len());
        assert!((fine.h() - coarse.h() / 2.0).abs() < 1e-14);
        assert_eq!(sorted_triangles(&fine), sorted_triangles(&direct));
        assert_eq!(fine.interior_vertex_count(), direct.interior_vertex_count());
        // parent vertices keep their indices
        assert_eq!(&fine.vertices()[..coarse.vertices().len()], coarse.vertices());
    }

    #[test]
    fn refinement_preserves_area_and_boundary() {
        let coarse = build_lshape_mesh(1).unwrap();
        let fine = refine_uniform(&refine_uniform(&coarse).unwrap()).unwrap();
        assert!((fine.total_area() - coarse.total_area()).abs() < AREA_TOL);
        let direct = build_lshape_mesh(4).unwrap();
        assert_eq!(sorted_triangles(&fine), sorted_triangles(&direct));
        for v in fine.vertices() {
            assert_eq!(Some(v.on_boundary), DomainTag::LShape.on_boundary(v.x, v.y));
        }
    }

    #[test]
    fn round_trip_through_text() {
        let mesh = build_lshape_mesh(3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("l.mesh");
        save_mesh(&mesh, &path).unwrap();
        let back = load_mesh(&path).unwrap();
        assert_eq!(back.vertices(), mesh.vertices());
        assert_eq!(back.triangles(), mesh.triangles());
        assert_eq!(back.h(), mesh.h());
        assert_eq!(back.domain(), DomainTag::External);
    }

    #[test]
    fn hand_written_two_triangle_square() {
        let text = "# unit square, one diagonal\n4 2\n0 0 1\n1 0 1\n0 1 1\n1 1 1\n0 1 3\n0 3 2\n";
        let mesh = parse_mesh(text, Path::new("hand.mesh")).unwrap();
        assert_eq!(mesh.vertices().len(), 4);
        assert!((mesh.h() - 2f64.sqrt()).abs() < 1e-15);
        assert!((mesh.total_area() - 1.0).abs() < AREA_TOL);
    }

    #[test]
    fn missing_vertex_reported_with_line() {
        let text = "4 2\n0 0 1\n1 0 1\n0 1 1\n1 1 1\n0 1 3\n0 3 7\n";
        match parse_mesh(text, Path::new("bad.mesh")) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn nonconforming_mesh_rejected() {
        // a missing triangle leaves an interior edge with a single neighbor
        let text = "5 3\n0 0 1\n1 0 1\n0 1 1\n1 1 1\n0.5 0.5 0\n0 1 4\n1 3 4\n0 4 2\n";
        assert!(matches!(parse_mesh(text, Path::new("x")), Err(Error::InvalidMesh(_))));
        // clockwise triangle
        let text = "3 1\n0 0 1\n0 1 1\n1 0 1\n0 1 2\n";
        assert!(matches!(parse_mesh(text, Path::new("x")), Err(Error::InvalidMesh(_))));
    }
}
