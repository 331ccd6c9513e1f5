//! Two-sided bounds on exact eigenvalues and projection error constants.
//!
//! Upper bounds are the conforming Ritz values. Lower bounds come from
//! `lambda_k >= lambda_{h,k} / (1 + C_h^2 lambda_{h,k})`, or from a
//! precomputed table.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cluster::ClusterSpec;
use crate::eigensolve::EigenSolution;
use crate::error::{Error, Result};

/// Interpolation-based constant for right-triangle meshes on convex domains,
/// per unit of the largest leg length.
pub const CONVEX_RIGHT_TRIANGLE_FACTOR: f64 = 0.493;

/// Projection constants of the L-shaped domain, keyed by leg length.
pub const LSHAPE_CH_TABLE: [(f64, f64); 4] = [
    (1.0 / 32.0, 0.0359),
    (1.0 / 64.0, 0.0218),
    (1.0 / 128.0, 0.0134),
    (1.0 / 256.0, 0.00832),
];

/// Certified enclosures of the five leading L-shape eigenvalues.
pub const LSHAPE_ENCLOSURES: [(f64, f64); 5] = [
    (9.63971, 9.63973),
    (15.19725, 15.19726),
    (19.73920, 19.73921),
    (29.52147, 29.52149),
    (31.91262, 31.91264),
];

/// Bundled text copy of [`LSHAPE_ENCLOSURES`].
pub const LSHAPE_ENCLOSURE_FILE: &str = include_str!("../data/lshape_enclosures.txt");

const H_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Enclosure {
    pub lo: f64,
    pub hi: f64,
}

impl Enclosure {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0) || !(lo <= hi) || !hi.is_finite() {
            return Err(Error::InvalidEnclosure(format!("need 0 < lo <= hi, got [{lo}, {hi}]")));
        }
        Ok(Enclosure { lo, hi })
    }

    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnclosureSource {
    Computed,
    Table,
    File,
    Analytic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnclosureTable {
    entries: Vec<Enclosure>,
    pub source: EnclosureSource,
}

impl EnclosureTable {
    /// Validates positivity and monotonicity of both endpoint sequences.
    pub fn new(entries: Vec<Enclosure>, source: EnclosureSource) -> Result<Self> {
        if entries.is_empty() {
            return Err(Error::EmptyTable);
        }
        for (k, w) in entries.windows(2).enumerate() {
            if w[1].lo < w[0].lo || w[1].hi < w[0].hi {
                return Err(Error::InvalidEnclosure(format!(
                    "endpoints decrease between indices {} and {}",
                    k + 1,
                    k + 2
                )));
            }
        }
        for e in &entries {
            Enclosure::new(e.lo, e.hi)?;
        }
        Ok(EnclosureTable { entries, source })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Enclosure] {
        &self.entries
    }

    /// Enclosure of `lambda_index` (1-based).
    pub fn get(&self, index: usize) -> Result<Enclosure> {
        index
            .checked_sub(1)
            .and_then(|i| self.entries.get(i).copied())
            .ok_or(Error::IndexOutOfRange {
                index,
                available: self.entries.len(),
            })
    }

    /// Pads every interval multiplicatively: `[lo / f, hi * f]`.
    pub fn inflate(&self, factor: f64) -> Result<Self> {
        if !(factor >= 1.0) {
            return Err(Error::InvalidParameter(format!("inflation factor {factor} must be >= 1")));
        }
        let entries = self
            .entries
            .iter()
            .map(|e| Enclosure {
                lo: e.lo / factor,
                hi: e.hi * factor,
            })
            .collect();
        Self::new(entries, self.source)
    }

    /// `index lo hi` lines.
    pub fn to_text(&self) -> String {
        let mut out = String::from("# index lo hi\n");
        for (i, e) in self.entries.iter().enumerate() {
            let _ = writeln!(out, "{} {} {}", i + 1, e.lo, e.hi);
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChSource {
    ConvexFormula,
    Table,
    File,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProjectionConstant {
    pub value: f64,
    pub source: ChSource,
    /// Mesh size the constant was obtained for.
    pub mesh_h: f64,
}

/// `C_h = 0.493 h_leg` for uniform right-triangle meshes of a convex domain.
pub fn ch_convex(h_leg: f64) -> Result<ProjectionConstant> {
    if !(h_leg > 0.0) || !h_leg.is_finite() {
        return Err(Error::InvalidParameter(format!("leg length must be positive, got {h_leg}")));
    }
    Ok(ProjectionConstant {
        value: CONVEX_RIGHT_TRIANGLE_FACTOR * h_leg,
        source: ChSource::ConvexFormula,
        mesh_h: h_leg,
    })
}

fn lookup(table: &[(f64, f64)], h: f64, source: ChSource) -> Result<ProjectionConstant> {
    table
        .iter()
        .find(|(th, _)| (th - h).abs() <= H_MATCH_TOL * th)
        .map(|&(mesh_h, value)| ProjectionConstant { value, source, mesh_h })
        .ok_or(Error::MissingConstant { h })
}

/// Tabulated L-shape constant for leg length `h`.
pub fn ch_table_lshape(h: f64) -> Result<ProjectionConstant> {
    lookup(&LSHAPE_CH_TABLE, h, ChSource::Table)
}

/// Parses a number written either as a decimal or as `p/q`.
fn parse_number(s: &str) -> Option<f64> {
    match s.split_once('/') {
        Some((p, q)) => Some(p.trim().parse::<f64>().ok()? / q.trim().parse::<f64>().ok()?),
        None => s.parse().ok(),
    }
}

/// Table of `h value` lines (`h` may be written as `1/64`).
#[derive(Debug, Clone, PartialEq)]
pub struct ConstantTable(Vec<(f64, f64)>);

impl ConstantTable {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut rows = Vec::new();
        for (k, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |message: String| Error::Parse {
                path: origin.to_path_buf(),
                line: k + 1,
                message,
            };
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 2 {
                return Err(err(format!("expected `h value`, found `{line}`")));
            }
            let h = parse_number(f[0]).ok_or_else(|| err(format!("bad mesh size `{}`", f[0])))?;
            let c = parse_number(f[1]).ok_or_else(|| err(format!("bad constant `{}`", f[1])))?;
            if !(h > 0.0 && c > 0.0) {
                return Err(err("mesh size and constant must be positive".into()));
            }
            rows.push((h, c));
        }
        if rows.is_empty() {
            return Err(Error::EmptyTable);
        }
        Ok(ConstantTable(rows))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn get(&self, h: f64) -> Result<ProjectionConstant> {
        lookup(&self.0, h, ChSource::File)
    }
}

/// `[lambda_{h,k} / (1 + C_h^2 lambda_{h,k}), lambda_{h,k}]` for every computed value.
pub fn lower_bounds_from_ch(discrete: &EigenSolution, ch: &ProjectionConstant) -> Result<EnclosureTable> {
    let c2 = ch.value * ch.value;
    let entries = discrete
        .values
        .iter()
        .map(|&l| Enclosure {
            lo: l / (1.0 + c2 * l),
            hi: l,
        })
        .collect();
    EnclosureTable::new(entries, EnclosureSource::Computed)
}

/// Parses `index lo hi` lines; indices must run 1, 2, 3, ...
pub fn parse_enclosures(text: &str, origin: &Path, source: EnclosureSource) -> Result<EnclosureTable> {
    let mut entries = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            line: k + 1,
            message,
        };
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 3 {
            return Err(err(format!("expected `index lo hi`, found `{line}`")));
        }
        let index: usize = f[0].parse().map_err(|_| err(format!("bad index `{}`", f[0])))?;
        if index != entries.len() + 1 {
            return Err(err(format!("expected index {}, found {index}", entries.len() + 1)));
        }
        let lo: f64 = f[1].parse().map_err(|_| err(format!("bad lower bound `{}`", f[1])))?;
        let hi: f64 = f[2].parse().map_err(|_| err(format!("bad upper bound `{}`", f[2])))?;
        entries.push(Enclosure::new(lo, hi).map_err(|e| err(e.to_string()))?);
    }
    EnclosureTable::new(entries, source)
}

pub fn load_enclosures(path: impl AsRef<Path>) -> Result<EnclosureTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_enclosures(&text, path, EnclosureSource::File)
}

/// The bundled L-shape table.
pub fn lshape_reference_enclosures() -> EnclosureTable {
    parse_enclosures(LSHAPE_ENCLOSURE_FILE, Path::new("lshape_enclosures.txt"), EnclosureSource::Table)
        .expect("bundled enclosure table is valid")
}

/// Exact eigenvalues `(i^2 + j^2) pi^2` of the unit square, ascending with
/// multiplicity, paired with their mode indices.
pub fn unit_square_modes(count: usize) -> Vec<(usize, usize, f64)> {
    let mut modes = Vec::new();
    let mut limit = 1;
    loop {
        modes.clear();
        for i in 1..=limit {
            for j in 1..=limit {
                modes.push((i, j, ((i * i + j * j) as f64) * PI * PI));
            }
        }
        // every mode with i^2 + j^2 <= limit^2 + 1 has been enumerated
        let complete = modes.iter().filter(|m| m.0 * m.0 + m.1 * m.1 <= limit * limit + 1).count();
        if complete >= count {
            break;
        }
        limit += 1;
    }
    modes.sort_by(|a, b| (a.0 * a.0 + a.1 * a.1, a.0).cmp(&(b.0 * b.0 + b.1 * b.1, b.0)));
    modes.truncate(count);
    modes
}

/// Degenerate enclosures at the exact unit-square eigenvalues.
pub fn unit_square_exact_enclosures(count: usize) -> Result<EnclosureTable> {
    let entries = unit_square_modes(count)
        .into_iter()
        .map(|(_, _, l)| Enclosure { lo: l, hi: l })
        .collect();
    EnclosureTable::new(entries, EnclosureSource::Analytic)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Separation {
    pub ok: bool,
    /// `lambda_n^lo - lambda_{h,n-1}`; infinite for a cluster starting at 1.
    pub left_margin: f64,
    /// `lambda_{h,N+1} - lambda_N^hi`.
    pub right_margin: f64,
}

/// Checks `lambda_{h,n-1} < lambda_n` and `lambda_N < lambda_{h,N+1}` against
/// the worst enclosure endpoints.
pub fn verify_separation(enc: &EnclosureTable, discrete: &EigenSolution, cluster: &ClusterSpec) -> Result<Separation> {
    let left_margin = if cluster.first == 1 {
        f64::INFINITY
    } else {
        enc.get(cluster.first)?.lo - discrete.value(cluster.first - 1)?
    };
    let right_margin = discrete.value(cluster.last + 1)? - enc.get(cluster.last)?.hi;
    Ok(Separation {
        ok: left_margin > 0.0 && right_margin > 0.0,
        left_margin,
        right_margin,
    })
}
