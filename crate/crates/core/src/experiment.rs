//! Mesh sweeps: one config in, per-mesh cluster reports, validation columns,
//! convergence rates and plot series out.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cluster::{build_cluster_reports, check_cluster_order, ClusterInputs, ClusterReport, ClusterSpec};
use crate::eigensolve::{solve_dense, solve_iterative, EigenSolution, IterativeOptions, DEFAULT_DENSE_CAP, DEFAULT_TOL};
use crate::enclosures::{
    ch_convex, ch_table_lshape, load_enclosures, lower_bounds_from_ch, lshape_reference_enclosures,
    unit_square_exact_enclosures, ConstantTable, EnclosureTable, ProjectionConstant,
};
use crate::error::{Error, Result};
use crate::fem::{assemble, Assembly};
use crate::mesh::{build_lshape_mesh, build_unit_square_mesh, load_mesh, refine_uniform, Mesh};
use crate::quadrature::QuadratureRule;
use crate::validation::{reference_proxy, square_cluster_functions, true_delta, Norm, MIN_QUADRATURE_DEGREE};

/// Environment variable capping worker threads.
pub const THREADS_ENV: &str = "EIGENCERT_THREADS";

/// Bundled unit-square sweep.
pub const SQUARE_CONFIG: &str = include_str!("../configs/square.cfg");
/// Bundled L-shape sweep.
pub const LSHAPE_CONFIG: &str = include_str!("../configs/lshape.cfg");

#[derive(Debug, Clone, PartialEq)]
pub enum Domain {
    UnitSquare,
    LShape,
    /// Mesh sizes count uniform refinements of the loaded mesh.
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum ChSourceSpec {
    Convex,
    Table,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub enum EnclosureSourceSpec {
    /// `lambda_{h,k} / (1 + C_h^2 lambda_{h,k})` from the current mesh.
    Computed,
    /// Exact unit-square eigenvalues.
    Analytic,
    /// Bundled L-shape table.
    Table,
    File(PathBuf),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverKind {
    /// Dense up to `auto_dense_max` dofs, iterative above.
    Auto,
    Dense,
    Iterative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    #[serde(default = "default_kind")]
    pub kind: SolverKind,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_cap")]
    pub dense_cap: usize,
    #[serde(default = "default_auto_max")]
    pub auto_dense_max: usize,
    #[serde(default)]
    pub shift: f64,
}

fn default_kind() -> SolverKind {
    SolverKind::Auto
}
fn default_tol() -> f64 {
    DEFAULT_TOL
}
fn default_cap() -> usize {
    DEFAULT_DENSE_CAP
}
fn default_auto_max() -> usize {
    1000
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            kind: SolverKind::Auto,
            tol: DEFAULT_TOL,
            dense_cap: DEFAULT_DENSE_CAP,
            auto_dense_max: default_auto_max(),
            shift: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceKind {
    None,
    Analytic,
    Proxy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidationConfig {
    #[serde(default = "default_reference")]
    pub reference: ReferenceKind,
    #[serde(default = "default_degree")]
    pub quadrature_degree: usize,
    /// Mesh size of the reference solution for the proxy.
    #[serde(default)]
    pub proxy_fine_n: Option<usize>,
}

fn default_reference() -> ReferenceKind {
    ReferenceKind::None
}
fn default_degree() -> usize {
    MIN_QUADRATURE_DEGREE
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            reference: ReferenceKind::None,
            quadrature_degree: MIN_QUADRATURE_DEGREE,
            proxy_fine_n: None,
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    domain: String,
    mesh_sizes: Vec<usize>,
    #[serde(default)]
    clusters: Vec<[usize; 2]>,
    ch_source: String,
    enclosure_source: String,
    #[serde(default = "one")]
    inflation: f64,
    #[serde(default = "default_out")]
    output_dir: PathBuf,
    #[serde(default)]
    solver: SolverConfig,
    #[serde(default)]
    validation: ValidationConfig,
}

fn one() -> f64 {
    1.0
}
fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub domain: Domain,
    pub mesh_sizes: Vec<usize>,
    pub clusters: Vec<ClusterSpec>,
    pub ch_source: ChSourceSpec,
    pub enclosure_source: EnclosureSourceSpec,
    pub inflation: f64,
    pub output_dir: PathBuf,
    pub solver: SolverConfig,
    pub validation: ValidationConfig,
}

fn file_ref<'a>(s: &'a str, what: &str) -> Result<Option<&'a str>> {
    match s.strip_prefix("file:") {
        Some("") => Err(Error::Config(format!("{what}: `file:` needs a path"))),
        Some(p) => Ok(Some(p)),
        None => Ok(None),
    }
}

impl ExperimentConfig {
    /// Parses TOML text. Relative file references resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let resolve = |p: &str| {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let domain = match raw.domain.as_str() {
            "unit_square" => Domain::UnitSquare,
            "l_shape" => Domain::LShape,
            other => match file_ref(other, "domain")? {
                Some(p) => Domain::File(resolve(p)),
                None => {
                    return Err(Error::Config(format!(
                        "domain must be unit_square, l_shape or file:PATH, got `{other}`"
                    )))
                }
            },
        };
        let ch_source = match raw.ch_source.as_str() {
            "convex" => ChSourceSpec::Convex,
            "table" => ChSourceSpec::Table,
            other => match file_ref(other, "ch_source")? {
                Some(p) => ChSourceSpec::File(resolve(p)),
                None => return Err(Error::Config(format!("ch_source must be convex, table or file:PATH, got `{other}`"))),
            },
        };
        let enclosure_source = match raw.enclosure_source.as_str() {
            "computed" => EnclosureSourceSpec::Computed,
            "analytic" => EnclosureSourceSpec::Analytic,
            "table" => EnclosureSourceSpec::Table,
            other => match file_ref(other, "enclosure_source")? {
                Some(p) => EnclosureSourceSpec::File(resolve(p)),
                None => {
                    return Err(Error::Config(format!(
                        "enclosure_source must be computed, analytic, table or file:PATH, got `{other}`"
                    )))
                }
            },
        };
        let clusters = raw
            .clusters
            .iter()
            .map(|&[a, b]| ClusterSpec::new(a, b))
            .collect::<Result<Vec<_>>>()
            .map_err(|e| Error::Config(e.to_string()))?;
        let config = ExperimentConfig {
            domain,
            mesh_sizes: raw.mesh_sizes,
            clusters,
            ch_source,
            enclosure_source,
            inflation: raw.inflation,
            output_dir: raw.output_dir,
            solver: raw.solver,
            validation: raw.validation,
        };
        config.check()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn bundled_square() -> Self {
        Self::parse(SQUARE_CONFIG, Path::new(".")).expect("bundled config is valid")
    }

    pub fn bundled_lshape() -> Self {
        Self::parse(LSHAPE_CONFIG, Path::new(".")).expect("bundled config is valid")
    }

    fn check(&self) -> Result<()> {
        if self.mesh_sizes.is_empty() {
            return Err(Error::Config("mesh_sizes is empty".into()));
        }
        if self.mesh_sizes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("mesh_sizes must be strictly increasing".into()));
        }
        if !matches!(self.domain, Domain::File(_)) && self.mesh_sizes[0] == 0 {
            return Err(Error::Config("mesh sizes must be at least 1".into()));
        }
        check_cluster_order(&self.clusters).map_err(|e| Error::Config(e.to_string()))?;
        if !(self.inflation >= 1.0) {
            return Err(Error::Config(format!("inflation {} must be >= 1", self.inflation)));
        }
        if self.validation.quadrature_degree < MIN_QUADRATURE_DEGREE {
            return Err(Error::Config(format!(
                "quadrature_degree {} is below {MIN_QUADRATURE_DEGREE}",
                self.validation.quadrature_degree
            )));
        }
        let square = self.domain == Domain::UnitSquare;
        if self.enclosure_source == EnclosureSourceSpec::Analytic && !square {
            return Err(Error::Config("analytic enclosures exist only for the unit square".into()));
        }
        if self.validation.reference == ReferenceKind::Analytic && !square {
            return Err(Error::Config("analytic validation exists only for the unit square".into()));
        }
        if self.validation.reference == ReferenceKind::Proxy && self.validation.proxy_fine_n.is_none() {
            return Err(Error::Config("proxy validation needs validation.proxy_fine_n".into()));
        }
        if self.ch_source == ChSourceSpec::Table && self.domain != Domain::LShape {
            return Err(Error::Config("tabulated projection constants exist only for the L-shape".into()));
        }
        if self.enclosure_source == EnclosureSourceSpec::Table && self.domain != Domain::LShape {
            return Err(Error::Config("the bundled enclosure table is for the L-shape".into()));
        }
        Ok(())
    }

    /// Number of eigenpairs each mesh needs: every cluster plus one
    /// neighbour on the right, plus one spare.
    pub fn eigenpairs_needed(&self) -> usize {
        self.clusters.iter().map(|c| c.last).max().unwrap_or(0) + 2
    }
}

/// Mesh, matrices and eigenpairs of one sweep entry.
pub struct Discretization {
    pub n: usize,
    pub mesh: Mesh,
    pub assembly: Assembly,
    pub solution: EigenSolution,
}

pub fn build_mesh(domain: &Domain, n: usize) -> Result<Mesh> {
    match domain {
        Domain::UnitSquare => build_unit_square_mesh(n),
        Domain::LShape => build_lshape_mesh(n),
        Domain::File(p) => {
            let mut m = load_mesh(p)?;
            for _ in 0..n {
                m = refine_uniform(&m)?;
            }
            Ok(m)
        }
    }
}

pub fn solve(asm: &Assembly, k: usize, cfg: &SolverConfig) -> Result<EigenSolution> {
    let k = k.min(asm.dofs.n_dofs());
    let dense = match cfg.kind {
        SolverKind::Dense => true,
        SolverKind::Iterative => false,
        SolverKind::Auto => asm.dofs.n_dofs() <= cfg.auto_dense_max.min(cfg.dense_cap),
    };
    if dense {
        solve_dense(&asm.stiffness, &asm.mass, k, cfg.dense_cap)
    } else {
        let opts = IterativeOptions {
            shift: cfg.shift,
            tol: cfg.tol,
            ..Default::default()
        };
        solve_iterative(&asm.stiffness, &asm.mass, k, &opts)
    }
}

pub fn discretize(domain: &Domain, n: usize, k: usize, solver: &SolverConfig) -> Result<Discretization> {
    let mesh = build_mesh(domain, n)?;
    let assembly = assemble(&mesh)?;
    let solution = solve(&assembly, k, solver)?;
    log::info!(
        "n = {n}: {} dofs, lambda_h,1 = {:.10}",
        assembly.dofs.n_dofs(),
        solution.values.first().copied().unwrap_or(f64::NAN)
    );
    Ok(Discretization {
        n,
        mesh,
        assembly,
        solution,
    })
}

fn projection_constant(cfg: &ExperimentConfig, mesh: &Mesh, table: Option<&ConstantTable>) -> Result<ProjectionConstant> {
    let h = mesh.h_leg();
    match &cfg.ch_source {
        ChSourceSpec::Convex => ch_convex(h),
        ChSourceSpec::Table => ch_table_lshape(h),
        ChSourceSpec::File(_) => table.expect("constant table loaded").get(h),
    }
}

fn enclosure_table(
    cfg: &ExperimentConfig,
    sol: &EigenSolution,
    ch: &ProjectionConstant,
    file: Option<&EnclosureTable>,
) -> Result<EnclosureTable> {
    let table = match &cfg.enclosure_source {
        EnclosureSourceSpec::Computed => lower_bounds_from_ch(sol, ch)?,
        EnclosureSourceSpec::Analytic => unit_square_exact_enclosures(sol.k().max(cfg.eigenpairs_needed()))?,
        EnclosureSourceSpec::Table => lshape_reference_enclosures(),
        EnclosureSourceSpec::File(_) => file.expect("enclosure file loaded").clone(),
    };
    if cfg.inflation > 1.0 {
        table.inflate(cfg.inflation)
    } else {
        Ok(table)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterTruth {
    pub kind: ReferenceKind,
    pub delta_b: Option<f64>,
    pub delta_a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeshResult {
    pub n: usize,
    pub h: f64,
    pub h_leg: f64,
    pub n_dofs: usize,
    pub eigenvalues: Vec<f64>,
    pub ch: Option<ProjectionConstant>,
    pub reports: Vec<ClusterReport>,
    pub truth: Vec<ClusterTruth>,
    pub errors: Vec<String>,
}

impl MeshResult {
    pub fn ok(&self) -> bool {
        self.errors.is_empty() && self.reports.iter().all(ClusterReport::complete)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeriesPoint {
    pub h: f64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub cluster: String,
    pub quantity: String,
    pub points: Vec<SeriesPoint>,
    pub slope: Option<f64>,
}

/// Least-squares slope of `log value` against `log h` over the last three
/// usable points. Nonpositive values are skipped.
pub fn slope(points: &[(f64, f64)]) -> Option<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(h, v)| {
            let keep = h > 0.0 && v > 0.0 && v.is_finite();
            if !keep {
                log::warn!("excluding point (h = {h}, value = {v}) from the slope fit");
            }
            keep
        })
        .map(|&(h, v)| (h.ln(), v.ln()))
        .collect();
    if usable.len() < 3 {
        return None;
    }
    let tail = &usable[usable.len() - 3..];
    let mx = tail.iter().map(|p| p.0).sum::<f64>() / 3.0;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / 3.0;
    let sxy: f64 = tail.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = tail.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Quantity names in column order.
pub const QUANTITIES: [&str; 6] = [
    "delta_b_projection",
    "delta_a_from_b",
    "delta_b_alg1",
    "delta_a_alg1",
    "true_delta_b",
    "true_delta_a",
];

fn quantity(report: &ClusterReport, truth: Option<&ClusterTruth>, name: &str) -> Option<f64> {
    match name {
        "delta_b_projection" => report.delta_b_projection,
        "delta_a_from_b" => report.delta_a_from_b,
        "delta_b_alg1" => report.delta_b_alg1(),
        "delta_a_alg1" => report.delta_a_alg1(),
        "true_delta_b" => truth.and_then(|t| t.delta_b),
        "true_delta_a" => truth.and_then(|t| t.delta_a),
        _ => None,
    }
}

/// Per-(cluster, quantity) series ordered by decreasing `h`, with slopes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceTable {
    pub series: Vec<Series>,
}

impl ConvergenceTable {
    pub fn from_results(clusters: &[ClusterSpec], results: &[MeshResult]) -> Self {
        let mut series = Vec::new();
        for (ci, c) in clusters.iter().enumerate() {
            for name in QUANTITIES {
                let points: Vec<SeriesPoint> = results
                    .iter()
                    .filter_map(|r| {
                        let report = r.reports.get(ci)?;
                        let value = quantity(report, r.truth.get(ci), name)?;
                        Some(SeriesPoint { h: r.h, value })
                    })
                    .collect();
                if points.is_empty() {
                    continue;
                }
                let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.h, p.value)).collect();
                series.push(Series {
                    cluster: c.label(),
                    quantity: name.to_string(),
                    slope: slope(&pairs),
                    points,
                });
            }
        }
        ConvergenceTable { series }
    }

    pub fn get(&self, cluster: &str, quantity: &str) -> Option<&Series> {
        self.series.iter().find(|s| s.cluster == cluster && s.quantity == quantity)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub clusters: Vec<ClusterSpec>,
    pub results: Vec<MeshResult>,
    pub rates: ConvergenceTable,
    /// Caveats about the inputs, repeated in `report.json` and by the CLI.
    #[serde(default)]
    pub notes: Vec<String>,
}

/// Printed whenever the convex-domain constant is used.
pub const CONVEX_CH_NOTE: &str = "C_h = 0.493 h_leg is used for the convex case; the alternative reading \
C_h <= h_leg / 0.493 would be about 4.1 times larger and give correspondingly larger bounds";

impl RunOutput {
    /// Conjunction of every per-cluster success flag.
    pub fn ok(&self) -> bool {
        self.results.iter().all(MeshResult::ok)
    }
}

fn thread_pool() -> Result<rayon::ThreadPool> {
    let mut b = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))?;
        if n == 0 {
            return Err(Error::Config(format!("{THREADS_ENV} must be a positive integer")));
        }
        b = b.num_threads(n);
    }
    b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn evaluate_mesh(
    cfg: &ExperimentConfig,
    d: &Discretization,
    fine: Option<&Discretization>,
    ch_table: Option<&ConstantTable>,
    enc_file: Option<&EnclosureTable>,
) -> MeshResult {
    let mut result = MeshResult {
        n: d.n,
        h: d.mesh.h(),
        h_leg: d.mesh.h_leg(),
        n_dofs: d.assembly.dofs.n_dofs(),
        eigenvalues: d.solution.values.clone(),
        ch: None,
        reports: Vec::new(),
        truth: Vec::new(),
        errors: Vec::new(),
    };
    let ch = match projection_constant(cfg, &d.mesh, ch_table) {
        Ok(c) => c,
        Err(e) => {
            result.errors.push(format!("projection constant: {e}"));
            return result;
        }
    };
    result.ch = Some(ch);
    let enc = match enclosure_table(cfg, &d.solution, &ch, enc_file) {
        Ok(t) => t,
        Err(e) => {
            result.errors.push(format!("enclosures: {e}"));
            return result;
        }
    };
    let inputs = ClusterInputs {
        stiffness: &d.assembly.stiffness,
        mass: &d.assembly.mass,
        discrete: &d.solution,
        enclosures: &enc,
        ch,
    };
    match build_cluster_reports(&inputs, &cfg.clusters) {
        Ok(r) => result.reports = r,
        Err(e) => {
            result.errors.push(format!("cluster reports: {e}"));
            return result;
        }
    }
    let rule = QuadratureRule::collapsed_gauss(cfg.validation.quadrature_degree);
    for c in &cfg.clusters {
        let truth = match cfg.validation.reference {
            ReferenceKind::None => ClusterTruth {
                kind: ReferenceKind::None,
                delta_b: None,
                delta_a: None,
            },
            ReferenceKind::Analytic => {
                let f = square_cluster_functions(c);
                let mut get = |norm| {
                    d.solution
                        .basis(c.first, c.last)
                        .and_then(|b| true_delta(&f, b, &d.mesh, &d.assembly, &rule, norm))
                        .map_err(|e| result.errors.push(format!("true distance for cluster {}: {e}", c.label())))
                        .ok()
                };
                ClusterTruth {
                    kind: ReferenceKind::Analytic,
                    delta_b: get(Norm::L2),
                    delta_a: get(Norm::Energy),
                }
            }
            ReferenceKind::Proxy => match fine {
                Some(f) if f.mesh.h() * 4.0 <= d.mesh.h() * (1.0 + 1e-9) => {
                    let mut get = |norm| {
                        reference_proxy(c, &d.mesh, &d.assembly, &d.solution, &f.mesh, &f.assembly, &f.solution, norm)
                            .map_err(|e| result.errors.push(format!("proxy for cluster {}: {e}", c.label())))
                            .ok()
                    };
                    ClusterTruth {
                        kind: ReferenceKind::Proxy,
                        delta_b: get(Norm::L2),
                        delta_a: get(Norm::Energy),
                    }
                }
                _ => ClusterTruth {
                    kind: ReferenceKind::Proxy,
                    delta_b: None,
                    delta_a: None,
                },
            },
        };
        result.truth.push(truth);
    }
    result
}

/// Runs the sweep in memory without writing files.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput> {
    if cfg.clusters.is_empty() {
        log::warn!("no clusters configured; nothing to do");
        return Ok(RunOutput {
            clusters: Vec::new(),
            results: Vec::new(),
            rates: ConvergenceTable { series: Vec::new() },
            notes: Vec::new(),
        });
    }
    let ch_table = match &cfg.ch_source {
        ChSourceSpec::File(p) => Some(ConstantTable::load(p)?),
        _ => None,
    };
    let enc_file = match &cfg.enclosure_source {
        EnclosureSourceSpec::File(p) => Some(load_enclosures(p)?),
        _ => None,
    };
    let k = cfg.eigenpairs_needed();
    let mut sizes = cfg.mesh_sizes.clone();
    let fine_n = match cfg.validation.reference {
        ReferenceKind::Proxy => cfg.validation.proxy_fine_n,
        _ => None,
    };
    if let Some(f) = fine_n {
        if !sizes.contains(&f) {
            sizes.push(f);
        }
    }

    let pool = thread_pool()?;
    let discs: Vec<Result<Discretization>> =
        pool.install(|| sizes.par_iter().map(|&n| discretize(&cfg.domain, n, k, &cfg.solver)).collect());
    let mut by_n: BTreeMap<usize, Discretization> = BTreeMap::new();
    let mut failures: BTreeMap<usize, String> = BTreeMap::new();
    for (n, d) in sizes.iter().zip(discs) {
        match d {
            Ok(d) => {
                by_n.insert(*n, d);
            }
            Err(e) => {
                log::error!("mesh size {n}: {e}");
                failures.insert(*n, e.to_string());
            }
        }
    }
    let fine = fine_n.and_then(|f| by_n.get(&f));
    let results: Vec<MeshResult> = pool.install(|| {
        cfg.mesh_sizes
            .par_iter()
            .map(|n| match by_n.get(n) {
                Some(d) => evaluate_mesh(cfg, d, fine, ch_table.as_ref(), enc_file.as_ref()),
                None => MeshResult {
                    n: *n,
                    h: f64::NAN,
                    h_leg: f64::NAN,
                    n_dofs: 0,
                    eigenvalues: Vec::new(),
                    ch: None,
                    reports: Vec::new(),
                    truth: Vec::new(),
                    errors: vec![failures.get(n).cloned().unwrap_or_default()],
                },
            })
            .collect()
    });
    let rates = ConvergenceTable::from_results(&cfg.clusters, &results);
    let mut notes = Vec::new();
    if cfg.ch_source == ChSourceSpec::Convex {
        notes.push(CONVEX_CH_NOTE.to_string());
    }
    Ok(RunOutput {
        clusters: cfg.clusters.clone(),
        results,
        rates,
        notes,
    })
}

fn num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:.12e}"))
}

/// `report.csv`: one row per cluster per mesh.
pub fn report_csv(out: &RunOutput) -> String {
    let mut s = String::from(
        "n,h,cluster,tau,tau_h,xi,beta,sharper,ch,delta_b_projection,delta_a_from_b,delta_b_alg1,delta_a_alg1,rho,lambda_hat,separation_ok,complete,reference,true_delta_b,true_delta_a\n",
    );
    for r in &out.results {
        for (ci, rep) in r.reports.iter().enumerate() {
            let q = rep.quantities;
            let t = r.truth.get(ci);
            let reference = match t.map(|t| t.kind) {
                Some(ReferenceKind::Analytic) => "analytic",
                Some(ReferenceKind::Proxy) => "proxy",
                _ => "",
            };
            let _ = writeln!(
                s,
                "{},{:.12e},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.n,
                r.h,
                rep.spec.label(),
                num(q.map(|q| q.tau)),
                num(q.map(|q| q.tau_h)),
                num(q.map(|q| q.xi)),
                num(q.map(|q| q.beta)),
                q.map_or(String::new(), |q| q.sharper_applicable.to_string()),
                num(r.ch.map(|c| c.value)),
                num(rep.delta_b_projection),
                num(rep.delta_a_from_b),
                num(rep.delta_b_alg1()),
                num(rep.delta_a_alg1()),
                num(rep.rayleigh.map(|a| a.rho)),
                num(rep.rayleigh.map(|a| a.lambda_hat)),
                rep.separation_ok,
                rep.complete(),
                reference,
                num(t.and_then(|t| t.delta_b)),
                num(t.and_then(|t| t.delta_a)),
            );
        }
    }
    s
}

pub fn rates_csv(table: &ConvergenceTable) -> String {
    let mut s = String::from("cluster,quantity,points,slope\n");
    for series in &table.series {
        let _ = writeln!(s, "{},{},{},{}", series.cluster, series.quantity, series.points.len(), num(series.slope));
    }
    s
}

pub fn series_csv(series: &Series) -> String {
    let mut s = String::from("h,value\n");
    for p in &series.points {
        let _ = writeln!(s, "{:.12e},{:.12e}", p.h, p.value);
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `report.csv`, `report.json`, `rates.csv` and one
/// `series_<cluster>_<quantity>.csv` per series into `dir`.
pub fn write_outputs(out: &RunOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut emit = |name: String, text: &str| -> Result<()> {
        let p = dir.join(name);
        write(&p, text)?;
        written.push(p);
        Ok(())
    };
    emit("report.csv".into(), &report_csv(out))?;
    let json = serde_json::to_string_pretty(out).map_err(|e| Error::Config(format!("serializing report: {e}")))?;
    emit("report.json".into(), &json)?;
    emit("rates.csv".into(), &rates_csv(&out.rates))?;
    for s in &out.rates.series {
        emit(format!("series_{}_{}.csv", s.cluster, s.quantity), &series_csv(s))?;
    }
    Ok(written)
}

/// `execute` followed by `write_outputs` into the configured directory.
pub fn run(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let out = execute(cfg)?;
    if !out.clusters.is_empty() {
        write_outputs(&out, &cfg.output_dir)?;
    }
    Ok(out)
}

/// A bound that fell below its reference value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub n: usize,
    pub cluster: String,
    pub bound: String,
    pub bound_value: f64,
    pub reference: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceSummary {
    pub checked: usize,
    pub violations: Vec<Violation>,
}

/// Compares every certified bound with the reference distance of its norm.
pub fn check_dominance(out: &RunOutput) -> DominanceSummary {
    let mut checked = 0;
    let mut violations = Vec::new();
    for r in &out.results {
        for (rep, truth) in r.reports.iter().zip(&r.truth) {
            let pairs = [
                ("delta_b_projection", rep.delta_b_projection, truth.delta_b),
                ("delta_b_alg1", rep.delta_b_alg1(), truth.delta_b),
                ("delta_a_from_b", rep.delta_a_from_b, truth.delta_a),
                ("delta_a_alg1", rep.delta_a_alg1(), truth.delta_a),
            ];
            for (name, bound, reference) in pairs {
                if let (Some(b), Some(t)) = (bound, reference) {
                    checked += 1;
                    if b < t {
                        violations.push(Violation {
                            n: r.n,
                            cluster: rep.spec.label(),
                            bound: name.into(),
                            bound_value: b,
                            reference: t,
                        });
                    }
                }
            }
        }
    }
    DominanceSummary { checked, violations }
}
