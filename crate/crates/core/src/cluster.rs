//! Per-cluster certified bounds on the directed distance between exact and
//! discrete eigenspaces.
//!
//! Two families are computed side by side: the projection-error bound
//! `delta_b <= (1 + beta) lambda_N C_h^2` with its energy-norm lift, and the
//! Rayleigh-quotient bounds that use a separation parameter `rho` and the
//! certified bounds of all preceding clusters.
//!
//! Wherever an exact eigenvalue enters a formula, the enclosure endpoint
//! that enlarges the result is used.

use faer::{Mat, MatRef};
use serde::{Deserialize, Serialize};

use crate::eigensolve::{rayleigh_quotient_max, EigenSolution};
use crate::enclosures::{verify_separation, EnclosureTable, ProjectionConstant, Separation};
use crate::error::{Error, Result};
use crate::fem::SymSparseMatrix;
use crate::linalg;

/// Tolerance below zero to which the energy-lift radicand is clamped.
const LIFT_CLAMP: f64 = 1e-14;

/// Index range `first..=last` (1-based) of one eigenvalue cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClusterSpec {
    pub first: usize,
    pub last: usize,
}

impl ClusterSpec {
    pub fn new(first: usize, last: usize) -> Result<Self> {
        if first == 0 || last < first {
            return Err(Error::InvalidParameter(format!(
                "cluster needs 1 <= first <= last, got {first}..{last}"
            )));
        }
        Ok(ClusterSpec { first, last })
    }

    pub fn size(&self) -> usize {
        self.last - self.first + 1
    }

    pub fn label(&self) -> String {
        if self.first == self.last {
            format!("{}", self.first)
        } else {
            format!("{}-{}", self.first, self.last)
        }
    }
}

/// Checks that clusters are ordered and pairwise disjoint.
pub fn check_cluster_order(clusters: &[ClusterSpec]) -> Result<()> {
    for w in clusters.windows(2) {
        if w[1].first <= w[0].last {
            return Err(Error::InvalidParameter(format!(
                "clusters {} and {} overlap or are out of order",
                w[0].label(),
                w[1].label()
            )));
        }
    }
    Ok(())
}

/// Groups ascending values into clusters wherever the relative gap between
/// neighbours is below `rel_gap`.
pub fn auto_split(values: &[f64], rel_gap: f64) -> Vec<ClusterSpec> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..=values.len() {
        let split = i == values.len() || (values[i] - values[i - 1]) > rel_gap * values[i - 1].abs();
        if split {
            out.push(ClusterSpec {
                first: start + 1,
                last: i,
            });
            start = i;
        }
    }
    out
}

/// `(lambda_N^hi - lambda_n^lo) / lambda_n^lo`, floored at zero.
pub fn compute_xi(enc: &EnclosureTable, c: &ClusterSpec) -> Result<f64> {
    let lo = enc.get(c.first)?.lo;
    let hi = enc.get(c.last)?.hi;
    if !(lo > 0.0) {
        return Err(Error::InvalidEnclosure(format!("lower bound {lo} of lambda_{} is not positive", c.first)));
    }
    Ok(((hi - lo) / lo).max(0.0))
}

/// Upper bounds of `tau` and `tau_h`.
///
/// Both maxima over outside indices are attained at the discrete neighbours
/// `n-1` and `N+1`, and over the cluster at the enclosure endpoint closest
/// to that neighbour.
pub fn compute_tau_tauh(enc: &EnclosureTable, discrete: &EigenSolution, c: &ClusterSpec) -> Result<(f64, f64)> {
    let sep = verify_separation(enc, discrete, c)?;
    if !sep.ok {
        return Err(Error::NotApplicable(format!(
            "cluster {} is not separated from its discrete neighbours (margins {:e}, {:e})",
            c.label(),
            sep.left_margin,
            sep.right_margin
        )));
    }
    let hi = enc.get(c.last)?.hi;
    let right = discrete.value(c.last + 1)?;
    let mut tau = hi / (right - hi);
    let mut tau_h = right / (right - hi);
    if c.first > 1 {
        let lo = enc.get(c.first)?.lo;
        let left = discrete.value(c.first - 1)?;
        tau = tau.max(lo / (lo - left));
        tau_h = tau_h.max(left / (lo - left));
    }
    Ok((tau, tau_h))
}

/// Bound on `beta` for a cluster of size `m`, and whether the sharper form
/// was used.
///
/// The sharper form needs `tau_h xi < 1 - m^{-1/2}`. For `m = 1` that is
/// never true, and only the degenerate `xi = 0` is let through; both forms
/// give `tau` there anyway.
pub fn compute_beta(tau: f64, tau_h: f64, xi: f64, m: usize) -> (f64, bool) {
    let general = tau * (m as f64).sqrt();
    let threshold = 1.0 - 1.0 / (m as f64).sqrt();
    let holds = tau_h * xi < threshold || xi == 0.0;
    if holds {
        (tau / (1.0 - tau_h * xi), true)
    } else {
        (general, false)
    }
}

/// `(1 + beta) lambda_N C_h^2`.
pub fn delta_b_projection(beta: f64, lambda_n_hi: f64, ch: f64) -> f64 {
    (1.0 + beta) * lambda_n_hi * ch * ch
}

/// Energy-norm bound from an L2 bound:
/// `delta_a^2 <= 2 - 2 lambda_n sqrt((1 - delta_b^2) / (lambda_N lambda_{h,N}))`.
///
/// `None` when `delta_b >= 1` or the radicand is clearly negative.
pub fn delta_a_from_delta_b(delta_b: f64, lambda_n_lo: f64, lambda_last_hi: f64, lambda_h_last: f64) -> Option<f64> {
    if !(delta_b >= 0.0) || delta_b >= 1.0 {
        return None;
    }
    let rhs = 2.0 - 2.0 * lambda_n_lo * ((1.0 - delta_b * delta_b) / (lambda_last_hi * lambda_h_last)).sqrt();
    if rhs < -LIFT_CLAMP {
        return None;
    }
    Some(rhs.max(0.0).sqrt())
}

fn largest_singular_value(m: MatRef<'_, f64>) -> Result<f64> {
    Ok(linalg::singular_values(m)?.first().copied().unwrap_or(0.0))
}

/// `(zeta_hat, epsilon_hat)`: largest cosines between two spans in the energy
/// and L2 inner products.
pub fn nonorthogonality(
    basis_a: MatRef<'_, f64>,
    basis_b: MatRef<'_, f64>,
    a: &SymSparseMatrix,
    m: &SymSparseMatrix,
) -> Result<(f64, f64)> {
    let qa = linalg::orthonormalize(basis_a, a)?;
    let qb = linalg::orthonormalize(basis_b, a)?;
    let zeta = largest_singular_value(linalg::cross(qa.as_ref(), qb.as_ref(), a).as_ref())?;
    let qa = linalg::orthonormalize(basis_a, m)?;
    let qb = linalg::orthonormalize(basis_b, m)?;
    let eps = largest_singular_value(linalg::cross(qa.as_ref(), qb.as_ref(), m).as_ref())?;
    Ok((zeta, eps))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterQuantities {
    pub tau: f64,
    pub tau_h: f64,
    pub xi: f64,
    pub beta: f64,
    pub sharper_applicable: bool,
    pub lambda_n_lo: f64,
    #[serde(rename = "lambda_N_hi")]
    pub lambda_last_hi: f64,
    #[serde(rename = "lambda_h_N")]
    pub lambda_h_last: f64,
    pub ch: ProjectionConstant,
}

/// Quantities and bounds of the Rayleigh-quotient estimate for one cluster.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayleighBounds {
    pub rho: f64,
    pub lambda_hat: f64,
    pub vartheta: f64,
    pub theta: f64,
    pub delta_a: f64,
    pub delta_b: f64,
}

/// A cluster that precedes the current one, with its discrete basis and its
/// best certified `(delta_a, delta_b)`.
#[derive(Debug, Clone, Copy)]
pub struct PriorCluster<'a> {
    pub spec: ClusterSpec,
    pub basis: MatRef<'a, f64>,
    pub delta_a: f64,
    pub delta_b: f64,
}

/// Rayleigh-quotient bounds for `spec`, with `rho = lambda_{N+1}^lo`.
///
/// `prior` must cover indices `1..n-1` exactly, in order.
pub fn rayleigh_bounds(
    spec: &ClusterSpec,
    basis: MatRef<'_, f64>,
    prior: &[PriorCluster<'_>],
    enc: &EnclosureTable,
    a: &SymSparseMatrix,
    m: &SymSparseMatrix,
) -> Result<RayleighBounds> {
    let mut next = 1;
    for p in prior {
        if p.spec.first != next {
            return Err(Error::NotApplicable(format!(
                "preceding clusters must cover 1..{} without gaps (found {} after index {})",
                spec.first - 1,
                p.spec.label(),
                next - 1
            )));
        }
        next = p.spec.last + 1;
    }
    if next != spec.first {
        return Err(Error::NotApplicable(format!(
            "preceding clusters end at {} but cluster {} starts at {}",
            next - 1,
            spec.label(),
            spec.first
        )));
    }

    let own = enc.get(spec.first)?;
    let rho = enc.get(spec.last + 1)?.lo;
    if rho <= own.hi {
        return Err(Error::InadmissibleRho {
            rho,
            first: spec.first,
            lambda_n_hi: own.hi,
        });
    }
    let lambda_hat = rayleigh_quotient_max(basis, a, m)?;

    let (mut vartheta, mut theta) = (0.0, 0.0);
    for p in prior {
        let lo = enc.get(p.spec.first)?.lo;
        let (zeta, eps) = nonorthogonality(p.basis, basis, a, m)?;
        vartheta += (rho / lo - 1.0) * (zeta + p.delta_a).powi(2);
        theta += (rho - lo) * (eps + p.delta_b).powi(2);
    }

    // both expressions are fractional-linear in lambda_n, hence monotone on
    // the enclosure: the maximum sits at an endpoint
    let energy = |l: f64| (rho * (lambda_hat - l) + l * lambda_hat * vartheta) / (lambda_hat * (rho - l));
    let l2 = |l: f64| (lambda_hat - l + theta) / (rho - l);
    let db2 = if lambda_hat + theta < rho { l2(own.lo) } else { l2(own.hi) };
    let da2 = energy(own.lo).max(energy(own.hi));
    Ok(RayleighBounds {
        rho,
        lambda_hat,
        vartheta,
        theta,
        delta_a: da2.max(0.0).sqrt(),
        delta_b: db2.max(0.0).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    pub spec: ClusterSpec,
    pub separation: Option<Separation>,
    pub separation_ok: bool,
    pub quantities: Option<ClusterQuantities>,
    pub delta_b_projection: Option<f64>,
    pub delta_a_from_b: Option<f64>,
    pub rayleigh: Option<RayleighBounds>,
    pub diagnostics: Vec<String>,
}

impl ClusterReport {
    pub fn delta_b_alg1(&self) -> Option<f64> {
        self.rayleigh.map(|r| r.delta_b)
    }

    pub fn delta_a_alg1(&self) -> Option<f64> {
        self.rayleigh.map(|r| r.delta_a)
    }

    /// Smallest certified `delta_b`.
    pub fn best_delta_b(&self) -> Option<f64> {
        min_opt(self.delta_b_projection, self.delta_b_alg1())
    }

    /// Smallest certified `delta_a`.
    pub fn best_delta_a(&self) -> Option<f64> {
        min_opt(self.delta_a_from_b, self.delta_a_alg1())
    }

    /// True when both bound families produced a value. The energy lift may
    /// still be inapplicable on coarse meshes; that is not a failure.
    pub fn complete(&self) -> bool {
        self.separation_ok && self.delta_b_projection.is_some() && self.rayleigh.is_some()
    }
}

fn min_opt(a: Option<f64>, b: Option<f64>) -> Option<f64> {
    match (a, b) {
        (Some(x), Some(y)) => Some(x.min(y)),
        (x, None) => x,
        (None, y) => y,
    }
}

/// Everything the per-cluster pipeline reads.
#[derive(Debug, Clone, Copy)]
pub struct ClusterInputs<'a> {
    pub stiffness: &'a SymSparseMatrix,
    pub mass: &'a SymSparseMatrix,
    pub discrete: &'a EigenSolution,
    pub enclosures: &'a EnclosureTable,
    pub ch: ProjectionConstant,
}

fn projection_part(inputs: &ClusterInputs<'_>, spec: &ClusterSpec, report: &mut ClusterReport) -> Result<()> {
    let (tau, tau_h) = compute_tau_tauh(inputs.enclosures, inputs.discrete, spec)?;
    let xi = compute_xi(inputs.enclosures, spec)?;
    let (beta, sharper) = compute_beta(tau, tau_h, xi, spec.size());
    let lambda_n_lo = inputs.enclosures.get(spec.first)?.lo;
    let lambda_last_hi = inputs.enclosures.get(spec.last)?.hi;
    let lambda_h_last = inputs.discrete.value(spec.last)?;
    let db = delta_b_projection(beta, lambda_last_hi, inputs.ch.value);
    report.quantities = Some(ClusterQuantities {
        tau,
        tau_h,
        xi,
        beta,
        sharper_applicable: sharper,
        lambda_n_lo,
        lambda_last_hi,
        lambda_h_last,
        ch: inputs.ch,
    });
    report.delta_b_projection = Some(db);
    report.delta_a_from_b = delta_a_from_delta_b(db, lambda_n_lo, lambda_last_hi, lambda_h_last);
    if report.delta_a_from_b.is_none() {
        report
            .diagnostics
            .push(format!("energy lift not applicable for delta_b = {db:e}"));
    }
    Ok(())
}

/// Reports for all clusters using the solver's own eigenvector blocks.
pub fn build_cluster_reports(inputs: &ClusterInputs<'_>, clusters: &[ClusterSpec]) -> Result<Vec<ClusterReport>> {
    let bases = clusters
        .iter()
        .map(|c| inputs.discrete.basis(c.first, c.last).map(|b| b.to_owned()))
        .collect::<Result<Vec<Mat<f64>>>>()?;
    build_cluster_reports_with_bases(inputs, clusters, &bases)
}

/// Reports for all clusters with caller-supplied bases of the discrete
/// cluster spaces. Failures are recorded per cluster; later clusters still
/// get whatever bounds do not depend on the failed one.
pub fn build_cluster_reports_with_bases(
    inputs: &ClusterInputs<'_>,
    clusters: &[ClusterSpec],
    bases: &[Mat<f64>],
) -> Result<Vec<ClusterReport>> {
    check_cluster_order(clusters)?;
    if bases.len() != clusters.len() {
        return Err(Error::InvalidParameter(format!(
            "{} bases for {} clusters",
            bases.len(),
            clusters.len()
        )));
    }
    let mut reports: Vec<ClusterReport> = Vec::with_capacity(clusters.len());
    for (k, spec) in clusters.iter().enumerate() {
        let mut report = ClusterReport {
            spec: *spec,
            separation: None,
            separation_ok: false,
            quantities: None,
            delta_b_projection: None,
            delta_a_from_b: None,
            rayleigh: None,
            diagnostics: Vec::new(),
        };
        match verify_separation(inputs.enclosures, inputs.discrete, spec) {
            Ok(sep) => {
                report.separation = Some(sep);
                report.separation_ok = sep.ok;
            }
            Err(e) => report.diagnostics.push(format!("separation: {e}")),
        }
        if !report.separation_ok {
            report.diagnostics.push("separation assumption violated; no bounds".into());
            reports.push(report);
            continue;
        }
        if let Err(e) = projection_part(inputs, spec, &mut report) {
            report.diagnostics.push(format!("projection bound: {e}"));
        }

        let prior: Option<Vec<PriorCluster<'_>>> = reports
            .iter()
            .zip(bases)
            .map(|(r, b)| {
                Some(PriorCluster {
                    spec: r.spec,
                    basis: b.as_ref(),
                    delta_a: r.best_delta_a()?,
                    delta_b: r.best_delta_b()?,
                })
            })
            .collect();
        match prior {
            Some(prior) => match rayleigh_bounds(spec, bases[k].as_ref(), &prior, inputs.enclosures, inputs.stiffness, inputs.mass) {
                Ok(r) => report.rayleigh = Some(r),
                Err(e) => report.diagnostics.push(format!("rayleigh bound: {e}")),
            },
            None => report
                .diagnostics
                .push("rayleigh bound: a preceding cluster has no certified bound".into()),
        }
        reports.push(report);
    }
    Ok(reports)
}
