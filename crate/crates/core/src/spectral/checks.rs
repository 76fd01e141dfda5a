//! Report-only verifications of heat-kernel and eigenfunction estimates.

use super::basis::SpectralBasis;
use super::heat::{heat_kernel_row, heat_semigroup_apply, theta_circle};
use super::laplacian::Scheme;
use crate::error::{invalid, Result};
use crate::space::chart::{self, wrap_diff, Chart, Coords};
use crate::space::{AhlforsReport, GradientStencil, MetricMeasureSpace};
use rayon::prelude::*;
use std::collections::BTreeMap;

/// Candidate values for the exponential-growth constant `C3`.
/// Positive, so the eigenfunction bound stays meaningful at λ₀ = 0.
const C3_CANDIDATES: [f64; 6] = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0];

#[derive(Clone, Debug, PartialEq)]
pub struct HeatKernelReport {
    /// Smallest `C1` making the lower bound hold (for the chosen `C3`).
    pub c1_low: f64,
    /// Smallest `C1` making the upper bound hold.
    pub c1_high: f64,
    /// `max(c1_low, c1_high, 1)`.
    pub c1: f64,
    pub c3: f64,
    /// Smallest `C2` for the gradient bound using discrete slopes.
    pub c2: f64,
    /// `max |p_t − θ| / θ(t, 0)` against the theta-product closed form, on
    /// exact lattice bases.
    pub closed_form_deviation: Option<f64>,
    pub mass_residual: f64,
    pub min_kernel: f64,
    /// Set when a negative kernel value was seen at `t ≥ h²`.
    pub positivity_violation: bool,
}

struct Sample {
    t: f64,
    d: f64,
    mass: f64,
    p: f64,
    slope: f64,
}

/// Smallest `C` with `C·e^{−C3 t}` dominating every `log`-ratio sample.
fn fit_for_c3(samples: &[(f64, f64)], c3: f64) -> f64 {
    samples
        .iter()
        .map(|&(log_ratio, t)| (log_ratio - c3 * t).exp())
        .fold(0.0, f64::max)
}

pub fn verify_gaussian_bounds(
    basis: &SpectralBasis,
    space: &MetricMeasureSpace,
    t_grid: &[f64],
    pair_sample: &[(usize, usize)],
) -> Result<HeatKernelReport> {
    if t_grid.is_empty() || pair_sample.is_empty() {
        return Err(invalid("t_grid/pair_sample", "must be nonempty"));
    }
    if t_grid.iter().any(|t| !(*t > 0.0)) {
        return Err(invalid("t_grid", "times must be positive"));
    }
    for &(x, y) in pair_sample {
        space.check_point(x)?;
        space.check_point(y)?;
    }
    let h = space.grid_spacing();
    let mut by_x: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for &(x, y) in pair_sample {
        by_x.entry(x).or_default().push(y);
    }
    let ys_all: Vec<usize> = by_x.values().flatten().copied().collect();
    let neighbours: BTreeMap<usize, Vec<usize>> = ys_all
        .iter()
        .map(|&y| {
            let nb = (0..space.npoints())
                .filter(|&z| z != y && space.dist(y, z) < 1.5 * h)
                .collect();
            (y, nb)
        })
        .collect();
    let exact_torus = basis.scheme() == Scheme::TorusFourierExact
        && space.chart().lattice().is_some();

    let jobs: Vec<(usize, f64)> = by_x
        .keys()
        .flat_map(|&x| t_grid.iter().map(move |&t| (x, t)))
        .collect();
    type JobOut = (Vec<Sample>, f64, f64);
    let results: Vec<JobOut> = jobs
        .par_iter()
        .map(|&(x, t)| {
            let row = heat_kernel_row(basis, t, x).expect("t checked positive");
            let mass = space.ball_mass(x, t.sqrt());
            let total: f64 = row.iter().zip(space.weights()).map(|(p, w)| p * w).sum();
            let mut dev: f64 = 0.0;
            if exact_torus {
                let theta0 = theta_product(space.chart(), t, space.coord(x), space.coord(x));
                for &y in &by_x[&x] {
                    let th = theta_product(space.chart(), t, space.coord(x), space.coord(y));
                    dev = dev.max((row[y] - th).abs() / theta0);
                }
            }
            let samples = by_x[&x]
                .iter()
                .map(|&y| Sample {
                    t,
                    d: space.dist(x, y),
                    mass,
                    p: row[y],
                    slope: space.slope_with(&row, y, &neighbours[&y]),
                })
                .collect();
            (samples, (total - 1.0).abs(), dev)
        })
        .collect();

    let mut low = Vec::new();
    let mut high = Vec::new();
    let mut grad = Vec::new();
    let mut min_kernel = f64::INFINITY;
    let mut positivity_violation = false;
    let mut mass_residual: f64 = 0.0;
    let mut deviation: f64 = 0.0;
    for (samples, mres, dev) in &results {
        mass_residual = mass_residual.max(*mres);
        deviation = deviation.max(*dev);
        for s in samples {
            min_kernel = min_kernel.min(s.p);
            if s.p <= 0.0 {
                if s.t >= h * h {
                    positivity_violation = true;
                }
                low.push((f64::INFINITY, s.t));
            } else {
                // lower bound: e^{−d²/3t}/(m p) ≤ C1 e^{C3 t}
                low.push((-(s.d * s.d) / (3.0 * s.t) - (s.mass * s.p).ln(), s.t));
                // upper bound: p m e^{d²/5t} ≤ C1 e^{C3 t}
                high.push(((s.mass * s.p).ln() + s.d * s.d / (5.0 * s.t), s.t));
            }
            if s.slope > 0.0 {
                grad.push((
                    (s.slope * s.mass * s.t.sqrt()).ln() + s.d * s.d / (5.0 * s.t),
                    s.t,
                ));
            }
        }
    }
    let t_max = t_grid.iter().cloned().fold(0.0, f64::max);
    let mut best: Option<(f64, f64, f64, f64)> = None;
    for &c3 in &C3_CANDIDATES {
        let cl = fit_for_c3(&low, c3);
        let ch = fit_for_c3(&high, c3);
        let c1 = cl.max(ch).max(1.0);
        let score = c1 * (c3 * t_max).exp();
        if best.map_or(true, |b| score < b.0) {
            best = Some((score, cl, ch, c3));
        }
    }
    let (_, c1_low, c1_high, c3) = best.expect("candidate list is nonempty");
    Ok(HeatKernelReport {
        c1_low,
        c1_high,
        c1: c1_low.max(c1_high).max(1.0),
        c3,
        c2: fit_for_c3(&grad, c3),
        closed_form_deviation: exact_torus.then_some(deviation),
        mass_residual,
        min_kernel,
        positivity_violation,
    })
}

/// Product of circle theta sums over the lattice axes of a flat chart.
pub(crate) fn theta_product(chart: &Chart, t: f64, a: &Coords, b: &Coords) -> f64 {
    let dims = chart.lattice().map(|ax| ax.len()).unwrap_or(0);
    (0..dims)
        .map(|k| theta_circle(t, wrap_diff(b[k] - a[k])))
        .product()
}

/// Gradient fields of basis expansions: analytic on exact lattice bases,
/// stencil-based otherwise.
pub(crate) enum GradientSource {
    Exact,
    Stencil(GradientStencil),
}

impl GradientSource {
    pub(crate) fn new(basis: &SpectralBasis, space: &MetricMeasureSpace) -> Result<Self> {
        if basis.modes().is_some() {
            Ok(GradientSource::Exact)
        } else {
            Ok(GradientSource::Stencil(GradientStencil::new(space)?))
        }
    }

    pub(crate) fn tag(&self) -> &'static str {
        match self {
            GradientSource::Exact => "exact-fourier",
            GradientSource::Stencil(_) => "stencil",
        }
    }

    /// Gradient of the function with basis coefficients `coeffs` (whose
    /// synthesis is `values`) at every point.
    pub(crate) fn gradient(
        &self,
        basis: &SpectralBasis,
        space: &MetricMeasureSpace,
        coeffs: &[f64],
        values: &[f64],
    ) -> Vec<Coords> {
        match self {
            GradientSource::Exact => (0..space.npoints())
                .into_par_iter()
                .map(|x| {
                    basis
                        .gradient_of_expansion(coeffs, space.coord(x))
                        .expect("exact basis carries modes")
                })
                .collect(),
            GradientSource::Stencil(st) => st.gradient(values),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BakryEmeryReport {
    /// `max (|∇P_t f|² − e^{−2Kt} P_t|∇f|²)` over points, samples and times.
    pub worst_excess: f64,
    /// `worst_excess / max_f ‖∇f‖²_∞`.
    pub worst_relative: f64,
    pub gradient_source: &'static str,
}

pub fn verify_bakry_emery(
    basis: &SpectralBasis,
    space: &MetricMeasureSpace,
    k_curv: f64,
    f_sample: &[Vec<f64>],
    t_grid: &[f64],
) -> Result<BakryEmeryReport> {
    let src = GradientSource::new(basis, space)?;
    let mut worst = f64::NEG_INFINITY;
    let mut grad_scale: f64 = 0.0;
    for f in f_sample {
        let coeffs = basis.project(f);
        let values = basis.synthesize(&coeffs);
        let g = src.gradient(basis, space, &coeffs, &values);
        let g2: Vec<f64> = g.iter().map(|v| chart::dot(v, v)).collect();
        grad_scale = grad_scale.max(g2.iter().cloned().fold(0.0, f64::max));
        for &t in t_grid {
            let pt_coeffs: Vec<f64> = coeffs
                .iter()
                .zip(basis.eigenvalues())
                .map(|(c, l)| c * (-l * t).exp())
                .collect();
            let pt_values = basis.synthesize(&pt_coeffs);
            let gp = src.gradient(basis, space, &pt_coeffs, &pt_values);
            let pg2 = heat_semigroup_apply(basis, t, &g2)?;
            let damp = (-2.0 * k_curv * t).exp();
            for x in 0..space.npoints() {
                worst = worst.max(chart::dot(&gp[x], &gp[x]) - damp * pg2[x]);
            }
        }
    }
    let worst = worst.max(0.0);
    Ok(BakryEmeryReport {
        worst_excess: worst,
        worst_relative: if grad_scale > 0.0 { worst / grad_scale } else { 0.0 },
        gradient_source: src.tag(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenfunctionBoundRow {
    pub index: usize,
    pub eigenvalue: f64,
    pub sup_norm: f64,
    pub gradient_sup: f64,
    pub sup_bound: f64,
    /// `e·√((λ + |K|)/2)·‖u‖_∞`, the bound delivered by the regularization argument.
    pub gradient_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenfunctionBoundReport {
    pub rows: Vec<EigenfunctionBoundRow>,
    pub max_sup_ratio: f64,
    pub max_gradient_ratio: f64,
    /// Ratio against `√((λ + |K|)/2)·‖u‖_∞` without the factor `e`.
    pub max_gradient_ratio_without_e: f64,
}

pub fn eigenfunction_bounds(
    basis: &SpectralBasis,
    space: &MetricMeasureSpace,
    n: f64,
    k_curv: f64,
    ahlfors: &AhlforsReport,
    kernel: &HeatKernelReport,
) -> Result<EigenfunctionBoundReport> {
    let src = GradientSource::new(basis, space)?;
    let e = std::f64::consts::E;
    let rows: Vec<EigenfunctionBoundRow> = (0..basis.len())
        .into_par_iter()
        .map(|i| {
            let u = basis.eigenfunction(i);
            let mut coeffs = vec![0.0; basis.len()];
            coeffs[i] = 1.0;
            let g = src.gradient(basis, space, &coeffs, u);
            let lam = basis.eigenvalue(i);
            let sup = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            EigenfunctionBoundRow {
                index: i,
                eigenvalue: lam,
                sup_norm: sup,
                gradient_sup: g.iter().map(chart::norm).fold(0.0, f64::max),
                sup_bound: kernel.c1 * e / ahlfors.c1 * (kernel.c3 + lam).powf(n / 2.0),
                gradient_bound: e * ((lam + k_curv.abs()) / 2.0).sqrt() * sup,
            }
        })
        .collect();
    let ratio = |a: f64, b: f64| if a == 0.0 { 0.0 } else { a / b };
    let max_sup_ratio = rows
        .iter()
        .map(|r| ratio(r.sup_norm, r.sup_bound))
        .fold(0.0, f64::max);
    let max_gradient_ratio = rows
        .iter()
        .map(|r| ratio(r.gradient_sup, r.gradient_bound))
        .fold(0.0, f64::max);
    Ok(EigenfunctionBoundReport {
        max_sup_ratio,
        max_gradient_ratio,
        max_gradient_ratio_without_e: max_gradient_ratio * e,
        rows,
    })
}
