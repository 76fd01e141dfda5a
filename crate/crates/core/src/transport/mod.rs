//! Exact quadratic optimal transport between small discrete measures,
//! continuity-equation trajectories and the derivative and contraction
//! checks built on them.

mod checks;
mod simplex;
mod trajectory;

pub use checks::{
    verify_contraction, verify_geodesic_differentiation, verify_joint_derivative,
    verify_w2_derivative, verify_weak_continuity, ContractionReport, ContractionRow,
    DerivativeReport, DerivativeRow, GeodesicReport, GeodesicRow, JointReport, WeakContinuityReport,
};
pub use trajectory::{continuity_equation_solve, CeMethod, MeasureTrajectory, TrajectorySource};

use crate::error::{invalid, Error, Result};
use crate::space::chart::{self, Chart, Coords, ZERO};
use crate::space::MetricMeasureSpace;
use std::fmt::Write as _;

/// Joint support budget of one transport solve.
pub const SUPPORT_LIMIT: usize = 600;

/// Probability measure on the points of a space.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscreteMeasure {
    weights: Vec<f64>,
    density_bound: f64,
}

impl DiscreteMeasure {
    /// Validates `Σ w = 1` within 1e-12 and `w ≥ 0`.
    pub fn new(space: &MetricMeasureSpace, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != space.npoints() {
            return Err(Error::DimensionMismatch {
                expected: space.npoints(),
                found: weights.len(),
            });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("weights", "must be finite and nonnegative"));
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(invalid("weights", format!("sum to {total}, not 1")));
        }
        let density_bound = weights
            .iter()
            .zip(space.weights())
            .map(|(w, m)| w / m)
            .fold(0.0, f64::max);
        Ok(DiscreteMeasure {
            weights,
            density_bound,
        })
    }

    /// Rescales nonnegative `raw` to unit mass.
    pub fn normalized(space: &MetricMeasureSpace, raw: &[f64]) -> Result<Self> {
        let total: f64 = raw.iter().sum();
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::DegenerateMarginal(format!("total mass {total}")));
        }
        Self::new(space, raw.iter().map(|w| w / total).collect())
    }

    pub fn dirac(space: &MetricMeasureSpace, x: usize) -> Result<Self> {
        space.check_point(x)?;
        let mut w = vec![0.0; space.npoints()];
        w[x] = 1.0;
        Self::new(space, w)
    }

    /// Reference measure restricted to `ids` and renormalized.
    pub fn uniform_on(space: &MetricMeasureSpace, ids: &[usize]) -> Result<Self> {
        let mut w = vec![0.0; space.npoints()];
        for &i in ids {
            space.check_point(i)?;
            w[i] = space.weight(i);
        }
        Self::normalized(space, &w)
    }

    /// `m(x) exp(−d(c, x)² / 2σ²)` on `d < 3σ`, normalized.
    pub fn gaussian(space: &MetricMeasureSpace, center: &Coords, sigma: f64) -> Result<Self> {
        if !(sigma > 0.0) {
            return Err(invalid("sigma", "must be positive"));
        }
        let w: Vec<f64> = (0..space.npoints())
            .map(|i| {
                let d = space.dist_to_point(center, i);
                if d < 3.0 * sigma {
                    space.weight(i) * (-d * d / (2.0 * sigma * sigma)).exp()
                } else {
                    0.0
                }
            })
            .collect();
        Self::normalized(space, &w)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `max_x μ(x) / m(x)`.
    pub fn density_bound(&self) -> f64 {
        self.density_bound
    }

    pub fn support(&self) -> Vec<usize> {
        (0..self.weights.len()).filter(|&i| self.weights[i] > 0.0).collect()
    }

    pub fn atoms(&self, space: &MetricMeasureSpace) -> Atoms {
        let ids = self.support();
        Atoms {
            points: ids.iter().map(|&i| *space.coord(i)).collect(),
            masses: ids.iter().map(|&i| self.weights[i]).collect(),
        }
    }

    /// Nearest-node binning of atoms; mass is carried over exactly.
    pub fn binned(space: &MetricMeasureSpace, atoms: &Atoms) -> Result<Self> {
        let mut w = vec![0.0; space.npoints()];
        for (p, m) in atoms.points.iter().zip(&atoms.masses) {
            w[space.nearest_point(p)] += m;
        }
        Self::new(space, w)
    }
}

/// Weighted chart points, not tied to grid nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct Atoms {
    pub points: Vec<Coords>,
    pub masses: Vec<f64>,
}

impl Atoms {
    pub fn new(points: Vec<Coords>, masses: Vec<f64>) -> Result<Self> {
        if points.len() != masses.len() {
            return Err(Error::DimensionMismatch {
                expected: points.len(),
                found: masses.len(),
            });
        }
        if masses.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("masses", "must be nonnegative"));
        }
        Ok(Atoms { points, masses })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }

    /// Drops zero-mass atoms.
    fn support(&self) -> Atoms {
        let keep: Vec<usize> = (0..self.len()).filter(|&i| self.masses[i] > 0.0).collect();
        Atoms {
            points: keep.iter().map(|&i| self.points[i]).collect(),
            masses: keep.iter().map(|&i| self.masses[i]).collect(),
        }
    }
}

/// Optimal coupling for the cost `d²` with Kantorovich potentials.
#[derive(Clone, Debug)]
pub struct TransportSolution {
    /// `W₂²`.
    pub cost: f64,
    /// Positive entries `(source atom, target atom, mass)`.
    pub coupling: Vec<(usize, usize, f64)>,
    pub source: Atoms,
    pub target: Atoms,
    /// Grid ids of the atoms, when both measures live on a space.
    pub source_ids: Option<Vec<usize>>,
    pub target_ids: Option<Vec<usize>>,
    /// `φ(x) + ψ(y) ≤ d²(x, y)`, equality on the coupling, `φ(first source atom) = 0`.
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub duality_gap: f64,
    pub pivots: usize,
}

impl TransportSolution {
    pub fn w2(&self) -> f64 {
        self.cost.max(0.0).sqrt()
    }

    /// Barycentric slope `−Σ_j π_ij log_{x_i}(y_j) / μ_i` at each source atom,
    /// the gradient of the potential for the half-squared cost.
    pub fn source_slopes(&self, chart: &Chart) -> Vec<Coords> {
        slopes(chart, &self.source, &self.target, self.coupling.iter().map(|&(i, j, w)| (i, j, w)))
    }

    pub fn target_slopes(&self, chart: &Chart) -> Vec<Coords> {
        slopes(chart, &self.target, &self.source, self.coupling.iter().map(|&(i, j, w)| (j, i, w)))
    }

    /// `i,j,mass` triplets; ids are grid ids when available.
    pub fn coupling_csv(&self) -> String {
        let mut out = String::from("source,target,mass\n");
        for &(i, j, w) in &self.coupling {
            let si = self.source_ids.as_ref().map_or(i, |ids| ids[i]);
            let tj = self.target_ids.as_ref().map_or(j, |ids| ids[j]);
            let _ = writeln!(out, "{si},{tj},{w:.16e}");
        }
        out
    }

    /// c-transform extension of the potentials to every point of `space`:
    /// `ψ̃ = φ^c` over the source support, then `φ̃ = ψ̃^c` over all points.
    pub fn extended_potentials(&self, space: &MetricMeasureSpace) -> (Vec<f64>, Vec<f64>) {
        let n = space.npoints();
        let chart = space.chart();
        let psi: Vec<f64> = (0..n)
            .map(|y| {
                self.source
                    .points
                    .iter()
                    .zip(&self.phi)
                    .map(|(x, f)| chart.distance(x, space.coord(y)).powi(2) - f)
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let phi: Vec<f64> = (0..n)
            .map(|x| {
                (0..n)
                    .map(|y| space.dist(x, y).powi(2) - psi[y])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        (phi, psi)
    }
}

fn slopes(
    chart: &Chart,
    from: &Atoms,
    to: &Atoms,
    entries: impl Iterator<Item = (usize, usize, f64)>,
) -> Vec<Coords> {
    let mut g = vec![ZERO; from.len()];
    for (i, j, w) in entries {
        let v = chart.displacement(&from.points[i], &to.points[j]);
        g[i] = chart::axpy(&g[i], -w / from.masses[i], &v);
    }
    g
}

/// Exact `W₂` between atom sets on a chart.
pub fn wasserstein2_atoms(chart: &Chart, mu: &Atoms, nu: &Atoms) -> Result<TransportSolution> {
    if !chart.has_coordinates() {
        return Err(Error::UnsupportedChart {
            op: "wasserstein2_atoms",
            chart: chart.tag(),
        });
    }
    let (mu, nu) = (mu.support(), nu.support());
    solve_atoms(mu, nu, |x, y| chart.distance(x, y).powi(2), None, None)
}

/// Exact `W₂` between measures on the points of `space`.
pub fn wasserstein2(space: &MetricMeasureSpace, mu: &DiscreteMeasure, nu: &DiscreteMeasure) -> Result<TransportSolution> {
    for m in [mu, nu] {
        if m.weights.len() != space.npoints() {
            return Err(Error::DimensionMismatch {
                expected: space.npoints(),
                found: m.weights.len(),
            });
        }
    }
    let (si, ti) = (mu.support(), nu.support());
    let atoms = |m: &DiscreteMeasure, ids: &[usize]| Atoms {
        points: ids.iter().map(|&i| *space.coord(i)).collect(),
        masses: ids.iter().map(|&i| m.weights[i]).collect(),
    };
    let (a, b) = (atoms(mu, &si), atoms(nu, &ti));
    // Graph spaces have no coordinates; go through ids.
    let cost = |i: usize, j: usize| space.dist(si[i], ti[j]).powi(2);
    solve_indexed(a, b, cost, Some(si.clone()), Some(ti.clone()))
}

fn solve_atoms(
    mu: Atoms,
    nu: Atoms,
    cost: impl Fn(&Coords, &Coords) -> f64,
    source_ids: Option<Vec<usize>>,
    target_ids: Option<Vec<usize>>,
) -> Result<TransportSolution> {
    let c = |i: usize, j: usize| cost(&mu.points[i], &nu.points[j]);
    let table = build_table(mu.len(), nu.len(), c);
    finish(mu, nu, table, source_ids, target_ids)
}

fn solve_indexed(
    mu: Atoms,
    nu: Atoms,
    cost: impl Fn(usize, usize) -> f64,
    source_ids: Option<Vec<usize>>,
    target_ids: Option<Vec<usize>>,
) -> Result<TransportSolution> {
    let table = build_table(mu.len(), nu.len(), cost);
    finish(mu, nu, table, source_ids, target_ids)
}

fn build_table(m: usize, k: usize, cost: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    let mut table = Vec::with_capacity(m * k);
    for i in 0..m {
        for j in 0..k {
            table.push(cost(i, j));
        }
    }
    table
}

fn finish(
    mu: Atoms,
    nu: Atoms,
    table: Vec<f64>,
    source_ids: Option<Vec<usize>>,
    target_ids: Option<Vec<usize>>,
) -> Result<TransportSolution> {
    let (m, k) = (mu.len(), nu.len());
    if m == 0 || k == 0 {
        return Err(Error::DegenerateMarginal("empty support".into()));
    }
    if m + k > SUPPORT_LIMIT {
        return Err(Error::SupportTooLarge {
            support: m + k,
            limit: SUPPORT_LIMIT,
        });
    }
    let (ta, tb) = (mu.total(), nu.total());
    if !(ta > 0.0) || !(tb > 0.0) {
        return Err(Error::DegenerateMarginal(format!("total masses {ta} and {tb}")));
    }
    if (ta - tb).abs() > 1e-10 {
        return Err(Error::Infeasible(format!("marginal totals differ: {ta} vs {tb}")));
    }
    let plan = simplex::solve(&mu.masses, &nu.masses, &table)?;
    let shift = plan.u[0];
    let phi: Vec<f64> = plan.u.iter().map(|u| u - shift).collect();
    let psi: Vec<f64> = plan.v.iter().map(|v| v + shift).collect();
    let mut coupling: Vec<(usize, usize, f64)> = plan.cells.into_iter().filter(|c| c.2 > 0.0).collect();
    coupling.sort_by_key(|&(i, j, _)| (i, j));
    let cost: f64 = coupling.iter().map(|&(i, j, w)| w * table[i * k + j]).sum();
    let dual: f64 = mu.masses.iter().zip(&phi).map(|(a, f)| a * f).sum::<f64>()
        + nu.masses.iter().zip(&psi).map(|(b, g)| b * g).sum::<f64>();
    Ok(TransportSolution {
        cost,
        coupling,
        source: mu,
        target: nu,
        source_ids,
        target_ids,
        phi,
        psi,
        duality_gap: (dual - cost).abs(),
        pivots: plan.iterations,
    })
}
