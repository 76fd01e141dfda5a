use super::{wasserstein2_atoms, Atoms, DiscreteMeasure, MeasureTrajectory, TransportSolution};
use crate::error::{invalid, Error, Result};
use crate::fields::{SmoothFunction, TrigPolynomial, VectorField};
use crate::flows::{rlf_test_functions, FlowMap};
use crate::space::chart::{self, Chart};
use crate::space::MetricMeasureSpace;
use crate::spectral::Phase;
use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq)]
pub struct DerivativeRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// `d/dt ½W₂²(μ_t, ν)` against `∫ b·∇φ_t dμ_t` at interior nodes.
#[derive(Clone, Debug)]
pub struct DerivativeReport {
    pub rows: Vec<DerivativeRow>,
    pub max_discrepancy: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// One-sided check of `d/dt ½W₂²(μ_t, ν_t) ≤ ∫ b·∇φ dμ_t + ∫ b·∇ψ dν_t`.
#[derive(Clone, Debug)]
pub struct JointReport {
    pub rows: Vec<DerivativeRow>,
    /// `max (lhs − rhs)`; negative when the inequality holds strictly everywhere.
    pub worst_violation: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ContractionRow {
    pub t: f64,
    pub w2: f64,
    /// `e^{L t} W₂(μ₀, ν₀)`.
    pub bound: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug)]
pub struct ContractionReport {
    pub rows: Vec<ContractionRow>,
    pub l_sym: f64,
    /// `5 h / W₂(μ₀, ν₀)`.
    pub tol_disc: f64,
    pub passed: bool,
    pub pairs_checked: usize,
    /// `max d(X_t x, X_t y) / (e^{L t} d(x, y))` over sampled pairs and nodes.
    pub worst_pair_ratio: f64,
    pub pairs_passed: bool,
}

impl ContractionReport {
    pub fn csv(&self) -> String {
        let mut out = String::from("t,w2,bound,ratio\n");
        for r in &self.rows {
            out.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", r.t, r.w2, r.bound, r.ratio));
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GeodesicRow {
    pub s: f64,
    /// Centered `s`-difference of `∫ b·∇φ_s dη_s`.
    pub lhs: f64,
    /// `∫ ∇_sym b(∇φ_s, ∇φ_s) dη_s`.
    pub rhs: f64,
}

#[derive(Clone, Debug)]
pub struct GeodesicReport {
    pub rows: Vec<GeodesicRow>,
    pub max_rel_gap: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct WeakContinuityReport {
    pub functions: usize,
    pub worst: f64,
    pub threshold: f64,
    pub passed: bool,
}

/// Relative pass threshold of the geodesic differentiation check.
const GEODESIC_REL: f64 = 0.15;
const GEODESIC_SUPPORT: usize = 200;

fn check_coordinates(space: &MetricMeasureSpace, op: &'static str) -> Result<()> {
    if space.chart().has_coordinates() {
        Ok(())
    } else {
        Err(Error::UnsupportedChart {
            op,
            chart: space.chart().tag(),
        })
    }
}

fn check_spacing(times: &[f64]) -> Result<()> {
    if times.len() < 3 {
        return Err(invalid("trajectory", "needs at least three nodes"));
    }
    let horizon = times[times.len() - 1] - times[0];
    if times.windows(2).any(|w| w[1] - w[0] > 0.01 * horizon * (1.0 + 1e-9)) {
        return Err(invalid("trajectory", "node spacing must be at most 0.01 T"));
    }
    Ok(())
}

fn solves(chart: &Chart, left: &[Atoms], right: &[Atoms]) -> Result<Vec<TransportSolution>> {
    left.par_iter()
        .zip(right)
        .map(|(a, b)| wasserstein2_atoms(chart, a, b))
        .collect()
}

fn pairing(b: &VectorField, t: f64, atoms: &Atoms, slopes: &[chart::Coords]) -> f64 {
    atoms
        .points
        .iter()
        .zip(&atoms.masses)
        .zip(slopes)
        .map(|((p, m), g)| m * chart::dot(&b.eval(p, t), g))
        .sum()
}

pub fn verify_w2_derivative(
    space: &MetricMeasureSpace,
    traj: &MeasureTrajectory,
    b: &VectorField,
    nu: &DiscreteMeasure,
) -> Result<DerivativeReport> {
    check_coordinates(space, "verify_w2_derivative")?;
    let times = traj.times();
    check_spacing(times)?;
    let chart = space.chart();
    let left: Vec<Atoms> = (0..times.len()).map(|k| traj.atoms_at(space, k)).collect();
    let right = vec![nu.atoms(space); times.len()];
    let sols = solves(chart, &left, &right)?;
    let mut rows = Vec::new();
    for k in 1..times.len() - 1 {
        let lhs = 0.5 * (sols[k + 1].cost - sols[k - 1].cost) / (times[k + 1] - times[k - 1]);
        let rhs = pairing(b, times[k], &sols[k].source, &sols[k].source_slopes(chart));
        rows.push(DerivativeRow { t: times[k], lhs, rhs });
    }
    let w2max = sols.iter().map(|s| s.w2()).fold(0.0, f64::max);
    let threshold = 5.0 * space.grid_spacing() * b.sup_norm(space, times)? * w2max;
    let max_discrepancy = rows.iter().map(|r| (r.lhs - r.rhs).abs()).fold(0.0, f64::max);
    Ok(DerivativeReport {
        rows,
        max_discrepancy,
        threshold,
        passed: max_discrepancy <= threshold + 1e-12,
    })
}

pub fn verify_joint_derivative(
    space: &MetricMeasureSpace,
    traj_mu: &MeasureTrajectory,
    traj_nu: &MeasureTrajectory,
    b: &VectorField,
) -> Result<JointReport> {
    check_coordinates(space, "verify_joint_derivative")?;
    let times = traj_mu.times();
    if times != traj_nu.times() {
        return Err(invalid("traj_nu", "time grids differ"));
    }
    check_spacing(times)?;
    let chart = space.chart();
    let left: Vec<Atoms> = (0..times.len()).map(|k| traj_mu.atoms_at(space, k)).collect();
    let right: Vec<Atoms> = (0..times.len()).map(|k| traj_nu.atoms_at(space, k)).collect();
    let sols = solves(chart, &left, &right)?;
    let mut rows = Vec::new();
    for k in 1..times.len() - 1 {
        let lhs = 0.5 * (sols[k + 1].cost - sols[k - 1].cost) / (times[k + 1] - times[k - 1]);
        let s = &sols[k];
        let rhs = pairing(b, times[k], &s.source, &s.source_slopes(chart))
            + pairing(b, times[k], &s.target, &s.target_slopes(chart));
        rows.push(DerivativeRow { t: times[k], lhs, rhs });
    }
    let w2max = sols.iter().map(|s| s.w2()).fold(0.0, f64::max);
    let threshold = 5.0 * space.grid_spacing() * b.sup_norm(space, times)? * w2max;
    let worst_violation = rows.iter().map(|r| r.lhs - r.rhs).fold(f64::NEG_INFINITY, f64::max);
    Ok(JointReport {
        rows,
        worst_violation,
        threshold,
        passed: worst_violation <= threshold + 1e-12,
    })
}

/// Pushes `μ₀`, `ν₀` along `flow` and compares `W₂(μ_t, ν_t)` with
/// `e^{L t} W₂(μ₀, ν₀)`; also checks `d(X_t x, X_t y) ≤ e^{L t} d(x, y)` on
/// `pairs` sampled point pairs.
pub fn verify_contraction(
    space: &MetricMeasureSpace,
    flow: &FlowMap,
    mu0: &DiscreteMeasure,
    nu0: &DiscreteMeasure,
    l_sym: f64,
    pairs: usize,
    seed: u64,
) -> Result<ContractionReport> {
    check_coordinates(space, "verify_contraction")?;
    if !flow.covers(space) {
        return Err(invalid("flow", "must start at every grid point"));
    }
    if !(l_sym >= 0.0) || !l_sym.is_finite() {
        return Err(invalid("l_sym", "must be finite and nonnegative"));
    }
    let times = flow.times();
    let push = |m: &DiscreteMeasure| -> Vec<Atoms> {
        let ids = m.support();
        (0..times.len())
            .map(|k| Atoms {
                points: ids.iter().map(|&x| *flow.position(x, k)).collect(),
                masses: ids.iter().map(|&x| m.weights()[x]).collect(),
            })
            .collect()
    };
    let chart = space.chart();
    let sols = solves(chart, &push(mu0), &push(nu0))?;
    let w0 = sols[0].w2();
    if !(w0 > 0.0) {
        return Err(Error::DegenerateMarginal("μ₀ = ν₀".into()));
    }
    let tol_disc = 5.0 * space.grid_spacing() / w0;
    let rows: Vec<ContractionRow> = times
        .iter()
        .zip(&sols)
        .map(|(&t, s)| {
            let bound = (l_sym * t).exp() * w0;
            ContractionRow {
                t,
                w2: s.w2(),
                bound,
                ratio: s.w2() / bound,
            }
        })
        .collect();
    let passed = rows.iter().all(|r| r.ratio <= 1.0 + tol_disc);

    let sample = space.sample_pairs(pairs, seed);
    let worst_pair_ratio = sample
        .par_iter()
        .map(|&(x, y)| {
            let d0 = space.dist(x, y);
            (0..times.len())
                .map(|k| chart.distance(flow.position(x, k), flow.position(y, k)) / ((l_sym * times[k]).exp() * d0))
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(ContractionReport {
        rows,
        l_sym,
        tol_disc,
        passed,
        pairs_checked: sample.len(),
        worst_pair_ratio,
        pairs_passed: worst_pair_ratio <= 1.0 + 1e-3,
    })
}

/// Along the displacement interpolation from `eta0` to `eta1`, compares the
/// `s`-derivative of `∫ b_t·v dη_s` with `∫ ∇_sym b_t(v, v) dη_s`, where `v`
/// is the geodesic velocity of each coupled pair.
pub fn verify_geodesic_differentiation(
    space: &MetricMeasureSpace,
    b: &VectorField,
    eta0: &Atoms,
    eta1: &Atoms,
    s_grid: &[f64],
    t: f64,
) -> Result<GeodesicReport> {
    check_coordinates(space, "verify_geodesic_differentiation")?;
    b.check_time(t)?;
    if eta0.len() + eta1.len() > GEODESIC_SUPPORT {
        return Err(Error::SupportTooLarge {
            support: eta0.len() + eta1.len(),
            limit: GEODESIC_SUPPORT,
        });
    }
    if s_grid.len() < 3 || s_grid.windows(2).any(|w| !(w[1] > w[0])) || s_grid[0] < 0.0 || s_grid[s_grid.len() - 1] > 1.0 {
        return Err(invalid("s_grid", "needs three increasing nodes in [0, 1]"));
    }
    let chart = space.chart();
    let sol = wasserstein2_atoms(chart, eta0, eta1)?;
    let legs: Vec<(chart::Coords, chart::Coords, chart::Coords, f64)> = sol
        .coupling
        .iter()
        .map(|&(i, j, w)| {
            let x = sol.source.points[i];
            let y = sol.target.points[j];
            (x, y, chart.displacement(&x, &y), w)
        })
        .collect();
    let at = |s: f64| -> Vec<(chart::Coords, chart::Coords, f64)> {
        legs.iter()
            .map(|(x, y, v, w)| {
                let g = chart.exp(x, &chart::scale(v, s));
                let vel = chart::sub(&chart.displacement(&g, y), &chart.displacement(&g, x));
                (g, vel, *w)
            })
            .collect()
    };
    let lhs_at = |s: f64| -> f64 { at(s).iter().map(|(g, v, w)| w * chart::dot(&b.eval(g, t), v)).sum() };
    let mut rows = Vec::new();
    for k in 1..s_grid.len() - 1 {
        let lhs = (lhs_at(s_grid[k + 1]) - lhs_at(s_grid[k - 1])) / (s_grid[k + 1] - s_grid[k - 1]);
        let rhs: f64 = at(s_grid[k])
            .iter()
            .map(|(g, v, w)| w * b.jacobian_unchecked(g, t).sym_form(v, v))
            .sum();
        rows.push(GeodesicRow { s: s_grid[k], lhs, rhs });
    }
    let floor = 1e-9;
    let passed = rows.iter().all(|r| (r.lhs - r.rhs).abs() <= GEODESIC_REL * r.rhs.abs() + floor);
    let max_rel_gap = rows
        .iter()
        .map(|r| (r.lhs - r.rhs).abs() / r.rhs.abs().max(floor))
        .fold(0.0, f64::max);
    Ok(GeodesicReport {
        rows,
        max_rel_gap,
        passed,
    })
}

fn weak_test_functions(chart: &Chart) -> Result<Vec<Box<dyn SmoothFunction>>> {
    if chart.lattice().is_some() && !matches!(chart, Chart::ProductCircle { .. }) {
        let d = chart.coord_len();
        let mut out: Vec<Box<dyn SmoothFunction>> = Vec::new();
        let mut m = 1i64;
        while out.len() < 20 {
            for a in 0..d {
                for phase in [Phase::Cos, Phase::Sin] {
                    let mut k = [0i64; 4];
                    k[a] = m;
                    if a + 1 < d {
                        k[a + 1] = (m + a as i64) % 3 - 1;
                    }
                    out.push(Box::new(TrigPolynomial::mode(k, phase, 1.0)));
                }
            }
            m += 1;
        }
        out.truncate(20);
        Ok(out)
    } else {
        rlf_test_functions(chart)
    }
}

/// `|d/dt ∫ f dμ_t − ∫ b·∇f dμ_t| ≤ 5 h Lip(f) ‖b‖∞` at interior nodes.
pub fn verify_weak_continuity(
    space: &MetricMeasureSpace,
    traj: &MeasureTrajectory,
    b: &VectorField,
) -> Result<WeakContinuityReport> {
    check_coordinates(space, "verify_weak_continuity")?;
    let times = traj.times();
    if times.len() < 3 {
        return Err(invalid("trajectory", "needs at least three nodes"));
    }
    let funcs = weak_test_functions(space.chart())?;
    let atoms: Vec<Atoms> = (0..times.len()).map(|k| traj.atoms_at(space, k)).collect();
    let bsup = b.sup_norm(space, times)?;
    let h = space.grid_spacing();
    let mut worst_ratio: f64 = 0.0;
    let mut worst = 0.0;
    let mut threshold = 0.0;
    for f in &funcs {
        let lip = space
            .coords()
            .iter()
            .map(|p| chart::norm(&f.gradient(p)))
            .fold(0.0, f64::max);
        let thr = 5.0 * h * lip * bsup;
        let integral = |a: &Atoms| -> f64 { a.points.iter().zip(&a.masses).map(|(p, m)| m * f.value(p)).sum() };
        for k in 1..times.len() - 1 {
            let lhs = (integral(&atoms[k + 1]) - integral(&atoms[k - 1])) / (times[k + 1] - times[k - 1]);
            let rhs: f64 = atoms[k]
                .points
                .iter()
                .zip(&atoms[k].masses)
                .map(|(p, m)| m * chart::dot(&b.eval(p, times[k]), &f.gradient(p)))
                .sum();
            let r = (lhs - rhs).abs();
            let ratio = if thr > 0.0 { r / thr } else if r > 1e-12 { f64::INFINITY } else { 0.0 };
            if ratio >= worst_ratio {
                worst_ratio = ratio;
                worst = r;
                threshold = thr;
            }
        }
    }
    Ok(WeakContinuityReport {
        functions: funcs.len(),
        worst,
        threshold,
        passed: worst_ratio <= 1.0,
    })
}
