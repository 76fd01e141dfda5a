//! Log-distortion functionals `Q_{t,r}`, `Φ_{t,r}` and their supremum `Q*`.

use std::f64::consts::PI;
use super::FlowMap;
use crate::error::{invalid, Error, Result};
use crate::fields::{RegularityModuli, VectorField};
use crate::green::ShiftedGreen;
use crate::space::chart::{self, Coords};
use crate::space::MetricMeasureSpace;
use crate::spectral::{Phase, SpectralBasis};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq)]
pub struct QFunctional {
    pub t: f64,
    pub r: f64,
    pub a: f64,
    pub n: f64,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PhiFunctional {
    pub t: f64,
    pub r: f64,
    pub values: Vec<f64>,
    /// Pairs whose flowed points snap to the same node.
    pub coincident_pairs: usize,
}

/// `Q*(x) = max over the flow nodes and the radius grid of Q_{t,r}(x)`.
#[derive(Clone, Debug, PartialEq)]
pub struct QStarReport {
    pub values: Vec<f64>,
    /// `max_r Q_{0,r}(x)`.
    pub at_start: Vec<f64>,
    pub l2: f64,
    pub r_grid: Vec<f64>,
    pub times: Vec<f64>,
    pub a: f64,
    pub n: f64,
}

fn check_cover(flow: &FlowMap, space: &MetricMeasureSpace) -> Result<()> {
    if flow.covers(space) {
        Ok(())
    } else {
        Err(invalid("flow", "needs every grid point of the space as a start"))
    }
}

#[inline]
fn pow_e(x: f64, e: f64) -> f64 {
    if e == 1.0 {
        x
    } else {
        x.powf(e)
    }
}

/// `count` log-spaced radii from `1.5 h` to `D`.
pub fn default_r_grid(space: &MetricMeasureSpace, count: usize) -> Vec<f64> {
    let lo = 1.5 * space.grid_spacing();
    let hi = space.diameter();
    if count < 2 || !(hi > lo) {
        return vec![hi];
    }
    (0..count)
        .map(|i| lo * (hi / lo).powf(i as f64 / (count - 1) as f64))
        .collect()
}

fn check_radii(space: &MetricMeasureSpace, radii: &[f64]) -> Result<()> {
    let h = space.grid_spacing();
    let d = space.diameter() * (1.0 + 1e-12);
    if radii.is_empty() || radii.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("r_grid", "must be nonempty and increasing"));
    }
    if radii.iter().any(|r| !(*r > h && *r <= d)) {
        return Err(invalid("r", "radii must lie in (grid spacing, D]"));
    }
    Ok(())
}

/// `Q_{t_k, r_j}(x)` for every point and every radius, `[x][j]`.
fn q_profile(flow: &FlowMap, space: &MetricMeasureSpace, k: usize, radii: &[f64], a: f64, e: f64) -> Vec<Vec<f64>> {
    let chart = space.chart();
    let rmax = radii[radii.len() - 1];
    let n = space.npoints();
    let scale: Vec<f64> = radii.iter().map(|r| 1.0 / (a * pow_e(*r, e))).collect();
    (0..n)
        .into_par_iter()
        .map(|x| {
            let px = flow.position(x, k);
            let mut sums = vec![0.0; radii.len()];
            let mut mass = vec![0.0; radii.len()];
            for y in 0..n {
                let d0 = space.dist(x, y);
                if d0 >= rmax {
                    continue;
                }
                let j0 = radii.partition_point(|r| *r <= d0);
                let de = pow_e(chart.distance(px, flow.position(y, k)), e);
                let w = space.weight(y);
                for j in j0..radii.len() {
                    mass[j] += w;
                    sums[j] += w * (de * scale[j]).ln_1p();
                }
            }
            sums.iter().zip(&mass).map(|(s, m)| s / m).collect()
        })
        .collect()
}

/// Ball average over `B(x, r)` of `log(1 + (1/A)(d(X_t x, X_t y)/r)^{n−2})`.
pub fn q_functional(flow: &FlowMap, space: &MetricMeasureSpace, t: f64, r: f64, a: f64, n: f64) -> Result<QFunctional> {
    check_cover(flow, space)?;
    check_radii(space, &[r])?;
    if !(a > 0.0) || !(n > 2.0) {
        return Err(invalid("A, n", "need A > 0 and n > 2"));
    }
    let k = flow.time_index(t)?;
    let values = q_profile(flow, space, k, &[r], a, n - 2.0)
        .into_iter()
        .map(|v| v[0])
        .collect();
    Ok(QFunctional { t, r, a, n, values })
}

fn phi_at(space: &MetricMeasureSpace, snapped: &[usize], green: &ShiftedGreen, x: usize, r: f64) -> (f64, usize) {
    let re = pow_e(r, green.n - 2.0);
    let (mut sum, mut mass, mut coincident) = (0.0, 0.0, 0);
    let p = snapped[x];
    for y in 0..space.npoints() {
        if space.dist(x, y) >= r {
            continue;
        }
        let q = snapped[y];
        if p == q && x != y {
            coincident += 1;
        }
        let w = space.weight(y);
        mass += w;
        sum += w * (1.0 / (re * green.value(p, q))).ln_1p();
    }
    (sum / mass, coincident)
}

/// Ball average over `B(x, r)` of `log(1 + 1/(r^{n−2} Ḡ(X̂_t x, X̂_t y)))`, with
/// flowed points snapped to their nearest nodes.
pub fn phi_functional(
    flow: &FlowMap,
    space: &MetricMeasureSpace,
    green: &ShiftedGreen,
    t: f64,
    r: f64,
) -> Result<PhiFunctional> {
    check_cover(flow, space)?;
    check_radii(space, &[r])?;
    check_green(space, green)?;
    let k = flow.time_index(t)?;
    let snapped = flow.snapped(space, k);
    let rows: Vec<(f64, usize)> = (0..space.npoints())
        .into_par_iter()
        .map(|x| phi_at(space, &snapped, green, x, r))
        .collect();
    Ok(PhiFunctional {
        t,
        r,
        values: rows.iter().map(|v| v.0).collect(),
        coincident_pairs: rows.iter().map(|v| v.1).sum(),
    })
}

fn check_green(space: &MetricMeasureSpace, green: &ShiftedGreen) -> Result<()> {
    if green.base.npoints() != space.npoints() {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: green.base.npoints(),
        });
    }
    if !(green.alpha > 0.0) {
        return Err(invalid("green", "Ḡ must be positive off the diagonal"));
    }
    Ok(())
}

/// `Q*` over every node of the flow grid and the given radii.
pub fn q_star(flow: &FlowMap, space: &MetricMeasureSpace, r_grid: &[f64], a: f64, n: f64) -> Result<QStarReport> {
    check_cover(flow, space)?;
    check_radii(space, r_grid)?;
    if r_grid.len() < 8 {
        return Err(invalid("r_grid", "needs at least 8 radii"));
    }
    if !(a > 0.0) || !(n > 2.0) {
        return Err(invalid("A, n", "need A > 0 and n > 2"));
    }
    let e = n - 2.0;
    let mut values = vec![0.0f64; space.npoints()];
    let mut at_start = Vec::new();
    for k in 0..flow.times().len() {
        let prof = q_profile(flow, space, k, r_grid, a, e);
        let best: Vec<f64> = prof.iter().map(|v| v.iter().cloned().fold(0.0, f64::max)).collect();
        if k == 0 {
            at_start = best.clone();
        }
        for (q, b) in values.iter_mut().zip(&best) {
            *q = q.max(*b);
        }
    }
    let l2 = space.lp_norm(&values, 2.0);
    Ok(QStarReport {
        values,
        at_start,
        l2,
        r_grid: r_grid.to_vec(),
        times: flow.times().to_vec(),
        a,
        n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct QLePhiReport {
    pub samples: usize,
    pub violations: usize,
    /// `max (Q − Φ)` over the samples.
    pub worst_gap: f64,
    pub coincident_pairs: usize,
    /// Comparability constant after the snapping margin.
    pub a_used: f64,
}

/// Compares `Q_{t,r}(x)` and `Φ_{t,r}(x)` on seeded random `(x, t, r)`.
///
/// Both use the comparability constant of `green` enlarged by the snapping
/// margin of the flow.
pub fn verify_q_le_phi(
    flow: &FlowMap,
    space: &MetricMeasureSpace,
    green: &ShiftedGreen,
    samples: usize,
    seed: u64,
) -> Result<QLePhiReport> {
    check_cover(flow, space)?;
    check_green(space, green)?;
    let g = green.with_mapping_margin(space, flow.snap_distance(space));
    let e = g.n - 2.0;
    let lo = 1.5 * space.grid_spacing();
    let hi = space.diameter();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let m = flow.times().len();
    let draws: Vec<(usize, usize, f64)> = (0..samples)
        .map(|_| {
            let x = rng.gen_range(0..space.npoints());
            let k = rng.gen_range(0..m);
            let r = lo * (hi / lo).powf(rng.gen::<f64>());
            (x, k, r)
        })
        .collect();
    let snapped: Vec<Vec<usize>> = (0..m).map(|k| flow.snapped(space, k)).collect();
    let rows: Vec<(f64, usize)> = draws
        .par_iter()
        .map(|&(x, k, r)| {
            let px = flow.position(x, k);
            let (mut sum, mut mass) = (0.0, 0.0);
            for y in 0..space.npoints() {
                if space.dist(x, y) >= r {
                    continue;
                }
                let w = space.weight(y);
                let d = space.chart().distance(px, flow.position(y, k));
                mass += w;
                sum += w * (pow_e(d / r, e) / g.a).ln_1p();
            }
            let (phi, coincident) = phi_at(space, &snapped[k], &g, x, r);
            (sum / mass - phi, coincident)
        })
        .collect();
    Ok(QLePhiReport {
        samples,
        violations: rows.iter().filter(|r| r.0 > 1e-12).count(),
        worst_gap: rows.iter().map(|r| r.0).fold(f64::NEG_INFINITY, f64::max),
        coincident_pairs: rows.iter().map(|r| r.1).sum(),
        a_used: g.a,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct QStarBound {
    pub q_star_l2: f64,
    /// `∫₀ᵀ ‖|∇_sym b_s| + |div b_s|‖_{L²} ds`.
    pub budget: f64,
    pub compressibility: f64,
    /// `‖Q*‖_{L²} / (L · budget + 1)`.
    pub ratio: f64,
}

pub fn verify_qstar_bound(q_star: &QStarReport, moduli: &RegularityModuli, compressibility: f64) -> Result<QStarBound> {
    let budget = moduli.l2_time_integral;
    let ratio = q_star.l2 / (compressibility * budget + 1.0);
    if !ratio.is_finite() {
        return Err(Error::FitFailed("Q* bound ratio is not finite".into()));
    }
    Ok(QStarBound {
        q_star_l2: q_star.l2,
        budget,
        compressibility,
        ratio,
    })
}

/// `G^ε` of an exact lattice basis, evaluated off the grid from its modes.
///
/// Each cosine mode stands for its wavevector class: `cos·cos + sin·sin`
/// collapses to `amp² cos(2π k·(p − q))`. Nyquist classes have no sine
/// partner, but the sine vanishes on the grid, so grid values are unchanged
/// and the off-grid kernel stays translation invariant.
struct ModalGreen {
    terms: Vec<([f64; 4], f64)>,
}

impl ModalGreen {
    fn new(basis: &SpectralBasis, epsilon: f64) -> Result<Self> {
        let modes = basis.modes().ok_or_else(|| Error::UnsupportedChart {
            op: "Green function along a flow (needs an exact lattice basis)",
            chart: "non-lattice".to_string(),
        })?;
        let terms = modes
            .iter()
            .enumerate()
            .filter(|(i, m)| basis.eigenvalue(*i) > 1e-9 && m.phase == Phase::Cos)
            .map(|(i, m)| {
                let l = basis.eigenvalue(i);
                let k = m.k.map(|v| 2.0 * PI * v as f64);
                (k, m.amplitude * m.amplitude * (-l * epsilon).exp() / l)
            })
            .collect();
        Ok(ModalGreen { terms })
    }

    fn value(&self, p: &Coords, q: &Coords) -> f64 {
        let d = chart::sub(p, q);
        self.terms.iter().map(|(k, c)| c * chart::dot(k, &d).cos()).sum()
    }

    /// Gradient in the first argument.
    fn gradient(&self, p: &Coords, q: &Coords) -> Coords {
        let d = chart::sub(p, q);
        self.terms
            .iter()
            .fold(chart::ZERO, |g, (k, c)| chart::axpy(&g, -c * chart::dot(k, &d).sin(), k))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GreenFlowReport {
    /// `(pair, node)` comparisons made.
    pub checked: usize,
    pub passed: usize,
    pub pass_rate: f64,
    /// Pairs dropped for lying within 3 grid spacings.
    pub skipped_pairs: usize,
    pub max_abs_gap: f64,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
}

/// Centered time difference of `G(X_t y, X_t x)` against
/// `b·∇G_{X_t x}(X_t y) + b·∇G_{X_t y}(X_t x)` along sampled pairs.
///
/// `G` and its gradient are evaluated off the grid from the modes of an exact
/// lattice basis, so both sides see the same function.
pub fn verify_green_derivative_along_flow(
    flow: &FlowMap,
    space: &MetricMeasureSpace,
    basis: &SpectralBasis,
    epsilon: f64,
    b: &VectorField,
    pairs: &[(usize, usize)],
) -> Result<GreenFlowReport> {
    check_cover(flow, space)?;
    if basis.npoints() != space.npoints() {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: basis.npoints(),
        });
    }
    let green = &ModalGreen::new(basis, epsilon)?;
    let gsup = space
        .coords()
        .iter()
        .map(|p| green.value(p, p).abs())
        .fold(0.0, f64::max);
    let big = 0.1 * gsup / space.diameter();
    let h = space.grid_spacing();
    let kept: Vec<(usize, usize)> = pairs
        .iter()
        .copied()
        .filter(|&(x, y)| space.dist(x, y) > 3.0 * h)
        .collect();
    let times = flow.times();
    let rows: Vec<(f64, f64)> = kept
        .par_iter()
        .flat_map_iter(|&(x, y)| {
            let g: Vec<f64> = (0..times.len())
                .map(|k| green.value(flow.position(y, k), flow.position(x, k)))
                .collect();
            (1..times.len() - 1).map(move |k| {
                let (px, py) = (flow.position(x, k), flow.position(y, k));
                let lhs = (g[k + 1] - g[k - 1]) / (times[k + 1] - times[k - 1]);
                let rhs = chart::dot(&b.eval(py, times[k]), &green.gradient(py, px))
                    + chart::dot(&b.eval(px, times[k]), &green.gradient(px, py));
                (lhs, rhs)
            })
        })
        .collect();
    let passed = rows
        .iter()
        .filter(|(l, r)| {
            let gap = (l - r).abs();
            if r.abs() > big {
                gap <= 0.1 * r.abs()
            } else {
                gap <= 0.05
            }
        })
        .count();
    Ok(GreenFlowReport {
        checked: rows.len(),
        passed,
        pass_rate: if rows.is_empty() { 1.0 } else { passed as f64 / rows.len() as f64 },
        skipped_pairs: pairs.len() - kept.len(),
        max_abs_gap: rows.iter().map(|(l, r)| (l - r).abs()).fold(0.0, f64::max),
        lhs: rows.iter().map(|r| r.0).collect(),
        rhs: rows.iter().map(|r| r.1).collect(),
    })
}
