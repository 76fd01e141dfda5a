//! Chebyshev sets of `Q*` and Lipschitz bounds of the flow on them.

use super::functionals::{default_r_grid, q_star, verify_q_le_phi, QLePhiReport, QStarReport};
use super::{integrate_flow, FlowMap};
use crate::error::{invalid, Error, Result};
use crate::fields::{chart_divergence, sym_derivative_modulus, SymMode, VectorField};
use crate::green::{fit_comparability_constants, GreenFunction};
use crate::space::{build_product_with_circle, build_torus_grid, Chart, MetricMeasureSpace};
use crate::spectral::{default_basis, default_k_max};
use rand::{Rng, SeedableRng};
use rayon::prelude::*;
use std::sync::Arc;

/// A pair and the time at which `d(X_t x, X_t y)/d(x, y)` peaks.
#[derive(Clone, Debug, PartialEq)]
pub struct PairRatio {
    pub x: usize,
    pub y: usize,
    pub t: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LusinReport {
    pub epsilon: f64,
    /// `‖Q*‖_{L²}/√ε`.
    pub threshold: f64,
    /// Membership in `E = {Q* ≤ threshold}`.
    pub retained: Vec<bool>,
    pub excluded_mass: f64,
    pub q_star_l2: f64,
    /// Smallest `C ≥ 1` with `d(X_t x, X_t y) ≤ C e^{C(Q*(x)+Q*(y))} d(x, y)` on the checked pairs.
    pub fitted_c: Option<f64>,
    /// `C exp(2C ‖Q*‖_{L²}/√ε)`.
    pub lip_constant: Option<f64>,
    pub worst_pair: Option<PairRatio>,
    /// Largest pair ratio over pairs with at least one point outside `E`.
    pub straddling_ratio: Option<f64>,
    pub pairs_checked: usize,
    /// Checked pairs exceeding `lip_constant` at some node.
    pub violations: usize,
}

impl LusinReport {
    pub fn retained_ids(&self) -> Vec<usize> {
        (0..self.retained.len()).filter(|&i| self.retained[i]).collect()
    }

    pub fn excluded_ids(&self) -> Vec<usize> {
        (0..self.retained.len()).filter(|&i| !self.retained[i]).collect()
    }
}

fn chebyshev(values: &[f64], weights: &[f64], l2: f64, epsilon: f64) -> Result<(f64, Vec<bool>, f64)> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(invalid("epsilon", "must lie in (0, 1)"));
    }
    let threshold = l2 / epsilon.sqrt();
    let retained: Vec<bool> = values.iter().map(|q| *q <= threshold).collect();
    let excluded_mass: f64 = weights
        .iter()
        .zip(&retained)
        .filter(|(_, r)| !**r)
        .fold(0.0, |acc, (w, _)| acc + w);
    Ok((threshold, retained, excluded_mass))
}

/// `E = {x : Q*(x) ≤ ‖Q*‖_{L²}/√ε}`.
pub fn lusin_set(q: &QStarReport, space: &MetricMeasureSpace, epsilon: f64) -> Result<LusinReport> {
    if q.values.len() != space.npoints() {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: q.values.len(),
        });
    }
    let (threshold, retained, excluded_mass) = chebyshev(&q.values, space.weights(), q.l2, epsilon)?;
    if !(excluded_mass < epsilon) {
        return Err(Error::GateFailure {
            gate: "chebyshev",
            detail: format!("excluded mass {excluded_mass} is not below {epsilon}"),
        });
    }
    Ok(LusinReport {
        epsilon,
        threshold,
        retained,
        excluded_mass,
        q_star_l2: q.l2,
        fitted_c: None,
        lip_constant: None,
        worst_pair: None,
        straddling_ratio: None,
        pairs_checked: 0,
        violations: 0,
    })
}

fn sample_pairs_from(ids: &[usize], cap: usize, seed: u64) -> Vec<(usize, usize)> {
    let m = ids.len();
    if m < 2 {
        return Vec::new();
    }
    if m * (m - 1) / 2 <= cap {
        let mut out = Vec::with_capacity(m * (m - 1) / 2);
        for i in 0..m {
            for j in i + 1..m {
                out.push((ids[i], ids[j]));
            }
        }
        return out;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..cap)
        .map(|_| {
            let i = rng.gen_range(0..m);
            let j = (i + rng.gen_range(1..m)) % m;
            (ids[i], ids[j])
        })
        .collect()
}

/// Largest `d(X_t x, X_t y)/d(x, y)` over the nodes, and where it occurs.
fn pair_peaks(flow: &FlowMap, space: &MetricMeasureSpace, pairs: &[(usize, usize)]) -> Vec<PairRatio> {
    let chart = space.chart();
    let times = flow.times();
    pairs
        .par_iter()
        .map(|&(x, y)| {
            let d0 = space.dist(x, y);
            let mut best = PairRatio { x, y, t: 0.0, ratio: 0.0 };
            for k in 0..times.len() {
                let r = chart.distance(flow.position(x, k), flow.position(y, k)) / d0;
                if r > best.ratio {
                    best.ratio = r;
                    best.t = times[k];
                }
            }
            best
        })
        .collect()
}

/// Smallest `C ≥ 1` with `log C + C q_p ≥ log ρ_p` for every pair.
fn fit_structural(peaks: &[PairRatio], q: &[f64]) -> f64 {
    let slack = |c: f64| {
        peaks
            .iter()
            .map(|p| c.ln() + c * (q[p.x] + q[p.y]) - p.ratio.ln())
            .fold(f64::INFINITY, f64::min)
    };
    if slack(1.0) >= 0.0 {
        return 1.0;
    }
    let (mut lo, mut hi) = (1.0, 2.0);
    while slack(hi) < 0.0 {
        lo = hi;
        hi *= 2.0;
    }
    while hi - lo > 1e-12 * hi {
        let mid = 0.5 * (lo + hi);
        if slack(mid) >= 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

struct PairFit {
    fitted_c: f64,
    lip: f64,
    worst: Option<PairRatio>,
    straddling: Option<f64>,
    checked: usize,
    violations: usize,
}

#[allow(clippy::too_many_arguments)]
fn fit_pairs(
    flow: &FlowMap,
    space: &MetricMeasureSpace,
    retained: &[bool],
    q: &[f64],
    q_l2: f64,
    epsilon: f64,
    pair_cap: usize,
    seed: u64,
) -> Result<PairFit> {
    let kept: Vec<usize> = (0..retained.len()).filter(|&i| retained[i]).collect();
    if kept.is_empty() {
        return Err(invalid("E", "the retained set is empty"));
    }
    let pairs = sample_pairs_from(&kept, pair_cap, seed);
    let peaks = pair_peaks(flow, space, &pairs);
    let fitted_c = fit_structural(&peaks, q);
    let lip = fitted_c * (2.0 * fitted_c * q_l2 / epsilon.sqrt()).exp();
    let violations = peaks.iter().filter(|p| p.ratio > lip * (1.0 + 1e-12)).count();
    let worst = peaks
        .iter()
        .cloned()
        .max_by(|a, b| a.ratio.total_cmp(&b.ratio));
    let excluded: Vec<usize> = (0..retained.len()).filter(|&i| !retained[i]).collect();
    let straddling = if excluded.is_empty() {
        None
    } else {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let n = space.npoints();
        let cross: Vec<(usize, usize)> = (0..pair_cap.min(20_000))
            .map(|_| {
                let x = excluded[rng.gen_range(0..excluded.len())];
                let y = (x + rng.gen_range(1..n)) % n;
                (x, y)
            })
            .collect();
        pair_peaks(flow, space, &cross)
            .iter()
            .map(|p| p.ratio)
            .fold(None, |m: Option<f64>, r| Some(m.map_or(r, |m| m.max(r))))
    };
    Ok(PairFit {
        fitted_c,
        lip,
        worst,
        straddling,
        checked: pairs.len(),
        violations,
    })
}

/// Fits the structural constant on `E × E` (capped at `pair_cap` seeded pairs)
/// and records the resulting Lipschitz constant of the flow on `E`.
pub fn verify_lipschitz_on_set(
    flow: &FlowMap,
    space: &MetricMeasureSpace,
    report: LusinReport,
    q: &QStarReport,
    pair_cap: usize,
    seed: u64,
) -> Result<LusinReport> {
    if !flow.covers(space) || q.values.len() != space.npoints() {
        return Err(invalid("flow", "needs every grid point of the space as a start"));
    }
    let fit = fit_pairs(
        flow,
        space,
        &report.retained,
        &q.values,
        q.l2,
        report.epsilon,
        pair_cap,
        seed,
    )?;
    Ok(LusinReport {
        fitted_c: Some(fit.fitted_c),
        lip_constant: Some(fit.lip),
        worst_pair: fit.worst,
        straddling_ratio: fit.straddling,
        pairs_checked: fit.checked,
        violations: fit.violations,
        ..report
    })
}

#[derive(Clone, Debug)]
pub struct LiftConfig {
    pub epsilon: f64,
    pub step: f64,
    /// Regularization of the product Green function.
    pub green_epsilon: f64,
    pub r_count: usize,
    pub pair_cap: usize,
    pub phi_samples: usize,
    pub seed: u64,
}

impl Default for LiftConfig {
    fn default() -> Self {
        LiftConfig {
            epsilon: 0.1,
            step: 1e-3,
            green_epsilon: 0.0,
            r_count: 12,
            pair_cap: 100_000,
            phi_samples: 1000,
            seed: 7,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LiftReport {
    /// `max |λ_product − (λ_base + λ_circle)|` over the sorted spectra (lattice bases only).
    pub eigen_gap: Option<f64>,
    pub div_gap: f64,
    pub sym_gap: f64,
    /// `max d(π₁ X̄_t(x, s), X_t(x))`.
    pub projection_gap: f64,
    /// `max |s_t − s_0|` along product trajectories.
    pub circle_drift: f64,
    pub a: f64,
    pub compressibility: f64,
    pub q_le_phi: QLePhiReport,
    pub product: LusinReport,
    pub base_q_star: Vec<f64>,
    pub base_retained: Vec<bool>,
    pub base_excluded_mass: f64,
    pub base_fitted_c: f64,
    pub base_lip_constant: f64,
    pub base_worst_pair: Option<PairRatio>,
    pub base_violations: usize,
}

fn sorted_sums(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = a.iter().flat_map(|x| b.iter().map(move |y| x + y)).collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Lifts a flow on a 2-dimensional space to `space2d × S¹`, runs the `Q*`/Lusin
/// pipeline there with `n = 3`, and reads off the conclusion on base slices.
pub fn lift_and_verify_n2(
    space2d: &MetricMeasureSpace,
    b: &VectorField,
    t_grid: &[f64],
    circle_resolution: usize,
    cfg: &LiftConfig,
) -> Result<LiftReport> {
    match space2d.chart() {
        Chart::Torus { dims: 2, .. } | Chart::Sphere => {}
        other => {
            return Err(Error::UnsupportedChart {
                op: "lift_and_verify_n2 (needs a 2-dimensional base)",
                chart: other.tag(),
            })
        }
    }
    if circle_resolution < 8 {
        return Err(invalid("circle_resolution", "must be at least 8"));
    }
    let product = build_product_with_circle(space2d, circle_resolution)?;
    let c = circle_resolution;
    let lifted = b.lift(&product)?;

    let pbasis = default_basis(&product, default_k_max(product.npoints()), None)?;
    let eigen_gap = if product.chart().lattice().is_some() {
        let base = default_basis(space2d, space2d.npoints(), None)?;
        let circle = default_basis(&build_torus_grid(1, c)?, c, None)?;
        let sums = sorted_sums(base.eigenvalues(), circle.eigenvalues());
        Some(
            pbasis
                .eigenvalues()
                .iter()
                .zip(&sums)
                .map(|(p, s)| (p - s).abs())
                .fold(0.0, f64::max),
        )
    } else {
        None
    };

    let probe_times = [t_grid[0], t_grid[t_grid.len() / 2], t_grid[t_grid.len() - 1]];
    let (mut div_gap, mut sym_gap): (f64, f64) = (0.0, 0.0);
    for &t in &probe_times {
        let dp = chart_divergence(&product, &lifted, t)?;
        let db = chart_divergence(space2d, b, t)?;
        let sp = sym_derivative_modulus(&product, &lifted, t, &SymMode::Chart)?;
        let sb = sym_derivative_modulus(space2d, b, t, &SymMode::Chart)?;
        for i in 0..product.npoints() {
            let x = product.project_to_base(i);
            div_gap = div_gap.max((dp[i] - db[x]).abs());
            sym_gap = sym_gap.max((sp[i] - sb[x]).abs());
        }
    }

    let pflow = integrate_flow(&product, &lifted, t_grid, cfg.step)?;
    let bflow = integrate_flow(space2d, b, t_grid, cfg.step)?;
    let k_len = product.chart().coord_len() - 1;
    let (mut projection_gap, mut circle_drift): (f64, f64) = (0.0, 0.0);
    for i in 0..product.npoints() {
        let x = product.project_to_base(i);
        for k in 0..t_grid.len() {
            let (base, s) = product.chart().split_product(pflow.position(i, k)).expect("product chart");
            projection_gap = projection_gap.max(space2d.chart().distance(&base, bflow.position(x, k)));
            circle_drift = circle_drift.max((s - product.coord(i)[k_len]).abs());
        }
    }

    let green = Arc::new(GreenFunction::assemble(&pbasis, cfg.green_epsilon)?);
    let shifted = fit_comparability_constants(green, &product, 3.0)?
        .with_mapping_margin(&product, pflow.snap_distance(&product));
    let q_le_phi = verify_q_le_phi(&pflow, &product, &shifted, cfg.phi_samples, cfg.seed)?;
    let r_grid = default_r_grid(&product, cfg.r_count);
    let q = q_star(&pflow, &product, &r_grid, shifted.a, 3.0)?;
    let report = lusin_set(&q, &product, cfg.epsilon)?;
    let product_report = verify_lipschitz_on_set(&pflow, &product, report, &q, cfg.pair_cap, cfg.seed)?;

    let base_q_star: Vec<f64> = q.values.chunks(c).map(|ch| ch.iter().cloned().fold(0.0, f64::max)).collect();
    let (_, base_retained, base_excluded_mass) = chebyshev(&base_q_star, space2d.weights(), q.l2, cfg.epsilon)?;
    let fit = fit_pairs(
        &bflow,
        space2d,
        &base_retained,
        &base_q_star,
        q.l2,
        cfg.epsilon,
        cfg.pair_cap,
        cfg.seed,
    )?;
    Ok(LiftReport {
        eigen_gap,
        div_gap,
        sym_gap,
        projection_gap,
        circle_drift,
        a: shifted.a,
        compressibility: pflow.compressibility().unwrap_or(f64::NAN),
        q_le_phi,
        product: product_report,
        base_q_star,
        base_retained,
        base_excluded_mass,
        base_fitted_c: fit.fitted_c,
        base_lip_constant: fit.lip,
        base_worst_pair: fit.worst,
        base_violations: fit.violations,
    })
}
