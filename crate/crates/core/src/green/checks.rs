use super::{green_column, GreenFunction};
use crate::error::{invalid, Error, Result};
use crate::space::MetricMeasureSpace;
use crate::spectral::{heat_kernel_row, heat_semigroup_apply, LaplacianOperator, SpectralBasis};
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Dense oracle `G = ((L + 𝟙wᵀ)⁻¹ − 𝟙wᵀ) W⁻¹` for `L = −Δ`, row-major.
pub fn pseudo_inverse_green(op: &LaplacianOperator) -> Result<Vec<f64>> {
    let n = op.npoints();
    let w = &op.weights;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        for (i, v) in op.apply(&e).into_iter().enumerate() {
            l[(i, j)] = v;
        }
    }
    let rank_one = DMatrix::from_fn(n, n, |_, j| w[j]);
    let inv = (&l + &rank_one)
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Construction("L + 1wᵀ is singular".into()))?;
    let k = inv - rank_one;
    let mut out = vec![0.0; n * n];
    for x in 0..n {
        for y in 0..n {
            out[x * n + y] = k[(x, y)] / w[y];
        }
    }
    Ok(out)
}

/// `∫_0^∞ (p_t(x,y) − 1) dt` by a log-spaced trapezoid on `[1e−6, 50]`
/// (200 nodes per decade) plus a rectangle for `[0, 1e−6]`.
pub fn green_time_integral(basis: &SpectralBasis, x: usize, y: usize) -> f64 {
    let (t0, t1) = (1e-6f64, 50.0f64);
    let decades = (t1 / t0).log10();
    let m = (200.0 * decades).ceil() as usize;
    let ts: Vec<f64> = (0..=m)
        .map(|k| t0 * (t1 / t0).powf(k as f64 / m as f64))
        .collect();
    // p_t(x,y) − 1 = Σ_{i≥1} e^{−λ_i t} u_i(x) u_i(y)
    let prod: Vec<(f64, f64)> = (1..basis.len())
        .map(|i| (basis.eigenvalue(i), basis.u(i, x) * basis.u(i, y)))
        .collect();
    let f = |t: f64| -> f64 { prod.iter().map(|(l, c)| (-l * t).exp() * c).sum() };
    let vals: Vec<f64> = ts.par_iter().map(|&t| f(t)).collect();
    let mut s = t0 * vals[0];
    for k in 0..m {
        s += 0.5 * (ts[k + 1] - ts[k]) * (vals[k] + vals[k + 1]);
    }
    s
}

/// `|Σ_y G(x,y)(Δf)(y)w(y) − (mean f − f(x))|` with `Δf` taken from the operator.
pub fn verify_green_action(
    op: &LaplacianOperator,
    green: &GreenFunction,
    f: &[f64],
    x: usize,
) -> Result<f64> {
    if f.len() != op.npoints() {
        return Err(Error::DimensionMismatch {
            expected: op.npoints(),
            found: f.len(),
        });
    }
    let lap: Vec<f64> = op.apply(f).iter().map(|v| -v).collect();
    let w = &op.weights;
    let lhs: f64 = (0..f.len()).map(|y| green.value(x, y) * lap[y] * w[y]).sum();
    let mean: f64 = f.iter().zip(w).map(|(a, b)| a * b).sum();
    Ok((lhs - (mean - f[x])).abs())
}

/// `max_y |(ΔG^ε_x)(y) − (1 − p_ε(x,y))|`.
pub fn verify_green_laplacian(
    op: &LaplacianOperator,
    basis: &SpectralBasis,
    epsilon: f64,
    x: usize,
) -> Result<f64> {
    if !(epsilon > 0.0) {
        return Err(invalid("epsilon", "must be positive"));
    }
    let g = green_column(basis, epsilon, x);
    let lap = op.apply(&g);
    let p = heat_kernel_row(basis, epsilon, x)?;
    Ok((0..g.len())
        .map(|y| (-lap[y] - (1.0 - p[y])).abs())
        .fold(0.0, f64::max))
}

/// `max_y |G^ε_x − P_{ε/2} G^{ε/2}_x|`.
pub fn verify_semigroup_identity(basis: &SpectralBasis, epsilon: f64, x: usize) -> Result<f64> {
    let full = green_column(basis, epsilon, x);
    let half = heat_semigroup_apply(basis, 0.5 * epsilon, &green_column(basis, 0.5 * epsilon, x))?;
    Ok(full
        .iter()
        .zip(&half)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max))
}

/// Discrete slope field of `G_x` (neighbourhood radius 1.5 grid spacings);
/// the entry at `x` itself is 0.
pub fn green_gradient(green: &GreenFunction, space: &MetricMeasureSpace, x: usize) -> Vec<f64> {
    let g = green.column(x);
    let r = 1.5 * space.grid_spacing();
    (0..space.npoints())
        .into_par_iter()
        .map(|y| {
            if y == x {
                return 0.0;
            }
            (0..space.npoints())
                .filter(|&z| z != y && space.dist(y, z) < r)
                .map(|z| (g[z] - g[y]).abs() / space.dist(y, z))
                .fold(0.0, f64::max)
        })
        .collect()
}

/// Smallest `C` with `slope G_x(y) ≤ C / d(x,y)ⁿ⁻¹` over the sampled centres.
pub fn fit_slope_constant(
    green: &GreenFunction,
    space: &MetricMeasureSpace,
    n: f64,
    x_sample: &[usize],
) -> f64 {
    x_sample
        .iter()
        .map(|&x| {
            let s = green_gradient(green, space, x);
            (0..space.npoints())
                .filter(|&y| y != x)
                .map(|y| s[y] * space.dist(x, y).powf(n - 1.0))
                .fold(0.0, f64::max)
        })
        .fold(0.0, f64::max)
}

#[derive(Clone, Debug, PartialEq)]
pub struct W1pRow {
    pub epsilon: f64,
    pub lp_difference: f64,
    pub slope_lp_difference: f64,
    /// `‖slope G^ε_x‖_p / ‖slope G_x‖_p`.
    pub slope_ratio: f64,
}

impl W1pRow {
    pub fn total(&self) -> f64 {
        self.lp_difference + self.slope_lp_difference
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct W1pReport {
    pub p: f64,
    pub rows: Vec<W1pRow>,
    pub strictly_decreasing: bool,
    /// Each value at most 1.1× its predecessor.
    pub monotone_within_tolerance: bool,
    /// Final total below 1e−6 (the exact-torus target at ε = 1e−4).
    pub final_below_target: bool,
}

pub fn verify_w1p_convergence(
    basis: &SpectralBasis,
    space: &MetricMeasureSpace,
    x: usize,
    p: f64,
    eps_sequence: &[f64],
) -> Result<W1pReport> {
    if !(p >= 1.0) {
        return Err(invalid("p", "must be at least 1"));
    }
    if eps_sequence.iter().any(|e| !(*e >= 0.0)) {
        return Err(invalid("eps_sequence", "entries must be nonnegative"));
    }
    space.check_point(x)?;
    let r = 1.5 * space.grid_spacing();
    let nb = space.neighbour_lists(r);
    let g0 = green_column(basis, 0.0, x);
    let slope0: Vec<f64> = (0..g0.len()).map(|y| space.slope_with(&g0, y, &nb[y])).collect();
    let slope0_norm = space.lp_norm(&slope0, p);
    let rows: Vec<W1pRow> = eps_sequence
        .iter()
        .map(|&eps| {
            let ge = green_column(basis, eps, x);
            let diff: Vec<f64> = ge.iter().zip(&g0).map(|(a, b)| a - b).collect();
            let sd: Vec<f64> = (0..diff.len()).map(|y| space.slope_with(&diff, y, &nb[y])).collect();
            let se: Vec<f64> = (0..ge.len()).map(|y| space.slope_with(&ge, y, &nb[y])).collect();
            W1pRow {
                epsilon: eps,
                lp_difference: space.lp_norm(&diff, p),
                slope_lp_difference: space.lp_norm(&sd, p),
                slope_ratio: space.lp_norm(&se, p) / slope0_norm,
            }
        })
        .collect();
    let totals: Vec<f64> = rows.iter().map(W1pRow::total).collect();
    let strictly_decreasing = totals.windows(2).all(|w| w[1] < w[0]);
    let monotone_within_tolerance = totals.windows(2).all(|w| w[1] <= 1.1 * w[0]);
    let final_below_target = totals.last().is_some_and(|v| *v < 1e-6);
    Ok(W1pReport {
        p,
        rows,
        strictly_decreasing,
        monotone_within_tolerance,
        final_below_target,
    })
}
