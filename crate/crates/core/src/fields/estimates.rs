//! Maximal-function estimates for pair kernels and Green derivations.

use super::moduli::{derivation_row_at, divergence, sample_field, sym_derivative_modulus, SymMode};
use super::VectorField;
use crate::error::{invalid, Error, Result};
use crate::green::GreenFunction;
use crate::space::chart;
use crate::space::{maximal_function, GradientStencil, MetricMeasureSpace};
use rayon::prelude::*;

#[derive(Clone, Debug, PartialEq)]
pub struct PairKernelReport {
    /// `max LHS / (d^{2−n}(Mf(x) + Mf(y)))` over the sample.
    pub fitted_c: f64,
    pub ratios: Vec<f64>,
}

fn check_pairs(space: &MetricMeasureSpace, pairs: &[(usize, usize)]) -> Result<()> {
    for &(x, y) in pairs {
        space.check_point(x)?;
        space.check_point(y)?;
        if x == y {
            return Err(invalid("pair_sample", "pairs must have x ≠ y"));
        }
    }
    Ok(())
}

/// `∫ f(z) d(x,z)^{1−n} d(y,z)^{1−n} dm(z) ≤ C d(x,y)^{2−n} (Mf(x) + Mf(y))`.
///
/// The points `z = x` and `z = y` are left out of the sum (a null set in the
/// continuum). A pair whose right side vanishes has ratio 0.
pub fn verify_pair_kernel_estimate(
    space: &MetricMeasureSpace,
    f: &[f64],
    n: f64,
    pair_sample: &[(usize, usize)],
) -> Result<PairKernelReport> {
    if f.len() != space.npoints() {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: f.len(),
        });
    }
    if f.iter().any(|v| !(*v >= 0.0)) {
        return Err(invalid("f", "must be nonnegative"));
    }
    check_pairs(space, pair_sample)?;
    let mf = maximal_function(space, f);
    let e = n - 1.0;
    let ratios: Vec<f64> = pair_sample
        .par_iter()
        .map(|&(x, y)| {
            let lhs: f64 = (0..space.npoints())
                .filter(|&z| z != x && z != y && f[z] != 0.0)
                .map(|z| {
                    f[z] * space.weight(z) * (space.dist(x, z) * space.dist(y, z)).powf(-e)
                })
                .sum();
            let rhs = space.dist(x, y).powf(2.0 - n) * (mf[x] + mf[y]);
            if rhs > 0.0 {
                lhs / rhs
            } else {
                0.0
            }
        })
        .collect();
    let fitted_c = ratios.iter().cloned().fold(0.0, f64::max);
    if !fitted_c.is_finite() {
        return Err(Error::FitFailed("pair-kernel constant is not finite".into()));
    }
    Ok(PairKernelReport { fitted_c, ratios })
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyEstimateReport {
    /// `max |b·∇G_x(y) + b·∇G_y(x)| / (d^{2−n}(Mg(x) + Mg(y)))` over pairs
    /// with a nonzero right side.
    pub fitted_c: f64,
    /// Pairs whose right side vanishes (`g ≡ 0` near both points).
    pub degenerate_pairs: usize,
    /// `max LHS · d^{n−1} / ‖b‖∞` over the degenerate pairs.
    pub degenerate_lhs: f64,
    pub lhs: Vec<f64>,
    pub rhs_without_c: Vec<f64>,
}

/// `|b·∇G_x(y) + b·∇G_y(x)| ≤ C d(x,y)^{2−n} (Mg(x) + Mg(y))` with
/// `g = |∇_sym b| + |div b|` in chart mode.
pub fn verify_key_maximal_estimate(
    space: &MetricMeasureSpace,
    stencil: &GradientStencil,
    green: &GreenFunction,
    b: &VectorField,
    t: f64,
    pair_sample: &[(usize, usize)],
) -> Result<KeyEstimateReport> {
    if green.npoints() != space.npoints() {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: green.npoints(),
        });
    }
    check_pairs(space, pair_sample)?;
    let n = space
        .dimension()
        .ok_or_else(|| invalid("space", "needs a known dimension"))? as f64;
    let div = divergence(space, stencil, b, t)?;
    let sym = sym_derivative_modulus(space, b, t, &SymMode::Chart)?;
    let g: Vec<f64> = sym.iter().zip(&div).map(|(s, d)| s + d.abs()).collect();
    let mg = maximal_function(space, &g);
    let bv = sample_field(space, b, t)?;
    let bsup = bv.iter().map(chart::norm).fold(0.0, f64::max);

    let rows: Vec<(f64, f64)> = pair_sample
        .par_iter()
        .map(|&(x, y)| {
            let gx = green.column(x);
            let gy = green.column(y);
            let lhs = (derivation_row_at(stencil, &bv[y], &gx, y)
                + derivation_row_at(stencil, &bv[x], &gy, x))
            .abs();
            let rhs = space.dist(x, y).powf(2.0 - n) * (mg[x] + mg[y]);
            (lhs, rhs)
        })
        .collect();
    let mut fitted_c: f64 = 0.0;
    let mut degenerate_pairs = 0;
    let mut degenerate_lhs: f64 = 0.0;
    for (&(x, y), &(lhs, rhs)) in pair_sample.iter().zip(&rows) {
        if rhs > 0.0 {
            fitted_c = fitted_c.max(lhs / rhs);
        } else {
            degenerate_pairs += 1;
            if bsup > 0.0 {
                degenerate_lhs =
                    degenerate_lhs.max(lhs * space.dist(x, y).powf(n - 1.0) / bsup);
            }
        }
    }
    if !fitted_c.is_finite() {
        return Err(Error::FitFailed("key-estimate constant is not finite".into()));
    }
    Ok(KeyEstimateReport {
        fitted_c,
        degenerate_pairs,
        degenerate_lhs,
        lhs: rows.iter().map(|r| r.0).collect(),
        rhs_without_c: rows.iter().map(|r| r.1).collect(),
    })
}
