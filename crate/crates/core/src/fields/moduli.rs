//! Discrete derivations, divergence and symmetric-derivative moduli.

use super::functions::SmoothFunction;
use super::probe::{probe_envelope, ProbeSetup};
use super::VectorField;
use crate::error::{Error, Result};
use crate::space::chart::{self, Chart, Coords};
use crate::space::{GradientStencil, MetricMeasureSpace};
use rayon::prelude::*;
use std::f64::consts::PI;

/// Relative tolerance of the integration-by-parts consistency gate.
pub const ADJOINT_GATE: f64 = 0.05;

/// `b_t` at every grid point.
pub fn sample_field(space: &MetricMeasureSpace, b: &VectorField, t: f64) -> Result<Vec<Coords>> {
    b.check_time(t)?;
    b.check_space(space)?;
    Ok(space.coords().par_iter().map(|p| b.eval(p, t)).collect())
}

fn check_stencil(space: &MetricMeasureSpace, stencil: &GradientStencil) -> Result<()> {
    if stencil.npoints() != space.npoints() {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: stencil.npoints(),
        });
    }
    Ok(())
}

fn check_len(space: &MetricMeasureSpace, f: &[f64]) -> Result<()> {
    if f.len() != space.npoints() {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: f.len(),
        });
    }
    Ok(())
}

pub(crate) fn derivation_row_at(stencil: &GradientStencil, v: &Coords, f: &[f64], x: usize) -> f64 {
    stencil
        .row(x)
        .iter()
        .map(|(j, a)| chart::dot(v, a) * (f[*j] - f[x]))
        .sum()
}

/// `b_t·∇f` on grid values, with `∇` taken from the stencil.
pub fn apply_derivation(
    space: &MetricMeasureSpace,
    stencil: &GradientStencil,
    b: &VectorField,
    f: &[f64],
    t: f64,
) -> Result<Vec<f64>> {
    check_stencil(space, stencil)?;
    check_len(space, f)?;
    let bv = sample_field(space, b, t)?;
    Ok((0..space.npoints())
        .into_par_iter()
        .map(|x| derivation_row_at(stencil, &bv[x], f, x))
        .collect())
}

/// `b_t·∇f` at the grid points for a closed-form `f` (exact gradients).
pub fn apply_derivation_exact(
    space: &MetricMeasureSpace,
    b: &VectorField,
    f: &dyn SmoothFunction,
    t: f64,
) -> Result<Vec<f64>> {
    let bv = sample_field(space, b, t)?;
    Ok(space
        .coords()
        .par_iter()
        .zip(&bv)
        .map(|(p, v)| chart::dot(v, &f.gradient(p)))
        .collect())
}

/// Divergence as the weighted adjoint of the stencil derivation:
/// `Σ (b·∇f) w = −Σ (div b) f w` for every grid function `f`.
pub fn adjoint_divergence(
    space: &MetricMeasureSpace,
    stencil: &GradientStencil,
    b: &VectorField,
    t: f64,
) -> Result<Vec<f64>> {
    check_stencil(space, stencil)?;
    let bv = sample_field(space, b, t)?;
    let n = space.npoints();
    let mut acc = vec![0.0; n];
    for x in 0..n {
        let wx = space.weight(x);
        let mut diag = 0.0;
        for (j, a) in stencil.row(x) {
            let c = chart::dot(&bv[x], a);
            acc[*j] += wx * c;
            diag += c;
        }
        acc[x] -= wx * diag;
    }
    Ok(acc
        .iter()
        .enumerate()
        .map(|(y, a)| -a / space.weight(y))
        .collect())
}

/// Trace of the centered-difference Jacobian at every grid point.
pub fn chart_divergence(space: &MetricMeasureSpace, b: &VectorField, t: f64) -> Result<Vec<f64>> {
    b.check_time(t)?;
    b.check_space(space)?;
    Ok(space
        .coords()
        .par_iter()
        .map(|p| b.jacobian_unchecked(p, t).divergence())
        .collect())
}

/// `|Σ(b·∇f)w + Σ(div b) f w| / (‖b‖∞ ‖f‖_{W^{1,2}})`, 0 when `b ≡ 0`.
pub fn adjoint_residual(
    space: &MetricMeasureSpace,
    stencil: &GradientStencil,
    b: &VectorField,
    div: &[f64],
    f: &[f64],
    t: f64,
) -> Result<f64> {
    check_len(space, div)?;
    let bf = apply_derivation(space, stencil, b, f, t)?;
    let bsup = sample_field(space, b, t)?
        .iter()
        .map(chart::norm)
        .fold(0.0, f64::max);
    if bsup == 0.0 {
        return Ok(0.0);
    }
    let lhs: f64 = (0..space.npoints())
        .map(|x| (bf[x] + div[x] * f[x]) * space.weight(x))
        .sum();
    let grad = stencil.modulus(f);
    let w12 = (space.lp_norm(f, 2.0).powi(2) + space.lp_norm(&grad, 2.0).powi(2)).sqrt();
    if w12 == 0.0 {
        return Ok(0.0);
    }
    Ok(lhs.abs() / (bsup * w12))
}

/// Low-frequency functions used by the consistency gate.
fn gate_functions(chart: &Chart, coords: &[Coords]) -> Vec<Vec<f64>> {
    let sample = |g: &dyn Fn(&Coords) -> f64| coords.iter().map(g).collect::<Vec<f64>>();
    match chart {
        Chart::Sphere => vec![
            sample(&|p| p[0]),
            sample(&|p| p[1]),
            sample(&|p| p[2]),
            sample(&|p| p[0] * p[1]),
        ],
        Chart::ProductCircle { base, .. } if **base == Chart::Sphere => {
            let mut out = gate_functions(base, coords);
            out.push(sample(&|p| (2.0 * PI * p[3]).cos()));
            out.push(sample(&|p| (2.0 * PI * (p[3] + p[0])).sin()));
            out
        }
        _ => {
            let d = chart.coord_len();
            let mut out = Vec::new();
            for a in 0..d {
                out.push(sample(&|p: &Coords| (2.0 * PI * p[a]).cos()));
                out.push(sample(&|p: &Coords| (2.0 * PI * p[a]).sin()));
            }
            out.push(sample(&|p: &Coords| (2.0 * PI * (p[0] + p[d - 1])).cos()));
            out
        }
    }
}

/// Chart divergence, admitted only after the integration-by-parts gate.
pub fn divergence(
    space: &MetricMeasureSpace,
    stencil: &GradientStencil,
    b: &VectorField,
    t: f64,
) -> Result<Vec<f64>> {
    let div = chart_divergence(space, b, t)?;
    let worst = gate_residual(space, stencil, b, &div, t)?;
    if worst > ADJOINT_GATE {
        return Err(Error::Construction(format!(
            "divergence of `{}` at t = {t}: integration-by-parts residual {worst:.3e} exceeds {ADJOINT_GATE}",
            b.name()
        )));
    }
    Ok(div)
}

fn gate_residual(
    space: &MetricMeasureSpace,
    stencil: &GradientStencil,
    b: &VectorField,
    div: &[f64],
    t: f64,
) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for f in gate_functions(space.chart(), space.coords()) {
        worst = worst.max(adjoint_residual(space, stencil, b, div, &f, t)?);
    }
    Ok(worst)
}

pub enum SymMode<'a> {
    /// Operator norm of the symmetrized centered-difference Jacobian.
    Chart,
    /// Smallest cellwise envelope dominating the bilinear form on a probe set.
    BilinearProbe(&'a ProbeSetup<'a>),
}

/// `|∇_sym b_t|` at every grid point.
pub fn sym_derivative_modulus(
    space: &MetricMeasureSpace,
    b: &VectorField,
    t: f64,
    mode: &SymMode,
) -> Result<Vec<f64>> {
    b.check_time(t)?;
    b.check_space(space)?;
    match mode {
        SymMode::Chart => Ok(space
            .coords()
            .par_iter()
            .map(|p| b.jacobian_unchecked(p, t).sym_norm())
            .collect()),
        SymMode::BilinearProbe(setup) => {
            let div = divergence(space, setup.stencil, b, t)?;
            probe_envelope(space, setup, b, t, &div)
        }
    }
}

/// Divergence and symmetric-derivative moduli along a time grid.
#[derive(Clone, Debug)]
pub struct RegularityModuli {
    pub times: Vec<f64>,
    pub div: Vec<Vec<f64>>,
    pub sym_modulus: Vec<Vec<f64>>,
    /// `|∇_sym b| + |div b|`.
    pub g_combined: Vec<Vec<f64>>,
    /// Trapezoidal `∫ ‖g_s‖_{L²} ds` over the time grid.
    pub l2_time_integral: f64,
    /// `sup_t ‖|∇_sym b_t|‖_∞`.
    pub l_sym: f64,
    /// `sup_t ‖b_t‖_∞` over the grid.
    pub bounded_norm: f64,
    /// Worst relative residual of the integration-by-parts gate.
    pub adjoint_gap: f64,
}

impl RegularityModuli {
    pub fn g_l2(&self, space: &MetricMeasureSpace) -> Vec<f64> {
        self.g_combined
            .iter()
            .map(|g| space.lp_norm(g, 2.0))
            .collect()
    }
}

pub fn regularity_moduli(
    space: &MetricMeasureSpace,
    stencil: &GradientStencil,
    b: &VectorField,
    t_grid: &[f64],
    mode: &SymMode,
) -> Result<RegularityModuli> {
    if t_grid.is_empty() || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(crate::error::invalid("t_grid", "must be nonempty and increasing"));
    }
    let mut out = RegularityModuli {
        times: t_grid.to_vec(),
        div: Vec::new(),
        sym_modulus: Vec::new(),
        g_combined: Vec::new(),
        l2_time_integral: 0.0,
        l_sym: 0.0,
        bounded_norm: 0.0,
        adjoint_gap: 0.0,
    };
    for &t in t_grid {
        let div = chart_divergence(space, b, t)?;
        let gap = gate_residual(space, stencil, b, &div, t)?;
        if gap > ADJOINT_GATE {
            return Err(Error::Construction(format!(
                "divergence of `{}` at t = {t}: integration-by-parts residual {gap:.3e} exceeds {ADJOINT_GATE}",
                b.name()
            )));
        }
        let sym = match mode {
            SymMode::Chart => sym_derivative_modulus(space, b, t, mode)?,
            SymMode::BilinearProbe(setup) => probe_envelope(space, setup, b, t, &div)?,
        };
        let g: Vec<f64> = sym.iter().zip(&div).map(|(s, d)| s + d.abs()).collect();
        out.adjoint_gap = out.adjoint_gap.max(gap);
        out.l_sym = out.l_sym.max(sym.iter().cloned().fold(0.0, f64::max));
        out.bounded_norm = out.bounded_norm.max(
            sample_field(space, b, t)?
                .iter()
                .map(chart::norm)
                .fold(0.0, f64::max),
        );
        out.div.push(div);
        out.sym_modulus.push(sym);
        out.g_combined.push(g);
    }
    let norms = out.g_l2(space);
    out.l2_time_integral = t_grid
        .windows(2)
        .zip(norms.windows(2))
        .map(|(t, g)| 0.5 * (t[1] - t[0]) * (g[0] + g[1]))
        .sum();
    Ok(out)
}
