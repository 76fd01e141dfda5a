//! Bilinear-probe envelope of the symmetric derivative.
//!
//! For probe pairs `(f, g)` the form
//! `B(f,g) = −½ Σ [(b·∇g)Δf + (b·∇f)Δg − div b ∇f·∇g] w`
//! is evaluated, and the smallest cellwise constant envelope `h ≥ 0`
//! (minimal `Σ h m(cell)`) with `|B(f,g)| ≤ Σ h |∇f||∇g| w` is found by a
//! linear program.

use super::VectorField;
use crate::error::{invalid, Error, Result};
use crate::space::chart;
use crate::space::{GradientStencil, MetricMeasureSpace};
use crate::spectral::{heat_kernel_row, LaplacianOperator, SpectralBasis};
use microlp::{ComparisonOp, OptimizationDirection, Problem};

pub struct ProbeSetup<'a> {
    pub basis: &'a SpectralBasis,
    pub op: &'a LaplacianOperator,
    pub stencil: &'a GradientStencil,
    /// Probes `u_1 … u_m`.
    pub eigen_probes: usize,
    /// Heat-regularized bumps `p_τ(c, ·)` centred at cell centres.
    pub bump_probes: usize,
    pub bump_tau: f64,
    pub cells: usize,
}

impl<'a> ProbeSetup<'a> {
    pub fn new(
        basis: &'a SpectralBasis,
        op: &'a LaplacianOperator,
        stencil: &'a GradientStencil,
    ) -> Self {
        ProbeSetup {
            basis,
            op,
            stencil,
            eigen_probes: 12,
            bump_probes: 16,
            bump_tau: 0.002,
            cells: 16,
        }
    }
}

/// Farthest-point centres and the induced nearest-centre partition.
pub(crate) fn partition(space: &MetricMeasureSpace, k: usize) -> (Vec<usize>, Vec<usize>) {
    let n = space.npoints();
    let k = k.clamp(1, n);
    let mut centres = vec![0usize];
    let mut near: Vec<f64> = (0..n).map(|y| space.dist(0, y)).collect();
    while centres.len() < k {
        let (mut best, mut arg) = (-1.0, 0);
        for (y, &d) in near.iter().enumerate() {
            if d > best {
                best = d;
                arg = y;
            }
        }
        centres.push(arg);
        for (y, d) in near.iter_mut().enumerate() {
            *d = d.min(space.dist(arg, y));
        }
    }
    let cell = (0..n)
        .map(|y| {
            let mut best = (f64::INFINITY, 0);
            for (c, &z) in centres.iter().enumerate() {
                let d = space.dist(z, y);
                if d < best.0 {
                    best = (d, c);
                }
            }
            best.1
        })
        .collect();
    (centres, cell)
}

struct Probe {
    lap: Vec<f64>,
    grad: Vec<chart::Coords>,
    along: Vec<f64>,
    modulus: Vec<f64>,
}

pub(crate) fn probe_envelope(
    space: &MetricMeasureSpace,
    setup: &ProbeSetup,
    b: &VectorField,
    t: f64,
    div: &[f64],
) -> Result<Vec<f64>> {
    let n = space.npoints();
    if setup.basis.npoints() != n || setup.op.npoints() != n || setup.stencil.npoints() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            found: setup.basis.npoints(),
        });
    }
    if setup.eigen_probes + setup.bump_probes == 0 || setup.cells == 0 {
        return Err(invalid("probe setup", "needs at least one probe and one cell"));
    }
    let bv = super::sample_field(space, b, t)?;
    let (centres, cell) = partition(space, setup.cells);
    let k = centres.len();

    let mut funcs: Vec<Vec<f64>> = (1..=setup.eigen_probes.min(setup.basis.len() - 1))
        .map(|i| setup.basis.eigenfunction(i).to_vec())
        .collect();
    for &c in centres.iter().take(setup.bump_probes) {
        let row = heat_kernel_row(setup.basis, setup.bump_tau, c)?;
        let m = row.iter().cloned().fold(0.0, f64::max);
        funcs.push(row.iter().map(|v| v / m).collect());
    }
    let probes: Vec<Probe> = funcs
        .iter()
        .map(|f| {
            let lap: Vec<f64> = setup.op.apply(f).iter().map(|v| -v).collect();
            let grad = setup.stencil.gradient(f);
            let along = grad.iter().zip(&bv).map(|(g, v)| chart::dot(g, v)).collect();
            let modulus = grad.iter().map(chart::norm).collect();
            Probe {
                lap,
                grad,
                along,
                modulus,
            }
        })
        .collect();

    let mut mass = vec![0.0; k];
    for y in 0..n {
        mass[cell[y]] += space.weight(y);
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let vars: Vec<_> = mass
        .iter()
        .map(|m| lp.add_var(*m, (0.0, f64::INFINITY)))
        .collect();
    for i in 0..probes.len() {
        for j in i..probes.len() {
            let (p, q) = (&probes[i], &probes[j]);
            let mut form = 0.0;
            let mut coeff = vec![0.0; k];
            for y in 0..n {
                let w = space.weight(y);
                form += w
                    * (q.along[y] * p.lap[y] + p.along[y] * q.lap[y]
                        - div[y] * chart::dot(&p.grad[y], &q.grad[y]));
                coeff[cell[y]] += w * p.modulus[y] * q.modulus[y];
            }
            let rhs = (0.5 * form).abs();
            let scale = coeff.iter().cloned().fold(0.0, f64::max);
            if scale == 0.0 {
                if rhs > 1e-12 {
                    return Err(Error::Infeasible(format!(
                        "probe pair ({i}, {j}) has |B| = {rhs:.3e} but vanishing gradients"
                    )));
                }
                continue;
            }
            let row: Vec<_> = vars
                .iter()
                .zip(&coeff)
                .filter(|(_, a)| **a > 0.0)
                .map(|(v, a)| (*v, a / scale))
                .collect();
            lp.add_constraint(&row, ComparisonOp::Ge, rhs / scale);
        }
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::Infeasible(format!("probe envelope: {e}")))?
        .into_solution()
        .map_err(|e| Error::Infeasible(format!("probe envelope interrupted: {e:?}")))?;
    let h: Vec<f64> = vars.iter().map(|v| sol[*v].max(0.0)).collect();
    Ok(cell.iter().map(|c| h[*c]).collect())
}
