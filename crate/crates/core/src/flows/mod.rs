//! Regular Lagrangian flows on model charts.
//!
//! Trajectories are integrated with the classical four-stage Runge–Kutta
//! scheme in ambient chart coordinates, retracting onto the chart (periodic
//! wrap, sphere normalization) at every stage.

mod functionals;
pub mod io;
mod lusin;

pub use functionals::{
    default_r_grid, phi_functional, q_functional, q_star, verify_green_derivative_along_flow,
    verify_q_le_phi, verify_qstar_bound, GreenFlowReport, PhiFunctional, QFunctional,
    QLePhiReport, QStarBound, QStarReport,
};
pub use lusin::{
    lift_and_verify_n2, lusin_set, verify_lipschitz_on_set, LiftConfig, LiftReport, LusinReport,
    PairRatio,
};

use crate::error::{invalid, Error, Result};
use crate::fields::{AmbientLinear, AmbientQuadratic, SmoothFunction, TrigPolynomial, VectorField};
use crate::space::chart::{self, Chart, Coords};
use crate::space::MetricMeasureSpace;
use crate::spectral::Phase;
use rayon::prelude::*;
use std::f64::consts::PI;

/// Relative slack allowed on pushed densities.
pub const BIN_TOLERANCE: f64 = 0.1;

/// Width of the Gaussian binning kernel, in grid spacings.
pub const BIN_BANDWIDTH: f64 = 1.0;

/// A flow passes the RLF gate when its residual at the node spacing is at
/// most this fraction of the residual at twice the spacing.
pub const RLF_GATE_RATIO: f64 = 0.35;

/// Residuals below this are treated as exact.
pub const RLF_FLOOR: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq)]
pub struct Integrator {
    pub method: String,
    /// Largest substep; each node interval is split into equal substeps.
    pub step: f64,
}

/// `max |f(X_{t+h}) − f(X_t) − h (b·∇f)(X_t)|` over starts, nodes and the
/// test functions, at stride 1 and 2 of the time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct RlfResidual {
    pub stride1: f64,
    pub stride2: f64,
    pub passed: bool,
}

#[derive(Clone, Debug)]
pub struct FlowMap {
    chart: Chart,
    starts: Vec<usize>,
    origins: Vec<Coords>,
    times: Vec<f64>,
    /// Start-major: `positions[s * times.len() + k]`.
    positions: Vec<Coords>,
    integrator: Integrator,
    compressibility: Option<f64>,
    rlf: Option<RlfResidual>,
}

impl FlowMap {
    /// Runs the RLF gate and measures compressibility, e.g. after loading a
    /// cached flow.
    pub fn with_diagnostics(mut self, space: &MetricMeasureSpace, b: &VectorField) -> Result<Self> {
        if *b.chart() != self.chart || !self.covers(space) {
            return Err(invalid("flow", "does not belong to this field and space"));
        }
        let rlf = rlf_residual(&self, b)?;
        if !rlf.passed {
            return Err(Error::GateFailure {
                gate: "rlf-residual",
                detail: format!(
                    "residual {:.3e} at the node spacing vs {:.3e} at twice the spacing",
                    rlf.stride1, rlf.stride2
                ),
            });
        }
        self.rlf = Some(rlf);
        self.compressibility = Some(compressibility(&self, space)?);
        Ok(self)
    }

    pub(crate) fn from_parts(
        chart: Chart,
        starts: Vec<usize>,
        origins: Vec<Coords>,
        times: Vec<f64>,
        positions: Vec<Coords>,
        integrator: Integrator,
    ) -> Result<Self> {
        if origins.len() != starts.len() || positions.len() != starts.len() * times.len() {
            return Err(Error::DimensionMismatch {
                expected: starts.len() * times.len(),
                found: positions.len(),
            });
        }
        Ok(FlowMap {
            chart,
            starts,
            origins,
            times,
            positions,
            integrator,
            compressibility: None,
            rlf: None,
        })
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn integrator(&self) -> &Integrator {
        &self.integrator
    }

    /// Measured compressibility constant, when every grid point is a start.
    pub fn compressibility(&self) -> Option<f64> {
        self.compressibility
    }

    pub fn rlf_residual(&self) -> Option<&RlfResidual> {
        self.rlf.as_ref()
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    /// `X_{t_k}` of the `s`-th start.
    #[inline]
    pub fn position(&self, s: usize, k: usize) -> &Coords {
        &self.positions[s * self.times.len() + k]
    }

    pub fn trajectory(&self, s: usize) -> &[Coords] {
        let m = self.times.len();
        &self.positions[s * m..(s + 1) * m]
    }

    /// Index of the node equal to `t` (up to rounding).
    pub fn time_index(&self, t: f64) -> Result<usize> {
        let tol = 1e-12 * self.times.last().copied().unwrap_or(1.0).max(1.0);
        self.times
            .iter()
            .position(|s| (s - t).abs() <= tol)
            .ok_or_else(|| invalid("t", format!("{t} is not a node of the flow grid")))
    }

    /// True when start `s` is grid point `s` for every point of `space`.
    pub fn covers(&self, space: &MetricMeasureSpace) -> bool {
        self.chart == *space.chart()
            && self.starts.len() == space.npoints()
            && self.starts.iter().enumerate().all(|(i, s)| i == *s)
    }

    /// Largest distance between a flowed point and its nearest grid node.
    pub fn snap_distance(&self, space: &MetricMeasureSpace) -> f64 {
        self.positions
            .par_iter()
            .map(|p| space.dist_to_point(p, space.nearest_point(p)))
            .reduce(|| 0.0, f64::max)
    }

    /// Checks `X_0 = x` and `d(X_{t_k}, X_{t_{k+1}}) ≤ 1.5 (t_{k+1} − t_k) bsup`.
    pub fn check_invariants(&self, bsup: f64) -> Result<()> {
        for s in 0..self.len() {
            if *self.position(s, 0) != self.origins[s] {
                return Err(Error::GateFailure {
                    gate: "flow-origin",
                    detail: format!("start {} does not begin at its origin", self.starts[s]),
                });
            }
            for k in 1..self.times.len() {
                let d = self.chart.distance(self.position(s, k - 1), self.position(s, k));
                let cap = 1.5 * (self.times[k] - self.times[k - 1]) * bsup + 1e-12;
                if d > cap {
                    return Err(Error::GateFailure {
                        gate: "flow-continuity",
                        detail: format!("start {} jumps {d:.3e} > {cap:.3e} at node {k}", self.starts[s]),
                    });
                }
            }
        }
        Ok(())
    }

    /// Flowed grid nodes `X̂_{t_k}(x)` for every start.
    pub fn snapped(&self, space: &MetricMeasureSpace, k: usize) -> Vec<usize> {
        (0..self.len())
            .into_par_iter()
            .map(|s| space.nearest_point(self.position(s, k)))
            .collect()
    }
}

fn rk4_step(chart: &Chart, b: &VectorField, p: &Coords, t: f64, h: f64) -> Coords {
    let k1 = b.eval(p, t);
    let k2 = b.eval(&chart.retract(&chart::axpy(p, 0.5 * h, &k1)), t + 0.5 * h);
    let k3 = b.eval(&chart.retract(&chart::axpy(p, 0.5 * h, &k2)), t + 0.5 * h);
    let k4 = b.eval(&chart.retract(&chart::axpy(p, h, &k3)), t + h);
    let mut inc = chart::add(&k1, &k4);
    inc = chart::axpy(&inc, 2.0, &chart::add(&k2, &k3));
    chart.retract(&chart::axpy(p, h / 6.0, &inc))
}

fn integrate_one(chart: &Chart, b: &VectorField, p0: &Coords, times: &[f64], step: f64) -> Vec<Coords> {
    let mut out = Vec::with_capacity(times.len());
    let mut p = *p0;
    out.push(p);
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        let n = (dt / step).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        for i in 0..n {
            p = rk4_step(chart, b, &p, w[0] + i as f64 * h, h);
        }
        out.push(p);
    }
    out
}

fn check_time_grid(b: &VectorField, t_grid: &[f64]) -> Result<()> {
    if t_grid.len() < 3 || t_grid[0] != 0.0 {
        return Err(invalid("t_grid", "needs at least three nodes starting at 0"));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("t_grid", "must be strictly increasing"));
    }
    b.check_time(t_grid[t_grid.len() - 1])
}

/// Integrates `b` from every grid point, then runs the RLF gate and measures
/// the compressibility constant.
pub fn integrate_flow(
    space: &MetricMeasureSpace,
    b: &VectorField,
    t_grid: &[f64],
    step: f64,
) -> Result<FlowMap> {
    if !space.chart().has_coordinates() {
        return Err(Error::UnsupportedChart {
            op: "integrate_flow",
            chart: space.chart().tag(),
        });
    }
    if *b.chart() != *space.chart() {
        return Err(invalid("b", "field and space live on different charts"));
    }
    check_time_grid(b, t_grid)?;
    let horizon = t_grid[t_grid.len() - 1];
    let bsup = b.sup_norm(space, t_grid)?;
    let mut bound = 0.01 * horizon;
    if bsup > 0.0 {
        bound = bound.min(space.grid_spacing() / bsup);
    }
    if !(step > 0.0) || step > bound * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge { step, bound });
    }
    let chart = space.chart().clone();
    let positions: Vec<Coords> = space
        .coords()
        .par_iter()
        .flat_map_iter(|p| integrate_one(&chart, b, p, t_grid, step))
        .collect();
    let flow = FlowMap::from_parts(
        chart,
        (0..space.npoints()).collect(),
        space.coords().to_vec(),
        t_grid.to_vec(),
        positions,
        Integrator {
            method: "rk4".to_string(),
            step,
        },
    )?;
    flow.check_invariants(bsup)?;
    flow.with_diagnostics(space, b)
}

/// Trajectory of a single chart point (no gates).
pub fn integrate_point(b: &VectorField, p: &Coords, t_grid: &[f64], step: f64) -> Result<Vec<Coords>> {
    check_time_grid(b, t_grid)?;
    if !(step > 0.0) {
        return Err(invalid("step", "must be positive"));
    }
    Ok(integrate_one(b.chart(), b, p, t_grid, step))
}

/// Heat-regularized test functions with closed-form gradients.
pub fn rlf_test_functions(chart: &Chart) -> Result<Vec<Box<dyn SmoothFunction>>> {
    const TAU: f64 = 0.01;
    let damp = |lambda: f64| (-lambda * TAU).exp();
    let trig = |k: [i64; 4], phase: Phase| -> Box<dyn SmoothFunction> {
        let k2: i64 = k.iter().map(|v| v * v).sum();
        Box::new(TrigPolynomial::mode(k, phase, damp(4.0 * PI * PI * k2 as f64)))
    };
    // Degree-1 and degree-2 spherical harmonics (eigenvalues 2 and 6).
    let sphere = || -> Vec<Box<dyn SmoothFunction>> {
        let lin = |a: Coords| Box::new(AmbientLinear { a: chart::scale(&a, damp(2.0)) }) as Box<dyn SmoothFunction>;
        let quad = |entries: &[(usize, usize, f64)]| {
            let mut m = [[0.0; 3]; 3];
            for &(i, j, v) in entries {
                m[i][j] += 0.5 * v * damp(6.0);
                m[j][i] += 0.5 * v * damp(6.0);
            }
            Box::new(AmbientQuadratic { m }) as Box<dyn SmoothFunction>
        };
        vec![
            lin([1.0, 0.0, 0.0, 0.0]),
            lin([0.0, 1.0, 0.0, 0.0]),
            lin([0.0, 0.0, 1.0, 0.0]),
            quad(&[(0, 1, 2.0)]),
            quad(&[(1, 2, 2.0)]),
            quad(&[(0, 2, 2.0)]),
            quad(&[(0, 0, 1.0), (1, 1, -1.0)]),
            quad(&[(0, 0, -1.0), (1, 1, -1.0), (2, 2, 2.0)]),
            quad(&[(0, 2, 1.0), (1, 2, 1.0)]),
            lin([1.0, -1.0, 0.5, 0.0]),
        ]
    };
    let mut out = Vec::new();
    match chart {
        Chart::Sphere => out = sphere(),
        Chart::ProductCircle { base, .. } if **base == Chart::Sphere => {
            out = sphere();
            out.truncate(8);
            out.push(trig([0, 0, 0, 1], Phase::Cos));
            out.push(trig([0, 0, 0, 1], Phase::Sin));
        }
        _ => {
            let d = chart.coord_len();
            if chart.lattice().is_none() || d == 0 {
                return Err(Error::UnsupportedChart {
                    op: "rlf test functions",
                    chart: chart.tag(),
                });
            }
            let mut ks: Vec<[i64; 4]> = Vec::new();
            for a in 0..d {
                let mut k = [0; 4];
                k[a] = 1;
                ks.push(k);
            }
            if d > 1 {
                let mut k = [0; 4];
                k[0] = 1;
                k[d - 1] = -1;
                ks.push(k);
                let mut k = [0; 4];
                k[0] = 1;
                k[1] = 2;
                ks.push(k);
            }
            let mut m = 2;
            while ks.len() < 5 {
                let mut k = [0; 4];
                k[0] = m;
                ks.push(k);
                m += 1;
            }
            for k in ks.into_iter().take(5) {
                out.push(trig(k, Phase::Cos));
                out.push(trig(k, Phase::Sin));
            }
        }
    }
    Ok(out)
}

/// Residual of the defining identity of a regular Lagrangian flow at strides
/// 1 and 2 of the time grid.
pub fn rlf_residual(flow: &FlowMap, b: &VectorField) -> Result<RlfResidual> {
    let funcs = rlf_test_functions(&flow.chart)?;
    let times = &flow.times;
    let stride = |s: usize| -> f64 {
        (0..flow.len())
            .into_par_iter()
            .map(|i| {
                let traj = flow.trajectory(i);
                let mut worst: f64 = 0.0;
                for k in 0..times.len().saturating_sub(s) {
                    let p = &traj[k];
                    let q = &traj[k + s];
                    let h = times[k + s] - times[k];
                    let v = b.eval(p, times[k]);
                    for f in &funcs {
                        let r = f.value(q) - f.value(p) - h * chart::dot(&v, &f.gradient(p));
                        worst = worst.max(r.abs());
                    }
                }
                worst
            })
            .reduce(|| 0.0, f64::max)
    };
    let stride1 = stride(1);
    let stride2 = stride(2);
    Ok(RlfResidual {
        stride1,
        stride2,
        passed: stride1 <= RLF_FLOOR || stride1 <= RLF_GATE_RATIO * stride2,
    })
}

/// `Σ_s m_s K_σ(p_s, x)` at every grid node `x` with a Gaussian kernel cut at 3σ.
pub(crate) fn smoothed_mass(
    space: &MetricMeasureSpace,
    points: &[Coords],
    masses: &[f64],
    sigma: f64,
) -> Vec<f64> {
    let chart = space.chart();
    let cut = 3.0 * sigma;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut acc = vec![0.0; space.npoints()];
    if let Some(axes) = chart.lattice() {
        let ranges: Vec<Vec<i64>> = axes
            .iter()
            .map(|&n| {
                let m = (cut * n as f64).ceil() as i64;
                if 2 * m + 1 >= n as i64 {
                    (0..n as i64).collect()
                } else {
                    (-m..=m).collect()
                }
            })
            .collect();
        let mut offsets: Vec<Vec<i64>> = vec![Vec::new()];
        for r in &ranges {
            offsets = offsets
                .iter()
                .flat_map(|o| {
                    r.iter().map(move |v| {
                        let mut o = o.clone();
                        o.push(*v);
                        o
                    })
                })
                .collect();
        }
        for (p, m) in points.iter().zip(masses) {
            let c = chart.nearest_lattice_index(p).expect("lattice chart");
            for off in &offsets {
                let y = chart::lattice_shift(&axes, c, off);
                let d = chart.distance(p, space.coord(y));
                if d < cut {
                    acc[y] += m * (-d * d * inv).exp();
                }
            }
        }
    } else {
        for (p, m) in points.iter().zip(masses) {
            for (y, a) in acc.iter_mut().enumerate() {
                let d = chart.distance(p, space.coord(y));
                if d < cut {
                    *a += m * (-d * d * inv).exp();
                }
            }
        }
    }
    acc
}

/// `max_{t, x}` of the kernel-binned density of `X_t # m` relative to `m`.
pub fn compressibility(flow: &FlowMap, space: &MetricMeasureSpace) -> Result<f64> {
    if !flow.covers(space) {
        return Err(invalid("flow", "compressibility needs every grid point as a start"));
    }
    let sigma = BIN_BANDWIDTH * space.grid_spacing();
    let reference = smoothed_mass(space, space.coords(), space.weights(), sigma);
    let m = flow.times.len();
    let worst = (0..m)
        .into_par_iter()
        .map(|k| {
            let pts: Vec<Coords> = (0..flow.len()).map(|s| *flow.position(s, k)).collect();
            let pushed = smoothed_mass(space, &pts, space.weights(), sigma);
            pushed
                .iter()
                .zip(&reference)
                .map(|(a, r)| a / r)
                .fold(0.0, f64::max)
        })
        .reduce(|| 0.0, f64::max);
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{builtin_field, FieldSpec};
    use crate::space::{build_sphere_mesh, build_torus_grid};

    fn grid(t: f64, m: usize) -> Vec<f64> {
        (0..=m).map(|k| t * k as f64 / m as f64).collect()
    }

    #[test]
    fn zero_field_is_identity() {
        let s = build_torus_grid(2, 8).unwrap();
        let b = builtin_field(&FieldSpec::Zero, &s, None, 1.0).unwrap();
        let f = integrate_flow(&s, &b, &grid(1.0, 10), 0.01).unwrap();
        for i in 0..s.npoints() {
            assert!(f.trajectory(i).iter().all(|p| p == s.coord(i)));
        }
        assert_eq!(f.compressibility(), Some(1.0));
        assert_eq!(f.rlf_residual().unwrap().stride1, 0.0);
    }

    #[test]
    fn step_bound_is_enforced() {
        let s = build_torus_grid(2, 8).unwrap();
        let b = builtin_field(&FieldSpec::Constant { v: vec![40.0, 0.0] }, &s, None, 1.0).unwrap();
        assert!(matches!(
            integrate_flow(&s, &b, &grid(1.0, 10), 0.01),
            Err(Error::StepTooLarge { .. })
        ));
        assert!(integrate_flow(&s, &b, &[0.0, 1.0], 0.001).is_err());
    }

    #[test]
    fn sphere_test_functions_are_tangent() {
        let p = chart::normalize3(&[0.2, 0.5, -0.4, 0.0]);
        let fs = rlf_test_functions(&Chart::Sphere).unwrap();
        assert_eq!(fs.len(), 10);
        for f in fs {
            assert!(chart::dot(&f.gradient(&p), &p).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_kernel_binning_has_unit_ratio() {
        let s = build_sphere_mesh(200).unwrap();
        let sig = s.grid_spacing();
        let a = smoothed_mass(&s, s.coords(), s.weights(), sig);
        assert!(a.iter().all(|v| *v > 0.0));
    }
}
