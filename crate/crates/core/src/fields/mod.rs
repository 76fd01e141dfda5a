//! Vector fields acting as derivations on charted model spaces.
//!
//! A [`VectorField`] is an analytic map `(point, time) → tangent vector` in
//! ambient chart coordinates. On a sampled space it acts on grid functions
//! through a [`GradientStencil`], and on closed-form functions through their
//! exact gradients.

mod estimates;
mod functions;
mod moduli;
mod probe;

pub use estimates::{
    verify_key_maximal_estimate, verify_pair_kernel_estimate, KeyEstimateReport,
    PairKernelReport,
};
pub use functions::{AmbientLinear, AmbientQuadratic, SmoothFunction, TrigPolynomial};
pub use moduli::{
    adjoint_divergence, adjoint_residual, apply_derivation, apply_derivation_exact, chart_divergence,
    divergence,
    regularity_moduli, sample_field, sym_derivative_modulus, RegularityModuli, SymMode,
    ADJOINT_GATE,
};
pub use probe::ProbeSetup;

use crate::error::{invalid, Error, Result};
use crate::space::chart::{self, Chart, Coords, ZERO};
use crate::space::MetricMeasureSpace;
use crate::spectral::{FourierMode, SpectralBasis};
use nalgebra::DMatrix;
use serde::Deserialize;
use std::f64::consts::PI;

/// Default half-width of the quartic smoothing at the kinks of the shear profile.
pub const SHEAR_SMOOTHING: f64 = 0.05;

fn one() -> f64 {
    1.0
}

fn shear_smoothing() -> f64 {
    SHEAR_SMOOTHING
}

/// Declarative description of a built-in field.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Zero,
    Constant {
        v: Vec<f64>,
    },
    Rotation {
        axis: [f64; 3],
        speed: f64,
    },
    Shear {
        s: f64,
        #[serde(default = "shear_smoothing")]
        smoothing: f64,
    },
    GradientHeat {
        mode: usize,
        tau: f64,
        #[serde(default = "one")]
        amplitude: f64,
    },
    CdlSingular {
        alpha: f64,
        rho: f64,
        center: Vec<f64>,
    },
}

impl FieldSpec {
    pub fn name(&self) -> &'static str {
        match self {
            FieldSpec::Zero => "zero",
            FieldSpec::Constant { .. } => "constant",
            FieldSpec::Rotation { .. } => "rotation",
            FieldSpec::Shear { .. } => "shear",
            FieldSpec::GradientHeat { .. } => "gradient_heat",
            FieldSpec::CdlSingular { .. } => "cdl_singular",
        }
    }
}

#[derive(Clone, Debug)]
enum Kind {
    Constant(Coords),
    Rotation { axis: Coords, speed: f64 },
    Shear { s: f64, delta: f64 },
    /// `b = Σ c ∇m` over Fourier modes.
    Gradient(Vec<(FourierMode, f64)>),
    Singular {
        center: Coords,
        alpha: f64,
        rho: f64,
    },
    Lifted(Box<VectorField>),
}

/// Time modulation `1 + amplitude·sin(2πt/period)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pulse {
    pub amplitude: f64,
    pub period: f64,
}

impl Pulse {
    fn factor(&self, t: f64) -> f64 {
        1.0 + self.amplitude * (2.0 * PI * t / self.period).sin()
    }

    /// `∫₀ᵗ factor`.
    fn integral(&self, t: f64) -> f64 {
        t + self.amplitude * self.period / (2.0 * PI) * (1.0 - (2.0 * PI * t / self.period).cos())
    }
}

#[derive(Clone, Debug)]
pub struct VectorField {
    name: String,
    kind: Kind,
    chart: Chart,
    horizon: f64,
    gain: f64,
    pulse: Option<Pulse>,
    fd_step: f64,
}

/// Jacobian `J_ij = e_i · ∇_{e_j} b` in an orthonormal tangent frame.
#[derive(Clone, Debug)]
pub struct Jacobian {
    pub frame: Vec<Coords>,
    /// Row-major `d × d`.
    pub entries: Vec<f64>,
}

impl Jacobian {
    pub fn dim(&self) -> usize {
        self.frame.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.dim() + j]
    }

    pub fn divergence(&self) -> f64 {
        (0..self.dim()).map(|j| self.get(j, j)).sum()
    }

    fn symmetric(&self) -> DMatrix<f64> {
        let d = self.dim();
        DMatrix::from_fn(d, d, |i, j| 0.5 * (self.get(i, j) + self.get(j, i)))
    }

    /// Operator norm of the symmetric part.
    pub fn sym_norm(&self) -> f64 {
        match self.dim() {
            0 => 0.0,
            1 => self.get(0, 0).abs(),
            _ => self
                .symmetric()
                .symmetric_eigenvalues()
                .iter()
                .fold(0.0, |m, v| m.max(v.abs())),
        }
    }

    /// `∇_sym b(u, v)` for ambient tangent vectors `u`, `v`.
    pub fn sym_form(&self, u: &Coords, v: &Coords) -> f64 {
        let cu: Vec<f64> = self.frame.iter().map(|e| chart::dot(e, u)).collect();
        let cv: Vec<f64> = self.frame.iter().map(|e| chart::dot(e, v)).collect();
        let d = self.dim();
        let mut s = 0.0;
        for i in 0..d {
            for j in 0..d {
                s += 0.5 * (self.get(i, j) + self.get(j, i)) * cu[i] * cv[j];
            }
        }
        s
    }
}

/// Mollified triangle wave with slopes ±1, its derivative, and range ⊂ [−1/4, 1/4].
pub fn shear_profile(u: f64, delta: f64) -> (f64, f64) {
    fn smooth_abs(v: f64, d: f64) -> (f64, f64) {
        if v.abs() >= d {
            (v.abs(), v.signum())
        } else {
            (
                3.0 * d / 8.0 + 3.0 * v * v / (4.0 * d) - v.powi(4) / (8.0 * d.powi(3)),
                1.5 * v / d - 0.5 * v.powi(3) / d.powi(3),
            )
        }
    }
    let v = u - u.round();
    if v.abs() <= 0.25 {
        let (a, da) = smooth_abs(v, delta);
        (a - 0.25, da)
    } else {
        let (a, da) = smooth_abs(0.5 - v.abs(), delta);
        (0.25 - a, da * v.signum())
    }
}

/// C² cutoff: 1 on `[0, ρ]`, 0 on `[2ρ, ∞)`.
fn bump(r: f64, rho: f64) -> f64 {
    if r <= rho {
        1.0
    } else if r >= 2.0 * rho {
        0.0
    } else {
        let s = (r - rho) / rho;
        1.0 - s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)
    }
}

fn cross3(a: &Coords, b: &Coords) -> Coords {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
        0.0,
    ]
}

fn spec_vector(v: &[f64], len: usize, name: &'static str) -> Result<Coords> {
    if v.len() != len {
        return Err(invalid(name, format!("expected {len} components, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(invalid(name, "components must be finite"));
    }
    let mut c = ZERO;
    c[..len].copy_from_slice(v);
    Ok(c)
}

/// Builds a built-in field on `space` for times in `[0, horizon]`.
///
/// `basis` is only consulted by `gradient_heat`, which needs the analytic
/// modes of an exact lattice basis.
pub fn builtin_field(
    spec: &FieldSpec,
    space: &MetricMeasureSpace,
    basis: Option<&SpectralBasis>,
    horizon: f64,
) -> Result<VectorField> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("horizon", "must be positive and finite"));
    }
    let chart = space.chart().clone();
    let unsupported = |op: &'static str| Error::UnsupportedChart {
        op,
        chart: chart.tag(),
    };
    let torus_dims = match &chart {
        Chart::Torus { dims, .. } => Some(*dims),
        _ => None,
    };
    let kind = match spec {
        FieldSpec::Zero => Kind::Constant(ZERO),
        FieldSpec::Constant { v } => {
            if chart.lattice().is_none() {
                return Err(unsupported("constant field"));
            }
            Kind::Constant(spec_vector(v, chart.coord_len(), "v")?)
        }
        FieldSpec::Rotation { axis, speed } => {
            if chart != Chart::Sphere {
                return Err(unsupported("rotation field"));
            }
            let a = [axis[0], axis[1], axis[2], 0.0];
            let n = chart::norm(&a);
            if !(n > 0.0 && n.is_finite()) || !speed.is_finite() {
                return Err(invalid("axis", "rotation needs a nonzero finite axis and speed"));
            }
            Kind::Rotation {
                axis: chart::scale(&a, 1.0 / n),
                speed: *speed,
            }
        }
        FieldSpec::Shear { s, smoothing } => {
            if !torus_dims.is_some_and(|d| d >= 2) {
                return Err(unsupported("shear field"));
            }
            if !s.is_finite() {
                return Err(invalid("s", "must be finite"));
            }
            if !(*smoothing > 0.0 && *smoothing < 0.25) {
                return Err(invalid("smoothing", "must lie in (0, 1/4)"));
            }
            Kind::Shear {
                s: *s,
                delta: *smoothing,
            }
        }
        FieldSpec::GradientHeat {
            mode,
            tau,
            amplitude,
        } => {
            let modes = basis
                .and_then(|b| b.modes())
                .ok_or_else(|| unsupported("gradient_heat field (needs an exact lattice basis)"))?;
            let basis = basis.expect("modes imply a basis");
            if basis.npoints() != space.npoints() {
                return Err(Error::DimensionMismatch {
                    expected: space.npoints(),
                    found: basis.npoints(),
                });
            }
            if *mode == 0 || *mode >= modes.len() {
                return Err(invalid("mode", format!("must lie in 1..{}", modes.len())));
            }
            if !(*tau >= 0.0) || !amplitude.is_finite() {
                return Err(invalid("tau", "needs tau ≥ 0 and a finite amplitude"));
            }
            let m = modes[*mode].clone();
            let c = amplitude * (-basis.eigenvalue(*mode) * tau).exp();
            Kind::Gradient(vec![(m, c)])
        }
        FieldSpec::CdlSingular { alpha, rho, center } => {
            let dims = torus_dims
                .filter(|d| *d == 2 || *d == 3)
                .ok_or_else(|| unsupported("cdl_singular field"))?;
            if !(*alpha > 0.0 && *alpha < 1.0) {
                return Err(invalid("alpha", "must lie in (0, 1)"));
            }
            if !(*rho > 0.0 && *rho < space.diameter() / 2.0) {
                return Err(invalid("rho", "must lie in (0, D/2)"));
            }
            if 2.0 * rho > 0.5 {
                return Err(invalid(
                    "rho",
                    "the cutoff ball of radius 2ρ must not wrap around the torus",
                ));
            }
            let c = spec_vector(center, dims, "center")?;
            Kind::Singular {
                center: chart.retract(&c),
                alpha: *alpha,
                rho: *rho,
            }
        }
    };
    Ok(VectorField {
        name: spec.name().to_string(),
        kind,
        chart,
        horizon,
        gain: 1.0,
        pulse: None,
        fd_step: space.grid_spacing(),
    })
}

impl VectorField {
    /// Gradient field `Σ c ∇m` of a trigonometric polynomial.
    pub fn gradient_of(
        space: &MetricMeasureSpace,
        terms: Vec<(FourierMode, f64)>,
        horizon: f64,
    ) -> Result<Self> {
        if space.chart().lattice().is_none() {
            return Err(Error::UnsupportedChart {
                op: "trigonometric gradient field",
                chart: space.chart().tag(),
            });
        }
        Ok(VectorField {
            name: "gradient".to_string(),
            kind: Kind::Gradient(terms),
            chart: space.chart().clone(),
            horizon,
            gain: 1.0,
            pulse: None,
            fd_step: space.grid_spacing(),
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Step of the centered differences used for Jacobians.
    pub fn fd_step(&self) -> f64 {
        self.fd_step
    }

    pub fn with_horizon(mut self, horizon: f64) -> Result<Self> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(invalid("horizon", "must be positive and finite"));
        }
        self.horizon = horizon;
        if let Kind::Lifted(inner) = &mut self.kind {
            inner.horizon = horizon;
        }
        Ok(self)
    }

    /// The field `λ b`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.gain *= lambda;
        out
    }

    pub fn with_pulse(mut self, amplitude: f64, period: f64) -> Result<Self> {
        if !(amplitude.abs() < 1.0 && period > 0.0) {
            return Err(invalid("pulse", "needs |amplitude| < 1 and period > 0"));
        }
        self.pulse = Some(Pulse { amplitude, period });
        Ok(self)
    }

    /// True when the field does not depend on time.
    pub fn is_autonomous(&self) -> bool {
        self.pulse.is_none()
            && match &self.kind {
                Kind::Lifted(inner) => inner.is_autonomous(),
                _ => true,
            }
    }

    /// Lifts `b` to `b̄(x, s) = (b(x), 0)` on `space × S¹`.
    pub fn lift(&self, product: &MetricMeasureSpace) -> Result<Self> {
        match product.chart() {
            Chart::ProductCircle { base, .. } if **base == self.chart => Ok(VectorField {
                name: format!("lifted-{}", self.name),
                kind: Kind::Lifted(Box::new(self.clone())),
                chart: product.chart().clone(),
                horizon: self.horizon,
                gain: 1.0,
                pulse: None,
                fd_step: self.fd_step,
            }),
            other => Err(Error::UnsupportedChart {
                op: "lift (needs the product of this field's chart with a circle)",
                chart: other.tag(),
            }),
        }
    }

    pub fn check_time(&self, t: f64) -> Result<()> {
        if t >= 0.0 && t <= self.horizon {
            Ok(())
        } else {
            Err(Error::TimeOutOfSpan {
                t,
                horizon: self.horizon,
            })
        }
    }

    pub(crate) fn check_space(&self, space: &MetricMeasureSpace) -> Result<()> {
        if *space.chart() == self.chart {
            Ok(())
        } else {
            Err(invalid(
                "space",
                format!(
                    "field lives on `{}` but the space is `{}` (or resolutions differ)",
                    self.chart.tag(),
                    space.chart().tag()
                ),
            ))
        }
    }

    fn time_factor(&self, t: f64) -> f64 {
        self.gain * self.pulse.map_or(1.0, |p| p.factor(t))
    }

    /// `b_t(p)` in ambient coordinates.
    pub fn value(&self, p: &Coords, t: f64) -> Result<Coords> {
        self.check_time(t)?;
        Ok(self.eval(p, t))
    }

    pub(crate) fn eval(&self, p: &Coords, t: f64) -> Coords {
        let v = match &self.kind {
            Kind::Constant(v) => *v,
            Kind::Rotation { axis, speed } => chart::scale(&cross3(axis, p), *speed),
            Kind::Shear { s, delta } => {
                let mut v = ZERO;
                v[0] = s * shear_profile(p[1], *delta).0;
                v
            }
            Kind::Gradient(terms) => terms
                .iter()
                .fold(ZERO, |g, (m, c)| chart::axpy(&g, *c, &m.gradient(p))),
            Kind::Singular { center, alpha, rho } => {
                let z = self.chart.displacement(center, p);
                let r = chart::norm(&z);
                if r == 0.0 {
                    ZERO
                } else {
                    let h = r.min(*rho).powf(1.0 - alpha) * bump(r, *rho) / r;
                    [-h * z[1], h * z[0], 0.0, 0.0]
                }
            }
            Kind::Lifted(inner) => {
                let (base, _) = self.chart.split_product(p).expect("lifted fields live on products");
                inner.eval(&base, t)
            }
        };
        let f = self.time_factor(t);
        if f == 1.0 {
            v
        } else {
            chart::scale(&v, f)
        }
    }

    /// Centered-difference Jacobian along geodesics of the chart.
    pub fn jacobian(&self, p: &Coords, t: f64) -> Result<Jacobian> {
        self.check_time(t)?;
        Ok(self.jacobian_unchecked(p, t))
    }

    pub(crate) fn jacobian_unchecked(&self, p: &Coords, t: f64) -> Jacobian {
        let frame = self.chart.tangent_frame(p);
        let d = frame.len();
        let eta = self.fd_step;
        let mut entries = vec![0.0; d * d];
        for j in 0..d {
            let plus = self.eval(&self.chart.exp(p, &chart::scale(&frame[j], eta)), t);
            let minus = self.eval(&self.chart.exp(p, &chart::scale(&frame[j], -eta)), t);
            let diff = chart::sub(&plus, &minus);
            for i in 0..d {
                entries[i * d + j] = chart::dot(&frame[i], &diff) / (2.0 * eta);
            }
        }
        Jacobian { frame, entries }
    }

    /// Closed-form flow map `X_t(p)` for the fields that have one
    /// (translations, rotations, shears and their lifts).
    pub fn exact_flow(&self, p: &Coords, t: f64) -> Option<Coords> {
        let tau = self.gain * self.pulse.map_or(t, |q| q.integral(t));
        match &self.kind {
            Kind::Constant(v) => Some(self.chart.retract(&chart::axpy(p, tau, v))),
            Kind::Rotation { axis, speed } => {
                let th = speed * tau;
                let (s, c) = th.sin_cos();
                let ap = chart::dot(axis, p);
                let q = chart::axpy(
                    &chart::axpy(&chart::scale(p, c), s, &cross3(axis, p)),
                    ap * (1.0 - c),
                    axis,
                );
                Some(chart::normalize3(&q))
            }
            Kind::Shear { s, delta } => {
                let mut q = *p;
                q[0] = chart::wrap_unit(p[0] + tau * s * shear_profile(p[1], *delta).0);
                Some(q)
            }
            Kind::Lifted(inner) => {
                if self.gain != 1.0 || self.pulse.is_some() {
                    return None;
                }
                let (base, s) = self.chart.split_product(p)?;
                let mut q = inner.exact_flow(&base, t)?;
                q[self.chart.coord_len() - 1] = s;
                Some(q)
            }
            Kind::Gradient(_) | Kind::Singular { .. } => None,
        }
    }

    /// `sup |b_t(x)|` over the grid points and the given times.
    pub fn sup_norm(&self, space: &MetricMeasureSpace, t_grid: &[f64]) -> Result<f64> {
        self.check_space(space)?;
        let mut m: f64 = 0.0;
        for &t in t_grid {
            for v in sample_field(space, self, t)? {
                m = m.max(chart::norm(&v));
            }
        }
        Ok(m)
    }

    /// The base field of a lift.
    pub fn base_field(&self) -> Option<&VectorField> {
        match &self.kind {
            Kind::Lifted(inner) => Some(inner),
            _ => None,
        }
    }

    /// Singular centre, exponent and cutoff of a `cdl_singular` field.
    pub fn singularity(&self) -> Option<(Coords, f64, f64)> {
        match &self.kind {
            Kind::Singular { center, alpha, rho } => Some((*center, *alpha, *rho)),
            Kind::Lifted(inner) => inner.singularity(),
            _ => None,
        }
    }
}
