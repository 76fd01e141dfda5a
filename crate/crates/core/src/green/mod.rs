//! Green function of `−Δ` and its heat regularization, assembled from a
//! spectral basis, together with the identities and comparability bounds
//! they satisfy.

mod checks;

pub use checks::{
    fit_slope_constant, green_gradient, green_time_integral, pseudo_inverse_green,
    verify_green_action, verify_green_laplacian, verify_semigroup_identity,
    verify_w1p_convergence, W1pReport, W1pRow,
};

use crate::error::{invalid, Error, Result};
use crate::space::MetricMeasureSpace;
use crate::spectral::{Scheme, SpectralBasis};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::sync::Arc;

/// `Σ_{i≥1} e^{−λ_i ε} u_i(x) u_i(y) / λ_i` evaluated directly.
pub fn green(basis: &SpectralBasis, epsilon: f64, x: usize, y: usize) -> Result<f64> {
    check_epsilon(epsilon)?;
    if x >= basis.npoints() || y >= basis.npoints() {
        return Err(Error::UnknownPoint(x.max(y)));
    }
    let (a, b) = if x <= y { (x, y) } else { (y, x) };
    Ok((1..basis.len())
        .map(|i| {
            let l = basis.eigenvalue(i);
            (-l * epsilon).exp() / l * basis.u(i, a) * basis.u(i, b)
        })
        .sum())
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon >= 0.0 {
        Ok(())
    } else {
        Err(invalid("epsilon", format!("{epsilon} must be nonnegative")))
    }
}

/// Spectral coefficients `e^{−λ_i ε}/λ_i` (zero for the constant mode).
pub(crate) fn green_coefficients(basis: &SpectralBasis, epsilon: f64) -> Vec<f64> {
    basis
        .eigenvalues()
        .iter()
        .enumerate()
        .map(|(i, &l)| if i == 0 { 0.0 } else { (-l * epsilon).exp() / l })
        .collect()
}

/// `y ↦ G^ε(x, y)` by direct synthesis.
pub(crate) fn green_column(basis: &SpectralBasis, epsilon: f64, x: usize) -> Vec<f64> {
    let c: Vec<f64> = green_coefficients(basis, epsilon)
        .iter()
        .enumerate()
        .map(|(i, c)| c * basis.u(i, x))
        .collect();
    basis.synthesize(&c)
}

#[derive(Clone, Debug)]
enum Storage {
    /// Row-major `n × n` matrix.
    Dense(Vec<f64>),
    /// `G(x, y) = g(y − x)` on a periodic lattice.
    Translation { axes: Vec<usize>, kernel: Vec<f64> },
}

/// Lattice offset `b − a` without allocating.
#[inline]
fn offset(axes: &[usize], a: usize, b: usize) -> usize {
    let mut stride = 1;
    let mut out = 0;
    let (mut a, mut b) = (a, b);
    for &n in axes.iter().rev() {
        let (ma, mb) = (a % n, b % n);
        out += ((mb + n - ma) % n) * stride;
        stride *= n;
        a /= n;
        b /= n;
    }
    out
}

/// Symmetric, mean-zero Green matrix `G^ε`.
#[derive(Clone, Debug)]
pub struct GreenFunction {
    epsilon: f64,
    npoints: usize,
    storage: Storage,
    provenance: String,
}

impl GreenFunction {
    /// Assembles `G^ε`. Exact lattice bases use a translation kernel;
    /// everything else is stored densely.
    pub fn assemble(basis: &SpectralBasis, epsilon: f64) -> Result<Self> {
        check_epsilon(epsilon)?;
        if basis.len() < 2 || !(basis.eigenvalue(1) > 0.0) {
            return Err(Error::Construction("basis has no positive eigenvalue".into()));
        }
        let n = basis.npoints();
        let provenance = format!("{} k={} n={n}", basis.scheme().tag(), basis.len());
        let storage = match (basis.scheme(), basis.lattice()) {
            (Scheme::TorusFourierExact, Some(axes)) => {
                let col = green_column(basis, epsilon, 0);
                // g(δ) and g(−δ) agree analytically; average them so that
                // G(x, y) == G(y, x) holds bitwise.
                let kernel = (0..n)
                    .map(|d| 0.5 * (col[d] + col[offset(axes, d, 0)]))
                    .collect();
                Storage::Translation {
                    axes: axes.to_vec(),
                    kernel,
                }
            }
            _ => {
                let coeffs = green_coefficients(basis, epsilon);
                let mut m = vec![0.0; n * n];
                m.par_chunks_mut(n).enumerate().for_each(|(x, row)| {
                    for (y, v) in row.iter_mut().enumerate() {
                        let (a, b) = if x <= y { (x, y) } else { (y, x) };
                        *v = (1..basis.len())
                            .map(|i| coeffs[i] * basis.u(i, a) * basis.u(i, b))
                            .sum();
                    }
                });
                Storage::Dense(m)
            }
        };
        Ok(GreenFunction {
            epsilon,
            npoints: n,
            storage,
            provenance,
        })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn npoints(&self) -> usize {
        self.npoints
    }

    /// Scheme, truncation and size of the basis this was built from.
    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        match &self.storage {
            Storage::Dense(m) => m[x * self.npoints + y],
            Storage::Translation { axes, kernel } => kernel[offset(axes, x, y)],
        }
    }

    /// The function `G_x = G(x, ·)`.
    pub fn column(&self, x: usize) -> Vec<f64> {
        (0..self.npoints).map(|y| self.value(x, y)).collect()
    }

    pub fn min_off_diagonal(&self) -> f64 {
        match &self.storage {
            Storage::Translation { kernel, .. } => {
                kernel[1..].iter().cloned().fold(f64::INFINITY, f64::min)
            }
            Storage::Dense(m) => (0..self.npoints)
                .flat_map(|x| (0..self.npoints).filter(move |&y| y != x).map(move |y| (x, y)))
                .map(|(x, y)| m[x * self.npoints + y])
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// `x_id,y_id,value` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x_id,y_id,value\n");
        for x in 0..self.npoints {
            for y in 0..self.npoints {
                let _ = writeln!(out, "{x},{y},{:.17e}", self.value(x, y));
            }
        }
        out
    }
}

/// `Ḡ = G + Ā` with two-sided comparability `1/(A dⁿ⁻²) ≤ Ḡ ≤ A/dⁿ⁻²`.
#[derive(Clone, Debug)]
pub struct ShiftedGreen {
    pub base: Arc<GreenFunction>,
    pub a: f64,
    pub a_bar: f64,
    pub alpha: f64,
    pub n: f64,
}

/// Largest admissible comparability constant before the fit is declared broken.
pub const MAX_COMPARABILITY: f64 = 1e6;

/// Relative margin added to the minimal positive shift.
pub const SHIFT_MARGIN: f64 = 0.1;

impl ShiftedGreen {
    #[inline]
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.base.value(x, y) + self.a_bar
    }

    /// Enlarges `A` so that `Ḡ(p, q)·(d(p, q) + 2δ)ⁿ⁻² ≤ A` for every pair,
    /// diagonal included. This is what keeps `Q ≤ Φ` when flowed points are
    /// snapped to grid nodes at most `δ` away.
    pub fn with_mapping_margin(&self, space: &MetricMeasureSpace, delta: f64) -> ShiftedGreen {
        let e = self.n - 2.0;
        let need = (0..space.npoints())
            .into_par_iter()
            .map(|p| {
                (0..space.npoints())
                    .map(|q| self.value(p, q) * (space.dist(p, q) + 2.0 * delta).powf(e))
                    .fold(0.0, f64::max)
            })
            .reduce(|| 0.0, f64::max);
        ShiftedGreen {
            a: self.a.max(need),
            ..self.clone()
        }
    }
}

/// Fits `Ā` and `A` over all off-diagonal pairs.
pub fn fit_comparability_constants(
    green: Arc<GreenFunction>,
    space: &MetricMeasureSpace,
    n: f64,
) -> Result<ShiftedGreen> {
    if !(n > 2.0) {
        return Err(invalid("n", "comparability needs n > 2; lift n = 2 spaces first"));
    }
    if green.npoints() != space.npoints() {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: green.npoints(),
        });
    }
    let a_bar = (1.0 + SHIFT_MARGIN) * (-green.min_off_diagonal()).max(0.0);
    let e = n - 2.0;
    let (a, alpha) = (0..space.npoints())
        .into_par_iter()
        .map(|x| {
            let mut a: f64 = 0.0;
            let mut alpha = f64::INFINITY;
            for y in 0..space.npoints() {
                if y == x {
                    continue;
                }
                let g = green.value(x, y);
                let gb = g + a_bar;
                let de = space.dist(x, y).powf(e);
                a = a.max(g.abs() * de).max(gb * de);
                a = a.max(if gb > 0.0 { 1.0 / (gb * de) } else { f64::INFINITY });
                alpha = alpha.min(gb);
            }
            (a, alpha)
        })
        .reduce(
            || (0.0, f64::INFINITY),
            |(a1, b1), (a2, b2)| (a1.max(a2), b1.min(b2)),
        );
    if !(a <= MAX_COMPARABILITY) {
        return Err(Error::FitFailed(format!(
            "comparability constant {a:.3e} exceeds {MAX_COMPARABILITY:e}"
        )));
    }
    Ok(ShiftedGreen {
        base: green,
        a,
        a_bar,
        alpha,
        n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_graph, build_torus_grid, Edge};
    use crate::spectral::{assemble_laplacian, default_basis, eigendecompose};

    #[test]
    fn offset_matches_chart_helper() {
        let axes = [4usize, 3, 5];
        for a in (0..60).step_by(7) {
            for b in 0..60 {
                assert_eq!(
                    offset(&axes, a, b),
                    crate::space::chart::lattice_offset(&axes, a, b)
                );
            }
        }
    }

    #[test]
    fn mean_zero_and_symmetric() {
        let s = build_torus_grid(2, 8).unwrap();
        let b = default_basis(&s, 64, None).unwrap();
        let g = GreenFunction::assemble(&b, 0.0).unwrap();
        for x in [0, 9, 63] {
            let col = g.column(x);
            assert!(s.integrate(&col).abs() < 1e-12);
            for y in 0..64 {
                assert_eq!(g.value(x, y), g.value(y, x));
                assert!((g.value(x, y) - green(&b, 0.0, x, y).unwrap()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn heavy_regularization_vanishes() {
        let s = build_torus_grid(1, 16).unwrap();
        let b = default_basis(&s, 16, None).unwrap();
        let g = GreenFunction::assemble(&b, 5.0).unwrap();
        assert!((0..16).all(|y| g.value(0, y).abs() < 1e-50));
        assert!(green(&b, -1.0, 0, 0).is_err());
    }

    #[test]
    fn three_point_graph_matches_pseudo_inverse() {
        let edges = [
            Edge { a: 0, b: 1, length: 1.0 },
            Edge { a: 1, b: 2, length: 0.5 },
        ];
        let sp = build_graph(&[1.0, 2.0, 3.0], &edges).unwrap();
        let op = assemble_laplacian(&sp, Scheme::GraphGaussian, None).unwrap();
        let b = eigendecompose(&op, 3).unwrap();
        let g = GreenFunction::assemble(&b, 0.0).unwrap();
        let oracle = pseudo_inverse_green(&op).unwrap();
        for x in 0..3 {
            for y in 0..3 {
                assert!((g.value(x, y) - oracle[x * 3 + y]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn monotone_diagonal_in_epsilon() {
        let s = build_torus_grid(2, 8).unwrap();
        let b = default_basis(&s, 64, None).unwrap();
        let mut prev = f64::INFINITY;
        for eps in [0.0, 1e-4, 1e-3, 1e-2, 0.1] {
            let v = green(&b, eps, 5, 5).unwrap();
            assert!(v <= prev);
            prev = v;
        }
    }

    #[test]
    fn csv_dump_shape() {
        let s = build_torus_grid(1, 4).unwrap();
        let b = default_basis(&s, 4, None).unwrap();
        let csv = GreenFunction::assemble(&b, 0.0).unwrap().to_csv();
        assert_eq!(csv.lines().count(), 17);
        assert!(csv.starts_with("x_id,y_id,value\n0,0,"));
    }

    #[test]
    fn comparability_rejects_low_dimension() {
        let s = build_torus_grid(2, 8).unwrap();
        let b = default_basis(&s, 64, None).unwrap();
        let g = Arc::new(GreenFunction::assemble(&b, 0.0).unwrap());
        assert!(fit_comparability_constants(g, &s, 2.0).is_err());
    }
}
