//! Discrete gradients on charted spaces.
//!
//! A stencil stores, for every point `x`, weights `a_xj` (ambient tangent
//! vectors) such that `∇f(x) ≈ Σ_j a_xj (f(j) − f(x))`. Lattices use
//! second-order centered differences; spheres use a weighted quadratic
//! least-squares fit in normal coordinates.

use super::chart::{self, Chart, Coords, ZERO};
use super::MetricMeasureSpace;
use crate::error::{Error, Result};
use nalgebra::DMatrix;
use rayon::prelude::*;

/// Neighbours used by the sphere least-squares fit.
const SPHERE_NEIGHBOURS: usize = 18;

#[derive(Clone, Debug)]
pub struct GradientStencil {
    rows: Vec<Vec<(usize, Coords)>>,
}

impl GradientStencil {
    pub fn new(space: &MetricMeasureSpace) -> Result<Self> {
        let chart = space.chart();
        if let Some(axes) = chart.lattice() {
            return Ok(Self::lattice(&axes));
        }
        match chart {
            Chart::Sphere => Ok(GradientStencil {
                rows: sphere_rows(space.coords()),
            }),
            Chart::ProductCircle {
                base,
                circle_resolution,
            } if matches!(base.as_ref(), Chart::Sphere) => {
                let c = *circle_resolution;
                let nb = space.npoints() / c;
                let base_coords: Vec<Coords> = (0..nb).map(|b| *space.coord(b * c)).collect();
                let base_rows = sphere_rows(&base_coords);
                let k = base.coord_len();
                let inv = c as f64 / 2.0;
                let rows = (0..space.npoints())
                    .map(|id| {
                        let (b, s) = (id / c, id % c);
                        let mut row: Vec<(usize, Coords)> =
                            base_rows[b].iter().map(|&(j, a)| (j * c + s, a)).collect();
                        let mut up = ZERO;
                        up[k] = inv;
                        let mut down = ZERO;
                        down[k] = -inv;
                        row.push((b * c + (s + 1) % c, up));
                        row.push((b * c + (s + c - 1) % c, down));
                        row
                    })
                    .collect();
                Ok(GradientStencil { rows })
            }
            _ => Err(Error::UnsupportedChart {
                op: "gradient stencil",
                chart: chart.tag(),
            }),
        }
    }

    fn lattice(axes: &[usize]) -> Self {
        let n: usize = axes.iter().product();
        let rows = (0..n)
            .map(|id| {
                let mut row = Vec::with_capacity(2 * axes.len());
                for (a, &na) in axes.iter().enumerate() {
                    let mut off = vec![0i64; axes.len()];
                    let mut e = ZERO;
                    e[a] = na as f64 / 2.0;
                    off[a] = 1;
                    row.push((chart::lattice_shift(axes, id, &off), e));
                    off[a] = -1;
                    row.push((chart::lattice_shift(axes, id, &off), chart::scale(&e, -1.0)));
                }
                row
            })
            .collect();
        GradientStencil { rows }
    }

    pub fn row(&self, x: usize) -> &[(usize, Coords)] {
        &self.rows[x]
    }

    pub fn npoints(&self) -> usize {
        self.rows.len()
    }

    pub fn gradient_at(&self, f: &[f64], x: usize) -> Coords {
        let mut g = ZERO;
        for &(j, a) in &self.rows[x] {
            g = chart::axpy(&g, f[j] - f[x], &a);
        }
        g
    }

    pub fn gradient(&self, f: &[f64]) -> Vec<Coords> {
        (0..self.rows.len())
            .into_par_iter()
            .map(|x| self.gradient_at(f, x))
            .collect()
    }

    pub fn modulus(&self, f: &[f64]) -> Vec<f64> {
        self.gradient(f).iter().map(chart::norm).collect()
    }
}

fn sphere_rows(coords: &[Coords]) -> Vec<Vec<(usize, Coords)>> {
    let chart = Chart::Sphere;
    (0..coords.len())
        .into_par_iter()
        .map(|x| {
            let p = &coords[x];
            let mut near: Vec<(f64, usize)> = (0..coords.len())
                .filter(|&j| j != x)
                .map(|j| (chart.distance(p, &coords[j]), j))
                .collect();
            near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            near.truncate(SPHERE_NEIGHBOURS);
            let frame = chart.tangent_frame(p);
            let scale = near.last().map(|v| v.0).unwrap_or(1.0);
            // Rows: [ξ, η, ξ²/2, ξη, η²/2] weighted by a smooth falloff.
            let m = near.len();
            let mut a = DMatrix::<f64>::zeros(m, 5);
            let mut wts = vec![0.0; m];
            for (r, &(d, j)) in near.iter().enumerate() {
                let v = chart.displacement(p, &coords[j]);
                let (xi, eta) = (chart::dot(&v, &frame[0]), chart::dot(&v, &frame[1]));
                let w = (-(d / scale).powi(2)).exp();
                wts[r] = w;
                let row = [xi, eta, 0.5 * xi * xi, xi * eta, 0.5 * eta * eta];
                for (c, val) in row.iter().enumerate() {
                    a[(r, c)] = w * val;
                }
            }
            let pinv = a
                .pseudo_inverse(1e-12)
                .expect("pseudo-inverse of a finite matrix");
            near.iter()
                .enumerate()
                .map(|(r, &(_, j))| {
                    let g0 = pinv[(0, r)] * wts[r];
                    let g1 = pinv[(1, r)] * wts[r];
                    let v = chart::add(&chart::scale(&frame[0], g0), &chart::scale(&frame[1], g1));
                    (j, v)
                })
                .collect()
        })
        .collect()
}

impl MetricMeasureSpace {
    /// Neighbour lists `{z ≠ y : d(y, z) < radius}` for every point.
    pub fn neighbour_lists(&self, radius: f64) -> Vec<Vec<usize>> {
        (0..self.npoints())
            .into_par_iter()
            .map(|y| {
                (0..self.npoints())
                    .filter(|&z| z != y && self.dist(y, z) < radius)
                    .collect()
            })
            .collect()
    }

    /// Discrete slope `max_z |f(z) − f(y)| / d(z, y)` over precomputed neighbours.
    pub fn slope_with(&self, f: &[f64], y: usize, neighbours: &[usize]) -> f64 {
        neighbours
            .iter()
            .map(|&z| (f[z] - f[y]).abs() / self.dist(y, z))
            .fold(0.0, f64::max)
    }

    /// Slope field of `f` with neighbourhood radius `radius`.
    pub fn slopes(&self, f: &[f64], radius: f64) -> Vec<f64> {
        let nb = self.neighbour_lists(radius);
        (0..self.npoints())
            .map(|y| self.slope_with(f, y, &nb[y]))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_product_with_circle, build_sphere_mesh, build_torus_grid};
    use std::f64::consts::PI;

    #[test]
    fn torus_centered_difference_error() {
        let s = build_torus_grid(2, 16).unwrap();
        let st = GradientStencil::new(&s).unwrap();
        let f: Vec<f64> = s.coords().iter().map(|p| (2.0 * PI * p[0]).sin()).collect();
        let h = 1.0 / 16.0;
        let bound = (2.0 * PI).powi(3) * h * h / 6.0;
        for (x, g) in st.gradient(&f).iter().enumerate() {
            let exact = 2.0 * PI * (2.0 * PI * s.coord(x)[0]).cos();
            assert!((g[0] - exact).abs() <= bound);
            assert!(g[1].abs() < 1e-12);
        }
    }

    #[test]
    fn sphere_gradient_of_height() {
        // ∇z on the unit sphere is e_z − z·p, of length sqrt(1 − z²)
        let s = build_sphere_mesh(800).unwrap();
        let st = GradientStencil::new(&s).unwrap();
        let f: Vec<f64> = s.coords().iter().map(|p| p[2]).collect();
        let mut worst: f64 = 0.0;
        for (x, g) in st.gradient(&f).iter().enumerate() {
            let p = s.coord(x);
            let exact = [-p[2] * p[0], -p[2] * p[1], 1.0 - p[2] * p[2], 0.0];
            worst = worst.max(chart::norm(&chart::sub(g, &exact)));
        }
        assert!(worst < 0.02, "worst {worst}");
    }

    #[test]
    fn constants_have_zero_gradient() {
        let base = build_sphere_mesh(60).unwrap();
        let p = build_product_with_circle(&base, 6).unwrap();
        let st = GradientStencil::new(&p).unwrap();
        let g = st.modulus(&vec![3.0; p.npoints()]);
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn slope_of_linear_profile() {
        let s = build_torus_grid(1, 16).unwrap();
        let f: Vec<f64> = (0..16).map(|i| (2.0 * PI * i as f64 / 16.0).cos()).collect();
        let sl = s.slopes(&f, 1.5 / 16.0);
        assert!(sl.iter().all(|v| *v <= 2.0 * PI + 1e-12));
        assert!(sl[4] > 0.95 * 2.0 * PI);
    }
}
