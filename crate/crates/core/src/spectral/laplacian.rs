use crate::error::{invalid, Error, Result};
use crate::space::chart::{Chart, Coords};
use crate::space::MetricMeasureSpace;
use nalgebra::DMatrix;
use rayon::prelude::*;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Scheme {
    /// Gaussian-weight graph Laplacian (or edge conductances on graph charts).
    GraphGaussian,
    /// Fourier-exact Laplacian on periodic lattices.
    TorusFourierExact,
}

impl Scheme {
    pub fn tag(self) -> &'static str {
        match self {
            Scheme::GraphGaussian => "graph-gaussian-weights",
            Scheme::TorusFourierExact => "torus-fourier-exact",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "graph-gaussian-weights" => Some(Scheme::GraphGaussian),
            "torus-fourier-exact" => Some(Scheme::TorusFourierExact),
            _ => None,
        }
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Repr {
    /// `−Δ = W⁻¹ S` with `S` symmetric positive semidefinite.
    Dense(DMatrix<f64>),
    /// Separable circulant second-derivative kernels, one per lattice axis.
    Lattice {
        axes: Vec<usize>,
        kernels: Vec<Vec<f64>>,
    },
}

/// The operator `−Δ`, self-adjoint for `⟨f, g⟩ = Σ f g w`.
#[derive(Clone, Debug)]
pub struct LaplacianOperator {
    pub(crate) scheme: Scheme,
    pub(crate) weights: Vec<f64>,
    pub(crate) repr: Repr,
    calibration_error: f64,
}

impl LaplacianOperator {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn npoints(&self) -> usize {
        self.weights.len()
    }

    /// Worst relative Rayleigh-quotient error on the calibration harmonics
    /// (zero for the exact scheme and for explicit graphs).
    pub fn calibration_error(&self) -> f64 {
        self.calibration_error
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.npoints(), "function length mismatch");
        match &self.repr {
            Repr::Dense(s) => {
                (0..self.npoints())
                    .into_par_iter()
                    .map(|x| {
                        // S is symmetric, so column x doubles as row x.
                        let row: f64 = s.column(x).iter().zip(f).map(|(a, b)| a * b).sum();
                        row / self.weights[x]
                    })
                    .collect()
            }
            Repr::Lattice { axes, kernels } => {
                let n = self.npoints();
                let mut out = vec![0.0; n];
                for (a, ker) in kernels.iter().enumerate() {
                    let na = axes[a];
                    let stride: usize = axes[a + 1..].iter().product();
                    out.par_iter_mut().enumerate().for_each(|(id, o)| {
                        let m = (id / stride) % na;
                        let base = id - m * stride;
                        let mut acc = 0.0;
                        for j in 0..na {
                            let src = base + ((m + na - j) % na) * stride;
                            acc += ker[j] * f[src];
                        }
                        *o += acc;
                    });
                }
                out
            }
        }
    }
}

/// `c[j] = (1/N) Σ_k 4π²k² cos(2πkj/N)` over `k ∈ (−N/2, N/2]`.
fn circulant_kernel(n: usize) -> Vec<f64> {
    let lo = -((n as i64 - 1) / 2);
    let hi = n as i64 / 2;
    (0..n)
        .map(|j| {
            (lo..=hi)
                .map(|k| {
                    let ang = 2.0 * PI * ((k * j as i64).rem_euclid(n as i64)) as f64 / n as f64;
                    4.0 * PI * PI * (k * k) as f64 * ang.cos()
                })
                .sum::<f64>()
                / n as f64
        })
        .collect()
}

/// Reference harmonics `(h, λ_h)` used to calibrate the graph scheme.
fn calibration_harmonics(chart: &Chart, coords: &[Coords]) -> Vec<(Vec<f64>, f64)> {
    let lam = 4.0 * PI * PI;
    let periodic = |k: usize| {
        vec![
            (coords.iter().map(|p| (2.0 * PI * p[k]).cos()).collect(), lam),
            (coords.iter().map(|p| (2.0 * PI * p[k]).sin()).collect(), lam),
        ]
    };
    match chart {
        Chart::Torus { dims, .. } => (0..*dims).flat_map(periodic).collect(),
        Chart::Sphere => {
            let f = |g: &dyn Fn(&Coords) -> f64| coords.iter().map(g).collect::<Vec<f64>>();
            vec![
                (f(&|p| p[0] * p[1]), 6.0),
                (f(&|p| p[1] * p[2]), 6.0),
                (f(&|p| p[0] * p[2]), 6.0),
                (f(&|p| p[0] * p[0] - p[1] * p[1]), 6.0),
                (f(&|p| 3.0 * p[2] * p[2] - 1.0), 6.0),
            ]
        }
        Chart::ProductCircle { base, .. } => {
            let mut out = calibration_harmonics(base, coords);
            out.extend(periodic(base.coord_len()));
            out
        }
        Chart::Graph => Vec::new(),
    }
}

fn check_connected(n: usize, adjacent: impl Fn(usize) -> Vec<usize>) -> Result<()> {
    let mut seen = vec![false; n];
    let mut stack = vec![0usize];
    seen[0] = true;
    let mut count = 1;
    while let Some(x) = stack.pop() {
        for y in adjacent(x) {
            if !seen[y] {
                seen[y] = true;
                count += 1;
                stack.push(y);
            }
        }
    }
    if count == n {
        Ok(())
    } else {
        Err(Error::Construction(format!(
            "kernel graph is disconnected ({count} of {n} points reachable); λ_1 = 0"
        )))
    }
}

pub fn assemble_laplacian(
    space: &MetricMeasureSpace,
    scheme: Scheme,
    bandwidth: Option<f64>,
) -> Result<LaplacianOperator> {
    let n = space.npoints();
    let w = space.weights().to_vec();
    match scheme {
        Scheme::TorusFourierExact => {
            let axes = space.chart().lattice().ok_or_else(|| Error::UnsupportedChart {
                op: "torus-fourier-exact laplacian",
                chart: space.chart().tag(),
            })?;
            let kernels = axes.iter().map(|&na| circulant_kernel(na)).collect();
            Ok(LaplacianOperator {
                scheme,
                weights: w,
                repr: Repr::Lattice { axes, kernels },
                calibration_error: 0.0,
            })
        }
        Scheme::GraphGaussian if matches!(space.chart(), Chart::Graph) => {
            let mut s = DMatrix::<f64>::zeros(n, n);
            for e in space.edges() {
                if e.a == e.b {
                    continue;
                }
                let c = 1.0 / (e.length * e.length);
                s[(e.a, e.b)] -= c;
                s[(e.b, e.a)] -= c;
                s[(e.a, e.a)] += c;
                s[(e.b, e.b)] += c;
            }
            check_connected(n, |x| {
                (0..n).filter(|&y| y != x && s[(x, y)] != 0.0).collect()
            })?;
            Ok(LaplacianOperator {
                scheme,
                weights: w,
                repr: Repr::Dense(s),
                calibration_error: 0.0,
            })
        }
        Scheme::GraphGaussian => {
            let bw = bandwidth.ok_or_else(|| invalid("bandwidth", "required by the graph scheme"))?;
            if !(bw >= space.grid_spacing() * (1.0 - 1e-12)) {
                return Err(invalid(
                    "bandwidth",
                    format!("{bw} below the grid spacing {}", space.grid_spacing()),
                ));
            }
            let cutoff = 3.0 * bw;
            // Unscaled kernel rows, k(x,y) = exp(−d²/bw²) on d < 3 bw.
            let kern: Vec<Vec<(usize, f64)>> = (0..n)
                .into_par_iter()
                .map(|x| {
                    (0..n)
                        .filter(|&y| y != x && space.dist(x, y) < cutoff)
                        .map(|y| {
                            let d = space.dist(x, y);
                            (y, (-(d * d) / (bw * bw)).exp())
                        })
                        .collect()
                })
                .collect();
            check_connected(n, |x| kern[x].iter().map(|&(y, _)| y).collect())?;

            let harmonics = calibration_harmonics(space.chart(), space.coords());
            let raw = |x: usize, h: &[f64]| -> f64 {
                kern[x].iter().map(|&(y, k)| k * (h[x] - h[y]) * w[y]).sum()
            };
            // Per-row least-squares scale so that the harmonics are reproduced.
            let scales: Vec<f64> = (0..n)
                .map(|x| {
                    let (mut num, mut den) = (0.0, 0.0);
                    for (h, lam) in &harmonics {
                        let r = raw(x, h);
                        num += lam * h[x] * r;
                        den += r * r;
                    }
                    if den > 0.0 {
                        num / den
                    } else {
                        0.0
                    }
                })
                .collect();
            if scales.iter().any(|s| !(*s > 0.0)) {
                return Err(Error::Construction(
                    "row calibration failed; bandwidth too small for the point density".into(),
                ));
            }
            let mut s = DMatrix::<f64>::zeros(n, n);
            for x in 0..n {
                for &(y, k) in &kern[x] {
                    let v = 0.5 * (scales[x] + scales[y]) * k * w[x] * w[y];
                    s[(x, y)] -= v;
                    s[(x, x)] += v;
                }
            }
            let mut op = LaplacianOperator {
                scheme,
                weights: w,
                repr: Repr::Dense(s),
                calibration_error: 0.0,
            };
            let mut worst: f64 = 0.0;
            for (h, lam) in &harmonics {
                let lh = op.apply(h);
                let num: f64 = (0..n).map(|x| lh[x] * h[x] * space.weight(x)).sum();
                let den: f64 = (0..n).map(|x| h[x] * h[x] * space.weight(x)).sum();
                worst = worst.max((num / den / lam - 1.0).abs());
            }
            op.calibration_error = worst;
            Ok(op)
        }
    }
}

/// Weighted inner product helper shared by the spectral routines.
#[cfg(test)]
pub(crate) fn winner(w: &[f64], f: &[f64], g: &[f64]) -> f64 {
    f.iter().zip(g).zip(w).map(|((a, b), c)| a * b * c).sum()
}
