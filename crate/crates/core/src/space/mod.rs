//! Finite model metric measure spaces.
//!
//! A [`MetricMeasureSpace`] is a finite point set carrying a geodesic
//! distance matrix and a probability measure. The generators produce flat
//! tori, Fibonacci spheres, products with a unit circle and explicit
//! weighted graphs. Ball queries, Ahlfors/doubling diagnostics and the
//! Hardy–Littlewood maximal operator live here as well.

mod ahlfors;
pub mod chart;
pub mod io;
mod maximal;
pub mod stencil;

pub use ahlfors::{check_ahlfors, default_ahlfors_radii, AhlforsReport};
pub use chart::{Chart, Coords};
pub use maximal::{distance_power_integral, maximal_function, PowerIntegral};
pub use stencil::GradientStencil;

use crate::error::{invalid, Error, Result};
use chart::ZERO;
use rayon::prelude::*;

/// Spaces up to this size keep a dense distance matrix.
pub const DENSE_DISTANCE_LIMIT: usize = 4096;

/// Undirected edge of a graph space; conductance is `1 / length²`.
#[derive(Clone, Debug, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub length: f64,
}

#[derive(Clone, Debug)]
pub struct MetricMeasureSpace {
    chart: Chart,
    coords: Vec<Coords>,
    weights: Vec<f64>,
    dist: Option<Vec<f64>>,
    diameter: f64,
    spacing: f64,
    edges: Vec<Edge>,
}

impl MetricMeasureSpace {
    fn from_chart_points(chart: Chart, coords: Vec<Coords>, weights: Vec<f64>) -> Self {
        let n = coords.len();
        let dist = if n <= DENSE_DISTANCE_LIMIT {
            let mut d = vec![0.0; n * n];
            d.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
                for (j, v) in row.iter_mut().enumerate() {
                    // evaluate in a fixed argument order so the matrix is exactly symmetric
                    *v = match i.cmp(&j) {
                        std::cmp::Ordering::Equal => 0.0,
                        std::cmp::Ordering::Less => chart.distance(&coords[i], &coords[j]),
                        std::cmp::Ordering::Greater => chart.distance(&coords[j], &coords[i]),
                    };
                }
            });
            Some(d)
        } else {
            None
        };
        let mut space = MetricMeasureSpace {
            chart,
            coords,
            weights,
            dist,
            diameter: 0.0,
            spacing: 0.0,
            edges: Vec::new(),
        };
        space.finish_metadata();
        space
    }

    fn finish_metadata(&mut self) {
        let n = self.npoints();
        let (diam, nn_sum) = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut mx: f64 = 0.0;
                let mut nearest = f64::INFINITY;
                for j in 0..n {
                    if i == j {
                        continue;
                    }
                    let d = self.dist(i, j);
                    mx = mx.max(d);
                    nearest = nearest.min(d);
                }
                (mx, if nearest.is_finite() { nearest } else { 0.0 })
            })
            .collect::<Vec<_>>()
            .into_iter()
            .fold((0.0f64, 0.0), |(m, s), (a, b)| (m.max(a), s + b));
        self.diameter = diam;
        self.spacing = match &self.chart {
            Chart::Torus { resolution, .. } => 1.0 / *resolution as f64,
            Chart::ProductCircle {
                base,
                circle_resolution,
            } => {
                let base_h = match base.as_ref() {
                    Chart::Torus { resolution, .. } => 1.0 / *resolution as f64,
                    _ => self.base_spacing_estimate(),
                };
                base_h.max(1.0 / *circle_resolution as f64)
            }
            Chart::Graph => self
                .edges
                .iter()
                .map(|e| e.length)
                .fold(f64::INFINITY, f64::min),
            Chart::Sphere => nn_sum / n as f64,
        };
    }

    fn base_spacing_estimate(&self) -> f64 {
        // Mean nearest-neighbour distance within the s = 0 slice of a product.
        let Chart::ProductCircle {
            circle_resolution, ..
        } = &self.chart
        else {
            return 0.0;
        };
        let c = *circle_resolution;
        let nb = self.npoints() / c;
        let mut total = 0.0;
        for a in 0..nb {
            let mut best = f64::INFINITY;
            for b in 0..nb {
                if a != b {
                    best = best.min(self.dist(a * c, b * c));
                }
            }
            total += best;
        }
        total / nb as f64
    }

    pub fn npoints(&self) -> usize {
        self.weights.len()
    }

    pub fn chart(&self) -> &Chart {
        &self.chart
    }

    pub fn coords(&self) -> &[Coords] {
        &self.coords
    }

    pub fn coord(&self, i: usize) -> &Coords {
        &self.coords[i]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn diameter(&self) -> f64 {
        self.diameter
    }

    /// Typical node spacing: `1/resolution` on lattices, mean nearest-neighbour
    /// distance on spheres, shortest edge on graphs.
    pub fn grid_spacing(&self) -> f64 {
        self.spacing
    }

    /// Ahlfors dimension of the modelled continuum, when known.
    pub fn dimension(&self) -> Option<usize> {
        self.chart.dimension()
    }

    #[inline]
    pub fn dist(&self, i: usize, j: usize) -> f64 {
        match &self.dist {
            Some(d) => d[i * self.npoints() + j],
            None if i <= j => self.chart.distance(&self.coords[i], &self.coords[j]),
            None => self.chart.distance(&self.coords[j], &self.coords[i]),
        }
    }

    /// Distance from an arbitrary chart point to a node.
    pub fn dist_to_point(&self, p: &Coords, j: usize) -> f64 {
        self.chart.distance(p, &self.coords[j])
    }

    pub fn check_point(&self, i: usize) -> Result<()> {
        if i < self.npoints() {
            Ok(())
        } else {
            Err(Error::UnknownPoint(i))
        }
    }

    /// Nearest node to an arbitrary chart point.
    pub fn nearest_point(&self, p: &Coords) -> usize {
        if let Some(id) = self.chart.nearest_lattice_index(p) {
            return id;
        }
        let mut best = (f64::INFINITY, 0usize);
        for j in 0..self.npoints() {
            let d = self.chart.distance(p, &self.coords[j]);
            if d < best.0 {
                best = (d, j);
            }
        }
        best.1
    }

    /// Open ball `{ y : d(center, y) < radius }`.
    pub fn ball(&self, center: usize, radius: f64) -> Result<Vec<usize>> {
        self.check_point(center)?;
        if !(radius > 0.0) {
            return Err(invalid("radius", "must be positive"));
        }
        Ok((0..self.npoints())
            .filter(|&y| self.dist(center, y) < radius)
            .collect())
    }

    /// Measure of the open ball.
    pub fn ball_mass(&self, center: usize, radius: f64) -> f64 {
        (0..self.npoints())
            .filter(|&y| self.dist(center, y) < radius)
            .map(|y| self.weights[y])
            .sum()
    }

    /// Weighted integral `Σ f w`.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        f.iter().zip(&self.weights).map(|(a, w)| a * w).sum()
    }

    pub fn mean(&self, f: &[f64]) -> f64 {
        self.integrate(f)
    }

    /// Weighted `L^p` norm.
    pub fn lp_norm(&self, f: &[f64], p: f64) -> f64 {
        if p.is_infinite() {
            return f.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        }
        f.iter()
            .zip(&self.weights)
            .map(|(a, w)| a.abs().powf(p) * w)
            .sum::<f64>()
            .powf(1.0 / p)
    }

    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        f.iter()
            .zip(g)
            .zip(&self.weights)
            .map(|((a, b), w)| a * b * w)
            .sum()
    }

    /// Base point of a product point (identity on non-product spaces).
    pub fn project_to_base(&self, id: usize) -> usize {
        match &self.chart {
            Chart::ProductCircle {
                circle_resolution, ..
            } => id / circle_resolution,
            _ => id,
        }
    }

    /// Circle index of a product point.
    pub fn circle_index(&self, id: usize) -> Option<usize> {
        match &self.chart {
            Chart::ProductCircle {
                circle_resolution, ..
            } => Some(id % circle_resolution),
            _ => None,
        }
    }

    /// `count` seeded random pairs `(x, y)` with `x ≠ y`.
    pub fn sample_pairs(&self, count: usize, seed: u64) -> Vec<(usize, usize)> {
        use rand::{Rng, SeedableRng};
        let n = self.npoints();
        if n < 2 {
            return Vec::new();
        }
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let x = rng.gen_range(0..n);
                let y = (x + rng.gen_range(1..n)) % n;
                (x, y)
            })
            .collect()
    }

    /// Push-forward of a product measure through the base projection.
    pub fn base_marginal(&self, weights: &[f64]) -> Vec<f64> {
        match &self.chart {
            Chart::ProductCircle {
                circle_resolution, ..
            } => weights
                .chunks(*circle_resolution)
                .map(|c| c.iter().sum())
                .collect(),
            _ => weights.to_vec(),
        }
    }
}

/// Unit-volume flat torus grid with uniform weights.
pub fn build_torus_grid(dims: usize, resolution: usize) -> Result<MetricMeasureSpace> {
    if !(1..=3).contains(&dims) {
        return Err(invalid("dims", format!("{dims} not in 1..=3")));
    }
    if resolution < 4 {
        return Err(invalid("resolution", format!("{resolution} < 4")));
    }
    let axes = vec![resolution; dims];
    let n = resolution.pow(dims as u32);
    let coords = (0..n)
        .map(|id| {
            let m = chart::lattice_multi_index(&axes, id);
            let mut p = ZERO;
            for k in 0..dims {
                p[k] = m[k] as f64 / resolution as f64;
            }
            p
        })
        .collect();
    Ok(MetricMeasureSpace::from_chart_points(
        Chart::Torus { dims, resolution },
        coords,
        vec![1.0 / n as f64; n],
    ))
}

/// Fibonacci lattice on the unit 2-sphere with uniform weights.
pub fn build_sphere_mesh(num_points: usize) -> Result<MetricMeasureSpace> {
    if num_points < 12 {
        return Err(invalid("num_points", format!("{num_points} < 12")));
    }
    let ga = chart::golden_angle();
    let n = num_points as f64;
    let coords = (0..num_points)
        .map(|i| {
            let z = 1.0 - (2.0 * i as f64 + 1.0) / n;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = ga * i as f64;
            [r * phi.cos(), r * phi.sin(), z, 0.0]
        })
        .collect();
    Ok(MetricMeasureSpace::from_chart_points(
        Chart::Sphere,
        coords,
        vec![1.0 / n; num_points],
    ))
}

/// `base × S¹` with the product distance and product measure.
pub fn build_product_with_circle(
    base: &MetricMeasureSpace,
    circle_resolution: usize,
) -> Result<MetricMeasureSpace> {
    if circle_resolution < 4 {
        return Err(invalid(
            "circle_resolution",
            format!("{circle_resolution} < 4"),
        ));
    }
    if !base.chart.has_coordinates() || matches!(base.chart, Chart::ProductCircle { .. }) {
        return Err(Error::UnsupportedChart {
            op: "build_product_with_circle",
            chart: base.chart.tag(),
        });
    }
    let k = base.chart.coord_len();
    let c = circle_resolution;
    let mut coords = Vec::with_capacity(base.npoints() * c);
    let mut weights = Vec::with_capacity(base.npoints() * c);
    for (i, p) in base.coords.iter().enumerate() {
        for s in 0..c {
            let mut q = *p;
            q[k] = s as f64 / c as f64;
            coords.push(q);
            weights.push(base.weights[i] / c as f64);
        }
    }
    Ok(MetricMeasureSpace::from_chart_points(
        Chart::ProductCircle {
            base: Box::new(base.chart.clone()),
            circle_resolution: c,
        },
        coords,
        weights,
    ))
}

/// Weighted graph with shortest-path distances; `weights` is normalized to a
/// probability vector.
pub fn build_graph(weights: &[f64], edges: &[Edge]) -> Result<MetricMeasureSpace> {
    let n = weights.len();
    if n < 2 {
        return Err(invalid("weights", "graph needs at least two points"));
    }
    if weights.iter().any(|w| !(*w > 0.0)) {
        return Err(invalid("weights", "graph weights must be positive"));
    }
    let total: f64 = weights.iter().sum();
    let mut d = vec![f64::INFINITY; n * n];
    for i in 0..n {
        d[i * n + i] = 0.0;
    }
    for e in edges {
        if e.a >= n || e.b >= n {
            return Err(Error::UnknownPoint(e.a.max(e.b)));
        }
        if !(e.length > 0.0) {
            return Err(invalid("edge length", "must be positive"));
        }
        let l = e.length.min(d[e.a * n + e.b]);
        d[e.a * n + e.b] = l;
        d[e.b * n + e.a] = l;
    }
    for k in 0..n {
        for i in 0..n {
            let dik = d[i * n + k];
            if !dik.is_finite() {
                continue;
            }
            for j in 0..n {
                let cand = dik + d[k * n + j];
                if cand < d[i * n + j] {
                    d[i * n + j] = cand;
                }
            }
        }
    }
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Construction("graph is disconnected".into()));
    }
    let mut space = MetricMeasureSpace {
        chart: Chart::Graph,
        coords: vec![ZERO; n],
        weights: weights.iter().map(|w| w / total).collect(),
        dist: Some(d),
        diameter: 0.0,
        spacing: 0.0,
        edges: edges.to_vec(),
    };
    space.finish_metadata();
    Ok(space)
}
