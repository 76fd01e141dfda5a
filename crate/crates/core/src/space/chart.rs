//! Analytic charts backing the model spaces.
//!
//! Every model space keeps, next to its abstract point ids, a coordinate
//! representation in a fixed-size array. Tori and circles use periodic
//! coordinates in `[0, 1)`, spheres use unit vectors in R³, and products
//! concatenate the base coordinates with the circle coordinate. Tangent
//! vectors are expressed in the same ambient coordinates.

use std::f64::consts::PI;

/// Ambient chart coordinates (unused trailing slots are zero).
pub type Coords = [f64; 4];

pub const ZERO: Coords = [0.0; 4];

#[derive(Clone, Debug, PartialEq)]
pub enum Chart {
    /// Flat unit-volume torus `[0,1)^dims` sampled on a regular grid.
    Torus { dims: usize, resolution: usize },
    /// Unit 2-sphere embedded in R³.
    Sphere,
    /// `base × S¹` with a unit-circumference circle.
    ProductCircle {
        base: Box<Chart>,
        circle_resolution: usize,
    },
    /// Weighted graph without chart coordinates.
    Graph,
}

pub fn dot(a: &Coords, b: &Coords) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub fn norm(a: &Coords) -> f64 {
    dot(a, a).sqrt()
}

pub fn add(a: &Coords, b: &Coords) -> Coords {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
}

pub fn sub(a: &Coords, b: &Coords) -> Coords {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

pub fn scale(a: &Coords, s: f64) -> Coords {
    [a[0] * s, a[1] * s, a[2] * s, a[3] * s]
}

pub fn axpy(a: &Coords, s: f64, v: &Coords) -> Coords {
    [
        a[0] + s * v[0],
        a[1] + s * v[1],
        a[2] + s * v[2],
        a[3] + s * v[3],
    ]
}

fn cross3(a: &Coords, b: &Coords) -> Coords {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
        0.0,
    ]
}

/// Wraps a periodic coordinate into `[0, 1)`.
pub fn wrap_unit(x: f64) -> f64 {
    let y = x - x.floor();
    if y >= 1.0 {
        0.0
    } else {
        y
    }
}

/// Signed periodic difference in `[-1/2, 1/2)`.
pub fn wrap_diff(d: f64) -> f64 {
    d - (d + 0.5).floor()
}

impl Chart {
    pub fn tag(&self) -> String {
        match self {
            Chart::Torus { dims, .. } => format!("torus-{dims}"),
            Chart::Sphere => "sphere".to_string(),
            Chart::ProductCircle { .. } => "product-circle".to_string(),
            Chart::Graph => "graph".to_string(),
        }
    }

    /// Number of meaningful entries in a [`Coords`] array.
    pub fn coord_len(&self) -> usize {
        match self {
            Chart::Torus { dims, .. } => *dims,
            Chart::Sphere => 3,
            Chart::ProductCircle { base, .. } => base.coord_len() + 1,
            Chart::Graph => 0,
        }
    }

    /// Ahlfors dimension of the continuum model.
    pub fn dimension(&self) -> Option<usize> {
        match self {
            Chart::Torus { dims, .. } => Some(*dims),
            Chart::Sphere => Some(2),
            Chart::ProductCircle { base, .. } => base.dimension().map(|n| n + 1),
            Chart::Graph => None,
        }
    }

    pub fn has_coordinates(&self) -> bool {
        !matches!(self, Chart::Graph)
    }

    /// Axis resolutions when the chart is a flat periodic lattice.
    pub fn lattice(&self) -> Option<Vec<usize>> {
        match self {
            Chart::Torus { dims, resolution } => Some(vec![*resolution; *dims]),
            Chart::ProductCircle {
                base,
                circle_resolution,
            } => base.lattice().map(|mut axes| {
                axes.push(*circle_resolution);
                axes
            }),
            _ => None,
        }
    }

    pub fn distance(&self, a: &Coords, b: &Coords) -> f64 {
        match self {
            Chart::Torus { dims, .. } => {
                let mut s = 0.0;
                for k in 0..*dims {
                    let d = wrap_diff(b[k] - a[k]);
                    s += d * d;
                }
                s.sqrt()
            }
            Chart::Sphere => {
                let c = cross3(a, b);
                norm(&c).atan2(a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
            }
            Chart::ProductCircle { base, .. } => {
                let k = base.coord_len();
                let db = base.distance(a, b);
                let ds = wrap_diff(b[k] - a[k]);
                (db * db + ds * ds).sqrt()
            }
            Chart::Graph => f64::NAN,
        }
    }

    /// Tangent vector at `a` whose exponential reaches `b` (the log map).
    pub fn displacement(&self, a: &Coords, b: &Coords) -> Coords {
        match self {
            Chart::Torus { dims, .. } => {
                let mut v = ZERO;
                for k in 0..*dims {
                    v[k] = wrap_diff(b[k] - a[k]);
                }
                v
            }
            Chart::Sphere => {
                let c = a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
                let w = [b[0] - c * a[0], b[1] - c * a[1], b[2] - c * a[2], 0.0];
                let wn = norm(&w);
                if wn < 1e-300 {
                    return ZERO;
                }
                let theta = wn.atan2(c);
                scale(&w, theta / wn)
            }
            Chart::ProductCircle { base, .. } => {
                let k = base.coord_len();
                let mut v = base.displacement(a, b);
                v[k] = wrap_diff(b[k] - a[k]);
                v
            }
            Chart::Graph => ZERO,
        }
    }

    /// Exponential map: follows the geodesic from `a` with initial velocity `v` for unit time.
    pub fn exp(&self, a: &Coords, v: &Coords) -> Coords {
        match self {
            Chart::Torus { dims, .. } => {
                let mut p = ZERO;
                for k in 0..*dims {
                    p[k] = wrap_unit(a[k] + v[k]);
                }
                p
            }
            Chart::Sphere => {
                let vt = self.project(a, v);
                let s = norm(&vt);
                if s < 1e-300 {
                    return *a;
                }
                let p = axpy(&scale(a, s.cos()), s.sin() / s, &vt);
                normalize3(&p)
            }
            Chart::ProductCircle { base, .. } => {
                let k = base.coord_len();
                let mut p = base.exp(a, v);
                p[k] = wrap_unit(a[k] + v[k]);
                p
            }
            Chart::Graph => *a,
        }
    }

    /// Maps an ambient point back onto the chart (wrap or normalize).
    pub fn retract(&self, p: &Coords) -> Coords {
        match self {
            Chart::Torus { dims, .. } => {
                let mut q = ZERO;
                for k in 0..*dims {
                    q[k] = wrap_unit(p[k]);
                }
                q
            }
            Chart::Sphere => normalize3(p),
            Chart::ProductCircle { base, .. } => {
                let k = base.coord_len();
                let mut q = base.retract(p);
                q[k] = wrap_unit(p[k]);
                q
            }
            Chart::Graph => *p,
        }
    }

    /// Orthogonal projection of an ambient vector onto the tangent space at `a`.
    pub fn project(&self, a: &Coords, v: &Coords) -> Coords {
        match self {
            Chart::Torus { dims, .. } => {
                let mut w = ZERO;
                w[..*dims].copy_from_slice(&v[..*dims]);
                w
            }
            Chart::Sphere => {
                let c = a[0] * v[0] + a[1] * v[1] + a[2] * v[2];
                [v[0] - c * a[0], v[1] - c * a[1], v[2] - c * a[2], 0.0]
            }
            Chart::ProductCircle { base, .. } => {
                let k = base.coord_len();
                let mut w = base.project(a, v);
                w[k] = v[k];
                w
            }
            Chart::Graph => ZERO,
        }
    }

    /// Orthonormal frame of the tangent space at `a`, in ambient coordinates.
    pub fn tangent_frame(&self, a: &Coords) -> Vec<Coords> {
        match self {
            Chart::Torus { dims, .. } => (0..*dims)
                .map(|k| {
                    let mut e = ZERO;
                    e[k] = 1.0;
                    e
                })
                .collect(),
            Chart::Sphere => {
                // Pick the ambient axis least aligned with `a` as a seed.
                let mut seed = ZERO;
                let (mut best, mut idx) = (f64::INFINITY, 0);
                for k in 0..3 {
                    if a[k].abs() < best {
                        best = a[k].abs();
                        idx = k;
                    }
                }
                seed[idx] = 1.0;
                let e1 = normalize3(&self.project(a, &seed));
                let e2 = cross3(a, &e1);
                vec![e1, e2]
            }
            Chart::ProductCircle { base, .. } => {
                let k = base.coord_len();
                let mut frame = base.tangent_frame(a);
                let mut e = ZERO;
                e[k] = 1.0;
                frame.push(e);
                frame
            }
            Chart::Graph => Vec::new(),
        }
    }

    /// Splits product coordinates into (base, circle) parts.
    pub fn split_product(&self, p: &Coords) -> Option<(Coords, f64)> {
        match self {
            Chart::ProductCircle { base, .. } => {
                let k = base.coord_len();
                let mut b = ZERO;
                b[..k].copy_from_slice(&p[..k]);
                Some((b, p[k]))
            }
            _ => None,
        }
    }

    /// Nearest lattice node for flat periodic charts.
    pub fn nearest_lattice_index(&self, p: &Coords) -> Option<usize> {
        let axes = self.lattice()?;
        let mut id = 0usize;
        for (k, &n) in axes.iter().enumerate() {
            let m = ((p[k] * n as f64).round() as i64).rem_euclid(n as i64) as usize;
            id = id * n + m;
        }
        Some(id)
    }
}

pub fn normalize3(p: &Coords) -> Coords {
    let n = (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt();
    [p[0] / n, p[1] / n, p[2] / n, 0.0]
}

/// Great-circle angle helper used by the sphere generator.
pub(crate) fn golden_angle() -> f64 {
    PI * (3.0 - 5f64.sqrt())
}

/// Row-major multi-index of a lattice node (last axis fastest).
pub fn lattice_multi_index(axes: &[usize], mut id: usize) -> Vec<usize> {
    let mut m = vec![0; axes.len()];
    for k in (0..axes.len()).rev() {
        m[k] = id % axes[k];
        id /= axes[k];
    }
    m
}

pub fn lattice_id(axes: &[usize], m: &[usize]) -> usize {
    let mut id = 0;
    for (k, &n) in axes.iter().enumerate() {
        id = id * n + m[k] % n;
    }
    id
}

/// Node reached from `id` by the signed lattice offset `off`.
pub fn lattice_shift(axes: &[usize], id: usize, off: &[i64]) -> usize {
    let m = lattice_multi_index(axes, id);
    let mut out = 0usize;
    for (k, &n) in axes.iter().enumerate() {
        let v = (m[k] as i64 + off[k]).rem_euclid(n as i64) as usize;
        out = out * n + v;
    }
    out
}

/// Index of the lattice offset `b - a` (componentwise modulo the axes).
pub fn lattice_offset(axes: &[usize], a: usize, b: usize) -> usize {
    let ma = lattice_multi_index(axes, a);
    let mb = lattice_multi_index(axes, b);
    let mut out = 0usize;
    for (k, &n) in axes.iter().enumerate() {
        out = out * n + (mb[k] + n - ma[k]) % n;
    }
    out
}
