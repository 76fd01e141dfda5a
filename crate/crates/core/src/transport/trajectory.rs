use super::{Atoms, DiscreteMeasure};
use crate::error::{invalid, Error, Result};
use crate::fields::VectorField;
use crate::flows::FlowMap;
use crate::space::chart::{self, Chart};
use crate::space::MetricMeasureSpace;

/// Upwind weights below this are dropped after every node.
const PRUNE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectorySource {
    Pushforward,
    Upwind,
}

impl TrajectorySource {
    pub fn tag(&self) -> &'static str {
        match self {
            TrajectorySource::Pushforward => "pushforward",
            TrajectorySource::Upwind => "upwind",
        }
    }
}

pub enum CeMethod<'a> {
    /// `μ_t = (X_t)_# μ₀` along an integrated flow.
    Pushforward(&'a FlowMap),
    /// First-order conservative finite volumes on a torus lattice.
    Upwind { cfl: f64 },
}

/// A curve of measures on the nodes of a time grid.
#[derive(Clone, Debug)]
pub struct MeasureTrajectory {
    times: Vec<f64>,
    measures: Vec<DiscreteMeasure>,
    /// Unbinned pushed atoms (pushforward only).
    atoms: Option<Vec<Atoms>>,
    source: TrajectorySource,
}

impl MeasureTrajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn measures(&self) -> &[DiscreteMeasure] {
        &self.measures
    }

    pub fn source(&self) -> TrajectorySource {
        self.source
    }

    /// Atoms at node `k`: the pushed atoms when available, else the grid measure.
    pub fn atoms_at(&self, space: &MetricMeasureSpace, k: usize) -> Atoms {
        match &self.atoms {
            Some(a) => a[k].clone(),
            None => self.measures[k].atoms(space),
        }
    }

    pub fn max_density_bound(&self) -> f64 {
        self.measures.iter().map(|m| m.density_bound()).fold(0.0, f64::max)
    }
}

pub fn continuity_equation_solve(
    space: &MetricMeasureSpace,
    b: &VectorField,
    mu0: &DiscreteMeasure,
    t_grid: &[f64],
    method: CeMethod<'_>,
) -> Result<MeasureTrajectory> {
    if mu0.weights().len() != space.npoints() {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: mu0.weights().len(),
        });
    }
    if t_grid.len() < 2 || t_grid[0] != 0.0 || t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("t_grid", "must increase strictly from 0"));
    }
    b.check_time(t_grid[t_grid.len() - 1])?;
    match method {
        CeMethod::Pushforward(flow) => pushforward(space, mu0, t_grid, flow),
        CeMethod::Upwind { cfl } => upwind(space, b, mu0, t_grid, cfl),
    }
}

fn pushforward(
    space: &MetricMeasureSpace,
    mu0: &DiscreteMeasure,
    t_grid: &[f64],
    flow: &FlowMap,
) -> Result<MeasureTrajectory> {
    if flow.chart() != space.chart() {
        return Err(invalid("flow", "integrated on a different chart"));
    }
    let mut slot = vec![usize::MAX; space.npoints()];
    for (s, &x) in flow.starts().iter().enumerate() {
        slot[x] = s;
    }
    let support = mu0.support();
    let starts: Vec<usize> = support
        .iter()
        .map(|&x| match slot[x] {
            usize::MAX => Err(invalid("flow", format!("does not start at support point {x}"))),
            s => Ok(s),
        })
        .collect::<Result<_>>()?;
    let nodes: Vec<usize> = t_grid.iter().map(|&t| flow.time_index(t)).collect::<Result<_>>()?;
    let masses: Vec<f64> = support.iter().map(|&x| mu0.weights()[x]).collect();
    let mut atoms = Vec::with_capacity(t_grid.len());
    let mut measures = Vec::with_capacity(t_grid.len());
    for &k in &nodes {
        let a = Atoms {
            points: starts.iter().map(|&s| *flow.position(s, k)).collect(),
            masses: masses.clone(),
        };
        measures.push(DiscreteMeasure::binned(space, &a)?);
        atoms.push(a);
    }
    Ok(MeasureTrajectory {
        times: t_grid.to_vec(),
        measures,
        atoms: Some(atoms),
        source: TrajectorySource::Pushforward,
    })
}

fn upwind(
    space: &MetricMeasureSpace,
    b: &VectorField,
    mu0: &DiscreteMeasure,
    t_grid: &[f64],
    cfl: f64,
) -> Result<MeasureTrajectory> {
    let Chart::Torus { dims, resolution } = *space.chart() else {
        return Err(Error::UnsupportedChart {
            op: "upwind continuity solve",
            chart: space.chart().tag(),
        });
    };
    if !(cfl > 0.0 && cfl <= 0.5) {
        return Err(invalid("cfl", format!("{cfl} outside (0, 0.5]")));
    }
    let axes = vec![resolution; dims];
    let h = 1.0 / resolution as f64;
    let n = space.npoints();
    let bsup = b.sup_norm(space, t_grid)?;
    // Outflow rate of a cell is at most Σ_a |b_a| / h ≤ √d ‖b‖∞ / h.
    let rate = (dims as f64).sqrt() * bsup * 1.05 / h;
    let up: Vec<Vec<usize>> = (0..dims)
        .map(|a| {
            let mut off = vec![0i64; dims];
            off[a] = 1;
            (0..n).map(|i| chart::lattice_shift(&axes, i, &off)).collect()
        })
        .collect();

    let mut w = mu0.weights().to_vec();
    let mut measures = vec![mu0.clone()];
    let mut flux = vec![0.0; n];
    for win in t_grid.windows(2) {
        let dt_total = win[1] - win[0];
        let steps = if rate > 0.0 {
            (dt_total * rate / cfl).ceil().max(1.0) as usize
        } else {
            1
        };
        let dt = dt_total / steps as f64;
        for step in 0..steps {
            let t = win[0] + step as f64 * dt;
            let mut next = w.clone();
            for a in 0..dims {
                for (i, f) in flux.iter_mut().enumerate() {
                    let mut face = *space.coord(i);
                    face[a] = chart::wrap_unit(face[a] + 0.5 * h);
                    let u = b.eval(&face, t)[a];
                    let j = up[a][i];
                    *f = dt / h * if u > 0.0 { u * w[i] } else { u * w[j] };
                }
                for (i, f) in flux.iter().enumerate() {
                    next[i] -= f;
                    next[up[a][i]] += f;
                }
            }
            w = next;
        }
        let mut pruned = false;
        for v in w.iter_mut() {
            if *v != 0.0 && *v < PRUNE {
                *v = 0.0;
                pruned = true;
            }
        }
        let total: f64 = w.iter().sum();
        if pruned || (total - 1.0).abs() > 1e-13 {
            w.iter_mut().for_each(|v| *v /= total);
        }
        measures.push(DiscreteMeasure::new(space, w.clone())?);
    }
    Ok(MeasureTrajectory {
        times: t_grid.to_vec(),
        measures,
        atoms: None,
        source: TrajectorySource::Upwind,
    })
}
