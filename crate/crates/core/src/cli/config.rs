use crate::error::{Error, Result};
use crate::fields::FieldSpec;
use crate::space::{build_graph, build_product_with_circle, build_sphere_mesh, build_torus_grid, Edge};
use crate::space::MetricMeasureSpace;
use serde::Deserialize;
use std::path::PathBuf;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    HeatKernelCheck,
    GreenCheck,
    MaximalEstimates,
    Contraction,
    LusinRegularity,
    N2Lift,
    FullSuite,
}

impl Scenario {
    pub fn tag(self) -> &'static str {
        match self {
            Scenario::HeatKernelCheck => "heat-kernel-check",
            Scenario::GreenCheck => "green-check",
            Scenario::MaximalEstimates => "maximal-estimates",
            Scenario::Contraction => "contraction",
            Scenario::LusinRegularity => "lusin-regularity",
            Scenario::N2Lift => "n2-lift",
            Scenario::FullSuite => "full-suite",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(try_from = "RawSpace")]
pub enum SpaceSpec {
    Torus {
        dims: usize,
        resolution: usize,
    },
    Sphere {
        points: usize,
    },
    /// `base × S¹`; `base` is a torus or sphere table.
    Product {
        base: Box<SpaceSpec>,
        circle_resolution: usize,
    },
    /// Edges are `[a, b, length]`.
    Graph {
        weights: Vec<f64>,
        edges: Vec<(usize, usize, f64)>,
    },
}

#[derive(Clone, Copy, Debug, Deserialize)]
#[serde(rename_all = "snake_case")]
enum SpaceKind {
    Torus,
    Sphere,
    Product,
    Graph,
}

// Flat on purpose: a tagged enum would report type errors at the table
// header instead of at the offending key.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpace {
    kind: SpaceKind,
    dims: Option<usize>,
    resolution: Option<usize>,
    points: Option<usize>,
    base: Option<Box<SpaceSpec>>,
    circle_resolution: Option<usize>,
    weights: Option<Vec<f64>>,
    edges: Option<Vec<(usize, usize, f64)>>,
}

impl TryFrom<RawSpace> for SpaceSpec {
    type Error = String;

    fn try_from(r: RawSpace) -> std::result::Result<Self, String> {
        let need = |v: Option<usize>, key: &str, kind: &str| v.ok_or(format!("space.{key} is required for kind = \"{kind}\""));
        let given: Vec<&str> = [
            ("dims", r.dims.is_some()),
            ("resolution", r.resolution.is_some()),
            ("points", r.points.is_some()),
            ("base", r.base.is_some()),
            ("circle_resolution", r.circle_resolution.is_some()),
            ("weights", r.weights.is_some()),
            ("edges", r.edges.is_some()),
        ]
        .into_iter()
        .filter_map(|(k, set)| set.then_some(k))
        .collect();
        let allowed: &[&str] = match r.kind {
            SpaceKind::Torus => &["dims", "resolution"],
            SpaceKind::Sphere => &["points"],
            SpaceKind::Product => &["base", "circle_resolution"],
            SpaceKind::Graph => &["weights", "edges"],
        };
        if let Some(k) = given.iter().find(|k| !allowed.contains(k)) {
            return Err(format!("space.{k} does not apply to this kind (expected {})", allowed.join(", ")));
        }
        Ok(match r.kind {
            SpaceKind::Torus => SpaceSpec::Torus {
                dims: need(r.dims, "dims", "torus")?,
                resolution: need(r.resolution, "resolution", "torus")?,
            },
            SpaceKind::Sphere => SpaceSpec::Sphere {
                points: need(r.points, "points", "sphere")?,
            },
            SpaceKind::Product => SpaceSpec::Product {
                base: r.base.ok_or("space.base is required for kind = \"product\"")?,
                circle_resolution: need(r.circle_resolution, "circle_resolution", "product")?,
            },
            SpaceKind::Graph => SpaceSpec::Graph {
                weights: r.weights.ok_or("space.weights is required for kind = \"graph\"")?,
                edges: r.edges.unwrap_or_default(),
            },
        })
    }
}

impl SpaceSpec {
    pub fn build(&self) -> Result<MetricMeasureSpace> {
        match self {
            SpaceSpec::Torus { dims, resolution } => build_torus_grid(*dims, *resolution),
            SpaceSpec::Sphere { points } => build_sphere_mesh(*points),
            SpaceSpec::Product {
                base,
                circle_resolution,
            } => {
                if matches!(**base, SpaceSpec::Product { .. } | SpaceSpec::Graph { .. }) {
                    return Err(Error::Config("space.base must be a torus or a sphere".into()));
                }
                build_product_with_circle(&base.build()?, *circle_resolution)
            }
            SpaceSpec::Graph { weights, edges } => {
                let edges: Vec<Edge> = edges.iter().map(|&(a, b, length)| Edge { a, b, length }).collect();
                build_graph(weights, &edges)
            }
        }
    }
}

fn default_step() -> f64 {
    1e-3
}
fn default_horizon() -> f64 {
    0.5
}
fn default_nodes() -> usize {
    10
}
fn default_r_count() -> usize {
    12
}
fn default_epsilon() -> f64 {
    0.1
}
fn default_seed() -> u64 {
    7
}
fn default_pairs() -> usize {
    1000
}
fn default_circle() -> usize {
    8
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Numerics {
    /// Basis size; each scenario picks its own default when absent.
    pub k_max: Option<usize>,
    #[serde(default = "default_step")]
    pub step: f64,
    /// Explicit time grid; overrides `horizon`/`nodes`.
    pub t_grid: Option<Vec<f64>>,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default = "default_nodes")]
    pub nodes: usize,
    /// Explicit radii for `Q*`; `r_count` log-spaced radii otherwise.
    pub r_grid: Option<Vec<f64>>,
    #[serde(default = "default_r_count")]
    pub r_count: usize,
    /// Lusin mass budget.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Heat regularization used by the Green identities.
    #[serde(default = "default_epsilon")]
    pub green_epsilon: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_circle")]
    pub circle_resolution: usize,
}

impl Default for Numerics {
    fn default() -> Self {
        toml::from_str("").expect("all numerics have defaults")
    }
}

impl Numerics {
    pub fn time_grid(&self) -> Vec<f64> {
        match &self.t_grid {
            Some(t) => t.clone(),
            None => (0..=self.nodes)
                .map(|k| self.horizon * k as f64 / self.nodes as f64)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub scenario: Scenario,
    pub space: Option<SpaceSpec>,
    pub field: Option<FieldSpec>,
    #[serde(default)]
    pub numerics: Numerics,
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the offending line and field.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        let n = &self.numerics;
        if self.scenario != Scenario::FullSuite && self.space.is_none() {
            return bad(format!("scenario {} needs a [space] table", self.scenario.tag()));
        }
        let needs_field = matches!(
            self.scenario,
            Scenario::MaximalEstimates | Scenario::Contraction | Scenario::LusinRegularity | Scenario::N2Lift
        );
        if needs_field && self.field.is_none() {
            return bad(format!("scenario {} needs a [field] table", self.scenario.tag()));
        }
        if !(n.step > 0.0) {
            return bad("numerics.step must be positive".into());
        }
        let t = n.time_grid();
        if t.len() < 3 || t[0] != 0.0 || t.windows(2).any(|w| !(w[1] > w[0])) {
            return bad("numerics.t_grid must start at 0, increase strictly and have at least 3 nodes".into());
        }
        if let Some(r) = &n.r_grid {
            if r.is_empty() || r.iter().any(|v| !(*v > 0.0)) {
                return bad("numerics.r_grid must hold positive radii".into());
            }
        } else if n.r_count == 0 {
            return bad("numerics.r_count must be positive".into());
        }
        if !(n.epsilon > 0.0 && n.epsilon < 1.0) {
            return bad("numerics.epsilon must lie in (0, 1)".into());
        }
        if !(n.green_epsilon >= 0.0) {
            return bad("numerics.green_epsilon must be nonnegative".into());
        }
        if n.pairs == 0 {
            return bad("numerics.pairs must be positive".into());
        }
        if n.k_max == Some(0) {
            return bad("numerics.k_max must be positive".into());
        }
        Ok(())
    }
}
