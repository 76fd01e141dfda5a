//! Deterministic scenario runner: config parsing, basis and flow caching,
//! and CSV emission.

pub mod config;
mod scenarios;

pub use config::{ExperimentConfig, Numerics, Scenario, SpaceSpec};

use crate::error::{Error, Result};
use crate::fields::VectorField;
use crate::flows::io::{read_flow_for, write_flow};
use crate::flows::{integrate_flow, FlowMap};
use crate::space::io::write_space;
use crate::space::MetricMeasureSpace;
use crate::spectral::io::{read_basis_for, sha256_hex, write_basis};
use crate::spectral::{default_basis, SpectralBasis};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Pass,
    Fail,
    /// Reported value without a pass/fail criterion.
    Info,
}

impl Status {
    fn tag(self) -> &'static str {
        match self {
            Status::Pass => "pass",
            Status::Fail => "fail",
            Status::Info => "info",
        }
    }

    fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub name: String,
    /// The inequality or identity the row checks.
    pub anchor: String,
    pub constant: f64,
    pub status: Status,
    pub tolerance: String,
    /// Whether a failure here changes the exit code.
    pub gated: bool,
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub cache: Option<PathBuf>,
    pub threads: Option<usize>,
}

#[derive(Clone, Debug)]
pub struct RunSummary {
    pub out_dir: PathBuf,
    pub rows: Vec<ReportRow>,
    pub errors: Vec<String>,
}

impl RunSummary {
    pub fn passed(&self) -> bool {
        self.errors.is_empty() && self.rows.iter().all(|r| !r.gated || r.status != Status::Fail)
    }

    /// 0 when every gated row passes, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.passed() {
            0
        } else {
            1
        }
    }
}

fn fmt_num(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6e}")
    } else {
        format!("{v}")
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("name,anchor,constant,status,tolerance\n");
    for r in rows {
        let tol = if r.gated || r.status == Status::Info {
            r.tolerance.clone()
        } else {
            format!("{} (not gated)", r.tolerance)
        };
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&r.name),
            csv_field(&r.anchor),
            fmt_num(r.constant),
            r.status.tag(),
            csv_field(&tol)
        );
    }
    out
}

/// Text caches for spectral bases and flows, keyed by a hash of the inputs.
struct Cache {
    dir: PathBuf,
}

impl Cache {
    fn path(&self, kind: &str, space: &MetricMeasureSpace, extra: &str) -> PathBuf {
        let key = sha256_hex(&format!("{}\n{extra}", write_space(space)));
        self.dir.join(format!("{kind}-{}.txt", &key[..24]))
    }

    fn load(path: &Path) -> Option<String> {
        fs::read_to_string(path).ok()
    }

    fn store(path: &Path, text: &str) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, text)?;
        Ok(())
    }
}

/// State threaded through a scenario run.
pub(crate) struct Run {
    rows: Vec<ReportRow>,
    series: BTreeMap<String, String>,
    timings: Vec<(String, f64)>,
    errors: Vec<String>,
    notes: Vec<String>,
    cache: Option<Cache>,
    prefix: String,
    pub(crate) seed: u64,
}

impl Run {
    fn new(seed: u64, cache: Option<PathBuf>) -> Self {
        Run {
            rows: Vec::new(),
            series: BTreeMap::new(),
            timings: Vec::new(),
            errors: Vec::new(),
            notes: Vec::new(),
            cache: cache.map(|dir| Cache { dir }),
            prefix: String::new(),
            seed,
        }
    }

    fn name(&self, name: &str) -> String {
        format!("{}{name}", self.prefix)
    }

    pub(crate) fn row(&mut self, name: &str, anchor: &str, constant: f64, ok: bool, tolerance: impl Into<String>) {
        self.push(name, anchor, constant, Status::from_bool(ok), tolerance.into(), true);
    }

    /// A pass/fail verdict that is reported but does not move the exit code.
    pub(crate) fn diagnostic(&mut self, name: &str, anchor: &str, constant: f64, ok: bool, tolerance: impl Into<String>) {
        self.push(name, anchor, constant, Status::from_bool(ok), tolerance.into(), false);
    }

    pub(crate) fn info(&mut self, name: &str, anchor: &str, constant: f64) {
        self.push(name, anchor, constant, Status::Info, String::new(), false);
    }

    fn push(&mut self, name: &str, anchor: &str, constant: f64, status: Status, tolerance: String, gated: bool) {
        let name = self.name(name);
        self.rows.push(ReportRow {
            name,
            anchor: anchor.to_string(),
            constant,
            status,
            tolerance,
            gated,
        });
    }

    pub(crate) fn series(&mut self, name: &str, csv: String) {
        let key = format!("{}{name}", self.prefix.replace('/', "_"));
        self.series.insert(key, csv);
    }

    pub(crate) fn note(&mut self, text: impl Into<String>) {
        self.notes.push(text.into());
    }

    /// Runs one step; an error becomes a failed row instead of aborting.
    pub(crate) fn step(&mut self, name: &str, f: impl FnOnce(&mut Run) -> Result<()>) {
        let start = Instant::now();
        if let Err(e) = f(self) {
            let full = self.name(name);
            self.errors.push(format!("{full}: {e}"));
            self.push(name, "step completed", f64::NAN, Status::Fail, format!("error: {e}"), true);
        }
        let full = self.name(name);
        self.timings.push((full, start.elapsed().as_secs_f64()));
    }

    pub(crate) fn with_prefix(&mut self, prefix: &str, f: impl FnOnce(&mut Run)) {
        let saved = std::mem::replace(&mut self.prefix, format!("{prefix}/"));
        f(self);
        self.prefix = saved;
    }

    pub(crate) fn basis(&mut self, space: &MetricMeasureSpace, k_max: usize) -> Result<SpectralBasis> {
        let path = self.cache.as_ref().map(|c| c.path("basis", space, &format!("k_max {k_max}")));
        if let Some(p) = &path {
            if let Some(text) = Cache::load(p) {
                match read_basis_for(space, &text) {
                    Ok(b) => {
                        self.note(format!("basis cache hit {}", p.display()));
                        return Ok(b);
                    }
                    Err(e) => self.note(format!("basis cache {} rejected: {e}", p.display())),
                }
            }
        }
        let b = default_basis(space, k_max, None)?;
        if let Some(p) = &path {
            Cache::store(p, &write_basis(&b))?;
        }
        Ok(b)
    }

    /// Integrates `b`, or loads the flow from the cache and re-runs its gates.
    /// `key` must identify the field.
    pub(crate) fn flow(
        &mut self,
        space: &MetricMeasureSpace,
        b: &VectorField,
        key: &str,
        t_grid: &[f64],
        step: f64,
    ) -> Result<FlowMap> {
        let extra = format!("flow {key} t {t_grid:?} step {step:e}");
        let path = self.cache.as_ref().map(|c| c.path("flow", space, &extra));
        if let Some(p) = &path {
            if let Some(text) = Cache::load(p) {
                match read_flow_for(space, &text) {
                    Ok(f) if f.times() == t_grid => {
                        self.note(format!("flow cache hit {}", p.display()));
                        return f.with_diagnostics(space, b);
                    }
                    Ok(_) => self.note(format!("flow cache {} has a different time grid", p.display())),
                    Err(e) => self.note(format!("flow cache {} rejected: {e}", p.display())),
                }
            }
        }
        let f = integrate_flow(space, b, t_grid, step)?;
        if let Some(p) = &path {
            Cache::store(p, &write_flow(&f))?;
        }
        Ok(f)
    }
}

/// Runs the configured scenario and writes `report.csv`, `series/*.csv` and
/// `manifest.txt` into the output directory. Gate failures still write the
/// report; only I/O errors are returned.
pub fn run_experiment(cfg: &ExperimentConfig, config_text: &str, opts: &RunOptions) -> Result<RunSummary> {
    let out_dir = opts
        .out
        .clone()
        .or_else(|| cfg.output.clone())
        .ok_or_else(|| Error::Config("no output directory (set `output` or pass --out)".into()))?;
    let mut numerics = cfg.numerics.clone();
    if let Some(seed) = opts.seed {
        numerics.seed = seed;
    }
    let mut run = Run::new(numerics.seed, opts.cache.clone());
    let start = Instant::now();
    scenarios::dispatch(&mut run, cfg, &numerics)?;
    let total = start.elapsed().as_secs_f64();

    fs::create_dir_all(out_dir.join("series"))?;
    fs::write(out_dir.join("report.csv"), report_csv(&run.rows))?;
    for (name, csv) in &run.series {
        fs::write(out_dir.join("series").join(format!("{name}.csv")), csv)?;
    }
    let mut manifest = String::new();
    let _ = writeln!(manifest, "mmslab {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "scenario {}", cfg.scenario.tag());
    let _ = writeln!(manifest, "seed {}", numerics.seed);
    let threads = opts.threads.map_or("default".to_string(), |n| n.to_string());
    let _ = writeln!(manifest, "threads {threads}");
    if let Some(c) = &opts.cache {
        let _ = writeln!(manifest, "cache {}", c.display());
    }
    let _ = writeln!(manifest, "rows {}", run.rows.len());
    let _ = writeln!(manifest, "\n[timings]");
    for (name, secs) in &run.timings {
        let _ = writeln!(manifest, "{name} {secs:.3}s");
    }
    let _ = writeln!(manifest, "total {total:.3}s");
    if !run.notes.is_empty() {
        let _ = writeln!(manifest, "\n[notes]");
        for n in &run.notes {
            let _ = writeln!(manifest, "{n}");
        }
    }
    if !run.errors.is_empty() {
        let _ = writeln!(manifest, "\n[errors]");
        for e in &run.errors {
            let _ = writeln!(manifest, "{e}");
        }
    }
    let _ = writeln!(manifest, "\n[config]\n{}", config_text.trim_end());
    fs::write(out_dir.join("manifest.txt"), manifest)?;

    Ok(RunSummary {
        out_dir,
        rows: run.rows,
        errors: run.errors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_quotes_and_formats() {
        let rows = vec![
            ReportRow {
                name: "a".into(),
                anchor: "x, y".into(),
                constant: 1.5,
                status: Status::Pass,
                tolerance: "<1e-9".into(),
                gated: true,
            },
            ReportRow {
                name: "b".into(),
                anchor: "z".into(),
                constant: f64::NAN,
                status: Status::Fail,
                tolerance: ">=0.8".into(),
                gated: false,
            },
        ];
        assert_eq!(
            report_csv(&rows),
            "name,anchor,constant,status,tolerance\na,\"x, y\",1.500000e0,pass,<1e-9\nb,z,NaN,fail,>=0.8 (not gated)\n"
        );
        let s = RunSummary {
            out_dir: PathBuf::new(),
            rows,
            errors: vec![],
        };
        assert!(s.passed());
    }
}
