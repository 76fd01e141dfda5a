//! `mms-flow v1` text cache.
//!
//! ```text
//! mms-flow v1 <nstarts> <ntimes>
//! chart torus <dims> <resolution> | chart sphere | chart product <base...> <circle>
//! integrator <method> <step>
//! times <t_0> ... <t_M>
//! x <start id> <time index> <c_0> ... <c_{d-1}>     (nstarts × ntimes lines)
//! checksum sha256 <hex of everything above>
//! ```

use super::{FlowMap, Integrator};
use crate::error::{Error, Result};
use crate::space::chart::{Chart, ZERO};
use crate::space::MetricMeasureSpace;
use crate::spectral::io::sha256_hex;
use std::fmt::Write as _;

pub const FLOW_HEADER: &str = "mms-flow v1";

fn ferr(line: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        line,
        reason: reason.into(),
    }
}

fn chart_tokens(chart: &Chart) -> String {
    match chart {
        Chart::Torus { dims, resolution } => format!("torus {dims} {resolution}"),
        Chart::Sphere => "sphere".to_string(),
        Chart::ProductCircle {
            base,
            circle_resolution,
        } => format!("product {} {circle_resolution}", chart_tokens(base)),
        Chart::Graph => "graph".to_string(),
    }
}

fn parse_chart(toks: &[&str], line: usize) -> Result<Chart> {
    let num = |i: usize| -> Result<usize> {
        toks.get(i)
            .ok_or_else(|| ferr(line, "truncated chart"))?
            .parse()
            .map_err(|_| ferr(line, "bad chart parameter"))
    };
    match toks.first().copied() {
        Some("torus") if toks.len() == 3 => Ok(Chart::Torus {
            dims: num(1)?,
            resolution: num(2)?,
        }),
        Some("sphere") if toks.len() == 1 => Ok(Chart::Sphere),
        Some("product") if toks.len() >= 3 => Ok(Chart::ProductCircle {
            base: Box::new(parse_chart(&toks[1..toks.len() - 1], line)?),
            circle_resolution: num(toks.len() - 1)?,
        }),
        _ => Err(ferr(line, "unsupported chart")),
    }
}

pub fn write_flow(flow: &FlowMap) -> String {
    let m = flow.times().len();
    let d = flow.chart().coord_len();
    let mut out = String::new();
    let _ = writeln!(out, "{FLOW_HEADER} {} {m}", flow.len());
    let _ = writeln!(out, "chart {}", chart_tokens(flow.chart()));
    let _ = writeln!(out, "integrator {} {:.16e}", flow.integrator().method, flow.integrator().step);
    out.push_str("times");
    for t in flow.times() {
        let _ = write!(out, " {t:.16e}");
    }
    out.push('\n');
    for s in 0..flow.len() {
        for k in 0..m {
            let _ = write!(out, "x {} {k}", flow.starts()[s]);
            for c in &flow.position(s, k)[..d] {
                let _ = write!(out, " {c:.16e}");
            }
            out.push('\n');
        }
    }
    let sum = sha256_hex(&out);
    let _ = writeln!(out, "checksum sha256 {sum}");
    out
}

pub fn read_flow(text: &str) -> Result<FlowMap> {
    let body_end = text.rfind("checksum sha256 ").ok_or_else(|| Error::Checksum {
        stored: "<missing>".into(),
        computed: sha256_hex(text),
    })?;
    let (body, tail) = text.split_at(body_end);
    let stored = tail.trim().strip_prefix("checksum sha256 ").unwrap_or_default().to_string();
    let computed = sha256_hex(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| ferr(1, "empty input"))?;
    let rest = header
        .strip_prefix(FLOW_HEADER)
        .ok_or_else(|| ferr(1, format!("expected `{FLOW_HEADER}`")))?;
    let dims: Vec<usize> = rest
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| ferr(1, "bad header size")))
        .collect::<Result<_>>()?;
    let [nstarts, ntimes] = dims[..] else {
        return Err(ferr(1, "header needs <nstarts> <ntimes>"));
    };

    let mut next = |what: &str| -> Result<(usize, Vec<&str>)> {
        let (no, l) = lines.next().ok_or_else(|| ferr(0, format!("missing {what} line")))?;
        let toks: Vec<&str> = l.split_whitespace().collect();
        if toks.first() != Some(&what) {
            return Err(ferr(no, format!("expected `{what}`")));
        }
        Ok((no, toks[1..].to_vec()))
    };
    let (no, toks) = next("chart")?;
    let chart = parse_chart(&toks, no)?;
    let (no, toks) = next("integrator")?;
    if toks.len() != 2 {
        return Err(ferr(no, "integrator needs <method> <step>"));
    }
    let integrator = Integrator {
        method: toks[0].to_string(),
        step: toks[1].parse().map_err(|_| ferr(no, "bad step"))?,
    };
    let (no, toks) = next("times")?;
    let times: Vec<f64> = toks
        .iter()
        .map(|t| t.parse().map_err(|_| ferr(no, "bad time")))
        .collect::<Result<_>>()?;
    if times.len() != ntimes {
        return Err(ferr(no, "time count disagrees with the header"));
    }

    let d = chart.coord_len();
    let mut starts = Vec::with_capacity(nstarts);
    let mut positions = Vec::with_capacity(nstarts * ntimes);
    for s in 0..nstarts {
        for k in 0..ntimes {
            let (no, toks) = next("x")?;
            if toks.len() != 2 + d {
                return Err(ferr(no, "wrong number of coordinates"));
            }
            let id: usize = toks[0].parse().map_err(|_| ferr(no, "bad start id"))?;
            let kk: usize = toks[1].parse().map_err(|_| ferr(no, "bad time index"))?;
            if kk != k || (k > 0 && starts[s] != id) {
                return Err(ferr(no, "positions out of order"));
            }
            if k == 0 {
                starts.push(id);
            }
            let mut p = ZERO;
            for (c, t) in p.iter_mut().zip(&toks[2..]) {
                *c = t.parse().map_err(|_| ferr(no, format!("bad coordinate `{t}`")))?;
            }
            positions.push(p);
        }
    }
    if lines.next().is_some() {
        return Err(ferr(0, "trailing lines before the checksum"));
    }
    let origins = (0..nstarts).map(|s| positions[s * ntimes]).collect();
    FlowMap::from_parts(chart, starts, origins, times, positions, integrator)
}

/// Reads a flow and checks it belongs to `space`.
pub fn read_flow_for(space: &MetricMeasureSpace, text: &str) -> Result<FlowMap> {
    let flow = read_flow(text)?;
    if *flow.chart() != *space.chart() {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: flow.len(),
        });
    }
    if flow.starts().iter().any(|s| *s >= space.npoints()) {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: flow.starts().iter().max().map_or(0, |m| m + 1),
        });
    }
    Ok(flow)
}
