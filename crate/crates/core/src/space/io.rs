//! `mms-space v1` text format.
//!
//! ```text
//! mms-space v1 <chart> <npoints>
//! # resolution 16            (tori)
//! # base torus-2 16          (products: base tag and base resolution or size)
//! # circle-resolution 8      (products)
//! <id> <weight> <coord>...
//! e <a> <b> <length>         (graphs only)
//! ```
//!
//! Distances are recomputed from the chart on load.

use super::{
    build_graph, build_product_with_circle, build_sphere_mesh, build_torus_grid, Chart, Edge,
    MetricMeasureSpace,
};
use crate::error::{Error, Result};
use std::fmt::Write as _;

pub const SPACE_HEADER: &str = "mms-space v1";

pub fn write_space(space: &MetricMeasureSpace) -> String {
    let mut out = String::new();
    let chart = space.chart();
    let _ = writeln!(out, "{SPACE_HEADER} {} {}", chart.tag(), space.npoints());
    match chart {
        Chart::Torus { resolution, .. } => {
            let _ = writeln!(out, "# resolution {resolution}");
        }
        Chart::ProductCircle {
            base,
            circle_resolution,
        } => {
            let base_size = match base.as_ref() {
                Chart::Torus { resolution, .. } => *resolution,
                _ => space.npoints() / circle_resolution,
            };
            let _ = writeln!(out, "# base {} {base_size}", base.tag());
            let _ = writeln!(out, "# circle-resolution {circle_resolution}");
        }
        _ => {}
    }
    let k = chart.coord_len();
    for i in 0..space.npoints() {
        let _ = write!(out, "{i} {:e}", space.weight(i));
        for c in &space.coord(i)[..k] {
            let _ = write!(out, " {c:e}");
        }
        out.push('\n');
    }
    for e in space.edges() {
        let _ = writeln!(out, "e {} {} {:e}", e.a, e.b, e.length);
    }
    out
}

fn fmt_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        line,
        reason: reason.into(),
    }
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| fmt_err(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| fmt_err(line, format!("bad {what}")))
}

fn build_from_tag(tag: &str, size: usize, line: usize) -> Result<MetricMeasureSpace> {
    if tag == "sphere" {
        return build_sphere_mesh(size);
    }
    if let Some(d) = tag.strip_prefix("torus-") {
        let dims: usize = d.parse().map_err(|_| fmt_err(line, "bad torus tag"))?;
        return build_torus_grid(dims, size);
    }
    Err(fmt_err(line, format!("unsupported chart `{tag}`")))
}

/// Parses a space description. Generated charts are rebuilt from their
/// parameters and the stored weights and coordinates must agree with the
/// regenerated ones.
pub fn read_space(text: &str) -> Result<MetricMeasureSpace> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
    let (_, header) = lines.next().ok_or_else(|| fmt_err(1, "empty input"))?;
    let rest = header
        .strip_prefix(SPACE_HEADER)
        .ok_or_else(|| fmt_err(1, "expected `mms-space v1` header"))?;
    let mut toks = rest.split_whitespace();
    let tag = toks.next().ok_or_else(|| fmt_err(1, "missing chart"))?.to_string();
    let npoints: usize = parse(toks.next(), 1, "point count")?;

    let mut resolution = None;
    let mut base = None;
    let mut circle = None;
    let mut weights = Vec::with_capacity(npoints);
    let mut coords = Vec::with_capacity(npoints);
    let mut edges = Vec::new();
    for (ln, line) in lines {
        if line.is_empty() {
            continue;
        }
        if let Some(meta) = line.strip_prefix('#') {
            let mut t = meta.split_whitespace();
            match t.next() {
                Some("resolution") => resolution = Some(parse::<usize>(t.next(), ln, "resolution")?),
                Some("base") => {
                    let btag = t.next().ok_or_else(|| fmt_err(ln, "missing base tag"))?;
                    base = Some((btag.to_string(), parse::<usize>(t.next(), ln, "base size")?));
                }
                Some("circle-resolution") => {
                    circle = Some(parse::<usize>(t.next(), ln, "circle resolution")?)
                }
                _ => {}
            }
            continue;
        }
        let mut t = line.split_whitespace();
        let first = t.next().unwrap_or_default();
        if first == "e" {
            edges.push(Edge {
                a: parse(t.next(), ln, "edge endpoint")?,
                b: parse(t.next(), ln, "edge endpoint")?,
                length: parse(t.next(), ln, "edge length")?,
            });
            continue;
        }
        let id: usize = first.parse().map_err(|_| fmt_err(ln, "bad point id"))?;
        if id != weights.len() {
            return Err(fmt_err(ln, format!("expected point id {}", weights.len())));
        }
        weights.push(parse::<f64>(t.next(), ln, "weight")?);
        let mut c = [0.0; 4];
        for (k, tok) in t.enumerate() {
            if k >= 4 {
                return Err(fmt_err(ln, "too many coordinates"));
            }
            c[k] = tok.parse().map_err(|_| fmt_err(ln, "bad coordinate"))?;
        }
        coords.push(c);
    }
    if weights.len() != npoints {
        return Err(Error::DimensionMismatch {
            expected: npoints,
            found: weights.len(),
        });
    }

    let space = match tag.as_str() {
        "graph" => return build_graph(&weights, &edges),
        "product-circle" => {
            let (btag, bsize) = base.ok_or_else(|| fmt_err(1, "product without base line"))?;
            let c = circle.ok_or_else(|| fmt_err(1, "product without circle resolution"))?;
            build_product_with_circle(&build_from_tag(&btag, bsize, 1)?, c)?
        }
        "sphere" => build_sphere_mesh(npoints)?,
        _ => {
            let r = resolution.ok_or_else(|| fmt_err(1, "torus without resolution line"))?;
            build_from_tag(&tag, r, 1)?
        }
    };
    if space.npoints() != npoints {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: npoints,
        });
    }
    let k = space.chart().coord_len();
    for i in 0..npoints {
        let same_w = (space.weight(i) - weights[i]).abs() <= 1e-12;
        let same_c = (0..k).all(|j| (space.coord(i)[j] - coords[i][j]).abs() <= 1e-12);
        if !same_w || !same_c {
            return Err(fmt_err(i + 2, "point disagrees with the regenerated chart"));
        }
    }
    Ok(space)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn roundtrip(space: &MetricMeasureSpace) -> MetricMeasureSpace {
        read_space(&write_space(space)).unwrap()
    }

    #[test]
    fn generated_spaces_roundtrip() {
        let t = build_torus_grid(2, 6).unwrap();
        assert_eq!(roundtrip(&t).coords(), t.coords());
        let s = build_sphere_mesh(40).unwrap();
        assert_eq!(roundtrip(&s).dist(3, 17), s.dist(3, 17));
        let p = build_product_with_circle(&build_torus_grid(2, 4).unwrap(), 4).unwrap();
        let q = roundtrip(&p);
        assert_eq!(q.chart(), p.chart());
        assert_eq!(q.npoints(), 64);
    }

    #[test]
    fn graph_roundtrip_keeps_edges() {
        let edges = vec![
            Edge { a: 0, b: 1, length: 0.5 },
            Edge { a: 1, b: 2, length: 0.25 },
            Edge { a: 2, b: 0, length: 1.0 },
        ];
        let g = build_graph(&[1.0, 1.0, 2.0], &edges).unwrap();
        let h = roundtrip(&g);
        assert_eq!(h.edges(), g.edges());
        assert_eq!(h.dist(0, 2), 0.75);
        assert!((h.weight(2) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn malformed_input_is_rejected() {
        assert!(matches!(read_space("mms-space v2 sphere 12"), Err(Error::Format { .. })));
        let t = write_space(&build_torus_grid(1, 4).unwrap());
        let truncated: String = t.lines().take(3).map(|l| format!("{l}\n")).collect();
        assert!(matches!(
            read_space(&truncated),
            Err(Error::DimensionMismatch { .. })
        ));
        let tampered = t.replace("2.5e-1 5e-1", "2.5e-1 4e-1");
        assert!(read_space(&tampered).is_err());
    }
}
