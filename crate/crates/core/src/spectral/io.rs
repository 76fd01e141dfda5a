//! `mms-spectral v1` text cache.
//!
//! ```text
//! mms-spectral v1 <scheme> <npoints> <k>
//! lattice <axes...> | lattice -
//! lambda <λ_0> ... <λ_{k-1}>
//! w <w_0> ... <w_{n-1}>
//! mode <k0> <k1> <k2> <k3> <c|s> <amplitude>     (exact lattice bases, k lines)
//! row <x> <u_0(x)> ... <u_{k-1}(x)>              (n lines)
//! checksum sha256 <hex of everything above>
//! ```

use super::basis::{FourierMode, Phase, SpectralBasis};
use super::laplacian::Scheme;
use crate::error::{Error, Result};
use crate::space::MetricMeasureSpace;
use sha2::{Digest, Sha256};
use std::fmt::Write as _;

pub const SPECTRAL_HEADER: &str = "mms-spectral v1";

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub(crate) fn sha256_hex(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

pub fn write_basis(basis: &SpectralBasis) -> String {
    let n = basis.npoints();
    let k = basis.len();
    let mut out = String::new();
    let _ = writeln!(out, "{SPECTRAL_HEADER} {} {n} {k}", basis.scheme().tag());
    match basis.lattice() {
        Some(axes) => {
            out.push_str("lattice");
            for a in axes {
                let _ = write!(out, " {a}");
            }
            out.push('\n');
        }
        None => out.push_str("lattice -\n"),
    }
    out.push_str("lambda");
    for l in basis.eigenvalues() {
        let _ = write!(out, " {}", num(*l));
    }
    out.push_str("\nw");
    for w in basis.weights() {
        let _ = write!(out, " {}", num(*w));
    }
    out.push('\n');
    if let Some(modes) = basis.modes() {
        for m in modes {
            let ph = match m.phase {
                Phase::Cos => 'c',
                Phase::Sin => 's',
            };
            let _ = writeln!(
                out,
                "mode {} {} {} {} {ph} {}",
                m.k[0],
                m.k[1],
                m.k[2],
                m.k[3],
                num(m.amplitude)
            );
        }
    }
    for x in 0..n {
        let _ = write!(out, "row {x}");
        for i in 0..k {
            let _ = write!(out, " {}", num(basis.u(i, x)));
        }
        out.push('\n');
    }
    let sum = sha256_hex(&out);
    let _ = writeln!(out, "checksum sha256 {sum}");
    out
}

fn ferr(line: usize, reason: impl Into<String>) -> Error {
    Error::Format {
        line,
        reason: reason.into(),
    }
}

fn floats<'a>(toks: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec<f64>> {
    toks.map(|t| t.parse::<f64>().map_err(|_| ferr(line, format!("bad number `{t}`"))))
        .collect()
}

pub fn read_basis(text: &str) -> Result<SpectralBasis> {
    // Validate the checksum before interpreting anything else.
    let body_end = text
        .rfind("checksum sha256 ")
        .ok_or_else(|| Error::Checksum {
            stored: "<missing>".into(),
            computed: sha256_hex(text),
        })?;
    let (body, tail) = text.split_at(body_end);
    let stored = tail
        .trim()
        .strip_prefix("checksum sha256 ")
        .unwrap_or_default()
        .to_string();
    let computed = sha256_hex(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let mut lines = body.lines().enumerate().map(|(i, l)| (i + 1, l));
    let (_, header) = lines.next().ok_or_else(|| ferr(1, "empty input"))?;
    let rest = header
        .strip_prefix(SPECTRAL_HEADER)
        .ok_or_else(|| ferr(1, "expected `mms-spectral v1` header"))?;
    let mut t = rest.split_whitespace();
    let scheme = t
        .next()
        .and_then(Scheme::from_tag)
        .ok_or_else(|| ferr(1, "unknown scheme"))?;
    let n: usize = t
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| ferr(1, "bad point count"))?;
    let k: usize = t
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| ferr(1, "bad mode count"))?;

    let mut lattice = None;
    let mut eigenvalues = Vec::new();
    let mut weights = Vec::new();
    let mut modes = Vec::new();
    let mut vectors = vec![0.0; n * k];
    let mut rows_seen = 0;
    for (ln, line) in lines {
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("lattice") => {
                let rest: Vec<&str> = toks.collect();
                if rest != ["-"] {
                    lattice = Some(
                        rest.iter()
                            .map(|v| v.parse::<usize>().map_err(|_| ferr(ln, "bad axis")))
                            .collect::<Result<Vec<_>>>()?,
                    );
                }
            }
            Some("lambda") => eigenvalues = floats(toks, ln)?,
            Some("w") => weights = floats(toks, ln)?,
            Some("mode") => {
                let v: Vec<&str> = toks.collect();
                if v.len() != 6 {
                    return Err(ferr(ln, "mode line needs 6 fields"));
                }
                let mut kk = [0i64; 4];
                for a in 0..4 {
                    kk[a] = v[a].parse().map_err(|_| ferr(ln, "bad wave vector"))?;
                }
                let phase = match v[4] {
                    "c" => Phase::Cos,
                    "s" => Phase::Sin,
                    _ => return Err(ferr(ln, "bad phase")),
                };
                let amplitude = v[5].parse().map_err(|_| ferr(ln, "bad amplitude"))?;
                modes.push(FourierMode {
                    k: kk,
                    phase,
                    amplitude,
                });
            }
            Some("row") => {
                let x: usize = toks
                    .next()
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| ferr(ln, "bad row id"))?;
                let vals = floats(toks, ln)?;
                if x >= n || vals.len() != k {
                    return Err(ferr(ln, "row out of range or wrong width"));
                }
                for (i, v) in vals.into_iter().enumerate() {
                    vectors[i * n + x] = v;
                }
                rows_seen += 1;
            }
            Some(other) => return Err(ferr(ln, format!("unexpected record `{other}`"))),
            None => {}
        }
    }
    if eigenvalues.len() != k || weights.len() != n || rows_seen != n {
        return Err(ferr(0, "incomplete basis table"));
    }
    if !modes.is_empty() && modes.len() != k {
        return Err(ferr(0, "mode table does not match the mode count"));
    }
    Ok(SpectralBasis {
        scheme,
        eigenvalues,
        vectors,
        weights,
        modes: (!modes.is_empty()).then_some(modes),
        lattice,
    })
}

/// Loads a cached basis and checks that it belongs to `space`.
pub fn read_basis_for(space: &MetricMeasureSpace, text: &str) -> Result<SpectralBasis> {
    let basis = read_basis(text)?;
    if basis.npoints() != space.npoints() {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: basis.npoints(),
        });
    }
    if basis.lattice() != space.chart().lattice().as_deref() && basis.lattice().is_some() {
        return Err(Error::DimensionMismatch {
            expected: space.npoints(),
            found: basis.npoints(),
        });
    }
    let same_weights = basis
        .weights()
        .iter()
        .zip(space.weights())
        .all(|(a, b)| (a - b).abs() <= 1e-15 * b.abs().max(1.0));
    if !same_weights {
        return Err(Error::Config("cached basis weights differ from the space".into()));
    }
    Ok(basis)
}
