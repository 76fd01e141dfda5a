use super::laplacian::{LaplacianOperator, Repr, Scheme};
use crate::error::{invalid, Error, Result};
use crate::space::chart::{self, Coords, ZERO};
use nalgebra::DMatrix;
use std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Cos,
    Sin,
}

/// Real Fourier mode `amplitude · cos(2π k·x)` or `amplitude · sin(2π k·x)`
/// on a periodic lattice chart.
#[derive(Clone, Debug, PartialEq)]
pub struct FourierMode {
    pub k: [i64; 4],
    pub phase: Phase,
    pub amplitude: f64,
}

impl FourierMode {
    fn arg(&self, p: &Coords) -> f64 {
        2.0 * PI * (0..4).map(|a| self.k[a] as f64 * p[a]).sum::<f64>()
    }

    pub fn eigenvalue(&self) -> f64 {
        4.0 * PI * PI * self.k.iter().map(|k| (k * k) as f64).sum::<f64>()
    }

    pub fn value(&self, p: &Coords) -> f64 {
        let a = self.arg(p);
        self.amplitude
            * match self.phase {
                Phase::Cos => a.cos(),
                Phase::Sin => a.sin(),
            }
    }

    pub fn gradient(&self, p: &Coords) -> Coords {
        let a = self.arg(p);
        let c = 2.0 * PI * self.amplitude
            * match self.phase {
                Phase::Cos => -a.sin(),
                Phase::Sin => a.cos(),
            };
        let mut g = ZERO;
        for i in 0..4 {
            g[i] = c * self.k[i] as f64;
        }
        g
    }

    /// Value at a lattice node, with the phase reduced exactly.
    fn node_value(&self, axes: &[usize], m: &[usize]) -> f64 {
        let mut frac = 0.0;
        for (a, &na) in axes.iter().enumerate() {
            let r = (self.k[a] * m[a] as i64).rem_euclid(na as i64);
            frac += r as f64 / na as f64;
        }
        let ang = 2.0 * PI * (frac - frac.floor());
        self.amplitude
            * match self.phase {
                Phase::Cos => ang.cos(),
                Phase::Sin => ang.sin(),
            }
    }
}

/// Eigenpairs of `−Δ`: ascending eigenvalues with `L²(w)`-orthonormal
/// eigenfunctions, `u_0 ≡ 1`.
#[derive(Clone, Debug)]
pub struct SpectralBasis {
    pub(crate) scheme: Scheme,
    pub(crate) eigenvalues: Vec<f64>,
    /// Column-major: `u_i(x)` at `vectors[i * npoints + x]`.
    pub(crate) vectors: Vec<f64>,
    pub(crate) weights: Vec<f64>,
    /// Analytic form of every mode for exact lattice bases.
    pub(crate) modes: Option<Vec<FourierMode>>,
    pub(crate) lattice: Option<Vec<usize>>,
}

impl SpectralBasis {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn npoints(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, i: usize) -> f64 {
        self.eigenvalues[i]
    }

    pub fn eigenfunction(&self, i: usize) -> &[f64] {
        let n = self.npoints();
        &self.vectors[i * n..(i + 1) * n]
    }

    #[inline]
    pub fn u(&self, i: usize, x: usize) -> f64 {
        self.vectors[i * self.npoints() + x]
    }

    pub fn modes(&self) -> Option<&[FourierMode]> {
        self.modes.as_deref()
    }

    pub fn lattice(&self) -> Option<&[usize]> {
        self.lattice.as_deref()
    }

    /// True when every eigenfunction of the discrete operator is present.
    pub fn is_complete(&self) -> bool {
        self.len() == self.npoints()
    }

    /// Coefficients `⟨f, u_i⟩`.
    pub fn project(&self, f: &[f64]) -> Vec<f64> {
        assert_eq!(f.len(), self.npoints(), "function length mismatch");
        let fw: Vec<f64> = f.iter().zip(&self.weights).map(|(a, b)| a * b).collect();
        (0..self.len())
            .map(|i| {
                self.eigenfunction(i)
                    .iter()
                    .zip(&fw)
                    .map(|(u, v)| u * v)
                    .sum()
            })
            .collect()
    }

    /// `Σ c_i u_i`.
    pub fn synthesize(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.npoints()];
        for (i, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, u) in out.iter_mut().zip(self.eigenfunction(i)) {
                *o += c * u;
            }
        }
        out
    }

    /// Analytic gradient of `Σ c_i u_i` at a chart point (exact lattice bases).
    pub fn gradient_of_expansion(&self, coeffs: &[f64], p: &Coords) -> Option<Coords> {
        let modes = self.modes.as_ref()?;
        let mut g = ZERO;
        for (m, &c) in modes.iter().zip(coeffs) {
            if c != 0.0 {
                g = chart::axpy(&g, c, &m.gradient(p));
            }
        }
        Some(g)
    }

    /// Analytic value of `Σ c_i u_i` at a chart point (exact lattice bases).
    pub fn value_of_expansion(&self, coeffs: &[f64], p: &Coords) -> Option<f64> {
        let modes = self.modes.as_ref()?;
        Some(
            modes
                .iter()
                .zip(coeffs)
                .filter(|(_, c)| **c != 0.0)
                .map(|(m, c)| c * m.value(p))
                .sum(),
        )
    }
}

fn reduce(k: i64, n: usize) -> i64 {
    // representative in (−n/2, n/2]
    let n = n as i64;
    let r = k.rem_euclid(n);
    if r > n / 2 {
        r - n
    } else {
        r
    }
}

/// Real Fourier basis of a lattice, sorted by eigenvalue with a
/// deterministic tie-break.
fn lattice_modes(axes: &[usize]) -> Vec<FourierMode> {
    let total: usize = axes.iter().product();
    let mut out = Vec::with_capacity(total);
    for id in 0..total {
        let m = chart::lattice_multi_index(axes, id);
        let mut k = [0i64; 4];
        let mut neg = [0i64; 4];
        for (a, &na) in axes.iter().enumerate() {
            k[a] = reduce(m[a] as i64, na);
            neg[a] = reduce(-k[a], na);
        }
        if k == neg {
            out.push(FourierMode {
                k,
                phase: Phase::Cos,
                amplitude: 1.0,
            });
        } else if k > neg {
            let amp = std::f64::consts::SQRT_2;
            out.push(FourierMode {
                k,
                phase: Phase::Cos,
                amplitude: amp,
            });
            out.push(FourierMode {
                k,
                phase: Phase::Sin,
                amplitude: amp,
            });
        }
    }
    let key = |m: &FourierMode| m.k.iter().map(|v| v * v).sum::<i64>();
    out.sort_by(|a, b| {
        key(a)
            .cmp(&key(b))
            .then(b.k.cmp(&a.k))
            .then((a.phase == Phase::Sin).cmp(&(b.phase == Phase::Sin)))
    });
    out
}

fn fix_sign(v: &mut [f64]) -> bool {
    let scale = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-10 * scale) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
            return true;
        }
    }
    false
}

/// Eigendecomposition truncated to `k_max` modes. Exact lattice bases extend
/// the truncation so that degenerate eigenvalue clusters are never split.
pub fn eigendecompose(op: &LaplacianOperator, k_max: usize) -> Result<SpectralBasis> {
    let n = op.npoints();
    if k_max == 0 || k_max > n {
        return Err(invalid("k_max", format!("{k_max} not in 1..={n}")));
    }
    match &op.repr {
        Repr::Lattice { axes, .. } => {
            let mut modes = lattice_modes(axes);
            let key = |m: &FourierMode| m.k.iter().map(|v| v * v).sum::<i64>();
            let mut keep = k_max;
            while keep < modes.len() && key(&modes[keep]) == key(&modes[keep - 1]) {
                keep += 1;
            }
            modes.truncate(keep);
            let mut vectors = vec![0.0; keep * n];
            let multi: Vec<Vec<usize>> =
                (0..n).map(|id| chart::lattice_multi_index(axes, id)).collect();
            for (i, mode) in modes.iter_mut().enumerate() {
                let col = &mut vectors[i * n..(i + 1) * n];
                for (x, m) in multi.iter().enumerate() {
                    col[x] = mode.node_value(axes, m);
                }
                if fix_sign(col) {
                    mode.amplitude = -mode.amplitude;
                }
            }
            Ok(SpectralBasis {
                scheme: op.scheme,
                eigenvalues: modes.iter().map(FourierMode::eigenvalue).collect(),
                vectors,
                weights: op.weights.clone(),
                modes: Some(modes),
                lattice: Some(axes.clone()),
            })
        }
        Repr::Dense(s) => {
            let sq: Vec<f64> = op.weights.iter().map(|w| w.sqrt()).collect();
            let m = DMatrix::from_fn(n, n, |i, j| s[(i, j)] / (sq[i] * sq[j]));
            let m = (&m + m.transpose()) * 0.5;
            let eig = m
                .try_symmetric_eigen(1e-14, 10_000)
                .ok_or_else(|| Error::Eigensolver("symmetric QR did not converge".into()))?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| {
                eig.eigenvalues[a]
                    .total_cmp(&eig.eigenvalues[b])
                    .then(a.cmp(&b))
            });
            let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, b| a.max(b.abs()));
            let tol = 1e-9 * lam_max.max(1.0);
            if n > 1 && eig.eigenvalues[order[1]] <= tol {
                return Err(Error::Construction(
                    "second eigenvalue vanishes; operator is disconnected".into(),
                ));
            }
            let mut eigenvalues = Vec::with_capacity(k_max);
            let mut vectors = vec![0.0; k_max * n];
            for (i, &c) in order.iter().take(k_max).enumerate() {
                let col = &mut vectors[i * n..(i + 1) * n];
                if i == 0 {
                    col.iter_mut().for_each(|v| *v = 1.0);
                    eigenvalues.push(0.0);
                    continue;
                }
                for x in 0..n {
                    col[x] = eig.eigenvectors[(x, c)] / sq[x];
                }
                fix_sign(col);
                eigenvalues.push(eig.eigenvalues[c].max(0.0));
            }
            Ok(SpectralBasis {
                scheme: op.scheme,
                eigenvalues,
                vectors,
                weights: op.weights.clone(),
                modes: None,
                lattice: None,
            })
        }
    }
}

/// Default truncation order `min(npoints, 400)`.
pub fn default_k_max(npoints: usize) -> usize {
    npoints.min(400)
}
