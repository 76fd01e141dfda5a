use super::basis::SpectralBasis;
use crate::error::{invalid, Result};

/// `p_t(x, y) = Σ_i e^{−λ_i t} u_i(x) u_i(y)`.
pub fn heat_kernel(basis: &SpectralBasis, t: f64, x: usize, y: usize) -> Result<f64> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("{t} must be positive")));
    }
    let n = basis.npoints();
    if x >= n || y >= n {
        return Err(crate::Error::UnknownPoint(x.max(y)));
    }
    Ok(kernel_unchecked(basis, t, x, y))
}

pub(crate) fn kernel_unchecked(basis: &SpectralBasis, t: f64, x: usize, y: usize) -> f64 {
    let n = basis.npoints();
    let v = &basis.vectors;
    // symmetric accumulation order so that p_t(x,y) == p_t(y,x) bitwise
    let (a, b) = if x <= y { (x, y) } else { (y, x) };
    basis
        .eigenvalues
        .iter()
        .enumerate()
        .map(|(i, lam)| (-lam * t).exp() * v[i * n + a] * v[i * n + b])
        .sum()
}

/// Row `y ↦ p_t(x, y)`.
pub fn heat_kernel_row(basis: &SpectralBasis, t: f64, x: usize) -> Result<Vec<f64>> {
    if !(t > 0.0) {
        return Err(invalid("t", format!("{t} must be positive")));
    }
    let coeffs: Vec<f64> = (0..basis.len())
        .map(|i| (-basis.eigenvalue(i) * t).exp() * basis.u(i, x))
        .collect();
    Ok(basis.synthesize(&coeffs))
}

/// `P_t f = Σ e^{−λ_i t} ⟨f, u_i⟩ u_i`.
pub fn heat_semigroup_apply(basis: &SpectralBasis, t: f64, f: &[f64]) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(invalid("t", format!("{t} must be nonnegative")));
    }
    if f.len() != basis.npoints() {
        return Err(crate::Error::DimensionMismatch {
            expected: basis.npoints(),
            found: f.len(),
        });
    }
    let coeffs: Vec<f64> = basis
        .project(f)
        .iter()
        .zip(basis.eigenvalues())
        .map(|(c, lam)| c * (-lam * t).exp())
        .collect();
    Ok(basis.synthesize(&coeffs))
}

/// `Σ_i e^{−λ_i t}`.
pub fn heat_trace(basis: &SpectralBasis, t: f64) -> f64 {
    basis.eigenvalues().iter().map(|l| (-l * t).exp()).sum()
}

/// One-dimensional theta sum `Σ_{k∈Z} e^{−4π²k²t} cos(2πkδ)`, the heat
/// kernel of the unit circle.
pub fn theta_circle(t: f64, delta: f64) -> f64 {
    let four_pi2 = 4.0 * std::f64::consts::PI * std::f64::consts::PI;
    let mut s = 1.0;
    let mut k = 1i64;
    loop {
        let term = (-four_pi2 * (k * k) as f64 * t).exp();
        if term < 1e-18 {
            break;
        }
        s += 2.0 * term * (2.0 * std::f64::consts::PI * k as f64 * delta).cos();
        k += 1;
    }
    s
}
