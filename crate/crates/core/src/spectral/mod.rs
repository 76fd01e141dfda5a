//! Discrete Laplacians, their eigendecomposition, and the heat semigroup
//! in spectral form.

mod basis;
mod checks;
pub mod io;
mod heat;
mod laplacian;

pub use basis::{default_k_max, eigendecompose, FourierMode, Phase, SpectralBasis};
pub use checks::{
    eigenfunction_bounds, verify_bakry_emery, verify_gaussian_bounds, BakryEmeryReport,
    EigenfunctionBoundReport, EigenfunctionBoundRow, HeatKernelReport,
};
pub use heat::{heat_kernel, heat_kernel_row, heat_semigroup_apply, heat_trace, theta_circle};
pub use laplacian::{assemble_laplacian, LaplacianOperator, Scheme};
#[cfg(test)]
pub(crate) use laplacian::winner;

use crate::error::Result;
use crate::space::MetricMeasureSpace;

/// Exact basis on lattice charts, calibrated graph basis elsewhere.
pub fn default_basis(
    space: &MetricMeasureSpace,
    k_max: usize,
    bandwidth: Option<f64>,
) -> Result<SpectralBasis> {
    let op = if space.chart().lattice().is_some() {
        assemble_laplacian(space, Scheme::TorusFourierExact, None)?
    } else {
        let bw = bandwidth.unwrap_or(2.0 * space.grid_spacing());
        assemble_laplacian(space, Scheme::GraphGaussian, Some(bw))?
    };
    eigendecompose(&op, k_max)
}
