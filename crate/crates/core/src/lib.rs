//! Numerical laboratory for heat kernels, Green functions, maximal estimates,
//! Wasserstein contraction and regular Lagrangian flows on finite model
//! metric measure spaces.

pub mod error;
pub mod space;
pub mod spectral;
pub mod green;
pub mod fields;
pub mod flows;
pub mod transport;
pub mod cli;

pub use error::{Error, Result};
