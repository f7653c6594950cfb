//! Spectral solver for steady Navier-Stokes flow in a half-plane with a small compactly
//! supported force: Fourier modes in x, exponential kernels in y, Picard iteration on the
//! vorticity, and direct-space reconstruction of fields, pressure and decay rates.

pub mod bounds;
pub mod convolution;
pub mod direct;
pub mod error;
pub mod expint;
pub mod force;
pub mod kernels;
pub mod oracle;
pub mod pressure;
pub mod report;
pub mod solver;
pub mod spectral;

pub use error::{Error, Result};
pub use report::BoundReport;
pub use spectral::{ModeField, SpectralGrid, WeightEnvelope, C64};
