//! Multi-harmonic 3D deconvolution (MH3D) for magnetic particle imaging.
//!
//! The crate covers the whole reconstruction chain for a field-free-point
//! scanner with a single-axis (`z`) drive:
//!
//! * [`physics`]: Langevin magnetization, FFP trajectory, PSF tensor.
//! * [`simulate`]: time-domain receive signals for point and voxel phantoms.
//! * [`portrait`]: harmonic filtering, gridding into harmonic portraits, phase calibration.
//! * [`psfgen`]: simulated and analytic harmonic PSFs, Taylor-expansion checks.
//! * [`forward`]: the matrix-free operator `A = P H B` and its adjoint.
//! * [`solve`]: accelerated projected gradient reconstruction.
//! * [`mhad`]: closed-form multi-harmonic anti-differentiation.
//! * [`analyze`]: resolution and SNR metrics, slice export.

pub mod analyze;
pub mod error;
pub mod fft;
pub mod forward;
pub mod mesh;
pub mod mhad;
pub mod physics;
pub mod portrait;
pub mod psfgen;
pub mod simulate;
pub mod solve;

pub use error::{Error, Result};
pub use mesh::Mesh;
