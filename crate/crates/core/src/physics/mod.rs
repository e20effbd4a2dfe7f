//! Langevin magnetization, scanner fields, FFP trajectory and the MPI PSF tensor.

mod langevin;
mod phantom;
mod scanner;
mod tensor;
mod trajectory;

pub use langevin::{
    langevin, langevin_closed_form, langevin_derivative, langevin_prime_complex, langevin_series,
    MAX_DERIVATIVE_ORDER, SERIES_SWITCH,
};
pub use phantom::{Density, Phantom, PointSource, Sensitivity};
pub use scanner::{ScannerConfig, REFERENCE_GRADIENT};
pub use tensor::{h33, psf_tensor, psf_tensor_with, Mat3, SINGULAR_FIELD};
pub use trajectory::{
    ffp_position, ffp_velocity, raster_segment, slab_duration, slab_samples, Raster, Segment,
};
