//! Command-line driver for the mh3d toolkit: run configuration in
//! millimeters and kilohertz, the `.mh3d` tensor container with JSON
//! sidecars, and one function per command.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod tensor;

pub use error::{CliError, CliResult};
