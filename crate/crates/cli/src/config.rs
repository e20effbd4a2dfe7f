//! Run configuration and phantom files.
//!
//! Files and flags use millimeters, kilohertz and millitesla; everything is
//! converted to SI before reaching the library:
//!
//! | field suffix | unit  | SI factor |
//! |--------------|-------|-----------|
//! | `_mm`        | mm    | 1e-3 m    |
//! | `_mm_per_s`  | mm/s  | 1e-3 m/s  |
//! | `_khz`       | kHz   | 1e3 Hz    |
//! | `_mt`        | mT    | 1e-3 T    |
//! | `_t_per_m`   | T/m   | 1         |
//! | `_per_t`     | 1/T   | 1         |

use std::path::{Path, PathBuf};

use ndarray::Array3;
use serde::{Deserialize, Serialize};

use mh3d_core::forward::ForwardOptions;
use mh3d_core::physics::{Phantom, PointSource, ScannerConfig, Sensitivity};
use mh3d_core::portrait::{portrait_mesh, PhaseMode, WindowKind, WindowSpec};
use mh3d_core::psfgen::{PsfOptions, TRUNCATION_THRESHOLD};
use mh3d_core::solve::{LambdaScale, SolverConfig};
use mh3d_core::Mesh;

use crate::error::{CliError, CliResult};
use crate::io::read_json;
use crate::tensor::read_volume;

pub const MM: f64 = 1e-3;
pub const KHZ: f64 = 1e3;
pub const MT: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScannerSection {
    pub gradient_t_per_m: [[f64; 3]; 3],
    pub drive_frequency_khz: f64,
    pub drive_amplitude_mt: f64,
    pub beta_per_t: f64,
    pub sample_rate_khz: f64,
    pub shift_rate_mm_per_s: f64,
    pub slab_z_mm: Vec<f64>,
    pub fov_mm: [f64; 3],
    pub magnetic_moment: f64,
    pub raster_lines: usize,
    pub max_harmonic: usize,
    pub sampling_phase_rad: f64,
}

impl Default for ScannerSection {
    fn default() -> Self {
        ScannerSection::from_si(&ScannerConfig::default())
    }
}

impl ScannerSection {
    pub fn from_si(c: &ScannerConfig) -> Self {
        ScannerSection {
            gradient_t_per_m: c.gradient_matrix,
            drive_frequency_khz: c.drive_frequency / KHZ,
            drive_amplitude_mt: c.drive_amplitude / MT,
            beta_per_t: c.beta,
            sample_rate_khz: c.sample_rate / KHZ,
            shift_rate_mm_per_s: c.shift_rate / MM,
            slab_z_mm: c.z_slab_positions.iter().map(|z| z / MM).collect(),
            fov_mm: c.fov.map(|v| v / MM),
            magnetic_moment: c.magnetic_moment,
            raster_lines: c.raster_lines,
            max_harmonic: c.max_harmonic,
            sampling_phase_rad: c.sampling_phase,
        }
    }

    pub fn to_si(&self) -> ScannerConfig {
        ScannerConfig {
            gradient_matrix: self.gradient_t_per_m,
            drive_frequency: self.drive_frequency_khz * KHZ,
            drive_amplitude: self.drive_amplitude_mt * MT,
            beta: self.beta_per_t,
            sample_rate: self.sample_rate_khz * KHZ,
            shift_rate: self.shift_rate_mm_per_s * MM,
            z_slab_positions: self.slab_z_mm.iter().map(|z| z * MM).collect(),
            fov: self.fov_mm.map(|v| v * MM),
            magnetic_moment: self.magnetic_moment,
            raster_lines: self.raster_lines,
            max_harmonic: self.max_harmonic,
            sampling_phase: self.sampling_phase_rad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsfSourceKind {
    Analytic,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PsfSection {
    pub source: PsfSourceKind,
    /// Kernel mesh size `[x, y, z]`, odd; spacing follows the reconstruction mesh.
    pub shape: [usize; 3],
    pub truncation: Option<f64>,
    pub remove_column_mean: bool,
}

impl Default for PsfSection {
    fn default() -> Self {
        PsfSection {
            source: PsfSourceKind::Analytic,
            shape: [21, 21, 21],
            truncation: Some(TRUNCATION_THRESHOLD),
            remove_column_mean: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseChoice {
    Estimate,
    Raw,
    Drive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PortraitSection {
    pub window: WindowKind,
    /// Half bandwidth of the band window; `null` means `f0/2`.
    pub bandwidth_khz: Option<f64>,
    pub phase: PhaseChoice,
}

impl Default for PortraitSection {
    fn default() -> Self {
        PortraitSection { window: WindowKind::Hann, bandwidth_khz: None, phase: PhaseChoice::Estimate }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    pub lambda: f64,
    pub alpha: f64,
    pub iterations: usize,
    /// Padding in voxels per side; `null` uses the kernel half-extent.
    pub pad: Option<usize>,
    pub boundary_margin: usize,
    pub nonneg: bool,
    pub lambda_scale: LambdaScale,
    pub tolerance: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        SolverSection {
            lambda: s.lambda,
            alpha: s.alpha,
            iterations: s.max_iterations,
            pad: None,
            boundary_margin: s.boundary_margin,
            nonneg: s.nonneg,
            lambda_scale: s.lambda_scale,
            tolerance: s.tolerance,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MhadSection {
    pub lambda: f64,
}

impl Default for MhadSection {
    fn default() -> Self {
        MhadSection { lambda: 1e-3 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub scanner: ScannerSection,
    pub harmonics: Vec<usize>,
    /// Reconstruction mesh z spacing.
    pub fine_dz_mm: f64,
    pub portrait: PortraitSection,
    pub psf: PsfSection,
    pub solver: SolverSection,
    pub mhad: MhadSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            scanner: ScannerSection::default(),
            harmonics: vec![2, 3, 4, 5],
            fine_dz_mm: 1.0,
            portrait: PortraitSection::default(),
            psf: PsfSection::default(),
            solver: SolverSection::default(),
            mhad: MhadSection::default(),
        }
    }
}

impl RunConfig {
    /// Loads a config file; `None` gives the built-in preset.
    pub fn load(path: Option<&Path>) -> CliResult<RunConfig> {
        let cfg = match path {
            Some(p) => read_json(p)?,
            None => RunConfig::default(),
        };
        cfg.scanner().validate()?;
        Ok(cfg)
    }

    pub fn scanner(&self) -> ScannerConfig {
        self.scanner.to_si()
    }

    pub fn window(&self) -> WindowSpec {
        let f0 = self.scanner.drive_frequency_khz * KHZ;
        WindowSpec {
            kind: self.portrait.window,
            half_bandwidth: self.portrait.bandwidth_khz.map_or(f0 / 2.0, |b| b * KHZ),
        }
    }

    pub fn phase_mode(&self) -> PhaseMode {
        match self.portrait.phase {
            PhaseChoice::Estimate => PhaseMode::Estimate,
            PhaseChoice::Raw => PhaseMode::Raw,
            PhaseChoice::Drive => PhaseMode::Drive,
        }
    }

    /// Fine reconstruction mesh: portrait `xy` grid, `fine_dz` planes over the FOV depth.
    pub fn recon_mesh(&self) -> CliResult<Mesh> {
        let c = self.scanner();
        let p = portrait_mesh(&c, None)?;
        let dz = self.fine_dz_mm * MM;
        if !(dz > 0.0) {
            return Err(CliError::Usage(format!("fine_dz_mm must be positive, got {}", self.fine_dz_mm)));
        }
        let nz = (c.fov[2] / dz).round() as usize + 1;
        Ok(Mesh::new([p.shape[0], p.shape[1], nz], [p.spacing[0], p.spacing[1], dz], [p.origin[0], p.origin[1], -c.fov[2] / 2.0])?)
    }

    pub fn psf_mesh(&self) -> CliResult<Mesh> {
        let r = self.recon_mesh()?;
        Ok(Mesh::centered(self.psf.shape, r.spacing)?)
    }

    pub fn psf_options(&self) -> PsfOptions {
        PsfOptions {
            truncation: self.psf.truncation,
            remove_column_mean: self.psf.remove_column_mean,
            window: Some(self.window()),
            phase: self.phase_mode(),
            ..PsfOptions::default()
        }
    }

    pub fn solver(&self) -> SolverConfig {
        let s = &self.solver;
        SolverConfig {
            lambda: s.lambda,
            alpha: s.alpha,
            boundary_margin: s.boundary_margin,
            max_iterations: s.iterations,
            tolerance: s.tolerance,
            nonneg: s.nonneg,
            lambda_scale: s.lambda_scale,
            ..SolverConfig::default()
        }
    }

    pub fn forward_options(&self) -> ForwardOptions {
        ForwardOptions { pad: self.solver.pad, ..ForwardOptions::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointEntry {
    pub position_mm: [f64; 3],
    #[serde(default = "unit")]
    pub weight: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoxelEntry {
    /// `.mh3d` volume `(z, y, x)`, relative to the phantom file.
    pub tensor: PathBuf,
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

/// Phantom description: either point sources or a voxel volume.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomFile {
    #[serde(default)]
    pub points: Vec<PointEntry>,
    #[serde(default)]
    pub voxels: Option<VoxelEntry>,
    /// Uniform receive sensitivity `b1`; default `[0, 0, 1]`.
    #[serde(default)]
    pub sensitivity: Option<[f64; 3]>,
}

impl PhantomFile {
    pub fn load(path: &Path) -> CliResult<Phantom> {
        if !path.exists() {
            return Err(CliError::Usage(format!("phantom file not found: {}", path.display())));
        }
        let f: PhantomFile = read_json(path)?;
        let phantom = match (&f.voxels, f.points.is_empty()) {
            (Some(v), true) => {
                let tpath = path.parent().unwrap_or(Path::new(".")).join(&v.tensor);
                let values: Array3<f64> = read_volume(&tpath)?;
                let (nz, ny, nx) = values.dim();
                let mesh = Mesh::new([nx, ny, nz], v.spacing_mm.map(|s| s * MM), v.origin_mm.map(|s| s * MM))?;
                Phantom::voxels(mesh, values)
            }
            (None, false) => Phantom::points(
                f.points
                    .iter()
                    .map(|p| PointSource { position: p.position_mm.map(|v| v * MM), weight: p.weight })
                    .collect(),
            ),
            (Some(_), false) => {
                return Err(CliError::Usage(format!("{}: give either points or voxels, not both", path.display())))
            }
            (None, true) => return Err(CliError::Usage(format!("{}: phantom is empty", path.display()))),
        };
        let phantom = match f.sensitivity {
            Some(b) => phantom.with_sensitivity(Sensitivity::Uniform(b)),
            None => phantom,
        };
        phantom.validate()?;
        Ok(phantom)
    }
}

/// Parses `a:b` (inclusive) or a comma list into harmonic numbers.
pub fn parse_harmonics(s: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::Usage(format!("invalid harmonic list '{s}' (use 2:5 or 2,3,5)"));
    let out: Vec<usize> = if let Some((a, b)) = s.split_once(':') {
        let a: usize = a.trim().parse().map_err(|_| bad())?;
        let b: usize = b.trim().parse().map_err(|_| bad())?;
        if b < a {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if out.is_empty() || out.iter().any(|&k| k < 2) {
        return Err(bad());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unit_roundtrip() {
        let si = ScannerConfig::default();
        let back = ScannerSection::from_si(&si).to_si();
        assert!((back.drive_frequency - si.drive_frequency).abs() < 1e-6);
        assert!((back.drive_amplitude - si.drive_amplitude).abs() < 1e-15);
        assert!((back.fov[0] - si.fov[0]).abs() < 1e-15);
        assert!((back.shift_rate - si.shift_rate).abs() < 1e-12);
        let s = ScannerSection::default();
        assert!((s.drive_frequency_khz - 25.0).abs() < 1e-12);
        assert!((s.fov_mm[0] - 48.0).abs() < 1e-9);
    }

    #[test]
    fn harmonic_lists() {
        assert_eq!(parse_harmonics("2:5").unwrap(), vec![2, 3, 4, 5]);
        assert_eq!(parse_harmonics("3:3").unwrap(), vec![3]);
        assert_eq!(parse_harmonics("2, 4").unwrap(), vec![2, 4]);
        assert!(parse_harmonics("5:2").is_err());
        assert!(parse_harmonics("1:3").is_err());
        assert!(parse_harmonics("x").is_err());
    }

    #[test]
    fn default_meshes_line_up() {
        let c = RunConfig::default();
        let m = c.recon_mesh().unwrap();
        assert_eq!(m.shape, [49, 49, 41]);
        let s = c.scanner();
        for z in &s.z_slab_positions {
            let f = m.fractional_index(2, *z);
            assert!((f - f.round()).abs() < 1e-9);
        }
        assert_eq!(c.psf_mesh().unwrap().spacing, m.spacing);
    }
}
