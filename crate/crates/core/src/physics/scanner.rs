use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reference gradient strength along the drive axis, T/m.
pub const REFERENCE_GRADIENT: f64 = 0.554;

/// Scanner and tracer parameters, SI units throughout.
///
/// The drive is a real sinusoid along `z`; the focus field rasters a
/// serpentine in the `xy` plane of each z-slab at constant line speed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScannerConfig {
    /// Static gradient matrix `G`, T/m (row major).
    pub gradient_matrix: [[f64; 3]; 3],
    /// Drive frequency `f0`, Hz.
    pub drive_frequency: f64,
    /// Drive field amplitude `B_ex`, T.
    pub drive_amplitude: f64,
    /// Tracer constant `beta`, 1/T.
    pub beta: f64,
    /// Receive sample rate, Hz.
    pub sample_rate: f64,
    /// Focus-field line speed, m/s.
    pub shift_rate: f64,
    /// Slab centers along z, m. Strictly increasing and equally spaced.
    pub z_slab_positions: Vec<f64>,
    /// Field of view extents `(x, y, z)`, m, centered on the origin.
    pub fov: [f64; 3],
    /// Magnetic moment scaling `m` (arbitrary units by default).
    pub magnetic_moment: f64,
    /// Number of serpentine raster lines covering the `y` extent.
    pub raster_lines: usize,
    /// Largest harmonic the receive chain must resolve.
    pub max_harmonic: usize,
    /// Sampling phase within the drive period, in periods. `0` selects the
    /// positive-going zero crossing of the drive.
    #[serde(default)]
    pub sampling_phase: f64,
}

impl Default for ScannerConfig {
    /// Reference 3D FFP scanner: `G = G0 diag(1/2, 1/2, 1)` with
    /// `G0 = 0.554 T/m`. Drive, tracer and timing values are desk-scale
    /// defaults (`gamma*A = 3`, 16 samples and 16 drive periods per mm of
    /// raster travel).
    fn default() -> Self {
        let g0 = REFERENCE_GRADIENT;
        let f0 = 25_000.0;
        ScannerConfig {
            gradient_matrix: [[g0 / 2.0, 0.0, 0.0], [0.0, g0 / 2.0, 0.0], [0.0, 0.0, g0]],
            drive_frequency: f0,
            drive_amplitude: 3.0 / (2000.0),
            beta: 2000.0,
            sample_rate: 16.0 * f0,
            shift_rate: 1e-3 * f0 / 16.0,
            z_slab_positions: (0..9).map(|j| -0.02 + 0.005 * j as f64).collect(),
            fov: [0.048, 0.048, 0.040],
            magnetic_moment: 1.0,
            raster_lines: 49,
            max_harmonic: 7,
            sampling_phase: 0.0,
        }
    }
}

impl ScannerConfig {
    /// Gradient along the drive axis, `G_zz`.
    pub fn drive_gradient(&self) -> f64 {
        self.gradient_matrix[2][2]
    }

    /// FFP excursion `A = B_ex / G_zz`, m.
    pub fn excursion(&self) -> f64 {
        self.drive_amplitude / self.drive_gradient()
    }

    /// `gamma = beta * G_zz`, 1/m.
    pub fn gamma(&self) -> f64 {
        self.beta * self.drive_gradient()
    }

    /// Dimensionless drive strength `gamma * A = beta * B_ex`.
    pub fn gamma_a(&self) -> f64 {
        self.gamma() * self.excursion()
    }

    pub fn drive_period(&self) -> f64 {
        1.0 / self.drive_frequency
    }

    pub fn samples_per_period(&self) -> usize {
        (self.sample_rate / self.drive_frequency).round() as usize
    }

    pub fn slab_spacing(&self) -> Option<f64> {
        if self.z_slab_positions.len() < 2 {
            None
        } else {
            Some(self.z_slab_positions[1] - self.z_slab_positions[0])
        }
    }

    /// Raster line spacing along `y`, m.
    pub fn line_spacing(&self) -> f64 {
        if self.raster_lines < 2 {
            0.0
        } else {
            self.fov[1] / (self.raster_lines - 1) as f64
        }
    }

    /// Checks parameter ranges without the acquisition-design invariants.
    pub fn validate_physics(&self) -> Result<()> {
        let finite = self
            .gradient_matrix
            .iter()
            .flatten()
            .chain([
                &self.drive_frequency,
                &self.drive_amplitude,
                &self.beta,
                &self.sample_rate,
                &self.shift_rate,
                &self.magnetic_moment,
                &self.sampling_phase,
            ])
            .chain(self.fov.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Config("non-finite scanner parameter".into()));
        }
        if !(self.drive_gradient() > 0.0) {
            return Err(Error::Config("gradient along the drive axis must be positive".into()));
        }
        for (name, v) in [
            ("drive_frequency", self.drive_frequency),
            ("beta", self.beta),
            ("sample_rate", self.sample_rate),
            ("shift_rate", self.shift_rate),
        ] {
            if !(v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.drive_amplitude < 0.0 {
            return Err(Error::Config("drive_amplitude must be non-negative".into()));
        }
        if self.fov.iter().any(|&v| v < 0.0) {
            return Err(Error::Config("fov extents must be non-negative".into()));
        }
        if self.raster_lines == 0 {
            return Err(Error::Config("raster_lines must be at least 1".into()));
        }
        let spp = self.sample_rate / self.drive_frequency;
        if (spp - spp.round()).abs() > 1e-9 * spp {
            return Err(Error::Config(format!(
                "sample_rate must be an integer multiple of drive_frequency (ratio {spp})"
            )));
        }
        if self.max_harmonic < 1 {
            return Err(Error::Config("max_harmonic must be at least 1".into()));
        }
        if self.sample_rate <= 2.0 * self.max_harmonic as f64 * self.drive_frequency {
            return Err(Error::Nyquist(format!(
                "sample rate {} Hz does not exceed 2 * {} * f0",
                self.sample_rate, self.max_harmonic
            )));
        }
        Ok(())
    }

    /// Full validation, including slab ordering and the overlap condition
    /// `dz < 2A` between neighboring slabs.
    pub fn validate(&self) -> Result<()> {
        self.validate_physics()?;
        let z = &self.z_slab_positions;
        if z.is_empty() {
            return Err(Error::Config("no z-slab positions".into()));
        }
        if let Some(dz) = self.slab_spacing() {
            for w in z.windows(2) {
                let step = w[1] - w[0];
                if !(step > 0.0) {
                    return Err(Error::Config("z_slab_positions must be strictly increasing".into()));
                }
                if (step - dz).abs() > 1e-6 * dz.abs().max(1e-12) {
                    return Err(Error::Config("z_slab_positions must be equally spaced".into()));
                }
            }
            if dz >= 2.0 * self.excursion() {
                return Err(Error::Config(format!(
                    "slab spacing {dz} m does not satisfy dz < 2A = {} m",
                    2.0 * self.excursion()
                )));
            }
        }
        Ok(())
    }

    /// Copy with the slab list replaced.
    pub fn with_slabs(&self, z: Vec<f64>) -> ScannerConfig {
        ScannerConfig {
            z_slab_positions: z,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_preset_is_reference_gradient() {
        let c = ScannerConfig::default();
        let g = c.gradient_matrix;
        assert_eq!(g[0][0], 0.277);
        assert_eq!(g[1][1], 0.277);
        assert_eq!(g[2][2], 0.554);
        assert!(g[0][1] == 0.0 && g[1][2] == 0.0 && g[0][2] == 0.0);
        c.validate().unwrap();
        assert!((c.gamma_a() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn overlap_condition_enforced() {
        let mut c = ScannerConfig::default();
        c.z_slab_positions = vec![0.0, 0.02];
        assert!(c.validate().is_err());
    }

    #[test]
    fn nyquist_enforced() {
        let mut c = ScannerConfig::default();
        c.max_harmonic = 8;
        assert!(matches!(c.validate(), Err(Error::Nyquist(_))));
    }

    #[test]
    fn slabs_must_be_uniform() {
        let mut c = ScannerConfig::default();
        c.z_slab_positions = vec![0.0, 0.001, 0.003];
        assert!(c.validate().is_err());
        c.z_slab_positions = vec![0.002, 0.001];
        assert!(c.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let c = ScannerConfig::default();
        let s = serde_json::to_string(&c).unwrap();
        let back: ScannerConfig = serde_json::from_str(&s).unwrap();
        assert_eq!(c, back);
    }
}
