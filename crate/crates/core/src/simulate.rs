//! Time-domain receive signals.
//!
//! For a point-source density the unfiltered signal of slab `j` is
//!
//! ```text
//! s0(t) = m * sum_n rho_n * v(t)ᵀ h(xi(t) - x_n) b1(x_n)
//! ```
//!
//! with `h` the PSF tensor, `v` the FFP velocity and `xi` the FFP position.
//! Voxel phantoms use the same sum over voxel centers with weight
//! `value * dx*dy*dz` (midpoint quadrature).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::{
    ffp_position, ffp_velocity, psf_tensor_with, slab_duration, slab_samples, Phantom,
    ScannerConfig,
};

/// Real receive signal of one slab.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSignal {
    pub samples: Vec<f64>,
    pub sample_rate: f64,
    pub slab_index: usize,
    pub duration: f64,
}

impl TimeSignal {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn time(&self, i: usize) -> f64 {
        i as f64 / self.sample_rate
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }
}

/// Simulates the noise-free signal of one slab.
pub fn simulate_signal(phantom: &Phantom, cfg: &ScannerConfig, slab_index: usize) -> Result<TimeSignal> {
    cfg.validate_physics()?;
    phantom.validate()?;
    if slab_index >= cfg.z_slab_positions.len() {
        return Err(Error::Range(format!("slab index {slab_index} out of range")));
    }
    let n = slab_samples(cfg);
    let fs = cfg.sample_rate;
    let sources: Vec<_> = phantom
        .quadrature_points()
        .into_iter()
        .filter(|p| p.weight != 0.0)
        .map(|p| (p, phantom.sensitivity.at(&p.position)))
        .collect();
    let g = cfg.gradient_matrix;
    let beta = cfg.beta;
    let m = cfg.magnetic_moment;

    let mut samples = vec![0.0; n];
    if !sources.is_empty() {
        samples
            .par_chunks_mut(4096)
            .enumerate()
            .try_for_each(|(c, chunk)| -> Result<()> {
                for (i, out) in chunk.iter_mut().enumerate() {
                    let t = (c * 4096 + i) as f64 / fs;
                    let xi = ffp_position(t, cfg, slab_index)?;
                    let v = ffp_velocity(t, cfg, slab_index)?;
                    let mut acc = 0.0;
                    for (src, b) in &sources {
                        let r = [
                            xi[0] - src.position[0],
                            xi[1] - src.position[1],
                            xi[2] - src.position[2],
                        ];
                        let h = psf_tensor_with(&r, &g, beta);
                        // vᵀ h b
                        let mut hb = [0.0; 3];
                        for (a, row) in h.iter().enumerate() {
                            hb[a] = row[0] * b[0] + row[1] * b[1] + row[2] * b[2];
                        }
                        acc += src.weight * (v[0] * hb[0] + v[1] * hb[1] + v[2] * hb[2]);
                    }
                    let s = m * acc;
                    if !s.is_finite() {
                        return Err(Error::NonFinite(format!("signal sample at t = {t}")));
                    }
                    *out = s;
                }
                Ok(())
            })?;
    }
    Ok(TimeSignal {
        samples,
        sample_rate: fs,
        slab_index,
        duration: slab_duration(cfg),
    })
}

/// Simulates every configured slab.
pub fn simulate_all_slabs(phantom: &Phantom, cfg: &ScannerConfig) -> Result<Vec<TimeSignal>> {
    (0..cfg.z_slab_positions.len())
        .map(|j| simulate_signal(phantom, cfg, j))
        .collect()
}

/// Adds i.i.d. Gaussian noise with standard deviation `noise_std`, seeded.
pub fn add_noise(signal: &TimeSignal, noise_std: f64, seed: u64) -> Result<TimeSignal> {
    if !(noise_std >= 0.0) {
        return Err(Error::Range(format!("noise_std must be >= 0, got {noise_std}")));
    }
    let mut out = signal.clone();
    if noise_std == 0.0 {
        return Ok(out);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, noise_std).map_err(|e| Error::Range(e.to_string()))?;
    for v in out.samples.iter_mut() {
        *v += normal.sample(&mut rng);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{psf_tensor, PointSource};

    fn small_cfg() -> ScannerConfig {
        let mut c = ScannerConfig::default();
        c.fov = [0.006, 0.004, 0.01];
        c.raster_lines = 5;
        c.z_slab_positions = vec![-0.004, 0.0, 0.004];
        c
    }

    fn point(p: [f64; 3], w: f64) -> Phantom {
        Phantom::points(vec![PointSource { position: p, weight: w }])
    }

    #[test]
    fn zero_weight_gives_zero_signal() {
        let s = simulate_signal(&point([0.0; 3], 0.0), &small_cfg(), 0).unwrap();
        assert!(s.samples.iter().all(|v| *v == 0.0));
        assert_eq!(s.len(), slab_samples(&small_cfg()));
    }

    #[test]
    fn scalar_oracle_near_start() {
        // Source at the raster start, b1 = z: s0 = m (v_x h_13 + v_y h_23 + v_z h_33).
        let c = small_cfg();
        let src = [-0.003, -0.002, 0.0];
        let s = simulate_signal(&point(src, 1.0), &c, 1).unwrap();
        for i in [1usize, 3, 5, 8, 13] {
            let t = i as f64 / c.sample_rate;
            let xi = ffp_position(t, &c, 1).unwrap();
            let v = ffp_velocity(t, &c, 1).unwrap();
            let r = [xi[0] - src[0], xi[1] - src[1], xi[2] - src[2]];
            let h = psf_tensor(&r, &c);
            let expected = c.magnetic_moment * (v[0] * h[0][2] + v[1] * h[1][2] + v[2] * h[2][2]);
            assert!((s.samples[i] - expected).abs() <= 1e-12 * expected.abs());
            // the drive term dominates
            assert!((v[2] * h[2][2]).abs() > 10.0 * (v[0] * h[0][2]).abs());
        }
    }

    #[test]
    fn linear_in_density() {
        let c = small_cfg();
        let a = point([0.001, 0.0, 0.001], 1.0);
        let b = point([-0.001, 0.001, -0.002], 1.0);
        let both = Phantom::points(vec![
            PointSource { position: [0.001, 0.0, 0.001], weight: 2.0 },
            PointSource { position: [-0.001, 0.001, -0.002], weight: 0.5 },
        ]);
        let sa = simulate_signal(&a, &c, 1).unwrap();
        let sb = simulate_signal(&b, &c, 1).unwrap();
        let sab = simulate_signal(&both, &c, 1).unwrap();
        let scale = sab.samples.iter().map(|v| v.abs()).fold(0.0, f64::max);
        for i in 0..sab.len() {
            let e = 2.0 * sa.samples[i] + 0.5 * sb.samples[i];
            assert!((sab.samples[i] - e).abs() <= 1e-10 * scale);
        }
        let s2 = simulate_signal(&a.scaled(2.0), &c, 1).unwrap();
        for i in 0..s2.len() {
            assert_eq!(s2.samples[i], 2.0 * sa.samples[i]);
        }
    }

    #[test]
    fn far_slabs_are_saturated() {
        let mut c = small_cfg();
        c.z_slab_positions = vec![-0.2, 0.0, 0.2];
        let all = simulate_all_slabs(&point([0.0; 3], 1.0), &c).unwrap();
        assert_eq!(all.len(), 3);
        let e: Vec<f64> = all.iter().map(|s| s.energy()).collect();
        assert!(e[0] < 1e-6 * e[1] && e[2] < 1e-6 * e[1]);
    }

    #[test]
    fn noise_contract() {
        let s = simulate_signal(&point([0.0; 3], 1.0), &small_cfg(), 1).unwrap();
        assert_eq!(add_noise(&s, 0.0, 7).unwrap(), s);
        assert_eq!(add_noise(&s, 1.0, 7).unwrap(), add_noise(&s, 1.0, 7).unwrap());
        assert_ne!(add_noise(&s, 1.0, 7).unwrap(), add_noise(&s, 1.0, 8).unwrap());
        assert!(add_noise(&s, -1.0, 7).is_err());
    }

    #[test]
    fn noise_variance() {
        let s = TimeSignal {
            samples: vec![0.0; 1_000_000],
            sample_rate: 1.0,
            slab_index: 0,
            duration: 1e6,
        };
        let n = add_noise(&s, 1.0, 42).unwrap();
        let mean = n.samples.iter().sum::<f64>() / n.len() as f64;
        let var = n.samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n.len() - 1) as f64;
        assert!((var - 1.0).abs() < 0.01, "variance {var}");
    }
}
