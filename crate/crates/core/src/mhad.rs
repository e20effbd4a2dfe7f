//! Multi-harmonic anti-differentiation (MHAD).
//!
//! Along each drive-axis column the portraits are modelled as
//! `d_k = c_k f^(k-1) * ρ_N` with `f = [0, -1, 0, …, 0, 1]` the circulant
//! central difference and `ρ_N` the native image. The regularized
//! least-squares solution is a spectral division:
//!
//! ```text
//! ρ_N = IDFT[ Σ_k c_k⁻¹ conj(f̂^(k-1)) d̂_k / (Σ_k |f̂^(k-1)|² + λ) ]
//! ```
//!
//! Bins where the denominator vanishes (DC, and Nyquist for even lengths
//! when `λ = 0`) carry no information and are set to zero.

use std::f64::consts::PI;

use ndarray::{Array3, ArrayView3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::ScannerConfig;
use crate::portrait::RealStack;
use crate::psfgen::harmonic_coefficient;

/// Spectrum of the circulant stencil `f` raised elementwise to `order`.
pub fn derivative_kernel(length: usize, order: usize) -> Result<Vec<Complex64>> {
    if length < 3 {
        return Err(Error::Range(format!("derivative kernel length {length} < 3")));
    }
    if order == 0 {
        return Err(Error::Range("derivative order must be >= 1".into()));
    }
    Ok(kernel_power(length, order))
}

fn kernel_power(length: usize, order: usize) -> Vec<Complex64> {
    (0..length)
        .map(|j| {
            let f = Complex64::new(0.0, 2.0 * (2.0 * PI * j as f64 / length as f64).sin());
            f.powu(order as u32)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MhadConfig {
    pub lambda: f64,
    pub harmonics: Vec<usize>,
    pub gamma_a: f64,
    /// Extra per-harmonic scale multiplying `c_k` (e.g. the drive
    /// prefactor when portraits are in signal units). Empty means 1.
    #[serde(default)]
    pub scale: Vec<f64>,
    /// Fine reconstruction spacing, used only to warn about coarse slabs.
    #[serde(default)]
    pub fine_dz: Option<f64>,
}

impl MhadConfig {
    pub fn new(harmonics: Vec<usize>, gamma_a: f64, lambda: f64) -> MhadConfig {
        MhadConfig { lambda, harmonics, gamma_a, scale: Vec::new(), fine_dz: None }
    }

    pub fn validate(&self) -> Result<()> {
        if self.harmonics.is_empty() {
            return Err(Error::Config("MHAD needs at least one harmonic".into()));
        }
        if let Some(k) = self.harmonics.iter().find(|&&k| k < 2) {
            return Err(Error::Range(format!("harmonic {k} < 2")));
        }
        if !(self.gamma_a > 0.0) || !self.gamma_a.is_finite() {
            return Err(Error::Config(format!("gamma*A must be positive, got {}", self.gamma_a)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !self.scale.is_empty() && self.scale.len() != self.harmonics.len() {
            return Err(Error::Config("one scale per harmonic required".into()));
        }
        Ok(())
    }

    /// Effective coefficient of the `i`-th listed harmonic.
    pub fn coefficient(&self, i: usize) -> f64 {
        let s = self.scale.get(i).copied().unwrap_or(1.0);
        s * harmonic_coefficient(self.gamma_a, self.harmonics[i])
    }
}

/// Per-harmonic [`MhadConfig::scale`] for portraits in signal units.
///
/// A portrait is `2π m f0 2^-k c_k γ^(1-k) ∂z^(k-1) ρ_N` with
/// `ρ_N = h33 * ρ / γ`; replacing `∂z` by `f / (2 dz)` leaves
/// `2π m f0 2^-k (2 γ dz)^(1-k)` in front of `c_k f^(k-1) ρ_N`.
pub fn portrait_scale(cfg: &ScannerConfig, harmonics: &[usize], dz: f64) -> Vec<f64> {
    let g = cfg.gamma();
    harmonics
        .iter()
        .map(|&k| {
            2.0 * PI * cfg.magnetic_moment * cfg.drive_frequency / 2f64.powi(k as i32)
                * (2.0 * g * dz).powi(1 - k as i32)
        })
        .collect()
}

/// Solves along axis 0 of every column: `ρ̂ = Σ_k w_k conj(F_k) d̂_k / (Σ_k |F_k|² + λ)`.
fn spectral_solve(data: &[ArrayView3<f64>], orders: &[usize], weights: &[f64], lambda: f64) -> Array3<f64> {
    let (nz, ny, nx) = data[0].dim();
    let fk: Vec<Vec<Complex64>> = orders.iter().map(|&o| kernel_power(nz, o)).collect();
    let den: Vec<f64> = (0..nz)
        .map(|j| fk.iter().map(|f| f[j].norm_sqr()).sum::<f64>() + lambda)
        .collect();
    let scale = den.iter().fold(0.0f64, |m, v| m.max(*v));
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(nz);
    let inv = planner.plan_fft_inverse(nz);
    let columns: Vec<Vec<f64>> = (0..ny * nx)
        .into_par_iter()
        .map(|c| {
            let (y, x) = (c / nx, c % nx);
            let mut acc = vec![Complex64::new(0.0, 0.0); nz];
            for ((d, f), &w) in data.iter().zip(&fk).zip(weights) {
                let mut buf: Vec<Complex64> = (0..nz).map(|z| Complex64::new(d[[z, y, x]], 0.0)).collect();
                fwd.process(&mut buf);
                for j in 0..nz {
                    acc[j] += f[j].conj() * buf[j] * w;
                }
            }
            for j in 0..nz {
                acc[j] = if den[j] > 1e-12 * scale { acc[j] / den[j] } else { Complex64::new(0.0, 0.0) };
            }
            inv.process(&mut acc);
            acc.iter().map(|v| v.re / nz as f64).collect()
        })
        .collect();
    let mut out = Array3::zeros((nz, ny, nx));
    for (c, col) in columns.iter().enumerate() {
        let (y, x) = (c / nx, c % nx);
        for (z, v) in col.iter().enumerate() {
            out[[z, y, x]] = *v;
        }
    }
    out
}

/// Second-harmonic-only MHAD with unit coefficient, per z column of `d2`
/// (shape `(nz, ny, nx)`).
pub fn mhad_second(d2: &ArrayView3<f64>, lambda: f64) -> Result<Array3<f64>> {
    if d2.dim().0 < 3 {
        return Err(Error::Range("MHAD needs at least 3 samples along z".into()));
    }
    if !(lambda >= 0.0) {
        return Err(Error::Config(format!("lambda must be >= 0, got {lambda}")));
    }
    Ok(spectral_solve(&[d2.view()], &[1], &[1.0], lambda))
}

/// Full MHAD on a stack of real portraits.
pub fn mhad_multi(stack: &RealStack, mcfg: &MhadConfig) -> Result<Array3<f64>> {
    mcfg.validate()?;
    let views = mcfg
        .harmonics
        .iter()
        .map(|&k| stack.get(k).map(|a| a.view()))
        .collect::<Result<Vec<_>>>()?;
    if views[0].dim().0 < 3 {
        return Err(Error::Range("MHAD needs at least 3 slabs along z".into()));
    }
    if let Some(fine) = mcfg.fine_dz {
        if stack.mesh.spacing[2] > 2.0 * fine {
            log::warn!(
                "slab spacing {:.3} mm exceeds two fine voxels; MHAD assumes dense z sampling",
                stack.mesh.spacing[2] * 1e3
            );
        }
    }
    let orders: Vec<usize> = mcfg.harmonics.iter().map(|&k| k - 1).collect();
    let weights: Vec<f64> = (0..orders.len()).map(|i| 1.0 / mcfg.coefficient(i)).collect();
    Ok(spectral_solve(&views, &orders, &weights, mcfg.lambda))
}

/// Synthetic portraits `d_k = c_k f^(k-1) * ρ_N` along axis 0.
pub fn synthesize_stack(native: &ArrayView3<f64>, mcfg: &MhadConfig) -> Result<Vec<Array3<f64>>> {
    mcfg.validate()?;
    let mut out = Vec::new();
    for (i, &k) in mcfg.harmonics.iter().enumerate() {
        let mut a = native.to_owned();
        for _ in 0..k - 1 {
            a = central_difference_z(&a.view());
        }
        let c = mcfg.coefficient(i);
        a.mapv_inplace(|v| v * c);
        out.push(a);
    }
    Ok(out)
}

/// `(f * u)_n = u_{n+1} - u_{n-1}` with periodic wrap along axis 0.
pub fn central_difference_z(u: &ArrayView3<f64>) -> Array3<f64> {
    let nz = u.dim().0;
    let mut out = Array3::zeros(u.dim());
    for z in 0..nz {
        let next = u.index_axis(Axis(0), (z + 1) % nz);
        let prev = u.index_axis(Axis(0), (z + nz - 1) % nz);
        out.index_axis_mut(Axis(0), z).assign(&(&next - &prev));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_spectrum_properties() {
        let n = 9;
        let f1 = derivative_kernel(n, 1).unwrap();
        let f2 = derivative_kernel(n, 2).unwrap();
        for j in 0..n {
            assert!(f1[j].re.abs() < 1e-15);
            assert!((f2[j] - f1[j] * f1[j]).norm() < 1e-14);
        }
        for order in 1..5 {
            assert_eq!(derivative_kernel(n, order).unwrap()[0].norm(), 0.0);
        }
        assert!(derivative_kernel(2, 1).is_err());
        assert!(derivative_kernel(5, 0).is_err());
    }

    #[test]
    fn second_harmonic_inverts_difference() {
        let n = 15;
        let rho = Array3::from_shape_fn((n, 2, 3), |(z, y, x)| ((z * 7 + y * 3 + x) % 5) as f64 - 1.3);
        let d2 = central_difference_z(&rho.view());
        let back = mhad_second(&d2.view(), 0.0).unwrap();
        let mean = rho.mean_axis(Axis(0)).unwrap();
        for ((z, y, x), v) in back.indexed_iter() {
            assert!((v - (rho[[z, y, x]] - mean[[y, x]])).abs() < 1e-10);
        }
        let zero = mhad_second(&Array3::zeros((5, 1, 1)).view(), 0.0).unwrap();
        assert!(zero.iter().all(|v| *v == 0.0));
        let big = mhad_second(&d2.view(), 1e12).unwrap();
        assert!(big.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn scale_matches_prefactor_ratio() {
        let cfg = ScannerConfig::default();
        let s = portrait_scale(&cfg, &[2, 3], 1e-3);
        let pre = |k| crate::psfgen::real_drive_prefactor(k, &cfg) / harmonic_coefficient(cfg.gamma_a(), k);
        assert!((s[0] - pre(2) / (2.0 * cfg.gamma() * 1e-3)).abs() < 1e-12 * s[0]);
        assert!((s[1] - pre(3) / (2.0 * cfg.gamma() * 1e-3).powi(2)).abs() < 1e-12 * s[1]);
    }

    #[test]
    fn config_checks() {
        assert!(MhadConfig::new(vec![], 1.0, 0.0).validate().is_err());
        assert!(MhadConfig::new(vec![2], 0.0, 0.0).validate().is_err());
        assert!(MhadConfig::new(vec![1, 2], 1.0, 0.0).validate().is_err());
        assert!(MhadConfig::new(vec![2, 3], 1.0, 0.0).validate().is_ok());
    }
}
