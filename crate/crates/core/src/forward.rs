//! The linear forward model `A = P H B`.
//!
//! `B` weights the density by the receive sensitivities, `H` convolves each
//! weighted copy with the harmonic kernels (circularly, on a zero-padded
//! mesh) and sums over components, and `P` keeps the FOV `xy` points of the
//! measured slab planes. Data are laid out harmonic-major, then slab, y, x.

use ndarray::{s, Array2, Array3, ArrayView3, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fft::{next_fast_len, Fft3};
use crate::mesh::Mesh;
use crate::physics::{ScannerConfig, Sensitivity};
use crate::psfgen::PsfStack;

/// Per-harmonic data arrays of shape `(slabs, ny, nx)`.
pub type Data = Vec<Array3<f64>>;

/// Zero-pads by `lo`/`hi` voxels along `(z, y, x)`.
pub fn pad_image_with(a: &ArrayView3<f64>, lo: [usize; 3], hi: [usize; 3]) -> Array3<f64> {
    let (nz, ny, nx) = a.dim();
    let mut out = Array3::zeros((nz + lo[0] + hi[0], ny + lo[1] + hi[1], nx + lo[2] + hi[2]));
    out.slice_mut(s![lo[0]..lo[0] + nz, lo[1]..lo[1] + ny, lo[2]..lo[2] + nx])
        .assign(a);
    out
}

/// Inverse of [`pad_image_with`].
pub fn crop_image_with(a: &ArrayView3<f64>, lo: [usize; 3], hi: [usize; 3]) -> Result<Array3<f64>> {
    let (nz, ny, nx) = a.dim();
    if lo[0] + hi[0] >= nz || lo[1] + hi[1] >= ny || lo[2] + hi[2] >= nx {
        return Err(Error::Range(format!(
            "crop {lo:?}/{hi:?} leaves nothing of a {nz}x{ny}x{nx} array"
        )));
    }
    Ok(a.slice(s![lo[0]..nz - hi[0], lo[1]..ny - hi[1], lo[2]..nx - hi[2]]).to_owned())
}

/// Zero-pads by `pad` voxels on every side.
pub fn pad_image(a: &ArrayView3<f64>, pad: usize) -> Array3<f64> {
    pad_image_with(a, [pad; 3], [pad; 3])
}

/// Removes `pad` voxels from every side.
pub fn crop_image(a: &ArrayView3<f64>, pad: usize) -> Result<Array3<f64>> {
    crop_image_with(a, [pad; 3], [pad; 3])
}

/// Padding and FFT sizing of the model mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardOptions {
    /// Voxels per side; `None` uses the kernel half extent per axis.
    pub pad: Option<usize>,
    /// Grow the high side of each axis to an FFT-friendly length.
    pub fast_lengths: bool,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        ForwardOptions { pad: None, fast_lengths: true }
    }
}

#[derive(Debug)]
pub struct ForwardModel {
    harmonics: Vec<usize>,
    components: Vec<usize>,
    /// Half spectra `[harmonic][component]` on the padded mesh.
    spectra: Vec<Vec<Array3<Complex64>>>,
    /// Sensitivity per component on the padded mesh.
    sensitivity: Vec<Array3<f64>>,
    psfs: PsfStack,
    fov: Mesh,
    padded: Mesh,
    /// `(z, y, x)` offsets of the FOV inside the padded mesh.
    lo: [usize; 3],
    hi: [usize; 3],
    /// FOV z index of each measured slab.
    slab_selector: Vec<usize>,
    snap_distance: f64,
    fft: Fft3,
}

/// Places kernel values circularly on a grid of shape `dim`, center at index 0.
fn circular_embed(kernel: &Array3<f64>, center: (usize, usize, usize), dim: (usize, usize, usize)) -> Array3<f64> {
    let mut out = Array3::zeros(dim);
    for ((iz, iy, ix), &v) in kernel.indexed_iter() {
        let z = (iz as isize - center.0 as isize).rem_euclid(dim.0 as isize) as usize;
        let y = (iy as isize - center.1 as isize).rem_euclid(dim.1 as isize) as usize;
        let x = (ix as isize - center.2 as isize).rem_euclid(dim.2 as isize) as usize;
        out[[z, y, x]] += v;
    }
    out
}

/// Sensitivity component `j` sampled on every voxel of `mesh`.
fn sensitivity_map(sens: &Sensitivity, mesh: &Mesh, j: usize) -> Array3<f64> {
    match sens {
        Sensitivity::Uniform(b) => Array3::from_elem(mesh.dim(), b[j]),
        _ => Array3::from_shape_fn(mesh.dim(), |(iz, iy, ix)| sens.at(&mesh.position(ix, iy, iz))[j]),
    }
}

impl ForwardModel {
    pub fn harmonics(&self) -> &[usize] {
        &self.harmonics
    }

    pub fn components(&self) -> &[usize] {
        &self.components
    }

    pub fn psfs(&self) -> &PsfStack {
        &self.psfs
    }

    /// Reconstruction field of view.
    pub fn fov_mesh(&self) -> &Mesh {
        &self.fov
    }

    /// Mesh on which the density lives and convolutions are circular.
    pub fn padded_mesh(&self) -> &Mesh {
        &self.padded
    }

    /// Padding before/after the FOV along `(z, y, x)`.
    pub fn padding(&self) -> ([usize; 3], [usize; 3]) {
        (self.lo, self.hi)
    }

    pub fn slab_selector(&self) -> &[usize] {
        &self.slab_selector
    }

    /// Largest distance between a slab position and its mesh plane, m.
    pub fn snap_distance(&self) -> f64 {
        self.snap_distance
    }

    pub fn sensitivity(&self) -> &[Array3<f64>] {
        &self.sensitivity
    }

    /// Half spectrum of the kernel for harmonic index `h` and component index `c`.
    pub fn spectrum(&self, h: usize, c: usize) -> &Array3<Complex64> {
        &self.spectra[h][c]
    }

    pub fn fft(&self) -> &Fft3 {
        &self.fft
    }

    /// Shape of one harmonic's data block `(slabs, ny, nx)`.
    pub fn data_dim(&self) -> (usize, usize, usize) {
        let (_, ny, nx) = self.fov.dim();
        (self.slab_selector.len(), ny, nx)
    }

    pub fn data_len(&self) -> usize {
        let (a, b, c) = self.data_dim();
        self.harmonics.len() * a * b * c
    }

    pub fn padded_dim(&self) -> (usize, usize, usize) {
        self.padded.dim()
    }

    pub fn pad_to_model(&self, fov_image: &ArrayView3<f64>) -> Result<Array3<f64>> {
        check_dim(fov_image.dim(), self.fov.dim())?;
        Ok(pad_image_with(fov_image, self.lo, self.hi))
    }

    pub fn crop_to_fov(&self, image: &ArrayView3<f64>) -> Result<Array3<f64>> {
        check_dim(image.dim(), self.padded.dim())?;
        crop_image_with(image, self.lo, self.hi)
    }

    /// Half spectra of the sensitivity-weighted density, one per component.
    pub fn weighted_spectra(&self, rho: &ArrayView3<f64>) -> Vec<Array3<Complex64>> {
        self.sensitivity
            .iter()
            .map(|b| {
                let u = Zip::from(b).and(rho).map_collect(|&b, &r| b * r);
                self.fft.forward(u.view())
            })
            .collect()
    }

    /// Convolution of the density with every harmonic kernel on the padded
    /// mesh, before slab selection.
    pub fn convolve_full(&self, rho: &ArrayView3<f64>) -> Result<Vec<Array3<f64>>> {
        check_dim(rho.dim(), self.padded.dim())?;
        let u = self.weighted_spectra(rho);
        Ok(self
            .spectra
            .par_iter()
            .map(|set| {
                let mut acc = Array3::<Complex64>::zeros(self.fft.spectrum_dim());
                for (hs, us) in set.iter().zip(&u) {
                    Zip::from(&mut acc).and(hs).and(us).for_each(|a, &h, &v| *a += h * v);
                }
                self.fft.inverse(acc)
            })
            .collect())
    }

    /// `P` applied to a padded-mesh array.
    pub fn select(&self, full: &Array3<f64>) -> Array3<f64> {
        let (ns, ny, nx) = self.data_dim();
        let mut out = Array3::zeros((ns, ny, nx));
        for (s, &iz) in self.slab_selector.iter().enumerate() {
            out.index_axis_mut(Axis(0), s).assign(&full.slice(s![
                iz + self.lo[0],
                self.lo[1]..self.lo[1] + ny,
                self.lo[2]..self.lo[2] + nx
            ]));
        }
        out
    }

    /// `Pᵀ`: scatters slab data into a zero padded-mesh array.
    pub fn scatter(&self, d: &Array3<f64>) -> Array3<f64> {
        let (_, ny, nx) = self.data_dim();
        let mut out = Array3::zeros(self.padded.dim());
        for (s, &iz) in self.slab_selector.iter().enumerate() {
            out.slice_mut(s![iz + self.lo[0], self.lo[1]..self.lo[1] + ny, self.lo[2]..self.lo[2] + nx])
                .assign(&d.index_axis(Axis(0), s));
        }
        out
    }

    fn slab_planes(&self) -> Vec<usize> {
        self.slab_selector.iter().map(|&iz| iz + self.lo[0]).collect()
    }

    /// `P F⁻¹`: inverts a padded-mesh half spectrum on the slab planes only.
    pub fn select_spectrum(&self, spectrum: Array3<Complex64>) -> Array3<f64> {
        let (_, ny, nx) = self.data_dim();
        let planes = self.fft.inverse_planes(spectrum, &self.slab_planes());
        planes
            .slice(s![.., self.lo[1]..self.lo[1] + ny, self.lo[2]..self.lo[2] + nx])
            .to_owned()
    }

    /// `F Pᵀ`: half spectrum of scattered slab data.
    pub fn scatter_spectrum(&self, d: &Array3<f64>) -> Array3<Complex64> {
        let (ns, ny, nx) = self.data_dim();
        let (_, py, px) = self.padded.dim();
        let mut planes = Array3::zeros((ns, py, px));
        planes
            .slice_mut(s![.., self.lo[1]..self.lo[1] + ny, self.lo[2]..self.lo[2] + nx])
            .assign(d);
        self.fft.forward_sparse_z(planes.view(), &self.slab_planes())
    }

    /// Sum over harmonics of kernel correlations, before the sensitivity
    /// weighting: returns one padded array per component.
    fn correlate(&self, scattered_spectra: &[Array3<Complex64>]) -> Vec<Array3<f64>> {
        (0..self.components.len())
            .into_par_iter()
            .map(|c| {
                let mut acc = Array3::<Complex64>::zeros(self.fft.spectrum_dim());
                for (set, ds) in self.spectra.iter().zip(scattered_spectra) {
                    Zip::from(&mut acc).and(&set[c]).and(ds).for_each(|a, &h, &v| *a += h.conj() * v);
                }
                self.fft.inverse(acc)
            })
            .collect()
    }

    /// Combines per-component correlations with the sensitivity weights.
    fn weight_sum(&self, parts: Vec<Array3<f64>>) -> Array3<f64> {
        let mut out = Array3::zeros(self.padded.dim());
        for (p, b) in parts.iter().zip(&self.sensitivity) {
            Zip::from(&mut out).and(p).and(b).for_each(|o, &p, &b| *o += p * b);
        }
        out
    }

    /// `Aᵀ` applied to half spectra of already scattered data (one per harmonic).
    pub fn adjoint_from_spectra(&self, scattered_spectra: &[Array3<Complex64>]) -> Array3<f64> {
        self.weight_sum(self.correlate(scattered_spectra))
    }
}

fn check_dim(got: (usize, usize, usize), expected: (usize, usize, usize)) -> Result<()> {
    if got != expected {
        return Err(Error::Shape {
            expected: vec![expected.0, expected.1, expected.2],
            got: vec![got.0, got.1, got.2],
        });
    }
    Ok(())
}

/// Assembles the model: pads the FOV mesh, transforms the kernels once and
/// snaps the configured slab positions onto FOV z planes.
pub fn build_forward_model(
    psfs: &PsfStack,
    sensitivity: &Sensitivity,
    cfg: &ScannerConfig,
    fov: &Mesh,
    opts: &ForwardOptions,
) -> Result<ForwardModel> {
    psfs.validate()?;
    sensitivity.validate()?;
    fov.validate()?;
    for a in 0..3 {
        if (psfs.mesh.spacing[a] - fov.spacing[a]).abs() > 1e-9 * fov.spacing[a] {
            return Err(Error::Config(format!(
                "PSF spacing {:?} differs from reconstruction mesh spacing {:?}",
                psfs.mesh.spacing, fov.spacing
            )));
        }
    }
    if cfg.z_slab_positions.is_empty() {
        return Err(Error::Config("no slab positions".into()));
    }
    let mut selector = Vec::with_capacity(cfg.z_slab_positions.len());
    let mut snap: f64 = 0.0;
    for &z in &cfg.z_slab_positions {
        let f = fov.fractional_index(2, z);
        let i = f.round();
        if i < 0.0 || i > (fov.shape[2] - 1) as f64 || (f - i).abs() > 0.5 + 1e-9 {
            return Err(Error::Range(format!(
                "slab at z = {z} m is not within half a voxel of the reconstruction mesh"
            )));
        }
        snap = snap.max((f - i).abs() * fov.spacing[2]);
        selector.push(i as usize);
    }
    if selector.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("slab positions collapse onto the same mesh plane".into()));
    }
    let half = psfs.half_extent(); // x, y, z
    let pad_xyz = match opts.pad {
        Some(p) => [p; 3],
        None => half,
    };
    let (nz, ny, nx) = fov.dim();
    let base = [nz + 2 * pad_xyz[2], ny + 2 * pad_xyz[1], nx + 2 * pad_xyz[0]];
    let total = if opts.fast_lengths {
        [next_fast_len(base[0]), next_fast_len(base[1]), next_fast_len(base[2])]
    } else {
        base
    };
    let lo = [pad_xyz[2], pad_xyz[1], pad_xyz[0]];
    let hi = [total[0] - nz - lo[0], total[1] - ny - lo[1], total[2] - nx - lo[2]];
    let padded = fov.padded([lo[2], lo[1], lo[0]], [hi[2], hi[1], hi[0]]);
    let dim = padded.dim();
    let fft = Fft3::new(dim);
    let center = psfs.center();
    let kd = psfs.mesh.dim();
    if kd.0 > dim.0 || kd.1 > dim.1 || kd.2 > dim.2 {
        log::warn!("kernel support {kd:?} exceeds the padded mesh {dim:?}; tails wrap around");
    }
    let spectra = psfs
        .kernels
        .iter()
        .map(|set| {
            set.iter()
                .map(|k| fft.forward(circular_embed(k, center, dim).view()))
                .collect()
        })
        .collect();
    let sens = psfs
        .components
        .iter()
        .map(|&j| sensitivity_map(sensitivity, &padded, j))
        .collect();
    Ok(ForwardModel {
        harmonics: psfs.harmonics.clone(),
        components: psfs.components.clone(),
        spectra,
        sensitivity: sens,
        psfs: psfs.clone(),
        fov: *fov,
        padded,
        lo,
        hi,
        slab_selector: selector,
        snap_distance: snap,
        fft,
    })
}

/// `A ρ` for a density on the padded mesh.
pub fn apply_forward(model: &ForwardModel, rho: &ArrayView3<f64>) -> Result<Data> {
    check_dim(rho.dim(), model.padded.dim())?;
    let u = model.weighted_spectra(rho);
    Ok(model
        .spectra
        .par_iter()
        .map(|set| {
            let mut acc = Array3::<Complex64>::zeros(model.fft.spectrum_dim());
            for (hs, us) in set.iter().zip(&u) {
                Zip::from(&mut acc).and(hs).and(us).for_each(|a, &h, &v| *a += h * v);
            }
            model.select_spectrum(acc)
        })
        .collect())
}

/// `Aᵀ d`, returning a padded-mesh array.
pub fn apply_adjoint(model: &ForwardModel, d: &[Array3<f64>]) -> Result<Array3<f64>> {
    if d.len() != model.harmonics.len() {
        return Err(Error::Shape {
            expected: vec![model.harmonics.len()],
            got: vec![d.len()],
        });
    }
    for block in d {
        check_dim(block.dim(), model.data_dim())?;
    }
    let spectra: Vec<_> = d
        .par_iter()
        .map(|block| model.scatter_spectrum(block))
        .collect();
    Ok(model.adjoint_from_spectra(&spectra))
}

/// Flattens data in harmonic, slab, y, x order.
pub fn flatten(d: &[Array3<f64>]) -> Vec<f64> {
    d.iter().flat_map(|a| a.iter().copied()).collect()
}

/// Splits a flat data vector back into per-harmonic blocks.
pub fn unflatten(model: &ForwardModel, v: &[f64]) -> Result<Data> {
    if v.len() != model.data_len() {
        return Err(Error::Shape { expected: vec![model.data_len()], got: vec![v.len()] });
    }
    let dim = model.data_dim();
    let n = dim.0 * dim.1 * dim.2;
    v.chunks(n)
        .map(|c| Array3::from_shape_vec(dim, c.to_vec()).map_err(|e| Error::Config(e.to_string())))
        .collect()
}

/// Default cap on the dense oracle's column count.
pub const DENSE_MAX_VOXELS: usize = 4096;

fn dense_guard(model: &ForwardModel, max_voxels: usize) -> Result<()> {
    let cols = model.padded.len();
    if cols > max_voxels {
        return Err(Error::Range(format!(
            "dense oracle needs {cols} columns, above the limit of {max_voxels}"
        )));
    }
    Ok(())
}

/// Dense `A` built column by column from unit vectors.
pub fn build_dense_oracle(model: &ForwardModel, max_voxels: usize) -> Result<Array2<f64>> {
    dense_guard(model, max_voxels)?;
    let dim = model.padded.dim();
    let cols = model.padded.len();
    let columns: Vec<Vec<f64>> = (0..cols)
        .into_par_iter()
        .map(|c| {
            let mut e = Array3::zeros(dim);
            e.as_slice_mut().expect("standard layout")[c] = 1.0;
            apply_forward(model, &e.view()).map(|d| flatten(&d))
        })
        .collect::<Result<_>>()?;
    let rows = model.data_len();
    Ok(Array2::from_shape_fn((rows, cols), |(r, c)| columns[c][r]))
}

/// Dense `A` assembled directly from the spatial kernels by circular
/// index arithmetic, without any FFT.
pub fn build_direct_oracle(model: &ForwardModel, max_voxels: usize) -> Result<Array2<f64>> {
    dense_guard(model, max_voxels)?;
    let (nz, ny, nx) = model.padded.dim();
    let (ns, dy, dx) = model.data_dim();
    let rows = model.data_len();
    let cols = nz * ny * nx;
    let mut plane_slab = vec![usize::MAX; nz];
    for (s, &iz) in model.slab_selector.iter().enumerate() {
        plane_slab[iz + model.lo[0]] = s;
    }
    let center = model.psfs.center();
    let mut a = Array2::zeros((rows, cols));
    for (h, set) in model.psfs.kernels.iter().enumerate() {
        for (c, kern) in set.iter().enumerate() {
            let sens = &model.sensitivity[c];
            for ((kz, ky, kx), &kv) in kern.indexed_iter() {
                if kv == 0.0 {
                    continue;
                }
                let oz = kz as isize - center.0 as isize;
                let oy = ky as isize - center.1 as isize;
                let ox = kx as isize - center.2 as isize;
                for ((z, y, x), &b) in sens.indexed_iter() {
                    let rz = (z as isize + oz).rem_euclid(nz as isize) as usize;
                    let s = plane_slab[rz];
                    if s == usize::MAX {
                        continue;
                    }
                    let ry = (y as isize + oy).rem_euclid(ny as isize) as usize;
                    let rx = (x as isize + ox).rem_euclid(nx as isize) as usize;
                    if ry < model.lo[1] || ry >= model.lo[1] + dy || rx < model.lo[2] || rx >= model.lo[2] + dx {
                        continue;
                    }
                    let row = ((h * ns + s) * dy + (ry - model.lo[1])) * dx + (rx - model.lo[2]);
                    let col = (z * ny + y) * nx + x;
                    a[[row, col]] += kv * b;
                }
            }
        }
    }
    Ok(a)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::psfgen::PsfStack;

    fn toy_psf(n: usize) -> PsfStack {
        let mesh = Mesh::centered([n, n, n], [1e-3; 3]).unwrap();
        let c = n as f64 / 2.0;
        let k2 = Array3::from_shape_fn(mesh.dim(), |(z, y, x)| {
            let (z, y, x) = (z as f64 - (n / 2) as f64, y as f64 - (n / 2) as f64, x as f64 - (n / 2) as f64);
            -z * (-(x * x + y * y + z * z) / c).exp()
        });
        let k3 = k2.mapv(|v| v * v - 0.1);
        PsfStack::new(vec![2, 3], vec![2], vec![vec![k2], vec![k3]], mesh).unwrap()
    }

    fn cfg_for(fov: &Mesh, slabs: Vec<f64>) -> ScannerConfig {
        let mut c = ScannerConfig::default();
        c.z_slab_positions = slabs;
        c.fov = [fov.spacing[0] * (fov.shape[0] - 1) as f64, fov.spacing[1] * (fov.shape[1] - 1) as f64, 0.01];
        c
    }

    #[test]
    fn pad_crop_round_trip() {
        let a = Array3::from_shape_fn((3, 4, 5), |(z, y, x)| (z * 20 + y * 5 + x) as f64);
        let p = pad_image(&a.view(), 2);
        assert_eq!(p.dim(), (7, 8, 9));
        assert_eq!(p.sum(), a.sum());
        assert_eq!(crop_image(&p.view(), 2).unwrap(), a);
        assert!(crop_image(&a.view(), 2).is_err());
        let z = pad_image(&Array3::<f64>::zeros((2, 2, 2)).view(), 1);
        assert!(z.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn identity_selector_without_padding() {
        let psf = toy_psf(3);
        let fov = Mesh::centered([4, 4, 4], [1e-3; 3]).unwrap();
        let cfg = cfg_for(&fov, fov.axis(2));
        let m = build_forward_model(
            &psf,
            &Sensitivity::default(),
            &cfg,
            &fov,
            &ForwardOptions { pad: Some(0), fast_lengths: false },
        )
        .unwrap();
        assert_eq!(m.slab_selector(), &[0, 1, 2, 3]);
        assert_eq!(m.padded_dim(), fov.dim());
    }

    #[test]
    fn every_fifth_plane() {
        let psf = toy_psf(3);
        let fov = Mesh::new([4, 4, 21], [1e-3; 3], [0.0, 0.0, -0.01]).unwrap();
        let cfg = cfg_for(&fov, (0..5).map(|j| -0.01 + 0.005 * j as f64).collect());
        let m = build_forward_model(&psf, &Sensitivity::default(), &cfg, &fov, &ForwardOptions::default()).unwrap();
        assert_eq!(m.slab_selector(), &[0, 5, 10, 15, 20]);
        assert!(m.snap_distance() < 1e-12);
    }

    #[test]
    fn mismatched_mesh_and_bad_slab() {
        let psf = toy_psf(3);
        let fov = Mesh::centered([4, 4, 4], [2e-3; 3]).unwrap();
        let cfg = cfg_for(&fov, vec![0.0]);
        assert!(build_forward_model(&psf, &Sensitivity::default(), &cfg, &fov, &ForwardOptions::default()).is_err());
        let fov = Mesh::centered([4, 4, 4], [1e-3; 3]).unwrap();
        let cfg = cfg_for(&fov, vec![0.05]);
        assert!(build_forward_model(&psf, &Sensitivity::default(), &cfg, &fov, &ForwardOptions::default()).is_err());
    }

    #[test]
    fn impulse_gives_kernel() {
        let psf = toy_psf(5);
        let fov = Mesh::centered([9, 9, 9], [1e-3; 3]).unwrap();
        let cfg = cfg_for(&fov, fov.axis(2));
        let m = build_forward_model(
            &psf,
            &Sensitivity::default(),
            &cfg,
            &fov,
            &ForwardOptions { pad: Some(0), fast_lengths: false },
        )
        .unwrap();
        let mut rho = Array3::zeros(m.padded_dim());
        rho[[4, 4, 4]] = 1.0;
        let d = apply_forward(&m, &rho.view()).unwrap();
        for (h, set) in psf.kernels.iter().enumerate() {
            let k = &set[0];
            for ((z, y, x), v) in k.indexed_iter() {
                assert!((d[h][[z + 2, y + 2, x + 2]] - v).abs() < 1e-12);
            }
        }
        let zero = apply_forward(&m, &Array3::zeros(m.padded_dim()).view()).unwrap();
        assert!(zero.iter().all(|a| a.iter().all(|v| *v == 0.0)));
    }
}
