//! Real-to-complex 3D FFTs on `(nz, ny, nx)` arrays.
//!
//! The half spectrum has shape `(nz, ny, nx/2 + 1)`. The inverse transform is
//! normalized so that `inverse(forward(u)) == u`.

use std::sync::Arc;

use ndarray::{Array3, ArrayView3};
use num_complex::Complex64;
use rayon::prelude::*;
use realfft::{ComplexToReal, RealFftPlanner, RealToComplex};
use rustfft::{Fft, FftPlanner};

pub struct Fft3 {
    dim: (usize, usize, usize),
    r2c: Arc<dyn RealToComplex<f64>>,
    c2r: Arc<dyn ComplexToReal<f64>>,
    fy: Arc<dyn Fft<f64>>,
    iy: Arc<dyn Fft<f64>>,
    fz: Arc<dyn Fft<f64>>,
    iz: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("dim", &self.dim).finish()
    }
}

impl Fft3 {
    /// Plans transforms for arrays of shape `(nz, ny, nx)`.
    pub fn new(dim: (usize, usize, usize)) -> Fft3 {
        let (nz, ny, nx) = dim;
        let mut rp = RealFftPlanner::<f64>::new();
        let mut cp = FftPlanner::<f64>::new();
        Fft3 {
            dim,
            r2c: rp.plan_fft_forward(nx),
            c2r: rp.plan_fft_inverse(nx),
            fy: cp.plan_fft_forward(ny),
            iy: cp.plan_fft_inverse(ny),
            fz: cp.plan_fft_forward(nz),
            iz: cp.plan_fft_inverse(nz),
        }
    }

    pub fn dim(&self) -> (usize, usize, usize) {
        self.dim
    }

    pub fn spectrum_dim(&self) -> (usize, usize, usize) {
        (self.dim.0, self.dim.1, self.dim.2 / 2 + 1)
    }

    pub fn len(&self) -> usize {
        self.dim.0 * self.dim.1 * self.dim.2
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, input: ArrayView3<f64>) -> Array3<Complex64> {
        assert_eq!(input.dim(), self.dim, "fft input shape");
        let (nz, ny, _) = self.dim;
        let mut spec = self.planes_forward(input);
        self.z_pass(&mut spec, true);
        Array3::from_shape_vec((nz, ny, self.spectrum_dim().2), spec).expect("spectrum shape")
    }

    /// Forward transform of an array that is zero except on the z planes
    /// `planes`, given as `values` of shape `(planes.len(), ny, nx)`. Only
    /// those planes pass through the x and y transforms.
    pub fn forward_sparse_z(&self, values: ArrayView3<f64>, planes: &[usize]) -> Array3<Complex64> {
        let (nz, ny, nx) = self.dim;
        assert_eq!(values.dim(), (planes.len(), ny, nx), "sparse fft input shape");
        let nh = nx / 2 + 1;
        let part = self.planes_forward(values);
        let mut spec = vec![Complex64::new(0.0, 0.0); nz * ny * nh];
        for (p, &z) in planes.iter().enumerate() {
            spec[z * ny * nh..(z + 1) * ny * nh].copy_from_slice(&part[p * ny * nh..(p + 1) * ny * nh]);
        }
        self.z_pass(&mut spec, true);
        Array3::from_shape_vec((nz, ny, nh), spec).expect("spectrum shape")
    }

    /// Inverse transform. The input is consumed as scratch.
    pub fn inverse(&self, spectrum: Array3<Complex64>) -> Array3<f64> {
        let nz = self.dim.0;
        self.inverse_planes(spectrum, &(0..nz).collect::<Vec<_>>())
    }

    /// Inverse transform evaluated only on the z planes `planes`; returns
    /// shape `(planes.len(), ny, nx)`.
    pub fn inverse_planes(&self, spectrum: Array3<Complex64>, planes: &[usize]) -> Array3<f64> {
        let (nz, ny, nx) = self.dim;
        let nh = nx / 2 + 1;
        assert_eq!(spectrum.dim(), (nz, ny, nh), "spectrum shape");
        let mut spec = spectrum.into_raw_vec_and_offset().0;
        self.z_pass(&mut spec, false);
        let mut picked: Vec<Complex64> = if planes.len() == nz && planes.iter().enumerate().all(|(i, &z)| i == z) {
            spec
        } else {
            planes.iter().flat_map(|&z| spec[z * ny * nh..(z + 1) * ny * nh].iter().copied()).collect()
        };
        self.y_pass(&mut picked, false);
        let norm = 1.0 / (nx * ny * nz) as f64;
        let mut out = vec![0.0; planes.len() * ny * nx];
        out.par_chunks_mut(ny * nx)
            .zip(picked.par_chunks_mut(ny * nh))
            .for_each(|(out_plane, in_plane)| {
                let mut scratch = self.c2r.make_scratch_vec();
                for (o, i) in out_plane.chunks_mut(nx).zip(in_plane.chunks_mut(nh)) {
                    // The DC (and Nyquist, for even nx) bins of a Hermitian
                    // row are real; drop rounding residue before c2r.
                    i[0].im = 0.0;
                    if nx % 2 == 0 {
                        i[nh - 1].im = 0.0;
                    }
                    self.c2r
                        .process_with_scratch(i, o, &mut scratch)
                        .expect("c2r length");
                    for v in o.iter_mut() {
                        *v *= norm;
                    }
                }
            });
        Array3::from_shape_vec((planes.len(), ny, nx), out).expect("output shape")
    }

    /// x (real-to-complex) and y transforms of each z plane of `input`.
    fn planes_forward(&self, input: ArrayView3<f64>) -> Vec<Complex64> {
        let (np, ny, nx) = input.dim();
        let nh = nx / 2 + 1;
        let src: Vec<f64> = match input.as_slice() {
            Some(s) => s.to_vec(),
            None => input.iter().copied().collect(),
        };
        let mut spec = vec![Complex64::new(0.0, 0.0); np * ny * nh];
        spec.par_chunks_mut(ny * nh)
            .zip(src.par_chunks(ny * nx))
            .for_each(|(out_plane, in_plane)| {
                let mut row = vec![0.0; nx];
                let mut scratch = self.r2c.make_scratch_vec();
                for (o, i) in out_plane.chunks_mut(nh).zip(in_plane.chunks(nx)) {
                    row.copy_from_slice(i);
                    self.r2c
                        .process_with_scratch(&mut row, o, &mut scratch)
                        .expect("r2c length");
                }
            });
        self.y_pass(&mut spec, true);
        spec
    }

    /// y transform of every `(ny, nh)` plane in `spec`.
    fn y_pass(&self, spec: &mut [Complex64], forward: bool) {
        let (_, ny, nx) = self.dim;
        let nh = nx / 2 + 1;
        if ny < 2 {
            return;
        }
        let fy = if forward { &self.fy } else { &self.iy };
        // transpose each plane to (nh, ny), transform, transpose back
        spec.par_chunks_mut(ny * nh).for_each(|plane| {
            let mut t = vec![Complex64::new(0.0, 0.0); ny * nh];
            transpose(plane, &mut t, ny, nh);
            let mut scratch = vec![Complex64::new(0.0, 0.0); fy.get_inplace_scratch_len()];
            fy.process_with_scratch(&mut t, &mut scratch);
            transpose(&t, plane, nh, ny);
        });
    }

    /// z transform of a full `(nz, ny, nh)` spectrum.
    fn z_pass(&self, spec: &mut [Complex64], forward: bool) {
        let (nz, ny, nx) = self.dim;
        if nz < 2 {
            return;
        }
        let fz = if forward { &self.fz } else { &self.iz };
        // transpose (nz, ny*nh) to (ny*nh, nz)
        let m = ny * (nx / 2 + 1);
        let mut t = vec![Complex64::new(0.0, 0.0); nz * m];
        transpose(spec, &mut t, nz, m);
        t.par_chunks_mut(nz * 64).for_each(|c| {
            let mut scratch = vec![Complex64::new(0.0, 0.0); fz.get_inplace_scratch_len()];
            fz.process_with_scratch(c, &mut scratch);
        });
        transpose(&t, spec, m, nz);
    }
}

/// Transposes a row-major `rows x cols` matrix into `cols x rows`.
fn transpose(src: &[Complex64], dst: &mut [Complex64], rows: usize, cols: usize) {
    const B: usize = 32;
    for rb in (0..rows).step_by(B) {
        for cb in (0..cols).step_by(B) {
            for r in rb..(rb + B).min(rows) {
                for c in cb..(cb + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

/// Rounds `n` up to the next size whose prime factors are all at most 7.
pub fn next_fast_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for p in [2, 3, 5, 7] {
            while r % p == 0 {
                r /= p;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_dft(a: &Array3<f64>) -> Array3<Complex64> {
        let (nz, ny, nx) = a.dim();
        let nh = nx / 2 + 1;
        let tau = 2.0 * std::f64::consts::PI;
        Array3::from_shape_fn((nz, ny, nh), |(kz, ky, kx)| {
            let mut acc = Complex64::new(0.0, 0.0);
            for ((z, y, x), v) in a.indexed_iter() {
                let ph = -tau
                    * (kz as f64 * z as f64 / nz as f64
                        + ky as f64 * y as f64 / ny as f64
                        + kx as f64 * x as f64 / nx as f64);
                acc += Complex64::from_polar(*v, ph);
            }
            acc
        })
    }

    #[test]
    fn matches_naive_dft_and_round_trips() {
        for dim in [(3, 4, 5), (4, 1, 6), (1, 1, 7), (5, 6, 2)] {
            let a = Array3::from_shape_fn(dim, |(z, y, x)| ((z * 31 + y * 7 + x * 3) % 11) as f64 - 4.5);
            let f = Fft3::new(dim);
            let s = f.forward(a.view());
            let n = naive_dft(&a);
            for (p, q) in s.iter().zip(n.iter()) {
                assert!((p - q).norm() < 1e-9, "{dim:?}");
            }
            let back = f.inverse(s);
            for (p, q) in back.iter().zip(a.iter()) {
                assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sparse_plane_transforms() {
        let dim = (6, 5, 4);
        let f = Fft3::new(dim);
        let planes = [1, 4];
        let mut full = Array3::zeros(dim);
        let vals = Array3::from_shape_fn((2, 5, 4), |(p, y, x)| (p * 13 + y * 3 + x) as f64 * 0.37 - 2.0);
        for (p, &z) in planes.iter().enumerate() {
            full.index_axis_mut(ndarray::Axis(0), z).assign(&vals.index_axis(ndarray::Axis(0), p));
        }
        let a = f.forward(full.view());
        let b = f.forward_sparse_z(vals.view(), &planes);
        for (p, q) in a.iter().zip(b.iter()) {
            assert!((p - q).norm() < 1e-12);
        }
        let whole = f.inverse(a.clone());
        let some = f.inverse_planes(a, &planes);
        for (p, &z) in planes.iter().enumerate() {
            for (u, v) in some.index_axis(ndarray::Axis(0), p).iter().zip(whole.index_axis(ndarray::Axis(0), z)) {
                assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn fast_lengths() {
        assert_eq!(next_fast_len(121), 125);
        assert_eq!(next_fast_len(128), 128);
        assert_eq!(next_fast_len(143), 144);
        assert_eq!(next_fast_len(1), 1);
    }
}
