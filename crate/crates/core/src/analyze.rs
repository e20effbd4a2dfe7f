//! Image metrics and slice export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array2, Array3, ArrayView2, ArrayView3, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{shape_check, Error, Result};
use crate::forward::{apply_forward, ForwardModel};
use crate::mesh::Mesh;

/// Voxel index in storage order `(z, y, x)`.
pub type Voxel = [usize; 3];

/// Storage axis for mesh axis `a` (`0 = x`, `1 = y`, `2 = z`).
fn storage_axis(a: usize) -> usize {
    2 - a
}

/// Climbs from `hint` to the nearest 3×3×3 local maximum.
pub fn climb_to_peak(image: &ArrayView3<f64>, hint: Voxel) -> Voxel {
    let (nz, ny, nx) = image.dim();
    let mut p = [hint[0].min(nz - 1), hint[1].min(ny - 1), hint[2].min(nx - 1)];
    loop {
        let mut best = p;
        for dz in -1isize..=1 {
            for dy in -1isize..=1 {
                for dx in -1isize..=1 {
                    let q = [p[0] as isize + dz, p[1] as isize + dy, p[2] as isize + dx];
                    if q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= nz as isize || q[1] >= ny as isize || q[2] >= nx as isize {
                        continue;
                    }
                    let q = [q[0] as usize, q[1] as usize, q[2] as usize];
                    if image[q] > image[best] {
                        best = q;
                    }
                }
            }
        }
        if best == p {
            return p;
        }
        p = best;
    }
}

/// Full width at half maximum along mesh axis `axis` through the local
/// maximum nearest `hint`, in meters. Crossings are linearly interpolated.
pub fn fwhm(image: &ArrayView3<f64>, mesh: &Mesh, axis: usize, hint: Voxel) -> Result<f64> {
    if axis > 2 {
        return Err(Error::Range(format!("axis {axis}")));
    }
    let peak = climb_to_peak(image, hint);
    let pv = image[peak];
    if !(pv > 0.0) {
        return Err(Error::Degenerate("no positive peak near the hint".into()));
    }
    let half = pv / 2.0;
    let sa = storage_axis(axis);
    let line: Vec<f64> = (0..image.len_of(Axis(sa)))
        .map(|i| {
            let mut q = peak;
            q[sa] = i;
            image[q]
        })
        .collect();
    let c = peak[sa];
    let mut left = None;
    for i in (0..c).rev() {
        if line[i] < half {
            left = Some(i as f64 + (half - line[i]) / (line[i + 1] - line[i]));
            break;
        }
    }
    let mut right = None;
    for i in c + 1..line.len() {
        if line[i] < half {
            right = Some(i as f64 - (half - line[i]) / (line[i - 1] - line[i]));
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Ok((r - l) * mesh.spacing[axis]),
        _ => Err(Error::Degenerate("half maximum not reached before the boundary".into())),
    }
}

fn background_values<'a>(image: &'a ArrayView3<f64>, background: &'a Array3<bool>) -> Result<Vec<f64>> {
    shape_check(image.shape(), background.shape())?;
    let v: Vec<f64> = image
        .iter()
        .zip(background.iter())
        .filter(|(_, m)| **m)
        .map(|(v, _)| *v)
        .collect();
    if v.is_empty() {
        return Err(Error::Degenerate("empty background region".into()));
    }
    Ok(v)
}

fn peak_values(image: &ArrayView3<f64>, peaks: &[Voxel]) -> Result<Vec<f64>> {
    if peaks.is_empty() {
        return Err(Error::Degenerate("no signal peaks given".into()));
    }
    peaks
        .iter()
        .map(|p| image.get(*p).copied().ok_or_else(|| Error::Range(format!("peak {p:?} outside image"))))
        .collect()
}

/// Mean peak intensity over the background standard deviation.
pub fn snr_std(image: &ArrayView3<f64>, peaks: &[Voxel], background: &Array3<bool>) -> Result<f64> {
    let pv = peak_values(image, peaks)?;
    let bg = background_values(image, background)?;
    let mean = bg.iter().sum::<f64>() / bg.len() as f64;
    let var = bg.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / bg.len() as f64;
    if var == 0.0 {
        return Err(Error::Degenerate("background standard deviation is zero".into()));
    }
    Ok(pv.iter().sum::<f64>() / pv.len() as f64 / var.sqrt())
}

/// Largest peak intensity over the largest background magnitude.
pub fn snr_peak(image: &ArrayView3<f64>, peaks: &[Voxel], background: &Array3<bool>) -> Result<f64> {
    let pv = peak_values(image, peaks)?;
    let bg = background_values(image, background)?;
    let bmax = bg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if bmax == 0.0 {
        return Err(Error::Degenerate("background is identically zero".into()));
    }
    Ok(pv.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v)) / bmax)
}

/// `‖Aρ - d‖₂ / ‖d‖₂` for `rho` on the FOV or the padded mesh.
pub fn fit_error(data: &[Array3<f64>], model: &ForwardModel, rho: &ArrayView3<f64>) -> Result<f64> {
    let padded = if rho.dim() == model.padded_dim() {
        rho.to_owned()
    } else {
        model.pad_to_model(rho)?
    };
    let pred = apply_forward(model, &padded.view())?;
    if pred.len() != data.len() {
        return Err(Error::Shape { expected: vec![pred.len()], got: vec![data.len()] });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (p, d) in pred.iter().zip(data) {
        shape_check(p.shape(), d.shape())?;
        num += (p - d).iter().map(|v| v * v).sum::<f64>();
        den += d.iter().map(|v| v * v).sum::<f64>();
    }
    if den == 0.0 {
        return Err(Error::Degenerate("data norm is zero".into()));
    }
    Ok((num / den).sqrt())
}

/// Search box in storage order, inclusive bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoxelBox {
    pub lo: Voxel,
    pub hi: Voxel,
}

/// Strict 3×3×3 local maxima above `min_value`, strongest first.
pub fn find_peaks(image: &ArrayView3<f64>, within: Option<VoxelBox>, min_value: f64) -> Vec<Voxel> {
    let (nz, ny, nx) = image.dim();
    let b = within.unwrap_or(VoxelBox { lo: [0; 3], hi: [nz - 1, ny - 1, nx - 1] });
    let mut out = Vec::new();
    for z in b.lo[0]..=b.hi[0].min(nz - 1) {
        for y in b.lo[1]..=b.hi[1].min(ny - 1) {
            for x in b.lo[2]..=b.hi[2].min(nx - 1) {
                let v = image[[z, y, x]];
                if v <= min_value {
                    continue;
                }
                let mut is_max = true;
                'n: for dz in -1isize..=1 {
                    for dy in -1isize..=1 {
                        for dx in -1isize..=1 {
                            if dz == 0 && dy == 0 && dx == 0 {
                                continue;
                            }
                            let q = [z as isize + dz, y as isize + dy, x as isize + dx];
                            if q[0] < 0 || q[1] < 0 || q[2] < 0 || q[0] >= nz as isize || q[1] >= ny as isize || q[2] >= nx as isize {
                                continue;
                            }
                            let w = image[[q[0] as usize, q[1] as usize, q[2] as usize]];
                            // ties broken toward the lower index
                            let before = (dz, dy, dx) < (0, 0, 0);
                            if w > v || (w == v && before) {
                                is_max = false;
                                break 'n;
                            }
                        }
                    }
                }
                if is_max {
                    out.push([z, y, x]);
                }
            }
        }
    }
    out.sort_by(|a, b| image[*b].total_cmp(&image[*a]).then(a.cmp(b)));
    out
}

/// Local maxima along a single line of voxels (used for two-point resolution).
pub fn line_maxima(line: &[f64], min_value: f64) -> Vec<usize> {
    (0..line.len())
        .filter(|&i| {
            let v = line[i];
            v > min_value
                && (i == 0 || line[i - 1] < v)
                && (i + 1 == line.len() || line[i + 1] <= v)
        })
        .collect()
}

/// Everything except Euclidean balls of `radius` voxels around the peaks.
pub fn background_mask(dim: (usize, usize, usize), peaks: &[Voxel], radius: usize) -> Array3<bool> {
    let r2 = (radius * radius) as isize;
    Array3::from_shape_fn(dim, |(z, y, x)| {
        !peaks.iter().any(|p| {
            let d = [z as isize - p[0] as isize, y as isize - p[1] as isize, x as isize - p[2] as isize];
            d[0] * d[0] + d[1] * d[1] + d[2] * d[2] <= r2
        })
    })
}

/// Flat metrics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub peaks: Vec<Voxel>,
    pub fwhm_x: Vec<Option<f64>>,
    pub fwhm_y: Vec<Option<f64>>,
    pub fwhm_z: Vec<Option<f64>>,
    pub snr_std: Option<f64>,
    pub snr_peak: Option<f64>,
}

/// FWHM along each axis for each peak, plus both SNRs with the default
/// background (FOV minus radius-3 balls around the peaks).
pub fn metrics(image: &ArrayView3<f64>, mesh: &Mesh, peaks: &[Voxel]) -> MetricsReport {
    let bg = background_mask(image.dim(), peaks, 3);
    let per = |axis| peaks.iter().map(|p| fwhm(image, mesh, axis, *p).ok()).collect();
    MetricsReport {
        peaks: peaks.to_vec(),
        fwhm_x: per(0),
        fwhm_y: per(1),
        fwhm_z: per(2),
        snr_std: snr_std(image, peaks, &bg).ok(),
        snr_peak: snr_peak(image, peaks, &bg).ok(),
    }
}

/// Sidecar written next to exported slices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceExport {
    pub axis: usize,
    pub min: f64,
    pub max: f64,
    pub mesh: Mesh,
    pub slices: Vec<String>,
    pub mips: Vec<String>,
}

impl SliceExport {
    /// Physical value of a 16-bit gray level.
    pub fn value(&self, level: u16) -> f64 {
        self.min + (self.max - self.min) * level as f64 / 65535.0
    }
}

fn quantize(v: f64, min: f64, max: f64) -> u16 {
    if max > min {
        (((v - min) / (max - min)).clamp(0.0, 1.0) * 65535.0).round() as u16
    } else {
        0
    }
}

/// Writes a binary 16-bit PGM (big-endian samples).
pub fn write_pgm16(path: &Path, plane: &ArrayView2<f64>, min: f64, max: f64) -> Result<()> {
    let (h, w) = plane.dim();
    let mut buf = format!("P5\n{w} {h}\n65535\n").into_bytes();
    for v in plane.iter() {
        buf.extend_from_slice(&quantize(*v, min, max).to_be_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&buf)?;
    Ok(())
}

/// Reads a binary 16-bit PGM written by [`write_pgm16`].
pub fn read_pgm16(path: &Path) -> Result<Array2<u16>> {
    let bytes = fs::read(path)?;
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::Config("truncated PGM header".into()));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1;
    let bad = || Error::Config("malformed PGM header".into());
    if fields[0] != "P5" || fields[3] != "65535" {
        return Err(bad());
    }
    let w: usize = fields[1].parse().map_err(|_| bad())?;
    let h: usize = fields[2].parse().map_err(|_| bad())?;
    let body = &bytes[pos..];
    if body.len() != 2 * w * h {
        return Err(Error::Config("PGM payload size mismatch".into()));
    }
    let vals: Vec<u16> = body.chunks(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect();
    Array2::from_shape_vec((h, w), vals).map_err(|e| Error::Config(e.to_string()))
}

/// Writes every slice perpendicular to mesh axis `axis` and the maximum
/// intensity projection along each axis, with a shared min/max
/// normalization recorded in `<prefix>.json`.
pub fn export_slices(image: &ArrayView3<f64>, mesh: &Mesh, axis: usize, prefix: &Path) -> Result<SliceExport> {
    if axis > 2 {
        return Err(Error::Range(format!("axis {axis}")));
    }
    if image.dim() != mesh.dim() {
        let (a, b, c) = image.dim();
        let (x, y, z) = mesh.dim();
        return Err(Error::Shape { expected: vec![x, y, z], got: vec![a, b, c] });
    }
    let min = image.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    let max = image.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
    let stem = prefix
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into());
    let dir: PathBuf = prefix.parent().map(Path::to_path_buf).unwrap_or_default();
    if !dir.as_os_str().is_empty() {
        fs::create_dir_all(&dir)?;
    }
    let names = ["x", "y", "z"];
    let sa = storage_axis(axis);
    let mut slices = Vec::new();
    for (i, plane) in image.axis_iter(Axis(sa)).enumerate() {
        let name = format!("{stem}_{}{i:04}.pgm", names[axis]);
        write_pgm16(&dir.join(&name), &plane, min, max)?;
        slices.push(name);
    }
    let mut mips = Vec::new();
    for a in 0..3 {
        let mip = image.fold_axis(Axis(storage_axis(a)), f64::NEG_INFINITY, |m, v| m.max(*v));
        let name = format!("{stem}_mip_{}.pgm", names[a]);
        write_pgm16(&dir.join(&name), &mip.view(), min, max)?;
        mips.push(name);
    }
    let meta = SliceExport { axis, min, max, mesh: *mesh, slices, mips };
    fs::write(dir.join(format!("{stem}.json")), serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(sigma: f64) -> (Array3<f64>, Mesh) {
        let mesh = Mesh::centered([31, 31, 31], [1e-3; 3]).unwrap();
        let img = Array3::from_shape_fn(mesh.dim(), |(z, y, x)| {
            let r2 = [z, y, x].iter().map(|&v| (v as f64 - 15.0).powi(2)).sum::<f64>();
            (-r2 / (2.0 * sigma * sigma)).exp()
        });
        (img, mesh)
    }

    #[test]
    fn gaussian_fwhm() {
        let (img, mesh) = gaussian(2.0);
        for axis in 0..3 {
            let w = fwhm(&img.view(), &mesh, axis, [14, 16, 15]).unwrap();
            let expected = 2.0 * (2.0 * 2f64.ln()).sqrt() * 2.0 * 1e-3;
            assert!((w - expected).abs() < 0.05 * expected, "{w} vs {expected}");
            let doubled = img.mapv(|v| 2.0 * v);
            assert_eq!(fwhm(&doubled.view(), &mesh, axis, [15, 15, 15]).unwrap(), w);
        }
    }

    #[test]
    fn impulse_fwhm_is_one_voxel() {
        let mesh = Mesh::centered([5, 5, 5], [2e-3; 3]).unwrap();
        let mut img = Array3::zeros(mesh.dim());
        img[[2, 2, 2]] = 1.0;
        assert!((fwhm(&img.view(), &mesh, 1, [2, 2, 2]).unwrap() - 2e-3).abs() < 1e-15);
        let flat = Array3::from_elem(mesh.dim(), 1.0);
        assert!(fwhm(&flat.view(), &mesh, 0, [2, 2, 2]).is_err());
    }

    #[test]
    fn snr_definitions() {
        let mut img = Array3::zeros((4, 4, 4));
        // background values ±1 (std 1), one value 3 (max)
        for (i, v) in img.iter_mut().enumerate() {
            *v = if i % 2 == 0 { 1.0 } else { -1.0 };
        }
        img[[0, 0, 1]] = 3.0;
        img[[0, 0, 2]] = -3.0;
        img[[3, 3, 3]] = 10.0;
        let mut bg = Array3::from_elem((4, 4, 4), true);
        bg[[3, 3, 3]] = false;
        let peaks = [[3, 3, 3]];
        assert!((snr_peak(&img.view(), &peaks, &bg).unwrap() - 10.0 / 3.0).abs() < 1e-12);
        let s = snr_std(&img.view(), &peaks, &bg).unwrap();
        let scaled = img.mapv(|v| 7.0 * v);
        assert!((snr_std(&scaled.view(), &peaks, &bg).unwrap() - s).abs() < 1e-12 * s);
        assert!(snr_std(&img.view(), &peaks, &Array3::from_elem((4, 4, 4), false)).is_err());
        assert!(snr_std(&img.view(), &[], &bg).is_err());
    }

    #[test]
    fn peaks_and_masks() {
        let (img, _) = gaussian(2.0);
        let p = find_peaks(&img.view(), None, 0.5);
        assert_eq!(p, vec![[15, 15, 15]]);
        let bg = background_mask(img.dim(), &p, 3);
        assert!(!bg[[15, 15, 18]]);
        assert!(bg[[15, 15, 19]]);
        assert_eq!(line_maxima(&[0.0, 1.0, 0.5, 2.0, 0.0], 0.1), vec![1, 3]);
        assert_eq!(line_maxima(&[0.0, 1.0, 1.0, 0.0], 0.1), vec![1]);
    }

    #[test]
    fn export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = Mesh::centered([5, 4, 3], [1e-3; 3]).unwrap();
        let img = Array3::from_shape_fn(mesh.dim(), |(z, y, x)| (z * 20 + y * 5 + x) as f64 * 0.37 - 2.0);
        let meta = export_slices(&img.view(), &mesh, 2, &dir.path().join("rec")).unwrap();
        assert_eq!(meta.slices.len(), 3);
        for (z, name) in meta.slices.iter().enumerate() {
            let q = read_pgm16(&dir.path().join(name)).unwrap();
            assert_eq!(q.dim(), (4, 5));
            for ((y, x), &l) in q.indexed_iter() {
                let err = (meta.value(l) - img[[z, y, x]]).abs();
                assert!(err <= (meta.max - meta.min) / 65535.0 / 2.0 + 1e-12);
            }
        }
        let back: SliceExport =
            serde_json::from_slice(&fs::read(dir.path().join("rec.json")).unwrap()).unwrap();
        assert_eq!(back, meta);
        let mut point = Array3::zeros(mesh.dim());
        point[[1, 2, 3]] = 1.0;
        let m = export_slices(&point.view(), &mesh, 0, &dir.path().join("pt")).unwrap();
        let mip = read_pgm16(&dir.path().join(&m.mips[2])).unwrap();
        assert_eq!(mip.iter().filter(|v| **v > 0).count(), 1);
        assert_eq!(mip[[2, 3]], 65535);
        let flat = Array3::from_elem(mesh.dim(), 4.0);
        let f = export_slices(&flat.view(), &mesh, 1, &dir.path().join("flat")).unwrap();
        let s = read_pgm16(&dir.path().join(&f.slices[0])).unwrap();
        assert!(s.iter().all(|v| *v == s[[0, 0]]));
    }
}
