//! Harmonic point-spread functions.
//!
//! For a sinusoidal drive `A sin(2πf0 t)` the `k`-th harmonic band of a unit
//! point source is, to leading order in `γA`,
//!
//! ```text
//! s_k(ξ) ≈ 2π m f0 · 2^-k · i^(1-k) · c_k γ^-k ∂z^(k-1) h33(ξ),   c_k = (γA)^k / (k-1)!
//! ```
//!
//! which reduces on the drive axis to `c_k L^(k)(γz)`. Kernels are stored
//! real (the phase `i^(1-k)` is removed by calibration) with the magnitude
//! prefactor folded in and recorded alongside.

use std::f64::consts::PI;

use ndarray::{s, Array3, Axis, Zip};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::Mesh;
use crate::physics::{
    langevin_derivative, langevin_prime_complex, psf_tensor_with, Phantom, PointSource,
    ScannerConfig, Sensitivity, MAX_DERIVATIVE_ORDER,
};
use crate::portrait::{
    correct_stack, demodulate_complex, form_portraits, portrait_mesh, stack_phases, Gridding,
    PhaseMode, WindowKind, WindowSpec,
};
use crate::simulate::simulate_all_slabs;

/// Default relative threshold below which kernel tails are cut.
pub const TRUNCATION_THRESHOLD: f64 = 1e-4;

/// `c_k = (γA)^k / (k-1)!`.
pub fn harmonic_coefficient(gamma_a: f64, k: usize) -> f64 {
    let fact: f64 = (1..k).map(|v| v as f64).product();
    gamma_a.powi(k as i32) / fact
}

/// Magnitude of the real-drive band prefactor `2π m f0 c_k 2^-k`.
pub fn real_drive_prefactor(k: usize, cfg: &ScannerConfig) -> f64 {
    2.0 * PI * cfg.magnetic_moment * cfg.drive_frequency * harmonic_coefficient(cfg.gamma_a(), k)
        / 2f64.powi(k as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PsfSource {
    Simulated,
    Analytic,
    External,
}

/// Per-harmonic normalization and post-processing record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub harmonic: usize,
    /// `2π m f0 c_k 2^-k`.
    pub prefactor: f64,
    /// Whether `prefactor` is already multiplied into the kernel values.
    pub folded: bool,
    /// Phase removed to make the kernel real, radians.
    pub phase: f64,
    /// Energy fraction lost by truncation.
    pub tail_energy: f64,
    /// Largest z-column sum removed, relative to the kernel peak.
    pub column_sum_removed: f64,
    pub source: PsfSource,
}

/// Real harmonic kernels on a centered mesh, indexed `[harmonic][component]`.
///
/// `components` lists the receive axes (`0 = x`, `1 = y`, `2 = z`) with a
/// kernel; the kernel for component `j` maps `b_j ρ` to the portrait.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfStack {
    pub harmonics: Vec<usize>,
    pub components: Vec<usize>,
    pub kernels: Vec<Vec<Array3<f64>>>,
    pub mesh: Mesh,
    pub records: Vec<KernelRecord>,
}

fn is_centered(mesh: &Mesh) -> bool {
    let c = mesh.center_index();
    (0..3).all(|a| {
        c[a] < mesh.shape[a] && (mesh.coord(a, c[a])).abs() <= 1e-6 * mesh.spacing[a]
    })
}

impl PsfStack {
    /// Kernels supplied directly (e.g. measured), unit prefactor.
    pub fn new(
        harmonics: Vec<usize>,
        components: Vec<usize>,
        kernels: Vec<Vec<Array3<f64>>>,
        mesh: Mesh,
    ) -> Result<PsfStack> {
        let records = harmonics
            .iter()
            .map(|&k| KernelRecord {
                harmonic: k,
                prefactor: 1.0,
                folded: true,
                phase: 0.0,
                tail_energy: 0.0,
                column_sum_removed: 0.0,
                source: PsfSource::External,
            })
            .collect();
        let stack = PsfStack { harmonics, components, kernels, mesh, records };
        stack.validate()?;
        Ok(stack)
    }

    pub fn validate(&self) -> Result<()> {
        self.mesh.validate()?;
        if !is_centered(&self.mesh) {
            return Err(Error::Config("PSF mesh must be centered on the origin".into()));
        }
        if self.harmonics.is_empty() || self.components.is_empty() {
            return Err(Error::Config("PSF stack needs a harmonic and a component".into()));
        }
        if self.components.iter().any(|&c| c > 2) {
            return Err(Error::Config("receive components must be 0, 1 or 2".into()));
        }
        if self.kernels.len() != self.harmonics.len() || self.records.len() != self.harmonics.len() {
            return Err(Error::Config("one kernel set and record per harmonic required".into()));
        }
        let dim = self.mesh.dim();
        for set in &self.kernels {
            if set.len() != self.components.len() {
                return Err(Error::Config("one kernel per component required".into()));
            }
            for k in set {
                if k.dim() != dim {
                    let (a, b, c) = k.dim();
                    return Err(Error::Shape {
                        expected: vec![dim.0, dim.1, dim.2],
                        got: vec![a, b, c],
                    });
                }
                if k.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("PSF kernel".into()));
                }
            }
        }
        Ok(())
    }

    pub fn harmonic_index(&self, k: usize) -> Option<usize> {
        self.harmonics.iter().position(|&h| h == k)
    }

    pub fn kernel(&self, k: usize, component: usize) -> Option<&Array3<f64>> {
        let h = self.harmonic_index(k)?;
        let c = self.components.iter().position(|&v| v == component)?;
        Some(&self.kernels[h][c])
    }

    /// Index of the origin voxel, storage order `(z, y, x)`.
    pub fn center(&self) -> (usize, usize, usize) {
        let c = self.mesh.center_index();
        (c[2], c[1], c[0])
    }

    /// Largest voxel offset from the center along `(x, y, z)`.
    pub fn half_extent(&self) -> [usize; 3] {
        let c = self.mesh.center_index();
        let mut h = [0usize; 3];
        for a in 0..3 {
            h[a] = c[a].max(self.mesh.shape[a] - 1 - c[a]);
        }
        h
    }

    /// Stack restricted to `harmonics`.
    pub fn select(&self, harmonics: &[usize]) -> Result<PsfStack> {
        let mut out = PsfStack {
            harmonics: Vec::new(),
            components: self.components.clone(),
            kernels: Vec::new(),
            mesh: self.mesh,
            records: Vec::new(),
        };
        for &k in harmonics {
            let i = self.harmonic_index(k).ok_or(Error::MissingHarmonic(k))?;
            out.harmonics.push(k);
            out.kernels.push(self.kernels[i].clone());
            out.records.push(self.records[i].clone());
        }
        Ok(out)
    }

    /// Removes the mean of every z-column so that each kernel annihilates
    /// constants along the drive axis.
    pub fn remove_column_means(&self) -> PsfStack {
        let mut out = self.clone();
        for (h, set) in out.kernels.iter_mut().enumerate() {
            if self.harmonics[h] < 2 {
                continue;
            }
            let mut worst: f64 = 0.0;
            for kern in set.iter_mut() {
                let peak = kern.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let nz = kern.dim().0 as f64;
                let means = kern.mean_axis(Axis(0)).expect("nonempty kernel");
                for mut plane in kern.outer_iter_mut() {
                    plane -= &means;
                }
                if peak > 0.0 {
                    let m = means.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    worst = worst.max(m * nz / peak);
                }
            }
            out.records[h].column_sum_removed = worst;
        }
        out
    }

    /// Crops all kernels to the smallest centered box holding every value
    /// above `threshold` times the kernel's own peak.
    pub fn truncate(&self, threshold: f64) -> PsfStack {
        let (cz, cy, cx) = self.center();
        let (nz, ny, nx) = self.mesh.dim();
        let mut hw = [0usize; 3]; // z, y, x
        for kern in self.kernels.iter().flatten() {
            let peak = kern.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let thr = threshold * peak;
            for ((iz, iy, ix), v) in kern.indexed_iter() {
                if v.abs() > thr {
                    hw[0] = hw[0].max(iz.abs_diff(cz));
                    hw[1] = hw[1].max(iy.abs_diff(cy));
                    hw[2] = hw[2].max(ix.abs_diff(cx));
                }
            }
        }
        let lo = [cz.saturating_sub(hw[0]), cy.saturating_sub(hw[1]), cx.saturating_sub(hw[2])];
        let hi = [(cz + hw[0]).min(nz - 1), (cy + hw[1]).min(ny - 1), (cx + hw[2]).min(nx - 1)];
        let mut out = self.clone();
        for (h, set) in out.kernels.iter_mut().enumerate() {
            let mut total = 0.0;
            let mut kept = 0.0;
            for kern in set.iter_mut() {
                total += kern.iter().map(|v| v * v).sum::<f64>();
                let cropped = kern
                    .slice(s![lo[0]..=hi[0], lo[1]..=hi[1], lo[2]..=hi[2]])
                    .to_owned();
                kept += cropped.iter().map(|v| v * v).sum::<f64>();
                *kern = cropped;
            }
            out.records[h].tail_energy = if total > 0.0 { (total - kept) / total } else { 0.0 };
        }
        out.mesh = Mesh {
            shape: [hi[2] - lo[2] + 1, hi[1] - lo[1] + 1, hi[0] - lo[0] + 1],
            spacing: self.mesh.spacing,
            origin: [
                self.mesh.coord(0, lo[2]),
                self.mesh.coord(1, lo[1]),
                self.mesh.coord(2, lo[0]),
            ],
        };
        out
    }
}

/// Copies `a`, whose origin voxel is `ca`, into a zero array of shape `dim`
/// whose origin voxel is `cd`. Values falling outside are dropped.
pub(crate) fn embed_at(
    a: &Array3<f64>,
    ca: (usize, usize, usize),
    dim: (usize, usize, usize),
    cd: (usize, usize, usize),
) -> Array3<f64> {
    let mut out = Array3::zeros(dim);
    for ((iz, iy, ix), &v) in a.indexed_iter() {
        let z = iz as isize - ca.0 as isize + cd.0 as isize;
        let y = iy as isize - ca.1 as isize + cd.1 as isize;
        let x = ix as isize - ca.2 as isize + cd.2 as isize;
        if z >= 0 && y >= 0 && x >= 0 && (z as usize) < dim.0 && (y as usize) < dim.1 && (x as usize) < dim.2 {
            out[[z as usize, y as usize, x as usize]] = v;
        }
    }
    out
}

/// `scale · c_k L^(k)(γz)` sampled at `axis` (m).
pub fn analytic_psf_1d(k: usize, gamma: f64, a: f64, scale: f64, axis: &[f64]) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::Range(format!("harmonic {k} < 2")));
    }
    let ck = harmonic_coefficient(gamma * a, k) * scale;
    axis.iter()
        .map(|&z| Ok(ck * langevin_derivative(gamma * z, k)?))
        .collect()
}

const REFINE: usize = 5;

/// Fourth-order central difference `[1, -8, 0, 8, -1] / 12h`; the output is
/// two samples shorter at each end.
fn central_difference(f: &[f64], h: f64) -> Vec<f64> {
    (2..f.len() - 2)
        .map(|i| (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h))
        .collect()
}

/// `c_k γ^-k ∂z^(k-1) h_{3j}` on `mesh`, for receive component `j`.
///
/// The derivative is taken by nested central differences on a 5× refined
/// z axis and decimated back onto the mesh planes.
pub fn analytic_psf_3d_component(
    k: usize,
    cfg: &ScannerConfig,
    mesh: &Mesh,
    component: usize,
) -> Result<Array3<f64>> {
    if k < 2 {
        return Err(Error::Range(format!("harmonic {k} < 2")));
    }
    if k > MAX_DERIVATIVE_ORDER {
        return Err(Error::Range(format!(
            "derivative order {} beyond supported {MAX_DERIVATIVE_ORDER}",
            k - 1
        )));
    }
    if component > 2 {
        return Err(Error::Range(format!("receive component {component}")));
    }
    mesh.validate()?;
    let (nz, ny, nx) = mesh.dim();
    let h = mesh.spacing[2] / REFINE as f64;
    let ext = 2 * (k - 1);
    let nf = (nz - 1) * REFINE + 1 + 2 * ext;
    let a = cfg.excursion();
    let scale = a.powi(k as i32) / (1..k).map(|v| v as f64).product::<f64>();
    let g = cfg.gradient_matrix;
    let beta = cfg.beta;
    let columns: Vec<Vec<f64>> = (0..ny * nx)
        .into_par_iter()
        .map(|c| {
            let (iy, ix) = (c / nx, c % nx);
            let x = mesh.coord(0, ix);
            let y = mesh.coord(1, iy);
            let z0 = mesh.origin[2] - ext as f64 * h;
            let mut f: Vec<f64> = (0..nf)
                .map(|j| psf_tensor_with(&[x, y, z0 + j as f64 * h], &g, beta)[2][component])
                .collect();
            for _ in 0..k - 1 {
                f = central_difference(&f, h);
            }
            (0..nz).map(|iz| scale * f[iz * REFINE]).collect()
        })
        .collect();
    let mut out = Array3::zeros((nz, ny, nx));
    for (c, col) in columns.iter().enumerate() {
        let (iy, ix) = (c / nx, c % nx);
        for (iz, v) in col.iter().enumerate() {
            out[[iz, iy, ix]] = *v;
        }
    }
    Ok(out)
}

/// `c_k γ^-k ∂z^(k-1) h33` on `mesh`.
pub fn analytic_psf_3d(k: usize, cfg: &ScannerConfig, mesh: &Mesh) -> Result<Array3<f64>> {
    analytic_psf_3d_component(k, cfg, mesh, 2)
}

/// Options shared by the simulated and analytic PSF builders.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfOptions {
    pub components: Vec<usize>,
    /// Relative truncation threshold; `None` keeps the full mesh.
    pub truncation: Option<f64>,
    pub remove_column_mean: bool,
    /// Band window for the simulated path; defaults to Hann at `f0/2`.
    pub window: Option<WindowSpec>,
    pub phase: PhaseMode,
}

impl Default for PsfOptions {
    fn default() -> Self {
        PsfOptions {
            components: vec![2],
            truncation: Some(TRUNCATION_THRESHOLD),
            remove_column_mean: true,
            window: None,
            phase: PhaseMode::Estimate,
        }
    }
}

impl PsfOptions {
    /// Full-mesh kernels without post-processing.
    pub fn raw() -> Self {
        PsfOptions {
            truncation: None,
            remove_column_mean: false,
            ..Self::default()
        }
    }
}

fn finish(stack: PsfStack, opts: &PsfOptions) -> Result<PsfStack> {
    let stack = match opts.truncation {
        Some(t) => stack.truncate(t),
        None => stack,
    };
    let stack = if opts.remove_column_mean { stack.remove_column_means() } else { stack };
    stack.validate()?;
    Ok(stack)
}

fn check_harmonics(harmonics: &[usize], cfg: &ScannerConfig) -> Result<()> {
    if harmonics.is_empty() {
        return Err(Error::Config("no harmonics requested".into()));
    }
    for &k in harmonics {
        if k < 2 {
            return Err(Error::Range(format!("harmonic {k} < 2")));
        }
        if k as f64 * cfg.drive_frequency >= cfg.sample_rate / 2.0 {
            return Err(Error::Nyquist(format!("harmonic {k} above fs/2")));
        }
    }
    Ok(())
}

/// Analytic kernels with the real-drive prefactor folded in.
pub fn analytic_psf_stack(
    cfg: &ScannerConfig,
    harmonics: &[usize],
    mesh: &Mesh,
    opts: &PsfOptions,
) -> Result<PsfStack> {
    check_harmonics(harmonics, cfg)?;
    if !is_centered(mesh) {
        return Err(Error::Config("PSF mesh must be centered on the origin".into()));
    }
    let mut kernels = Vec::new();
    let mut records = Vec::new();
    for &k in harmonics {
        let pre = real_drive_prefactor(k, cfg);
        let c_k = harmonic_coefficient(cfg.gamma_a(), k);
        let set = opts
            .components
            .iter()
            .map(|&j| {
                let mut a = analytic_psf_3d_component(k, cfg, mesh, j)?;
                a.mapv_inplace(|v| v * pre / c_k);
                Ok(a)
            })
            .collect::<Result<Vec<_>>>()?;
        kernels.push(set);
        records.push(KernelRecord {
            harmonic: k,
            prefactor: pre,
            folded: true,
            phase: crate::portrait::drive_phase(k),
            tail_energy: 0.0,
            column_sum_removed: 0.0,
            source: PsfSource::Analytic,
        });
    }
    finish(
        PsfStack {
            harmonics: harmonics.to_vec(),
            components: opts.components.clone(),
            kernels,
            mesh: *mesh,
            records,
        },
        opts,
    )
}

/// PSFs by simulation with the default options.
pub fn simulate_psf(cfg: &ScannerConfig, harmonics: &[usize], mesh: &Mesh) -> Result<PsfStack> {
    simulate_psf_with(cfg, harmonics, mesh, &PsfOptions::default())
}

/// Scanner configuration that rasters exactly the `xy` extent of a centered
/// PSF mesh and places one slab on every z plane.
pub fn psf_scan_config(cfg: &ScannerConfig, mesh: &Mesh) -> Result<ScannerConfig> {
    let (nx, ny) = (mesh.shape[0], mesh.shape[1]);
    if nx % 2 == 0 || ny % 2 == 0 || ny < 3 {
        return Err(Error::Config(format!(
            "PSF mesh needs odd x/y counts with ny >= 3, got {nx} x {ny}"
        )));
    }
    let mut scfg = cfg.clone();
    scfg.fov = [(nx - 1) as f64 * mesh.spacing[0], (ny - 1) as f64 * mesh.spacing[1], cfg.fov[2]];
    scfg.raster_lines = ny;
    scfg.z_slab_positions = mesh.axis(2);
    Ok(scfg)
}

/// Simulates a unit point source at the origin with one slab per mesh
/// z plane, forms the harmonic portraits and turns them into real kernels.
///
/// The calibration phase of each harmonic is taken from the `z` component
/// and shared by all components.
pub fn simulate_psf_with(
    cfg: &ScannerConfig,
    harmonics: &[usize],
    mesh: &Mesh,
    opts: &PsfOptions,
) -> Result<PsfStack> {
    check_harmonics(harmonics, cfg)?;
    cfg.validate_physics()?;
    if !is_centered(mesh) {
        return Err(Error::Config("PSF mesh must be centered on the origin".into()));
    }
    if mesh.spacing[2] > 1e-3 * (1.0 + 1e-9) {
        log::warn!(
            "PSF mesh z spacing {:.3} mm exceeds 1 mm; harmonic kernels may be undersampled",
            mesh.spacing[2] * 1e3
        );
    }
    let scfg = psf_scan_config(cfg, mesh)?;
    let pmesh = portrait_mesh(&scfg, Some(mesh.spacing[0]))?;
    let window = opts.window.unwrap_or_else(|| WindowSpec::default_for(cfg.drive_frequency));
    let mut order = opts.components.clone();
    // phase reference: z if present
    order.sort_by_key(|&c| if c == 2 { 0 } else { 1 });
    let mut phases: Option<Vec<f64>> = None;
    let mut per_component = vec![Vec::new(); opts.components.len()];
    for &comp in &order {
        let mut b = [0.0; 3];
        b[comp] = 1.0;
        let phantom = Phantom::points(vec![PointSource { position: [0.0; 3], weight: 1.0 }])
            .with_sensitivity(Sensitivity::Uniform(b));
        let signals = simulate_all_slabs(&phantom, &scfg)?;
        let stack = form_portraits(&signals, &scfg, harmonics, &window, &pmesh, Gridding::Bilinear)?;
        if phases.is_none() {
            phases = Some(stack_phases(&stack, &opts.phase)?);
        }
        let (real, _) = correct_stack(&stack, phases.as_ref().expect("set above"))?;
        let slot = opts.components.iter().position(|&c| c == comp).expect("listed");
        per_component[slot] = real.data;
    }
    let phases = phases.expect("at least one component");
    let kernels: Vec<Vec<Array3<f64>>> = (0..harmonics.len())
        .map(|h| per_component.iter().map(|c| c[h].clone()).collect())
        .collect();
    let records = harmonics
        .iter()
        .zip(&phases)
        .map(|(&k, &p)| KernelRecord {
            harmonic: k,
            prefactor: real_drive_prefactor(k, cfg),
            folded: true,
            phase: p,
            tail_energy: 0.0,
            column_sum_removed: 0.0,
            source: PsfSource::Simulated,
        })
        .collect();
    finish(
        PsfStack {
            harmonics: harmonics.to_vec(),
            components: opts.components.clone(),
            kernels,
            mesh: *mesh,
            records,
        },
        opts,
    )
}

/// Relative L2 error `‖s - αa‖/‖s‖` per harmonic of `simulated`, with `α`
/// the least-squares scale of `analytic` onto `simulated` (sign included).
/// Kernels on meshes of different extent are compared on the larger box.
pub fn compare_psf(simulated: &PsfStack, analytic: &PsfStack) -> Result<Vec<f64>> {
    let same_spacing = (0..3).all(|a| {
        (simulated.mesh.spacing[a] - analytic.mesh.spacing[a]).abs() <= 1e-9 * simulated.mesh.spacing[a]
    });
    if !same_spacing || simulated.components != analytic.components {
        return Err(Error::Shape {
            expected: simulated.mesh.shape.to_vec(),
            got: analytic.mesh.shape.to_vec(),
        });
    }
    let (sd, ad) = (simulated.mesh.dim(), analytic.mesh.dim());
    let dim = (sd.0.max(ad.0), sd.1.max(ad.1), sd.2.max(ad.2));
    let cd = (dim.0 / 2, dim.1 / 2, dim.2 / 2);
    simulated
        .harmonics
        .iter()
        .enumerate()
        .map(|(h, &k)| {
            let ha = analytic.harmonic_index(k).ok_or(Error::MissingHarmonic(k))?;
            let mut sa = 0.0;
            let mut aa = 0.0;
            let mut ss = 0.0;
            let pairs: Vec<_> = simulated.kernels[h]
                .iter()
                .zip(&analytic.kernels[ha])
                .map(|(s, a)| {
                    (
                        embed_at(s, simulated.center(), dim, cd),
                        embed_at(a, analytic.center(), dim, cd),
                    )
                })
                .collect();
            for (s, a) in &pairs {
                Zip::from(s).and(a).for_each(|&x, &y| {
                    sa += x * y;
                    aa += y * y;
                    ss += x * x;
                });
            }
            if ss == 0.0 {
                return Err(Error::Degenerate(format!("simulated kernel {k} is zero")));
            }
            let alpha = if aa > 0.0 { sa / aa } else { 0.0 };
            // ‖s - αa‖² = ss - 2α sa + α² aa
            let r = (ss - 2.0 * alpha * sa + alpha * alpha * aa).max(0.0);
            Ok((r / ss).sqrt())
        })
        .collect()
}

/// Numerical set-up of the Theorem-1 check, in units of `1/γ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Setup {
    pub samples_per_period: usize,
    /// FFP travel per drive period, in `1/γ`.
    pub shift_per_period: f64,
    /// The envelope covers `γ(tΔ - x0)` in `[-span, span]`.
    pub span: f64,
    /// Periods excluded at each end of the comparison.
    pub margin_periods: usize,
}

impl Default for Theorem1Setup {
    fn default() -> Self {
        Theorem1Setup {
            samples_per_period: 64,
            shift_per_period: 0.005,
            span: 8.0,
            margin_periods: 40,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Entry {
    pub gamma_a: f64,
    pub harmonic: usize,
    /// `‖env - ref‖₂ / ‖ref‖₂`.
    pub relative_l2: f64,
    /// `max|env - ref| / max|ref|`.
    pub max_relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Theorem1Report {
    pub setup: Theorem1Setup,
    pub entries: Vec<Theorem1Entry>,
}

impl Theorem1Report {
    pub fn worst_l2(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.relative_l2))
    }
}

/// Compares the harmonic envelopes of a complex-exponential drive with the
/// series prediction `i2π m f0 c_k L^(k)(γ(tΔ - x0))` for harmonics `2..=k_max`.
pub fn verify_theorem1(cfg: &ScannerConfig, gamma_a: &[f64], k_max: usize) -> Result<Theorem1Report> {
    verify_theorem1_with(cfg, gamma_a, k_max, &Theorem1Setup::default())
}

/// Complex envelope of harmonic `k` for one `γA`, returned with the reference.
pub fn theorem1_envelopes(
    cfg: &ScannerConfig,
    gamma_a: f64,
    k: usize,
    setup: &Theorem1Setup,
) -> Result<(Vec<Complex64>, Vec<Complex64>)> {
    let gamma = cfg.gamma();
    let f0 = cfg.drive_frequency;
    let m = cfg.magnetic_moment;
    let spp = setup.samples_per_period;
    let fs = spp as f64 * f0;
    let a = gamma_a / gamma;
    let delta = setup.shift_per_period / gamma * f0;
    let periods = if setup.shift_per_period > 0.0 {
        (2.0 * setup.span / setup.shift_per_period).ceil() as usize
    } else {
        200
    };
    let n = periods * spp;
    let w = 2.0 * PI * f0;
    let u0 = -setup.span / gamma;
    // s(t) = m d/dt L(γ(u(t) + A e^{iωt})) with x0 = 0, b1 = 1
    let signal: Vec<Complex64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let t = i as f64 / fs;
            let e = Complex64::from_polar(1.0, w * t);
            let z = u0 + delta * t + a * e;
            let zdot = Complex64::new(delta, 0.0) + Complex64::i() * w * a * e;
            m * gamma * zdot * langevin_prime_complex(z * gamma)
        })
        .collect();
    // Raised-cosine taper over half the excluded margin: the record is
    // treated as periodic and the envelopes differ at its two ends.
    let ramp = (setup.margin_periods / 2) * spp;
    let signal: Vec<Complex64> = signal
        .into_iter()
        .enumerate()
        .map(|(i, v)| {
            let e = i.min(n - 1 - i);
            if e >= ramp {
                v
            } else {
                v * 0.5 * (1.0 - (PI * e as f64 / ramp as f64).cos())
            }
        })
        .collect();
    let window = WindowSpec { kind: WindowKind::Tophat, half_bandwidth: f0 / 2.0 };
    let env = demodulate_complex(&signal, fs, k as f64 * f0, &window);
    let pre = Complex64::i() * 2.0 * PI * m * f0 * harmonic_coefficient(gamma_a, k);
    let reference = (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            Ok(pre * langevin_derivative(gamma * (u0 + delta * t), k)?)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((env, reference))
}

/// [`verify_theorem1`] with an explicit numerical set-up.
pub fn verify_theorem1_with(
    cfg: &ScannerConfig,
    gamma_a: &[f64],
    k_max: usize,
    setup: &Theorem1Setup,
) -> Result<Theorem1Report> {
    if k_max < 2 || k_max > MAX_DERIVATIVE_ORDER || 2 * k_max >= setup.samples_per_period {
        return Err(Error::Range(format!("k_max {k_max} unsupported")));
    }
    let mut entries = Vec::new();
    for &ga in gamma_a {
        if !(ga.abs() < PI) {
            return Err(Error::Range(format!("|γA| = {ga} outside the convergence radius π")));
        }
        if ga == 0.0 {
            return Err(Error::Range("γA = 0 carries no harmonics".into()));
        }
        for k in 2..=k_max {
            let (env, reference) = theorem1_envelopes(cfg, ga, k, setup)?;
            let skip = setup.margin_periods * setup.samples_per_period;
            let range = skip.min(env.len())..env.len().saturating_sub(skip);
            let mut num = 0.0;
            let mut den = 0.0;
            let mut max_err: f64 = 0.0;
            let mut max_ref: f64 = 0.0;
            for i in range {
                let d = (env[i] - reference[i]).norm();
                num += d * d;
                den += reference[i].norm_sqr();
                max_err = max_err.max(d);
                max_ref = max_ref.max(reference[i].norm());
            }
            if den == 0.0 {
                return Err(Error::Degenerate("empty comparison window".into()));
            }
            entries.push(Theorem1Entry {
                gamma_a: ga,
                harmonic: k,
                relative_l2: (num / den).sqrt(),
                max_relative: max_err / max_ref,
            });
        }
    }
    Ok(Theorem1Report { setup: *setup, entries })
}

/// Taylor coefficients of `L'` about the real point `x0`:
/// `L'(x0 + w) = Σ_n a_n w^n`, `n < terms`.
///
/// Computed from the Cauchy integral on a circle just inside the radius of
/// convergence `sqrt(x0² + π²)`.
pub fn lprime_taylor_coefficients(x0: f64, terms: usize) -> Vec<f64> {
    let radius = (x0 * x0 + PI * PI).sqrt();
    let r = 0.98 * radius;
    let m = 4096.max(4 * terms).next_power_of_two();
    let mut buf: Vec<Complex64> = (0..m)
        .map(|j| {
            let th = 2.0 * PI * j as f64 / m as f64;
            langevin_prime_complex(Complex64::new(x0, 0.0) + Complex64::from_polar(r, th))
        })
        .collect();
    rustfft::FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    (0..terms)
        .map(|n| buf[n].re / m as f64 / r.powi(n as i32))
        .collect()
}

/// Partial-sum behaviour of the expansion `h(a + b) = Σ_n γ^n L^(n+1)(γa) b^n / n!`
/// of the 1D PSF `h(x) = L'(γx)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaylorCheck {
    /// `|γb|` relative to the radius `sqrt(γ²a² + π²)`.
    pub ratio: f64,
    pub terms: usize,
    /// `|S_N - L'(γ(a+b))|`.
    pub error: f64,
    /// Magnitude of the last term included.
    pub last_term: f64,
}

impl TaylorCheck {
    pub fn converged(&self, tol: f64) -> bool {
        self.error < tol && self.last_term < tol
    }
}

/// Evaluates the partial sum of the expansion at `γb = ratio · radius` (in `1/γ` units, `x0 = γa`).
pub fn taylor_check(x0: f64, ratio: f64, terms: usize) -> Result<TaylorCheck> {
    let radius = (x0 * x0 + PI * PI).sqrt();
    let w = ratio * radius;
    let coeffs = lprime_taylor_coefficients(x0, terms);
    let mut sum = 0.0;
    let mut p = 1.0;
    let mut last = 0.0;
    for c in &coeffs {
        last = c * p;
        sum += last;
        p *= w;
    }
    let exact = langevin_derivative(x0 + w, 1)?;
    Ok(TaylorCheck {
        ratio,
        terms,
        error: (sum - exact).abs(),
        last_term: last.abs(),
    })
}
