//! Harmonic portraits.
//!
//! Each slab signal is demodulated at `k*f0`, band-limited by a window `g`
//! and sampled once per drive period. The samples are gridded onto the `xy`
//! mesh at their focus-field positions, giving one complex image per
//! harmonic and slab. A constant phase per harmonic is then removed to obtain
//! real portraits.

use std::f64::consts::PI;

use ndarray::{Array2, Array3, Axis};
use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forward::ForwardModel;
use crate::mesh::Mesh;
use crate::physics::{Raster, ScannerConfig, Segment};
use crate::simulate::TimeSignal;
use crate::solve::{reconstruct, SolverConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WindowKind {
    Hann,
    Tophat,
}

impl std::str::FromStr for WindowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hann" => Ok(WindowKind::Hann),
            "tophat" => Ok(WindowKind::Tophat),
            other => Err(Error::Config(format!("unknown window '{other}' (expected hann|tophat)"))),
        }
    }
}

/// Band window `g` around each harmonic, described in the frequency domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub kind: WindowKind,
    /// Half bandwidth, Hz.
    pub half_bandwidth: f64,
}

impl WindowSpec {
    /// Hann window spanning the full inter-harmonic spacing.
    pub fn default_for(f0: f64) -> WindowSpec {
        WindowSpec {
            kind: WindowKind::Hann,
            half_bandwidth: f0 / 2.0,
        }
    }

    pub fn validate(&self, f0: f64) -> Result<()> {
        if !(self.half_bandwidth > 0.0) || self.half_bandwidth > f0 / 2.0 * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "window half bandwidth {} Hz must lie in (0, f0/2 = {}]",
                self.half_bandwidth,
                f0 / 2.0
            )));
        }
        Ok(())
    }

    /// Frequency response `ĝ(f)` at offset `f` from the band center.
    pub fn response(&self, f: f64) -> f64 {
        let a = f.abs();
        if a > self.half_bandwidth {
            return 0.0;
        }
        match self.kind {
            WindowKind::Tophat => 1.0,
            WindowKind::Hann => {
                let c = (PI * a / (2.0 * self.half_bandwidth)).cos();
                c * c
            }
        }
    }
}

/// Complex baseband signal of one harmonic band.
#[derive(Debug, Clone, PartialEq)]
pub struct BasebandSignal {
    pub samples: Vec<Complex64>,
    pub sample_rate: f64,
    pub slab_index: usize,
    pub harmonic: usize,
    /// Half bandwidth of the band window, Hz; sets the filter's time
    /// resolution `1/half_bandwidth`. Zero disables the turnaround guard.
    pub half_bandwidth: f64,
}

/// Row samples closer than this many filter time resolutions to a row end
/// are dropped: the focus velocity switches there and the band filter rings.
pub const TURNAROUND_GUARD: f64 = 1.0;

impl BasebandSignal {
    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v.norm_sqr()).sum()
    }
}

/// Demodulates complex samples at `fc` and applies the band window with a
/// circular DFT. Returns the baseband envelope.
pub fn demodulate_complex(
    samples: &[Complex64],
    sample_rate: f64,
    fc: f64,
    window: &WindowSpec,
) -> Vec<Complex64> {
    let n = samples.len();
    let w = -2.0 * PI * fc / sample_rate;
    let mut buf: Vec<Complex64> = samples
        .iter()
        .enumerate()
        .map(|(i, &s)| s * Complex64::from_polar(1.0, w * i as f64))
        .collect();
    if n == 0 {
        return buf;
    }
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    let df = sample_rate / n as f64;
    let norm = 1.0 / n as f64;
    for (j, v) in buf.iter_mut().enumerate() {
        let f = if j <= n / 2 { j as f64 * df } else { (j as f64 - n as f64) * df };
        *v *= window.response(f) * norm;
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    buf
}

/// Demodulates `signal` at `k*f0` and applies the band window:
/// `s_k(t) = ∫ s(τ) e^{-i2πk f0 τ} g(t-τ) dτ`, evaluated with a circular DFT.
///
/// A real tone `a cos(2πk f0 t + φ)` maps to the constant `a/2 e^{iφ}`.
/// Any `k >= 0` is accepted; see [`harmonic_filter`] for the checked entry point.
pub fn demodulate_band(
    signal: &TimeSignal,
    k: usize,
    f0: f64,
    window: &WindowSpec,
) -> Result<BasebandSignal> {
    let fs = signal.sample_rate;
    if k as f64 * f0 + window.half_bandwidth >= fs / 2.0 {
        return Err(Error::Nyquist(format!(
            "band {k} x {f0} Hz + {} Hz reaches fs/2 = {} Hz",
            window.half_bandwidth,
            fs / 2.0
        )));
    }
    let input: Vec<Complex64> = signal.samples.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    Ok(BasebandSignal {
        samples: demodulate_complex(&input, fs, k as f64 * f0, window),
        sample_rate: fs,
        slab_index: signal.slab_index,
        harmonic: k,
        half_bandwidth: window.half_bandwidth,
    })
}

/// `k`-th harmonic filtered signal. The fundamental (`k < 2`) is rejected
/// since the receive chain removes it.
pub fn harmonic_filter(
    signal: &TimeSignal,
    k: usize,
    window: &WindowSpec,
    cfg: &ScannerConfig,
) -> Result<BasebandSignal> {
    if k < 2 {
        return Err(Error::Range(format!("harmonic {k} < 2 is not observable")));
    }
    window.validate(cfg.drive_frequency)?;
    demodulate_band(signal, k, cfg.drive_frequency, window)
}

/// How samples are placed on the portrait mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Gridding {
    #[default]
    Bilinear,
    Nearest,
}

/// The `xy` portrait mesh aligned with the raster: `ny` equals the line
/// count, `dx` defaults to the line spacing. The z axis holds the slabs.
pub fn portrait_mesh(cfg: &ScannerConfig, dx: Option<f64>) -> Result<Mesh> {
    let dy = if cfg.raster_lines > 1 { cfg.line_spacing() } else { 1.0 };
    let dx = dx.unwrap_or(if cfg.raster_lines > 1 { dy } else { cfg.fov[0].max(1e-3) });
    let nx = (cfg.fov[0] / dx).round() as usize + 1;
    let dz = cfg.slab_spacing().unwrap_or(1.0);
    Mesh::new(
        [nx, cfg.raster_lines, cfg.z_slab_positions.len().max(1)],
        [dx, dy, dz],
        [
            -cfg.fov[0] / 2.0,
            -cfg.fov[1] / 2.0,
            cfg.z_slab_positions.first().copied().unwrap_or(0.0),
        ],
    )
}

/// One gridded slab.
#[derive(Debug, Clone, PartialEq)]
pub struct SlabPortrait {
    pub values: Array2<Complex64>,
    /// `false` where no sample landed.
    pub valid: Array2<bool>,
}

/// Grids a baseband signal onto the `xy` plane of `mesh`, one sample per
/// drive period at the configured sampling phase. Connector segments of the
/// raster are skipped, as are row samples within the turnaround guard.
pub fn grid_to_portrait(
    filtered: &BasebandSignal,
    cfg: &ScannerConfig,
    mesh: &Mesh,
    scheme: Gridding,
) -> Result<SlabPortrait> {
    let (nx, ny) = (mesh.shape[0], mesh.shape[1]);
    let raster = Raster::from_config(cfg);
    let f0 = cfg.drive_frequency;
    let fs = filtered.sample_rate;
    let periods = (filtered.samples.len() as f64 * f0 / fs).floor() as usize;
    let mut acc = Array2::<Complex64>::zeros((ny, nx));
    let mut wsum = Array2::<f64>::zeros((ny, nx));
    let tol = 1e-6;
    let guard = if filtered.half_bandwidth > 0.0 {
        TURNAROUND_GUARD * raster.speed / filtered.half_bandwidth
    } else {
        0.0
    };
    for p in 0..periods {
        let t = (p as f64 + cfg.sampling_phase) / f0;
        let idx = (t * fs).round() as usize;
        if idx >= filtered.samples.len() {
            break;
        }
        let (seg, xy, _) = raster.state(t);
        if !matches!(seg, Segment::Row { .. }) {
            continue;
        }
        if guard > 0.0 && (xy[0] - raster.x_start).min(raster.x_end - xy[0]) < guard {
            continue;
        }
        let fx = mesh.fractional_index(0, xy[0]);
        let fy = mesh.fractional_index(1, xy[1]);
        if fx < -tol || fy < -tol || fx > (nx - 1) as f64 + tol || fy > (ny - 1) as f64 + tol {
            return Err(Error::Config(format!(
                "portrait mesh does not cover raster position ({:.4e}, {:.4e})",
                xy[0], xy[1]
            )));
        }
        let fx = fx.clamp(0.0, (nx - 1) as f64);
        let fy = fy.clamp(0.0, (ny - 1) as f64);
        let s = filtered.samples[idx];
        match scheme {
            Gridding::Nearest => {
                let (ix, iy) = (fx.round() as usize, fy.round() as usize);
                acc[[iy, ix]] += s;
                wsum[[iy, ix]] += 1.0;
            }
            Gridding::Bilinear => {
                let ix = (fx.floor() as usize).min(nx.saturating_sub(2));
                let iy = (fy.floor() as usize).min(ny.saturating_sub(2));
                let ax = if nx > 1 { fx - ix as f64 } else { 0.0 };
                let ay = if ny > 1 { fy - iy as f64 } else { 0.0 };
                for (dy, wy) in [(0usize, 1.0 - ay), (1, ay)] {
                    for (dx, wx) in [(0usize, 1.0 - ax), (1, ax)] {
                        let w = wx * wy;
                        if w <= 0.0 || iy + dy >= ny || ix + dx >= nx {
                            continue;
                        }
                        acc[[iy + dy, ix + dx]] += s * w;
                        wsum[[iy + dy, ix + dx]] += w;
                    }
                }
            }
        }
    }
    let valid = wsum.mapv(|w| w > 1e-12);
    let values = ndarray::Zip::from(&acc).and(&wsum).map_collect(|a, &w| {
        if w > 1e-12 {
            a / w
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    Ok(SlabPortrait { values, valid })
}

/// Portraits for a set of harmonics, stored `(slab, y, x)` per harmonic.
#[derive(Debug, Clone, PartialEq)]
pub struct PortraitStack<T> {
    pub harmonics: Vec<usize>,
    pub data: Vec<Array3<T>>,
    /// `xy` portrait mesh; the z axis lists slab positions.
    pub mesh: Mesh,
    pub valid: Array3<bool>,
    pub window: Option<WindowSpec>,
    /// Phase removed from each harmonic, radians (zero before correction).
    pub phases: Vec<f64>,
}

pub type ComplexStack = PortraitStack<Complex64>;
pub type RealStack = PortraitStack<f64>;

impl<T: Clone> PortraitStack<T> {
    pub fn dim(&self) -> (usize, usize, usize) {
        self.mesh.dim()
    }

    pub fn harmonic_index(&self, k: usize) -> Option<usize> {
        self.harmonics.iter().position(|&h| h == k)
    }

    pub fn get(&self, k: usize) -> Result<&Array3<T>> {
        self.harmonic_index(k)
            .map(|i| &self.data[i])
            .ok_or(Error::MissingHarmonic(k))
    }

    /// Stack restricted to `harmonics`, in the given order.
    pub fn select(&self, harmonics: &[usize]) -> Result<Self> {
        let mut data = Vec::with_capacity(harmonics.len());
        let mut phases = Vec::with_capacity(harmonics.len());
        for &k in harmonics {
            let i = self.harmonic_index(k).ok_or(Error::MissingHarmonic(k))?;
            data.push(self.data[i].clone());
            phases.push(self.phases[i]);
        }
        Ok(PortraitStack {
            harmonics: harmonics.to_vec(),
            data,
            mesh: self.mesh,
            valid: self.valid.clone(),
            window: self.window,
            phases,
        })
    }
}

impl RealStack {
    /// Stack of real portraits from raw arrays (all valid).
    pub fn from_real(harmonics: Vec<usize>, data: Vec<Array3<f64>>, mesh: Mesh) -> Result<RealStack> {
        for d in &data {
            if d.dim() != mesh.dim() {
                let (a, b, c) = d.dim();
                let (x, y, z) = mesh.dim();
                return Err(Error::Shape { expected: vec![x, y, z], got: vec![a, b, c] });
            }
        }
        if harmonics.len() != data.len() {
            return Err(Error::Config("one array per harmonic required".into()));
        }
        let n = harmonics.len();
        Ok(PortraitStack {
            harmonics,
            data,
            mesh,
            valid: Array3::from_elem(mesh.dim(), true),
            window: None,
            phases: vec![0.0; n],
        })
    }

    /// Data flattened in harmonic, slab, y, x order.
    pub fn to_vector(&self) -> Vec<f64> {
        self.data.iter().flat_map(|d| d.iter().copied()).collect()
    }
}

/// Filters and grids every `(harmonic, slab)` pair.
pub fn form_portraits(
    signals: &[TimeSignal],
    cfg: &ScannerConfig,
    harmonics: &[usize],
    window: &WindowSpec,
    mesh: &Mesh,
    scheme: Gridding,
) -> Result<ComplexStack> {
    if harmonics.is_empty() {
        return Err(Error::Config("no harmonics requested".into()));
    }
    if signals.len() != mesh.shape[2] {
        return Err(Error::Config(format!(
            "{} slab signals for a mesh with {} slabs",
            signals.len(),
            mesh.shape[2]
        )));
    }
    let pairs: Vec<(usize, usize)> = harmonics
        .iter()
        .enumerate()
        .flat_map(|(h, _)| (0..signals.len()).map(move |s| (h, s)))
        .collect();
    let slabs: Vec<SlabPortrait> = pairs
        .par_iter()
        .map(|&(h, s)| {
            let b = harmonic_filter(&signals[s], harmonics[h], window, cfg)?;
            grid_to_portrait(&b, cfg, mesh, scheme)
        })
        .collect::<Result<_>>()?;
    let dim = mesh.dim();
    let mut data = vec![Array3::<Complex64>::zeros(dim); harmonics.len()];
    let mut valid = Array3::from_elem(dim, false);
    for (&(h, s), sp) in pairs.iter().zip(&slabs) {
        data[h].index_axis_mut(Axis(0), s).assign(&sp.values);
        if h == 0 {
            valid.index_axis_mut(Axis(0), s).assign(&sp.valid);
        }
    }
    Ok(PortraitStack {
        harmonics: harmonics.to_vec(),
        data,
        mesh: *mesh,
        valid,
        window: Some(*window),
        phases: vec![0.0; harmonics.len()],
    })
}

fn bilinear_sample(a: &Array2<Complex64>, fx: f64, fy: f64) -> Complex64 {
    let (ny, nx) = a.dim();
    let fx = fx.clamp(0.0, (nx - 1) as f64);
    let fy = fy.clamp(0.0, (ny - 1) as f64);
    let ix = (fx.floor() as usize).min(nx.saturating_sub(2));
    let iy = (fy.floor() as usize).min(ny.saturating_sub(2));
    let ax = if nx > 1 { fx - ix as f64 } else { 0.0 };
    let ay = if ny > 1 { fy - iy as f64 } else { 0.0 };
    let at = |y: usize, x: usize| a[[y.min(ny - 1), x.min(nx - 1)]];
    at(iy, ix) * (1.0 - ax) * (1.0 - ay)
        + at(iy, ix + 1) * ax * (1.0 - ay)
        + at(iy + 1, ix) * (1.0 - ax) * ay
        + at(iy + 1, ix + 1) * ax * ay
}

/// Rebuilds time signals from complex portraits: each portrait is sampled
/// along the trajectory, remodulated to `k*f0` and summed with its conjugate
/// band, `s(t) = Σ_k 2 Re(d_k(ξ(t)) e^{i2πk f0 t})`.
pub fn portrait_to_signal(stack: &ComplexStack, cfg: &ScannerConfig) -> Result<Vec<TimeSignal>> {
    if stack.harmonics.is_empty() {
        return Err(Error::Config("portrait stack has no harmonics".into()));
    }
    let raster = Raster::from_config(cfg);
    let n = crate::physics::slab_samples(cfg);
    let fs = cfg.sample_rate;
    let f0 = cfg.drive_frequency;
    let mesh = stack.mesh;
    (0..mesh.shape[2])
        .map(|slab| {
            let planes: Vec<_> = stack
                .data
                .iter()
                .map(|d| d.index_axis(Axis(0), slab).to_owned())
                .collect();
            let samples: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let t = i as f64 / fs;
                    let (_, xy, _) = raster.state(t);
                    let fx = mesh.fractional_index(0, xy[0]);
                    let fy = mesh.fractional_index(1, xy[1]);
                    let mut s = 0.0;
                    for (plane, &k) in planes.iter().zip(&stack.harmonics) {
                        let d = bilinear_sample(plane, fx, fy);
                        let carrier = Complex64::from_polar(1.0, 2.0 * PI * k as f64 * f0 * t);
                        s += 2.0 * (d * carrier).re;
                    }
                    s
                })
                .collect();
            Ok(TimeSignal {
                samples,
                sample_rate: fs,
                slab_index: slab,
                duration: n as f64 / fs,
            })
        })
        .collect()
}

/// Voxels holding the largest 1% of magnitudes (at least one voxel).
pub fn default_roi(portrait: &Array3<Complex64>) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..portrait.len()).collect();
    let mags: Vec<f64> = portrait.iter().map(|v| v.norm()).collect();
    let keep = (portrait.len() / 100).max(1);
    idx.sort_by(|&a, &b| mags[b].total_cmp(&mags[a]).then(a.cmp(&b)));
    idx.truncate(keep);
    idx.sort_unstable();
    idx
}

/// Constant phase of a portrait over a region of interest (flat indices).
///
/// The phase axis comes from `arg(Σ d²)/2`, which stays well defined for
/// portraits with both signs (odd harmonics of a symmetric source). The
/// remaining `π` ambiguity is settled by the sign of the magnitude-weighted
/// mean `Σ |d| d` projected on that axis; for one-signed data this is the
/// angle of the magnitude-weighted mean itself.
pub fn estimate_phase(portrait: &Array3<Complex64>, roi: Option<&[usize]>) -> Result<f64> {
    let flat: Vec<Complex64> = portrait.iter().copied().collect();
    let owned;
    let roi = match roi {
        Some(r) => r,
        None => {
            owned = default_roi(portrait);
            &owned
        }
    };
    if roi.is_empty() {
        return Err(Error::Degenerate("empty phase-estimation region".into()));
    }
    let mut s2 = Complex64::new(0.0, 0.0);
    let mut s1 = Complex64::new(0.0, 0.0);
    let mut mag = 0.0;
    for &i in roi {
        let d = *flat
            .get(i)
            .ok_or_else(|| Error::Range(format!("roi index {i} outside portrait")))?;
        s2 += d * d;
        s1 += d * d.norm();
        mag += d.norm();
    }
    if !(mag > 0.0) || !mag.is_finite() {
        return Err(Error::Degenerate("portrait is zero over the phase region".into()));
    }
    let mut theta = if s2.norm() > 1e-12 * mag * mag {
        s2.arg() / 2.0
    } else {
        s1.arg()
    };
    if (s1 * Complex64::from_polar(1.0, -theta)).re < 0.0 {
        theta += PI;
    }
    Ok(wrap_phase(theta))
}

/// Phase of harmonic `k` produced by the sinusoidal drive `A sin(2πf0 t)`:
/// the band amplitude carries `i^(1-k)` times a real kernel.
pub fn drive_phase(k: usize) -> f64 {
    wrap_phase((1.0 - k as f64) * PI / 2.0)
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_phase(theta: f64) -> f64 {
    let mut t = theta.rem_euclid(2.0 * PI);
    if t > PI {
        t -= 2.0 * PI;
    }
    t
}

/// Chooses between `theta` and `theta + π` the angle closer to `reference`.
pub fn snap_sign(theta: f64, reference: f64) -> f64 {
    if wrap_phase(theta - reference).abs() > PI / 2.0 {
        wrap_phase(theta + PI)
    } else {
        wrap_phase(theta)
    }
}

/// `Re(e^{-iθ} d)` and the fraction of energy left in the imaginary part.
pub fn apply_phase_correction(portrait: &Array3<Complex64>, theta: f64) -> (Array3<f64>, f64) {
    let rot = Complex64::from_polar(1.0, -theta);
    let mut re_e = 0.0;
    let mut im_e = 0.0;
    let out = portrait.mapv(|d| {
        let r = d * rot;
        re_e += r.re * r.re;
        im_e += r.im * r.im;
        r.re
    });
    let total = re_e + im_e;
    let frac = if total > 0.0 { im_e / total } else { 0.0 };
    (out, frac)
}

/// How the per-harmonic phase is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PhaseMode {
    /// Estimate from the data, sign taken from the drive reference.
    #[default]
    Estimate,
    /// Estimate from the data, keeping the estimator's own sign.
    Raw,
    /// Use the drive phase `i^(1-k)` without estimation.
    Drive,
    /// Externally supplied phases, one per harmonic.
    Given(Vec<f64>),
}

/// Phases for each harmonic of `stack` under `mode`.
pub fn stack_phases(stack: &ComplexStack, mode: &PhaseMode) -> Result<Vec<f64>> {
    match mode {
        PhaseMode::Drive => Ok(stack.harmonics.iter().map(|&k| drive_phase(k)).collect()),
        PhaseMode::Given(p) => Ok(p.clone()),
        PhaseMode::Raw | PhaseMode::Estimate => stack
            .data
            .iter()
            .zip(&stack.harmonics)
            .map(|(d, &k)| {
                let t = estimate_phase(d, None)?;
                Ok(if *mode == PhaseMode::Estimate { snap_sign(t, drive_phase(k)) } else { t })
            })
            .collect(),
    }
}

/// Estimates and removes one phase per harmonic.
///
/// Returns the real stack and the residual imaginary energy fraction per harmonic.
pub fn calibrate_stack(stack: &ComplexStack, mode: &PhaseMode) -> Result<(RealStack, Vec<f64>)> {
    let phases = stack_phases(stack, mode)?;
    correct_stack(stack, &phases)
}

/// Applies known calibration phases (e.g. from a PSF simulation).
pub fn correct_stack(stack: &ComplexStack, phases: &[f64]) -> Result<(RealStack, Vec<f64>)> {
    if phases.len() != stack.harmonics.len() {
        return Err(Error::Config(format!(
            "{} phases for {} harmonics",
            phases.len(),
            stack.harmonics.len()
        )));
    }
    let mut data = Vec::new();
    let mut residual = Vec::new();
    for (d, &p) in stack.data.iter().zip(phases) {
        let (r, f) = apply_phase_correction(d, p);
        data.push(r);
        residual.push(f);
    }
    Ok((
        PortraitStack {
            harmonics: stack.harmonics.clone(),
            data,
            mesh: stack.mesh,
            valid: stack.valid.clone(),
            window: stack.window,
            phases: phases.to_vec(),
        },
        residual,
    ))
}

/// Outcome of the sign test for one harmonic.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignDecision {
    pub harmonic: usize,
    pub flipped: bool,
    pub residual_kept: f64,
    pub residual_other: f64,
    /// Residuals within 1% of each other; the current sign was kept.
    pub tie: bool,
}

/// Settles the `π` ambiguity left by phase calibration.
///
/// Harmonics are visited from the lowest up. For each, a short non-negative
/// reconstruction is run with the current sign and with that harmonic
/// negated, and the sign giving the lower data-fit residual is kept.
pub fn resolve_sign_ambiguity(
    stack: &RealStack,
    model: &ForwardModel,
    iterations: usize,
) -> Result<(RealStack, Vec<SignDecision>)> {
    let mut order: Vec<usize> = (0..stack.harmonics.len()).collect();
    order.sort_by_key(|&i| stack.harmonics[i]);
    let mut current = stack.clone();
    let mut decisions = Vec::new();
    let scfg = SolverConfig {
        lambda: 1e-3,
        alpha: 0.0,
        max_iterations: iterations.max(1),
        tolerance: 0.0,
        ..SolverConfig::default()
    };
    for i in order {
        let k = current.harmonics[i];
        let keep = reconstruct(&current, model, &scfg)?.final_residual;
        let mut flipped = current.clone();
        flipped.data[i].mapv_inplace(|v| -v);
        flipped.phases[i] += PI;
        let other = reconstruct(&flipped, model, &scfg)?.final_residual;
        let tie = (keep - other).abs() <= 0.01 * keep.max(other);
        let flip = !tie && other < keep;
        if flip {
            current = flipped;
        }
        decisions.push(SignDecision {
            harmonic: k,
            flipped: flip,
            residual_kept: if flip { other } else { keep },
            residual_other: if flip { keep } else { other },
            tie,
        });
    }
    for p in current.phases.iter_mut() {
        *p = wrap_phase(*p);
    }
    Ok((current, decisions))
}
