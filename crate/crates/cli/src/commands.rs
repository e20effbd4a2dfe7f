use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array3, ArrayD, Axis, IxDyn};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use mh3d_core::analyze::{export_slices, find_peaks, metrics, VoxelBox};
use mh3d_core::forward::{apply_adjoint, apply_forward, build_dense_oracle, build_direct_oracle, build_forward_model};
use mh3d_core::mhad::{mhad_multi, portrait_scale, MhadConfig};
use mh3d_core::physics::{ScannerConfig, Sensitivity};
use mh3d_core::portrait::{
    calibrate_stack, form_portraits, portrait_mesh, ComplexStack, Gridding, PortraitStack, RealStack, WindowSpec,
};
use mh3d_core::psfgen::{analytic_psf_stack, simulate_psf_with, verify_theorem1, KernelRecord, PsfOptions, PsfStack};
use mh3d_core::simulate::{add_noise, simulate_all_slabs, TimeSignal};
use mh3d_core::solve::reconstruct;
use mh3d_core::Mesh;

use crate::config::{PhantomFile, PsfSourceKind, RunConfig, MM};
use crate::error::{CliError, CliResult};
use crate::io::{config_hash, write_atomic, write_json, Sidecar};
use crate::tensor::{read_volume, Tensor};

/// Mesh as recorded in sidecars, in millimeters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshRecord {
    pub shape: [usize; 3],
    pub spacing_mm: [f64; 3],
    pub origin_mm: [f64; 3],
}

impl From<&Mesh> for MeshRecord {
    fn from(m: &Mesh) -> Self {
        MeshRecord { shape: m.shape, spacing_mm: m.spacing.map(|v| v / MM), origin_mm: m.origin.map(|v| v / MM) }
    }
}

impl MeshRecord {
    pub fn to_mesh(&self) -> CliResult<Mesh> {
        Ok(Mesh::new(self.shape, self.spacing_mm.map(|v| v * MM), self.origin_mm.map(|v| v * MM))?)
    }
}

/// State shared by every command: the resolved config and provenance.
pub struct Context {
    pub cfg: RunConfig,
    pub hash: String,
    pub command_line: Vec<String>,
}

impl Context {
    pub fn new(cfg: RunConfig, command_line: Vec<String>) -> Context {
        let hash = config_hash(&cfg);
        Context { cfg, hash, command_line }
    }

    fn sidecar(&self, kind: &str) -> Sidecar {
        Sidecar::new(kind, &self.hash, &self.command_line)
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn volume_tensor(a: &Array3<f64>) -> Tensor {
    Tensor::real(&a.clone().into_dyn())
}

pub fn signal_path(dir: &Path, slab: usize) -> PathBuf {
    dir.join(format!("signal_slab{slab:03}.mh3d"))
}

// simulate ───────────────────────────────────────────────────────────────────

pub fn simulate(ctx: &Context, phantom: &Path, out_dir: &Path, noise_std: f64, seed: u64) -> CliResult<Vec<PathBuf>> {
    let phantom = PhantomFile::load(phantom)?;
    let cfg = ctx.cfg.scanner();
    let signals = simulate_all_slabs(&phantom, &cfg)?;
    create_dir(out_dir)?;
    let mut paths = Vec::new();
    for s in &signals {
        let s = add_noise(s, noise_std, seed.wrapping_add(s.slab_index as u64))?;
        let path = signal_path(out_dir, s.slab_index);
        Tensor::real(&Array1::from(s.samples.clone()).into_dyn()).write(&path)?;
        ctx.sidecar("signal")
            .with("scanner_hash", config_hash(&ctx.cfg.scanner))
            .with("slab_index", s.slab_index)
            .with("slab_z_mm", cfg.z_slab_positions[s.slab_index] / MM)
            .with("sample_rate_hz", s.sample_rate)
            .with("duration_s", s.duration)
            .with("noise_std", noise_std)
            .with("seed", seed)
            .write_for(&path)?;
        paths.push(path);
    }
    log::info!("wrote {} slab signals to {}", paths.len(), out_dir.display());
    Ok(paths)
}

fn load_signals(dir: &Path, ctx: &Context) -> CliResult<Vec<TimeSignal>> {
    let n = ctx.cfg.scanner.slab_z_mm.len();
    (0..n)
        .map(|j| {
            let path = signal_path(dir, j);
            if !path.exists() {
                return Err(CliError::Usage(format!("missing slab signal {}", path.display())));
            }
            let side = Sidecar::read_for(&path)?.expect_kind("signal", &path)?;
            if side.get::<String>("scanner_hash").ok().as_deref() != Some(config_hash(&ctx.cfg.scanner).as_str()) {
                log::warn!("{} was simulated with a different scanner configuration", path.display());
            }
            let a = Tensor::read(&path)?.into_real()?;
            Ok(TimeSignal {
                samples: a.iter().copied().collect(),
                sample_rate: side.get("sample_rate_hz")?,
                slab_index: side.get("slab_index")?,
                duration: side.get("duration_s")?,
            })
        })
        .collect()
}

// portrait ───────────────────────────────────────────────────────────────────

fn mask_path(stack: &Path) -> PathBuf {
    let stem = stack.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    stack.with_file_name(format!("{stem}_mask.mh3d"))
}

/// Filters, grids and phase-corrects the slab signals. The stored portraits
/// are `e^{-iθ_k} d_k`; the angles `θ_k` are recorded in the sidecar.
pub fn portrait(ctx: &Context, signals_dir: &Path, out: &Path) -> CliResult<()> {
    let cfg = ctx.cfg.scanner();
    let signals = load_signals(signals_dir, ctx)?;
    let window = ctx.cfg.window();
    let mesh = portrait_mesh(&cfg, None)?;
    let raw = form_portraits(&signals, &cfg, &ctx.cfg.harmonics, &window, &mesh, Gridding::Bilinear)?;
    let (_, residual) = calibrate_stack(&raw, &ctx.cfg.phase_mode())?;
    let phases = mh3d_core::portrait::stack_phases(&raw, &ctx.cfg.phase_mode())?;
    let rotated: Vec<Array3<Complex64>> = raw
        .data
        .iter()
        .zip(&phases)
        .map(|(d, &t)| d.mapv(|v| v * Complex64::from_polar(1.0, -t)))
        .collect();
    write_portraits(ctx, out, &raw, &rotated, &phases, &residual, &window)
}

fn write_portraits(
    ctx: &Context,
    out: &Path,
    raw: &ComplexStack,
    rotated: &[Array3<Complex64>],
    phases: &[f64],
    residual: &[f64],
    window: &WindowSpec,
) -> CliResult<()> {
    let (ns, ny, nx) = raw.dim();
    let flat: Vec<Complex64> = rotated.iter().flat_map(|d| d.iter().copied()).collect();
    let all = ArrayD::from_shape_vec(IxDyn(&[rotated.len(), ns, ny, nx]), flat).expect("stack shape");
    Tensor::complex(&all).write(out)?;
    let mask = mask_path(out);
    volume_tensor(&raw.valid.mapv(|v| if v { 1.0 } else { 0.0 })).write(&mask)?;
    ctx.sidecar("valid_mask").with("stack", out.file_name().map(|s| s.to_string_lossy())).write_for(&mask)?;
    ctx.sidecar("portrait_stack")
        .with("harmonics", &raw.harmonics)
        .with("window", window)
        .with("phases_rad", phases)
        .with("residual_imag_fraction", residual)
        .with("mesh", MeshRecord::from(&raw.mesh))
        .with("slab_z_mm", ctx.cfg.scanner.slab_z_mm.clone())
        .with("valid_mask", mask.file_name().map(|s| s.to_string_lossy()))
        .write_for(out)?;
    Ok(())
}

/// Loads a portrait stack as real (phase-corrected) portraits.
pub fn load_stack(path: &Path) -> CliResult<RealStack> {
    let side = Sidecar::read_for(path)?.expect_kind("portrait_stack", path)?;
    let harmonics: Vec<usize> = side.get("harmonics")?;
    let mesh = side.get::<MeshRecord>("mesh")?.to_mesh()?;
    let data = Tensor::read(path)?.into_complex()?;
    let (ns, ny, nx) = mesh.dim();
    if data.shape() != [harmonics.len(), ns, ny, nx] {
        return Err(CliError::Format(format!("{}: shape {:?} disagrees with its sidecar", path.display(), data.shape())));
    }
    let arrays = data
        .axis_iter(Axis(0))
        .map(|a| a.mapv(|v| v.re).into_dimensionality().expect("rank 3"))
        .collect();
    let mut stack = RealStack::from_real(harmonics, arrays, mesh)?;
    let mask_name: String = side.get("valid_mask")?;
    let mask = read_volume(&path.with_file_name(mask_name))?;
    if mask.dim() != (ns, ny, nx) {
        return Err(CliError::Format("validity mask shape disagrees with the stack".into()));
    }
    stack.valid = mask.mapv(|v| v > 0.5);
    stack.phases = side.get("phases_rad")?;
    Ok(PortraitStack { window: side.get("window").ok(), ..stack })
}

// psf ────────────────────────────────────────────────────────────────────────

pub fn build_psfs(ctx: &Context, source: PsfSourceKind) -> CliResult<PsfStack> {
    let cfg = ctx.cfg.scanner();
    let mesh = ctx.cfg.psf_mesh()?;
    let opts: PsfOptions = ctx.cfg.psf_options();
    Ok(match source {
        PsfSourceKind::Analytic => analytic_psf_stack(&cfg, &ctx.cfg.harmonics, &mesh, &opts)?,
        PsfSourceKind::Simulated => simulate_psf_with(&cfg, &ctx.cfg.harmonics, &mesh, &opts)?,
    })
}

pub fn psf(ctx: &Context, source: PsfSourceKind, out: &Path) -> CliResult<()> {
    let psfs = build_psfs(ctx, source)?;
    let (nz, ny, nx) = psfs.mesh.dim();
    let flat: Vec<f64> = psfs.kernels.iter().flatten().flat_map(|k| k.iter().copied()).collect();
    let shape = [psfs.harmonics.len(), psfs.components.len(), nz, ny, nx];
    Tensor::real(&ArrayD::from_shape_vec(IxDyn(&shape), flat).expect("kernel shape")).write(out)?;
    ctx.sidecar("psf_stack")
        .with("source", source)
        .with("harmonics", &psfs.harmonics)
        .with("components", &psfs.components)
        .with("mesh", MeshRecord::from(&psfs.mesh))
        .with("records", &psfs.records)
        .write_for(out)?;
    Ok(())
}

pub fn load_psfs(path: &Path) -> CliResult<PsfStack> {
    let side = Sidecar::read_for(path)?.expect_kind("psf_stack", path)?;
    let harmonics: Vec<usize> = side.get("harmonics")?;
    let components: Vec<usize> = side.get("components")?;
    let mesh = side.get::<MeshRecord>("mesh")?.to_mesh()?;
    let records: Vec<KernelRecord> = side.get("records")?;
    let data = Tensor::read(path)?.into_real()?;
    let (nz, ny, nx) = mesh.dim();
    if data.shape() != [harmonics.len(), components.len(), nz, ny, nx] {
        return Err(CliError::Format(format!("{}: shape {:?} disagrees with its sidecar", path.display(), data.shape())));
    }
    let kernels = data
        .axis_iter(Axis(0))
        .map(|h| h.axis_iter(Axis(0)).map(|k| k.to_owned().into_dimensionality().expect("rank 3")).collect())
        .collect();
    let mut stack = PsfStack::new(harmonics, components, kernels, mesh)?;
    stack.records = records;
    Ok(stack)
}

// reconstruct ────────────────────────────────────────────────────────────────

pub fn reconstruct_cmd(ctx: &Context, stack: &Path, psf: Option<&Path>, out: &Path) -> CliResult<()> {
    let cfg = ctx.cfg.scanner();
    let data = load_stack(stack)?;
    let psfs = match psf {
        Some(p) => load_psfs(p)?,
        None => build_psfs(ctx, ctx.cfg.psf.source)?,
    };
    let harmonics: Vec<usize> = ctx.cfg.harmonics.iter().copied().filter(|k| data.harmonics.contains(k)).collect();
    if harmonics.is_empty() {
        return Err(CliError::Usage("no configured harmonic is present in the portrait stack".into()));
    }
    let psfs = psfs.select(&harmonics)?;
    let fov = ctx.cfg.recon_mesh()?;
    let model = build_forward_model(&psfs, &Sensitivity::default(), &cfg, &fov, &ctx.cfg.forward_options())?;
    let result = reconstruct(&data.select(&harmonics)?, &model, &ctx.cfg.solver())?;
    volume_tensor(&result.rho).write(out)?;
    let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let trace = out.with_file_name(format!("{stem}_trace.csv"));
    let mut csv = String::from("iteration,objective,data_fit,regularizer,seconds\n");
    for (i, t) in result.trace.iter().enumerate() {
        let secs = result.iteration_seconds.get(i).copied().unwrap_or(f64::NAN);
        csv.push_str(&format!("{},{:e},{:e},{:e},{:e}\n", i + 1, t.objective, t.data_fit, t.regularizer, secs));
    }
    write_atomic(&trace, csv.as_bytes())?;
    ctx.sidecar("image")
        .with("mesh", MeshRecord::from(&fov))
        .with("harmonics", &harmonics)
        .with("lambda", ctx.cfg.solver.lambda)
        .with("lambda_effective", result.lambda_effective)
        .with("alpha", ctx.cfg.solver.alpha)
        .with("iterations", result.iterations)
        .with("converged", result.converged)
        .with("relative_residual", result.relative_residual)
        .with("final_objective", result.final_objective)
        .with("seconds", result.seconds)
        .with("padded_shape", model.padded_dim())
        .with("trace", trace.file_name().map(|s| s.to_string_lossy()))
        .write_for(out)?;
    log::info!(
        "{} iterations in {:.2} s, relative residual {:.3e}",
        result.iterations,
        result.seconds,
        result.relative_residual
    );
    Ok(())
}

// mhad ───────────────────────────────────────────────────────────────────────

pub fn mhad_cmd(ctx: &Context, stack: &Path, out: &Path) -> CliResult<()> {
    let cfg = ctx.cfg.scanner();
    let data = load_stack(stack)?;
    let harmonics: Vec<usize> = ctx.cfg.harmonics.iter().copied().filter(|k| data.harmonics.contains(k)).collect();
    if harmonics.is_empty() {
        return Err(CliError::Usage("no configured harmonic is present in the portrait stack".into()));
    }
    let dz = data.mesh.spacing[2];
    let mcfg = MhadConfig {
        lambda: ctx.cfg.mhad.lambda,
        scale: portrait_scale(&cfg, &harmonics, dz),
        fine_dz: Some(ctx.cfg.fine_dz_mm * MM),
        ..MhadConfig::new(harmonics.clone(), cfg.gamma_a(), 0.0)
    };
    let native = mhad_multi(&data, &mcfg)?;
    volume_tensor(&native).write(out)?;
    ctx.sidecar("native")
        .with("native", true)
        .with("description", "native image ρ_N = L' * ρ (not deconvolved), per-column DC set to zero")
        .with("mesh", MeshRecord::from(&data.mesh))
        .with("harmonics", &harmonics)
        .with("lambda", mcfg.lambda)
        .write_for(out)?;
    Ok(())
}

// verify ─────────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, Serialize)]
pub struct VerifyReport {
    pub theorem1_worst_l2: f64,
    pub theorem1_tolerance: f64,
    pub adjoint_worst: f64,
    pub adjoint_tolerance: f64,
    pub oracle_worst: f64,
    pub oracle_tolerance: f64,
    pub pass: bool,
}

/// Runs the Theorem-1 envelope check, the adjoint dot test and the
/// dense-oracle comparison for the configured scanner.
pub fn verify(ctx: &Context) -> CliResult<VerifyReport> {
    const THEOREM1_TOL: f64 = 2e-3;
    const ADJOINT_TOL: f64 = 1e-9;
    const ORACLE_TOL: f64 = 1e-10;
    let base = ctx.cfg.scanner();
    let t1 = verify_theorem1(&base, &[0.05, 0.1, 0.3], 5)?;
    let fov = Mesh::centered([6, 6, 6], [1e-3; 3])?;
    let mut cfg: ScannerConfig = base.clone();
    cfg.z_slab_positions = (0..6).step_by(2).map(|i| fov.coord(2, i)).collect();
    let psfs = analytic_psf_stack(
        &cfg,
        &ctx.cfg.harmonics,
        &Mesh::centered([5, 5, 5], [1e-3; 3])?,
        &PsfOptions { components: vec![0, 1, 2], ..PsfOptions::raw() },
    )?;
    let sens = Sensitivity::Uniform([0.2, -0.4, 1.0]);
    let model = build_forward_model(&psfs, &sens, &cfg, &fov, &Default::default())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d68_3364);
    let mut rand3 = |dim: (usize, usize, usize)| Array3::from_shape_simple_fn(dim, || rng.random_range(-1.0..1.0));
    let mut adjoint: f64 = 0.0;
    for _ in 0..20 {
        let x = rand3(model.padded_dim());
        let y: Vec<Array3<f64>> = (0..model.harmonics().len()).map(|_| rand3(model.data_dim())).collect();
        let ax = apply_forward(&model, &x.view())?;
        let aty = apply_adjoint(&model, &y)?;
        let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| (a * b).sum()).sum();
        let rhs = (&x * &aty).sum();
        let norm = |v: &[Array3<f64>]| v.iter().map(|a| (a * a).sum()).sum::<f64>().sqrt();
        adjoint = adjoint.max((lhs - rhs).abs() / (norm(&ax) * norm(&y)));
    }
    let direct = build_direct_oracle(&model, usize::MAX)?;
    let dense = build_dense_oracle(&model, usize::MAX)?;
    let dmax = direct.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let oracle = direct.iter().zip(dense.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / dmax;
    let worst = t1.worst_l2();
    Ok(VerifyReport {
        theorem1_worst_l2: worst,
        theorem1_tolerance: THEOREM1_TOL,
        adjoint_worst: adjoint,
        adjoint_tolerance: ADJOINT_TOL,
        oracle_worst: oracle,
        oracle_tolerance: ORACLE_TOL,
        pass: worst < THEOREM1_TOL && adjoint < ADJOINT_TOL && oracle < ORACLE_TOL,
    })
}

// metrics ────────────────────────────────────────────────────────────────────

/// What to measure on an image. Voxel indices are `[x, y, z]`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSpec {
    /// Explicit peak hints; when empty, peaks are found automatically.
    pub peaks: Vec<[usize; 3]>,
    /// Search box for automatic peaks, inclusive `[x, y, z]` corners.
    pub search_box: Option<[[usize; 3]; 2]>,
    /// Automatic peaks must exceed this fraction of the image maximum.
    pub min_fraction: Option<f64>,
    pub max_peaks: Option<usize>,
    /// Also export slices and MIPs along this axis (0 = x, 1 = y, 2 = z).
    pub export_axis: Option<usize>,
}

fn to_storage(v: [usize; 3]) -> [usize; 3] {
    [v[2], v[1], v[0]]
}

pub fn metrics_cmd(image: &Path, spec: Option<&Path>, out: &Path) -> CliResult<()> {
    let side = Sidecar::read_for(image)?;
    let mesh = side.get::<MeshRecord>("mesh")?.to_mesh()?;
    let img = read_volume(image)?;
    if img.dim() != mesh.dim() {
        return Err(CliError::Format("image shape disagrees with its sidecar mesh".into()));
    }
    let spec: MetricsSpec = match spec {
        Some(p) => crate::io::read_json(p)?,
        None => MetricsSpec::default(),
    };
    let peaks: Vec<[usize; 3]> = if spec.peaks.is_empty() {
        let top = img.iter().fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let within = spec.search_box.map(|[lo, hi]| VoxelBox { lo: to_storage(lo), hi: to_storage(hi) });
        let mut p = find_peaks(&img.view(), within, spec.min_fraction.unwrap_or(0.5) * top);
        p.truncate(spec.max_peaks.unwrap_or(16));
        p
    } else {
        spec.peaks.iter().map(|v| to_storage(*v)).collect()
    };
    let report = metrics(&img.view(), &mesh, &peaks);
    write_json(out, &report)?;
    if let Some(axis) = spec.export_axis {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        export_slices(&img.view(), &mesh, axis, &out.with_file_name(format!("{stem}_slices")))?;
    }
    Ok(())
}
