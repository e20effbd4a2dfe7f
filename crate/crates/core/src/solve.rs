//! Regularized non-negative least squares by accelerated projected gradient.
//!
//! Minimizes
//!
//! ```text
//! f(ρ) = ‖Aρ - d‖² + λ (‖Tρ‖² + α ‖P_α ρ‖²)
//! ```
//!
//! over `ρ >= 0`, where `T` is the circulant 3D Laplacian on the padded mesh
//! and `P_α` selects the padding plus a shell of `boundary_margin` voxels
//! inside the field of view. The momentum sequence is `(k-1)/(k+2)` and the
//! step `0.95/L` with `L` from a power iteration on the normal operator.

use std::time::Instant;

use ndarray::{Array3, ArrayView3, Zip};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft3;
use crate::forward::{Data, ForwardModel};
use crate::mesh::Mesh;
use crate::portrait::RealStack;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepPolicy {
    /// `safety / L` with `L` from `iterations` power-method steps.
    PowerIteration { iterations: usize, safety: f64 },
    Fixed(f64),
}

/// How `lambda` is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LambdaScale {
    /// Used as given.
    Absolute,
    /// Multiplied by `‖AᵀA‖₂`, so values transfer between problem sizes.
    Normalized,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverConfig {
    pub lambda: f64,
    pub alpha: f64,
    pub boundary_margin: usize,
    pub max_iterations: usize,
    pub step: StepPolicy,
    /// Relative objective change below which iteration stops.
    pub tolerance: f64,
    /// Number of consecutive iterations the change must stay below `tolerance`.
    pub patience: usize,
    pub nonneg: bool,
    /// Gradient-based momentum restart.
    pub restart: bool,
    pub lambda_scale: LambdaScale,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lambda: 1e-4,
            alpha: 4.0,
            boundary_margin: 2,
            max_iterations: 500,
            step: StepPolicy::PowerIteration { iterations: 50, safety: 0.95 },
            tolerance: 1e-6,
            patience: 10,
            nonneg: true,
            restart: false,
            lambda_scale: LambdaScale::Normalized,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", self.alpha)));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be >= 1".into()));
        }
        match self.step {
            StepPolicy::PowerIteration { iterations, safety } => {
                if iterations == 0 || !(safety > 0.0 && safety <= 1.0) {
                    return Err(Error::Config("invalid power-iteration step policy".into()));
                }
            }
            StepPolicy::Fixed(t) => {
                if !(t > 0.0) || !t.is_finite() {
                    return Err(Error::Config(format!("fixed step must be positive, got {t}")));
                }
            }
        }
        Ok(())
    }
}

/// Objective components at one iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub objective: f64,
    pub data_fit: f64,
    pub regularizer: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReconResult {
    /// Solution on the FOV mesh.
    pub rho: Array3<f64>,
    /// Solution on the padded model mesh.
    pub rho_padded: Array3<f64>,
    /// Objective at the extrapolated point of every iteration.
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub converged: bool,
    /// `‖Aρ - d‖₂` at the solution.
    pub final_residual: f64,
    /// `‖Aρ - d‖₂ / ‖d‖₂`.
    pub relative_residual: f64,
    pub final_objective: f64,
    /// `‖ρ - P(ρ - τ∇f(ρ))‖ / ‖ρ‖`.
    pub projected_gradient: f64,
    pub lambda_effective: f64,
    pub lipschitz: f64,
    pub step: f64,
    pub seconds: f64,
    pub iteration_seconds: Vec<f64>,
}

/// Second differences along each axis with periodic wrap, summed (`Tρ`).
pub fn apply_tikhonov(rho: &ArrayView3<f64>) -> Array3<f64> {
    let (nz, ny, nx) = rho.dim();
    Array3::from_shape_fn((nz, ny, nx), |(z, y, x)| {
        let c = rho[[z, y, x]];
        let mut acc = -6.0 * c;
        acc += rho[[(z + 1) % nz, y, x]] + rho[[(z + nz - 1) % nz, y, x]];
        acc += rho[[z, (y + 1) % ny, x]] + rho[[z, (y + ny - 1) % ny, x]];
        acc += rho[[z, y, (x + 1) % nx]] + rho[[z, y, (x + nx - 1) % nx]];
        acc
    })
}

/// Symbol of `T` on the half spectrum of a `(nz, ny, nx)` grid.
pub fn laplacian_symbol(dim: (usize, usize, usize)) -> Array3<f64> {
    let (nz, ny, nx) = dim;
    let term = |k: usize, n: usize| 2.0 * (2.0 * std::f64::consts::PI * k as f64 / n as f64).cos() - 2.0;
    Array3::from_shape_fn((nz, ny, nx / 2 + 1), |(z, y, x)| term(z, nz) + term(y, ny) + term(x, nx))
}

/// `TᵀTρ` by Fourier diagonalization.
pub fn tikhonov_normal(rho: &ArrayView3<f64>) -> Array3<f64> {
    let fft = Fft3::new(rho.dim());
    let sym = laplacian_symbol(rho.dim());
    let mut spec = fft.forward(rho.view());
    Zip::from(&mut spec).and(&sym).for_each(|v, &s| *v *= s * s);
    fft.inverse(spec)
}

/// Flat indices (storage order) of all voxels within `margin` of a face.
pub fn boundary_selector(mesh: &Mesh, margin: usize) -> Result<Vec<usize>> {
    if margin == 0 {
        return Err(Error::Range("boundary margin must be >= 1".into()));
    }
    let (nz, ny, nx) = mesh.dim();
    let near = |i: usize, n: usize| i < margin || i + margin >= n;
    let mut out = Vec::new();
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                if near(z, nz) || near(y, ny) || near(x, nx) {
                    out.push((z * ny + y) * nx + x);
                }
            }
        }
    }
    Ok(out)
}

/// `P_αᵀP_α` as a 0/1 mask on the padded mesh: the padding plus the FOV shell.
pub fn boundary_mask(model: &ForwardModel, margin: usize) -> Result<Array3<f64>> {
    let fov = model.fov_mesh();
    let shell = boundary_selector(fov, margin)?;
    let (lo, _) = model.padding();
    let (fz, fy, fx) = fov.dim();
    let mut mask = Array3::from_elem(model.padded_dim(), 1.0);
    // clear the FOV, then mark its shell
    mask.slice_mut(ndarray::s![lo[0]..lo[0] + fz, lo[1]..lo[1] + fy, lo[2]..lo[2] + fx])
        .fill(0.0);
    for i in shell {
        let (z, r) = (i / (fy * fx), i % (fy * fx));
        let (y, x) = (r / fx, r % fx);
        mask[[z + lo[0], y + lo[1], x + lo[2]]] = 1.0;
    }
    Ok(mask)
}

/// A differentiable objective for [`fista`].
pub trait SmoothObjective: Sync {
    /// Shape of the unknown.
    fn dim(&self) -> (usize, usize, usize);
    /// Value and gradient at `x`.
    fn value_gradient(&self, x: &Array3<f64>) -> Result<(TraceEntry, Array3<f64>)>;
}

/// Largest eigenvalue of the Hessian of a quadratic objective, from
/// gradient differences: `∇f(x) - ∇f(0) = H x`.
pub fn hessian_norm<O: SmoothObjective>(obj: &O, iterations: usize, seed: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Array3::from_shape_fn(obj.dim(), |_| StandardNormal.sample(&mut rng));
    let (_, g0) = obj.value_gradient(&Array3::zeros(obj.dim()))?;
    let mut est = 0.0;
    let norm = |a: &Array3<f64>| a.iter().map(|v| v * v).sum::<f64>().sqrt();
    let n0 = norm(&x);
    x.mapv_inplace(|v| v / n0);
    for _ in 0..iterations {
        let (_, g) = obj.value_gradient(&x)?;
        let hx = &g - &g0;
        let n = norm(&hx);
        if n == 0.0 || !n.is_finite() {
            return Ok(if n == 0.0 { 0.0 } else { f64::INFINITY });
        }
        est = n;
        x = hx / n;
    }
    Ok(est)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FistaOptions {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub patience: usize,
    pub nonneg: bool,
    pub restart: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FistaOutput {
    pub x: Array3<f64>,
    pub trace: Vec<TraceEntry>,
    pub iterations: usize,
    pub converged: bool,
    pub iteration_seconds: Vec<f64>,
}

/// Accelerated (projected) gradient descent from `x0` with fixed `step`.
pub fn fista<O: SmoothObjective>(obj: &O, x0: Array3<f64>, step: f64, opts: &FistaOptions) -> Result<FistaOutput> {
    let project = |a: &mut Array3<f64>| {
        if opts.nonneg {
            a.mapv_inplace(|v| v.max(0.0));
        }
    };
    let mut x = x0;
    project(&mut x);
    let mut x_prev = x.clone();
    let mut trace: Vec<TraceEntry> = Vec::new();
    let mut times = Vec::new();
    let mut t = 1usize;
    let mut calm = 0usize;
    let mut converged = false;
    for _ in 0..opts.max_iterations {
        let start = Instant::now();
        let beta = (t as f64 - 1.0) / (t as f64 + 2.0);
        let y = if beta == 0.0 {
            x.clone()
        } else {
            Zip::from(&x).and(&x_prev).map_collect(|&a, &b| a + beta * (a - b))
        };
        let (entry, g) = obj.value_gradient(&y)?;
        if !entry.objective.is_finite() || g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!(
                "objective after {} iterations; trace tail {:?}",
                trace.len(),
                trace.iter().rev().take(5).map(|e| e.objective).collect::<Vec<_>>()
            )));
        }
        let mut x_new = Zip::from(&y).and(&g).map_collect(|&a, &b| a - step * b);
        project(&mut x_new);
        t += 1;
        if opts.restart {
            // restart when the step opposes the momentum direction
            let mut dot = 0.0;
            Zip::from(&y).and(&x_new).and(&x).for_each(|&y, &xn, &xo| dot += (y - xn) * (xn - xo));
            if dot > 0.0 {
                t = 1;
            }
        }
        x_prev = std::mem::replace(&mut x, x_new);
        if let Some(last) = trace.last() {
            let rel = (entry.objective - last.objective).abs() / last.objective.abs().max(f64::MIN_POSITIVE);
            calm = if rel < opts.tolerance { calm + 1 } else { 0 };
        }
        trace.push(entry);
        times.push(start.elapsed().as_secs_f64());
        if opts.tolerance > 0.0 && calm >= opts.patience.max(1) {
            converged = true;
            break;
        }
    }
    Ok(FistaOutput { iterations: trace.len(), x, trace, converged, iteration_seconds: times })
}

/// The reconstruction objective on the padded mesh of a forward model.
pub struct Problem<'a> {
    model: &'a ForwardModel,
    data: Data,
    /// Data-term weights (0 where portraits have no coverage); `None` = all ones.
    weights: Option<Vec<Array3<f64>>>,
    lambda: f64,
    alpha: f64,
    mask: Array3<f64>,
    symbol: Array3<f64>,
    /// Constant weight when there is a single component with uniform sensitivity.
    uniform: Option<f64>,
}

fn uniform_weight(model: &ForwardModel) -> Option<f64> {
    if model.components().len() != 1 {
        return None;
    }
    let s = &model.sensitivity()[0];
    let first = *s.iter().next()?;
    s.iter().all(|&v| v == first).then_some(first)
}

/// Half-spectrum Parseval weight of column `x` for an `nx`-point real axis.
fn half_weight(x: usize, nx: usize) -> f64 {
    if x == 0 || (nx % 2 == 0 && x == nx / 2) {
        1.0
    } else {
        2.0
    }
}

impl<'a> Problem<'a> {
    /// Problem with an absolute `lambda`.
    pub fn new(model: &'a ForwardModel, data: Data, lambda: f64, alpha: f64, margin: usize) -> Result<Self> {
        if data.len() != model.harmonics().len() {
            return Err(Error::Shape { expected: vec![model.harmonics().len()], got: vec![data.len()] });
        }
        for d in &data {
            if d.dim() != model.data_dim() {
                let (a, b, c) = d.dim();
                let (x, y, z) = model.data_dim();
                return Err(Error::Shape { expected: vec![x, y, z], got: vec![a, b, c] });
            }
            if d.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("portrait data".into()));
            }
        }
        let mask = if alpha > 0.0 {
            boundary_mask(model, margin)?
        } else {
            Array3::zeros(model.padded_dim())
        };
        Ok(Problem {
            model,
            data,
            weights: None,
            lambda,
            alpha,
            mask,
            symbol: laplacian_symbol(model.padded_dim()),
            uniform: uniform_weight(model),
        })
    }

    /// Restricts the data term to covered portrait pixels.
    pub fn with_weights(mut self, weights: Vec<Array3<f64>>) -> Self {
        self.weights = Some(weights);
        self
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn set_lambda(&mut self, lambda: f64) {
        self.lambda = lambda;
    }

    fn evaluate(&self, y: &Array3<f64>, with_data: bool) -> Result<(TraceEntry, Array3<f64>)> {
        let m = self.model;
        if y.dim() != m.padded_dim() {
            let (a, b, c) = y.dim();
            let (x, yy, z) = m.padded_dim();
            return Err(Error::Shape { expected: vec![x, yy, z], got: vec![a, b, c] });
        }
        let fft = m.fft();
        let need_y_hat = self.lambda > 0.0 || self.uniform.is_some();
        let y_hat = if need_y_hat { Some(fft.forward(y.view())) } else { None };
        let u: Vec<Array3<Complex64>> = match (self.uniform, &y_hat) {
            (Some(b), Some(yh)) => vec![yh.mapv(|v| v * b)],
            _ => m.weighted_spectra(&y.view()),
        };
        let nh = m.harmonics().len();
        // residual per harmonic and the spectrum of its scatter
        let parts: Vec<(f64, Array3<Complex64>)> = (0..nh)
            .into_par_iter()
            .map(|h| {
                let mut acc = Array3::<Complex64>::zeros(fft.spectrum_dim());
                for (c, us) in u.iter().enumerate() {
                    Zip::from(&mut acc).and(m.spectrum(h, c)).and(us).for_each(|a, &k, &v| *a += k * v);
                }
                let mut r = m.select_spectrum(acc);
                if with_data {
                    r -= &self.data[h];
                }
                if let Some(w) = &self.weights {
                    r *= &w[h];
                }
                let fit = r.iter().map(|v| v * v).sum::<f64>();
                (fit, m.scatter_spectrum(&r))
            })
            .collect();
        let data_fit: f64 = parts.iter().map(|p| p.0).sum();
        let r_hat: Vec<Array3<Complex64>> = parts.into_iter().map(|p| p.1).collect();
        let lam = self.lambda;
        let mut tik = 0.0;
        let mut grad = if let (Some(b), Some(yh)) = (self.uniform, &y_hat) {
            let mut acc = Array3::<Complex64>::zeros(fft.spectrum_dim());
            for (h, rh) in r_hat.iter().enumerate() {
                Zip::from(&mut acc).and(m.spectrum(h, 0)).and(rh).for_each(|a, &k, &v| *a += k.conj() * v);
            }
            let nx = m.padded_dim().2;
            Zip::indexed(&mut acc).and(yh).and(&self.symbol).for_each(|(_, _, x), a, &v, &s| {
                *a = *a * (2.0 * b);
                if lam > 0.0 {
                    let sv = v * s;
                    tik += half_weight(x, nx) * sv.norm_sqr();
                    *a += sv * (2.0 * lam * s);
                }
            });
            fft.inverse(acc)
        } else {
            let mut g = m.adjoint_from_spectra(&r_hat);
            g.mapv_inplace(|v| 2.0 * v);
            if let Some(yh) = &y_hat {
                let nx = m.padded_dim().2;
                let mut t = yh.clone();
                Zip::indexed(&mut t).and(&self.symbol).for_each(|(_, _, x), v, &s| {
                    tik += half_weight(x, nx) * (*v * s).norm_sqr();
                    *v *= 2.0 * lam * s * s;
                });
                g += &fft.inverse(t);
            }
            g
        };
        tik /= fft.len() as f64;
        let mut boundary = 0.0;
        if self.alpha > 0.0 && lam > 0.0 {
            let c = 2.0 * lam * self.alpha;
            Zip::from(&mut grad).and(y).and(&self.mask).for_each(|g, &v, &w| {
                if w != 0.0 {
                    boundary += v * v;
                    *g += c * v;
                }
            });
        }
        let regularizer = tik + self.alpha * boundary;
        Ok((
            TraceEntry { objective: data_fit + lam * regularizer, data_fit, regularizer },
            grad,
        ))
    }

    /// Applies the normal operator `MᵀM` (half the Hessian).
    pub fn normal(&self, x: &Array3<f64>) -> Result<Array3<f64>> {
        let (_, mut g) = self.evaluate(x, false)?;
        g.mapv_inplace(|v| 0.5 * v);
        Ok(g)
    }
}

impl SmoothObjective for Problem<'_> {
    fn dim(&self) -> (usize, usize, usize) {
        self.model.padded_dim()
    }

    fn value_gradient(&self, x: &Array3<f64>) -> Result<(TraceEntry, Array3<f64>)> {
        self.evaluate(x, true)
    }
}

const POWER_SEED: u64 = 0x6d68_3364;

/// `‖AᵀA‖₂` by power iteration.
pub fn data_operator_norm(model: &ForwardModel, iterations: usize) -> Result<f64> {
    let zero: Data = vec![Array3::zeros(model.data_dim()); model.harmonics().len()];
    let p = Problem::new(model, zero, 0.0, 0.0, 1)?;
    Ok(hessian_norm(&p, iterations, POWER_SEED)? / 2.0)
}

fn stack_to_data(stack: &RealStack, model: &ForwardModel) -> Result<(Data, Option<Vec<Array3<f64>>>)> {
    let mut out = Vec::new();
    for &k in model.harmonics() {
        out.push(stack.get(k)?.clone());
    }
    let (ns, ny, nx) = model.data_dim();
    if stack.mesh.dim() != (ns, ny, nx) {
        let (a, b, c) = stack.mesh.dim();
        return Err(Error::Shape { expected: vec![ns, ny, nx], got: vec![a, b, c] });
    }
    let weights = if stack.valid.iter().all(|v| *v) {
        None
    } else {
        let w = stack.valid.mapv(|v| if v { 1.0 } else { 0.0 });
        Some(vec![w; model.harmonics().len()])
    };
    Ok((out, weights))
}

/// Effective `λ` and the problem for a config.
fn build_problem<'a>(
    data: Data,
    weights: Option<Vec<Array3<f64>>>,
    model: &'a ForwardModel,
    scfg: &SolverConfig,
) -> Result<Problem<'a>> {
    let iters = match scfg.step {
        StepPolicy::PowerIteration { iterations, .. } => iterations,
        StepPolicy::Fixed(_) => 50,
    };
    let lambda = match scfg.lambda_scale {
        LambdaScale::Absolute => scfg.lambda,
        LambdaScale::Normalized if scfg.lambda > 0.0 => scfg.lambda * data_operator_norm(model, iters)?,
        LambdaScale::Normalized => 0.0,
    };
    let mut p = Problem::new(model, data, lambda, scfg.alpha, scfg.boundary_margin)?;
    if let Some(w) = weights {
        p = p.with_weights(w);
    }
    Ok(p)
}

/// Full objective for a density on the padded mesh.
pub fn objective(rho: &ArrayView3<f64>, data: &[Array3<f64>], model: &ForwardModel, scfg: &SolverConfig) -> Result<TraceEntry> {
    let p = build_problem(data.to_vec(), None, model, scfg)?;
    Ok(p.evaluate(&rho.to_owned(), true)?.0)
}

/// Gradient `2Aᵀ(Aρ - d) + 2λ(TᵀTρ + αP_αᵀP_αρ)` on the padded mesh.
pub fn gradient(rho: &ArrayView3<f64>, data: &[Array3<f64>], model: &ForwardModel, scfg: &SolverConfig) -> Result<Array3<f64>> {
    let p = build_problem(data.to_vec(), None, model, scfg)?;
    Ok(p.evaluate(&rho.to_owned(), true)?.1)
}

/// Reconstructs from phase-corrected portraits.
pub fn reconstruct(stack: &RealStack, model: &ForwardModel, scfg: &SolverConfig) -> Result<ReconResult> {
    let (data, weights) = stack_to_data(stack, model)?;
    reconstruct_data(data, weights, model, scfg)
}

/// [`reconstruct`] for raw per-harmonic arrays in model harmonic order.
pub fn reconstruct_data(
    data: Data,
    weights: Option<Vec<Array3<f64>>>,
    model: &ForwardModel,
    scfg: &SolverConfig,
) -> Result<ReconResult> {
    scfg.validate()?;
    let start = Instant::now();
    let d_norm = data.iter().flat_map(|a| a.iter()).map(|v| v * v).sum::<f64>().sqrt();
    let dim = model.padded_dim();
    if d_norm == 0.0 {
        let rho_padded = Array3::zeros(dim);
        return Ok(ReconResult {
            rho: model.crop_to_fov(&rho_padded.view())?,
            rho_padded,
            trace: vec![TraceEntry { objective: 0.0, data_fit: 0.0, regularizer: 0.0 }],
            iterations: 0,
            converged: true,
            final_residual: 0.0,
            relative_residual: 0.0,
            final_objective: 0.0,
            projected_gradient: 0.0,
            lambda_effective: 0.0,
            lipschitz: 0.0,
            step: 0.0,
            seconds: start.elapsed().as_secs_f64(),
            iteration_seconds: Vec::new(),
        });
    }
    let problem = build_problem(data, weights, model, scfg)?;
    let (lipschitz, step) = match scfg.step {
        StepPolicy::PowerIteration { iterations, safety } => {
            // f's Hessian is 2MᵀM; the step uses its norm
            let l = hessian_norm(&problem, iterations, POWER_SEED)?;
            if !(l > 0.0) || !l.is_finite() {
                return Err(Error::Degenerate(format!("normal operator norm {l}")));
            }
            (l / 2.0, safety / l)
        }
        StepPolicy::Fixed(t) => (f64::NAN, t),
    };
    let out = fista(
        &problem,
        Array3::zeros(dim),
        step,
        &FistaOptions {
            max_iterations: scfg.max_iterations,
            tolerance: scfg.tolerance,
            patience: scfg.patience,
            nonneg: scfg.nonneg,
            restart: scfg.restart,
        },
    )?;
    let (fin, g) = problem.value_gradient(&out.x)?;
    let mut num = 0.0;
    let mut den = 0.0;
    Zip::from(&out.x).and(&g).for_each(|&x, &g| {
        let mut p = x - step * g;
        if scfg.nonneg {
            p = p.max(0.0);
        }
        num += (x - p) * (x - p);
        den += x * x;
    });
    Ok(ReconResult {
        rho: model.crop_to_fov(&out.x.view())?,
        trace: out.trace,
        iterations: out.iterations,
        converged: out.converged,
        final_residual: fin.data_fit.sqrt(),
        relative_residual: fin.data_fit.sqrt() / d_norm,
        final_objective: fin.objective,
        projected_gradient: if den > 0.0 { (num / den).sqrt() } else { 0.0 },
        lambda_effective: problem.lambda(),
        lipschitz,
        step,
        seconds: start.elapsed().as_secs_f64(),
        iteration_seconds: out.iteration_seconds,
        rho_padded: out.x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tikhonov_annihilates_constants_and_ramps() {
        let c = Array3::from_elem((4, 5, 6), 2.5);
        assert!(apply_tikhonov(&c.view()).iter().all(|v| v.abs() < 1e-12));
        let r = Array3::from_shape_fn((6, 6, 6), |(z, y, x)| z as f64 + 2.0 * y as f64 - x as f64);
        let t = apply_tikhonov(&r.view());
        for z in 1..5 {
            for y in 1..5 {
                for x in 1..5 {
                    assert!(t[[z, y, x]].abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn spectral_normal_matches_stencil() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array3::from_shape_fn((5, 6, 7), |_| StandardNormal.sample(&mut rng));
        let s = tikhonov_normal(&a.view());
        let t = apply_tikhonov(&apply_tikhonov(&a.view()).view());
        for (x, y) in s.iter().zip(t.iter()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn boundary_counts() {
        let m = Mesh::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let b = boundary_selector(&m, 1).unwrap();
        assert_eq!(b.len(), 56);
        assert_eq!(boundary_selector(&m, 2).unwrap().len(), 64);
        assert_eq!(boundary_selector(&m, 9).unwrap().len(), 64);
        assert!(boundary_selector(&m, 0).is_err());
        let set: std::collections::BTreeSet<_> = b.iter().copied().collect();
        assert_eq!(set.len(), b.len());
        let inner: Vec<usize> = (0..64).filter(|i| !set.contains(i)).collect();
        assert_eq!(inner.len(), 8);
    }

    #[test]
    fn config_validation() {
        let mut c = SolverConfig::default();
        assert!(c.validate().is_ok());
        c.lambda = -1.0;
        assert!(c.validate().is_err());
        let c = SolverConfig { max_iterations: 0, ..SolverConfig::default() };
        assert!(c.validate().is_err());
        let c = SolverConfig { alpha: f64::NAN, ..SolverConfig::default() };
        assert!(c.validate().is_err());
    }

    struct Quad {
        target: Array3<f64>,
    }

    impl SmoothObjective for Quad {
        fn dim(&self) -> (usize, usize, usize) {
            self.target.dim()
        }
        fn value_gradient(&self, x: &Array3<f64>) -> Result<(TraceEntry, Array3<f64>)> {
            let r = x - &self.target;
            let f = r.iter().map(|v| v * v).sum();
            Ok((TraceEntry { objective: f, data_fit: f, regularizer: 0.0 }, r * 2.0))
        }
    }

    #[test]
    fn fista_projects_onto_nonneg() {
        let q = Quad { target: Array3::from_shape_fn((2, 2, 2), |(z, y, x)| z as f64 - y as f64 + 0.5 * x as f64) };
        assert!((hessian_norm(&q, 10, 1).unwrap() - 2.0).abs() < 1e-12);
        let opts = FistaOptions { max_iterations: 200, tolerance: 0.0, patience: 10, nonneg: true, restart: false };
        let out = fista(&q, Array3::zeros((2, 2, 2)), 0.45, &opts).unwrap();
        for (x, t) in out.x.iter().zip(q.target.iter()) {
            assert!((x - t.max(0.0)).abs() < 1e-9);
        }
        assert_eq!(out.iterations, 200);
    }
}
