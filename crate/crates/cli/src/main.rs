use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mh3d_cli::commands::{self, Context};
use mh3d_cli::config::{parse_harmonics, PsfSourceKind, RunConfig};
use mh3d_cli::error::{CliError, CliResult, EXIT_NUMERICAL, EXIT_OK};
use mh3d_core::portrait::WindowKind;

/// Multi-harmonic 3D MPI simulation and reconstruction.
///
/// Lengths are in millimeters and frequencies in kilohertz. Set
/// MH3D_THREADS to cap the worker threads.
#[derive(Parser)]
#[command(name = "mh3d", version)]
struct Cli {
    /// JSON run configuration; the built-in preset when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct HarmonicArgs {
    /// Harmonics as `a:b` or a comma list.
    #[arg(long)]
    harmonics: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate per-slab receive signals for a phantom.
    Simulate {
        #[arg(long)]
        phantom: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        noise_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Form phase-corrected harmonic portraits from slab signals.
    Portrait {
        #[arg(long)]
        signals: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        harmonics: HarmonicArgs,
        /// Band window: hann or tophat.
        #[arg(long)]
        window: Option<String>,
        /// Window half bandwidth, kHz.
        #[arg(long)]
        bandwidth: Option<f64>,
    },
    /// Generate harmonic PSF kernels.
    Psf {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_parser = parse_source)]
        source: Option<PsfSourceKind>,
        #[command(flatten)]
        harmonics: HarmonicArgs,
        /// Fine mesh z spacing, mm.
        #[arg(long)]
        fine_dz: Option<f64>,
    },
    /// Reconstruct a volume from a portrait stack.
    Reconstruct {
        #[arg(long)]
        stack: PathBuf,
        /// PSF file from `mh3d psf`; generated from the config when omitted.
        #[arg(long)]
        psf: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        harmonics: HarmonicArgs,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        iters: Option<usize>,
        /// Padding voxels per side.
        #[arg(long)]
        pad: Option<usize>,
        /// Fine mesh z spacing, mm.
        #[arg(long)]
        fine_dz: Option<f64>,
    },
    /// Closed-form multi-harmonic anti-differentiation along z.
    Mhad {
        #[arg(long)]
        stack: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        harmonics: HarmonicArgs,
        #[arg(long)]
        lambda: Option<f64>,
        /// Fine mesh z spacing, mm.
        #[arg(long)]
        fine_dz: Option<f64>,
    },
    /// Run the self-checks; exits 1 if any fails.
    Verify,
    /// Image metrics as JSON.
    Metrics {
        #[arg(long)]
        image: PathBuf,
        /// JSON metrics spec (peaks, search box, slice export).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_source(s: &str) -> Result<PsfSourceKind, String> {
    match s {
        "analytic" => Ok(PsfSourceKind::Analytic),
        "simulated" => Ok(PsfSourceKind::Simulated),
        _ => Err(format!("unknown PSF source '{s}' (expected analytic|simulated)")),
    }
}

fn set_harmonics(cfg: &mut RunConfig, h: &HarmonicArgs) -> CliResult<()> {
    if let Some(s) = &h.harmonics {
        cfg.harmonics = parse_harmonics(s)?;
    }
    Ok(())
}

fn init_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("MH3D_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|n| *n > 0)
            .ok_or_else(|| CliError::Usage(format!("MH3D_THREADS must be a positive integer, got '{v}'")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult<u8> {
    init_threads()?;
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    let argv: Vec<String> = std::env::args().collect();
    match cli.command {
        Command::Simulate { phantom, out, noise_std, seed } => {
            let ctx = Context::new(cfg, argv);
            commands::simulate(&ctx, &phantom, &out, noise_std, seed)?;
        }
        Command::Portrait { signals, out, harmonics, window, bandwidth } => {
            set_harmonics(&mut cfg, &harmonics)?;
            if let Some(w) = window {
                cfg.portrait.window = w.parse::<WindowKind>()?;
            }
            if bandwidth.is_some() {
                cfg.portrait.bandwidth_khz = bandwidth;
            }
            let ctx = Context::new(cfg, argv);
            commands::portrait(&ctx, &signals, &out)?;
        }
        Command::Psf { out, source, harmonics, fine_dz } => {
            set_harmonics(&mut cfg, &harmonics)?;
            if let Some(dz) = fine_dz {
                cfg.fine_dz_mm = dz;
            }
            let source = source.unwrap_or(cfg.psf.source);
            cfg.psf.source = source;
            let ctx = Context::new(cfg, argv);
            commands::psf(&ctx, source, &out)?;
        }
        Command::Reconstruct { stack, psf, out, harmonics, lambda, alpha, iters, pad, fine_dz } => {
            set_harmonics(&mut cfg, &harmonics)?;
            let s = &mut cfg.solver;
            s.lambda = lambda.unwrap_or(s.lambda);
            s.alpha = alpha.unwrap_or(s.alpha);
            s.iterations = iters.unwrap_or(s.iterations);
            if pad.is_some() {
                s.pad = pad;
            }
            if let Some(dz) = fine_dz {
                cfg.fine_dz_mm = dz;
            }
            let ctx = Context::new(cfg, argv);
            commands::reconstruct_cmd(&ctx, &stack, psf.as_deref(), &out)?;
        }
        Command::Mhad { stack, out, harmonics, lambda, fine_dz } => {
            set_harmonics(&mut cfg, &harmonics)?;
            cfg.mhad.lambda = lambda.unwrap_or(cfg.mhad.lambda);
            if let Some(dz) = fine_dz {
                cfg.fine_dz_mm = dz;
            }
            let ctx = Context::new(cfg, argv);
            commands::mhad_cmd(&ctx, &stack, &out)?;
        }
        Command::Verify => {
            let ctx = Context::new(cfg, argv);
            let report = commands::verify(&ctx)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            if !report.pass {
                return Ok(EXIT_NUMERICAL);
            }
        }
        Command::Metrics { image, spec, out } => {
            commands::metrics_cmd(&image, spec.as_deref(), &out)?;
        }
    }
    Ok(EXIT_OK)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
