use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use elastica::degrade::{make_kernel, KernelSpec, NoiseSpec};
use elastica::splitting::TraceEntry;
use elastica::{
    load_image, save_image, BlurKernel, InitMode, KernelTaps, MultiChannelImage, NewtonSettings, QualityReport,
    RunResult, Solver, SolverConfig, StopNorm,
};

/// Color elastica image restoration.
#[derive(Debug, Parser)]
#[command(name = "elastica", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Remove noise from an image.
    Denoise {
        #[command(flatten)]
        io: SolveIo,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Remove a known blur (and noise) from an image.
    Deblur {
        #[command(flatten)]
        io: SolveIo,
        #[command(flatten)]
        kernel: KernelArgs,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Blur and/or add seeded noise to an image.
    Degrade {
        #[arg(long = "in", value_name = "PATH")]
        input: PathBuf,
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
        #[command(flatten)]
        kernel: OptionalKernelArgs,
        /// Standard deviation of additive Gaussian noise.
        #[arg(long, conflicts_with = "poisson_photons")]
        gaussian_sd: Option<f64>,
        /// Photon count P of Poisson noise; larger is lighter.
        #[arg(long)]
        poisson_photons: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print PSNR and SSIM of a test image against a reference.
    Evaluate {
        #[arg(long = "ref", value_name = "PATH")]
        reference: PathBuf,
        #[arg(long, value_name = "PATH")]
        test: PathBuf,
    },
}

#[derive(Debug, Args)]
struct SolveIo {
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Write the per-iteration energy trace as CSV.
    #[arg(long, value_name = "PATH")]
    trace: Option<PathBuf>,
    /// Log every iteration to stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Debug, Args)]
struct SolverArgs {
    #[arg(long, default_value_t = SolverConfig::default().alpha)]
    alpha: f64,
    #[arg(long, default_value_t = SolverConfig::default().beta)]
    beta: f64,
    #[arg(long, default_value_t = SolverConfig::default().eta)]
    eta: f64,
    #[arg(long, default_value_t = SolverConfig::default().tau)]
    tau: f64,
    #[arg(long, default_value_t = SolverConfig::default().gamma1)]
    gamma1: f64,
    #[arg(long, default_value_t = SolverConfig::default().gamma2)]
    gamma2: f64,
    /// Stop when the update norm of u falls to this value.
    #[arg(long, default_value_t = SolverConfig::default().stop_tol)]
    tol: f64,
    #[arg(long, value_parser = ["l2", "linf"], default_value = "l2")]
    stop_norm: String,
    #[arg(long, default_value_t = SolverConfig::default().max_outer_iters)]
    max_iters: usize,
    #[arg(long, default_value_t = NewtonSettings::default().tol)]
    newton_tol: f64,
    /// Keep the last Newton iterate instead of failing when a pixel does not converge.
    #[arg(long)]
    newton_accept_last: bool,
    #[arg(long, value_parser = ["input", "zeros"], default_value = "input")]
    init: String,
}

impl SolverArgs {
    fn config(&self) -> Result<SolverConfig, CliError> {
        let cfg = SolverConfig {
            alpha: self.alpha,
            beta: self.beta,
            eta: self.eta,
            tau: self.tau,
            gamma1: self.gamma1,
            gamma2: self.gamma2,
            stop_tol: self.tol,
            stop_norm: self.stop_norm.parse::<StopNorm>().map_err(CliError::Usage)?,
            max_outer_iters: self.max_iters,
            newton: NewtonSettings {
                tol: self.newton_tol,
                accept_unconverged: self.newton_accept_last,
                ..NewtonSettings::default()
            },
            init_mode: self.init.parse::<InitMode>().map_err(CliError::Usage)?,
        };
        cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct KernelArgs {
    /// Kernel text file: a `rows cols` line, then row-major taps; origin at the center tap.
    #[arg(long, value_name = "PATH")]
    kernel: Option<PathBuf>,
    /// Motion blur as `L,THETA`: L taps along THETA degrees.
    #[arg(long, value_name = "L,THETA")]
    motion: Option<String>,
}

#[derive(Debug, Args)]
#[group(required = false, multiple = false)]
struct OptionalKernelArgs {
    /// Kernel text file: a `rows cols` line, then row-major taps; origin at the center tap.
    #[arg(long, value_name = "PATH")]
    kernel: Option<PathBuf>,
    /// Motion blur as `L,THETA`: L taps along THETA degrees.
    #[arg(long, value_name = "L,THETA")]
    motion: Option<String>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Solver(String),
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Solver(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Solver(m) | CliError::Io(m) => m,
        }
    }
}

fn parse_motion(text: &str) -> Result<KernelSpec, CliError> {
    let bad = || CliError::Usage(format!("--motion expects L,THETA, got {text:?}"));
    let (l, theta) = text.split_once(',').ok_or_else(bad)?;
    let length = l.trim().parse::<usize>().map_err(|_| bad())?;
    let angle_deg = theta.trim().parse::<f64>().map_err(|_| bad())?;
    Ok(KernelSpec::Motion { length, angle_deg })
}

fn load_kernel(kernel: Option<&Path>, motion: Option<&str>) -> Result<Option<KernelTaps>, CliError> {
    if let Some(path) = kernel {
        let text = fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let taps = KernelTaps::parse(&text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        return Ok(Some(taps));
    }
    if let Some(m) = motion {
        let taps = make_kernel(parse_motion(m)?).map_err(|e| CliError::Usage(e.to_string()))?;
        return Ok(Some(taps));
    }
    Ok(None)
}

fn read(path: &Path) -> Result<MultiChannelImage, CliError> {
    load_image(path).map_err(|e| CliError::Io(e.to_string()))
}

fn write(img: &MultiChannelImage, path: &Path) -> Result<(), CliError> {
    save_image(img, path).map_err(|e| CliError::Io(e.to_string()))
}

fn solve(io: &SolveIo, cfg: &SolverConfig, taps: Option<&KernelTaps>) -> Result<(), CliError> {
    let f = read(&io.input)?;
    let solver = match taps {
        None => Solver::new(&f, cfg),
        Some(t) => Solver::with_kernel(&f, &BlurKernel::for_grid(t, f.width(), f.height()), cfg),
    }
    .map_err(|e| CliError::Solver(e.to_string()))?;
    let verbose = io.verbose;
    let log = |e: &TraceEntry| {
        if verbose {
            eprintln!("iter={} energy={:.10e} update_norm={:.6e}", e.iter, e.energy, e.update_norm);
        }
    };
    let RunResult { u, trace, status } = solver.run_with(log).map_err(|e| CliError::Solver(e.to_string()))?;
    if !status.converged() {
        eprintln!(
            "warning: stopping test not met after {} iterations",
            status.iterations()
        );
    }
    eprintln!(
        "iterations={} energy={:.10e} (initial {:.10e})",
        status.iterations(),
        trace.final_energy(),
        trace.initial_energy
    );
    write(&u, &io.out)?;
    if let Some(path) = &io.trace {
        fs::write(path, trace.to_csv()).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
    }
    Ok(())
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Denoise { io, solver } => solve(&io, &solver.config()?, None),
        Command::Deblur { io, kernel, solver } => {
            let cfg = solver.config()?;
            let taps = load_kernel(kernel.kernel.as_deref(), kernel.motion.as_deref())?
                .ok_or_else(|| CliError::Usage("deblur needs --kernel or --motion".into()))?;
            solve(&io, &cfg, Some(&taps))
        }
        Command::Degrade {
            input,
            out,
            kernel,
            gaussian_sd,
            poisson_photons,
            seed,
        } => {
            let noise = match (gaussian_sd, poisson_photons) {
                (Some(sd), _) => Some(NoiseSpec::gaussian(sd, seed)),
                (_, Some(p)) => Some(NoiseSpec::poisson(p, seed)),
                _ => None,
            }
            .transpose()
            .map_err(|e| CliError::Usage(e.to_string()))?;
            let taps = load_kernel(kernel.kernel.as_deref(), kernel.motion.as_deref())?;
            let mut img = read(&input)?;
            if let Some(t) = taps {
                let mut plan = elastica::SpectralPlan::new(img.width(), img.height());
                let k = BlurKernel::new(&t, &mut plan);
                img = elastica::spectral::convolve_periodic(&mut plan, &img, &k, false)
                    .map_err(|e| CliError::Solver(e.to_string()))?;
            }
            if let Some(n) = noise {
                img = n.apply(&img);
            }
            write(&img, &out)
        }
        Command::Evaluate { reference, test } => {
            let a = read(&reference)?;
            let b = read(&test)?;
            let report = QualityReport::compare(&a, &b).map_err(|e| CliError::Usage(e.to_string()))?;
            println!("{report}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.exit_code())
        }
    }
}
