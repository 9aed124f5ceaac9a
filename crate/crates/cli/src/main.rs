use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use nnpoisson::config::{Precision, RunConfig, PRESETS};
use nnpoisson::fdbaseline::{convergence_csv, convergence_study, cost_model, CostModelConfig};
use nnpoisson::geometry::{ball_sample, direction_pairs};
use nnpoisson::problems::{validate, ValidationReport};
use nnpoisson::slotnet::{init_weights, parse_header, Topology, WeightSet};
use nnpoisson::trainer::{
    artifacts, gradient_check, run_experiment_observed, write_phase_summary, LogRecord, Observer,
};
use nnpoisson::Real;

const EXIT_USAGE: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

/// Largest network the gradient check will differentiate parameter by parameter.
const GRADCHECK_MAX_PARAMS: usize = 1000;
const GRADCHECK_POINTS: usize = 5;

#[derive(Parser)]
#[command(name = "nnpoisson", version, about = "Mesh-free Poisson solver on n-balls")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and validate it against the analytic solution.
    Solve {
        #[command(flatten)]
        run: RunArgs,
        /// Print a progress line every N epochs (0 disables).
        #[arg(long, default_value_t = 100)]
        progress: usize,
    },
    /// Recompute the validation report of a saved weights file.
    Validate {
        #[command(flatten)]
        run: RunArgs,
        /// Weights file; defaults to the one in --out.
        #[arg(long)]
        weights: Option<PathBuf>,
    },
    /// Compare exact cost gradients with central finite differences.
    Gradcheck {
        #[command(flatten)]
        run: RunArgs,
        /// Difference step; defaults to 1e-6 at 64 bits and 1e-2 at 32 bits.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Finite-difference convergence study on the disc (2D problems only).
    Fd {
        #[command(flatten)]
        run: RunArgs,
        /// Comma-separated mesh widths.
        #[arg(long, value_delimiter = ',', default_values_t = vec![1.0 / 16.0, 1.0 / 32.0, 1.0 / 64.0])]
        h: Vec<f64>,
    },
    /// Point counts and running-time extrapolation of a grid solver.
    Costmodel {
        #[arg(long, default_value_t = CostModelConfig::default().delta, allow_negative_numbers = true)]
        delta: f64,
        #[arg(long, default_value_t = CostModelConfig::default().eps_coefficient)]
        eps_coefficient: f64,
        /// Use the exact spacing instead of rounding it to one significant figure.
        #[arg(long)]
        no_round: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List the built-in presets.
    Presets,
}

#[derive(Args, Clone, Default)]
struct RunArgs {
    /// Configuration file (key = value lines and [phase] blocks).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in preset, see `presets`.
    #[arg(long)]
    preset: Option<String>,
    /// Weight initialization seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Floating-point width: 32 or 64.
    #[arg(long)]
    precision: Option<u32>,
    /// Record zero wall time in logs so that runs compare bit for bit.
    #[arg(long)]
    reproducible: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Errors of the command line itself, reported with the usage exit code.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Holds `<out>/.lock` for the lifetime of a run.
struct RunLock(PathBuf);

impl RunLock {
    fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        let path = dir.join(".lock");
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(RunLock(path))
            }
            Err(e) if e.kind() == io::ErrorKind::AlreadyExists => Err(usage(format!(
                "{} is in use by another run (remove {} if stale)",
                dir.display(),
                path.display()
            ))),
            Err(e) => Err(e).with_context(|| format!("creating {}", path.display())),
        }
    }
}

impl Drop for RunLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.0);
    }
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, &self.preset) {
            (Some(_), Some(_)) => return Err(usage("--config and --preset are mutually exclusive")),
            (Some(path), None) => {
                let text = fs::read_to_string(path)
                    .with_context(|| format!("reading {}", path.display()))?;
                RunConfig::from_text(&text)?
            }
            (None, Some(name)) => RunConfig::preset(name)?,
            (None, None) => RunConfig::preset("2d-linear")?,
        };
        if let Some(seed) = self.seed {
            cfg.seeds.weights = seed;
        }
        if let Some(bits) = self.precision {
            cfg.precision = Precision::from_bits(bits)?;
        }
        if self.reproducible {
            cfg.reproducible = true;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<UsageError>().is_some() {
        return EXIT_USAGE;
    }
    match e.downcast_ref::<nnpoisson::Error>() {
        Some(nnpoisson::Error::Config { .. }) | Some(nnpoisson::Error::Dimension(_)) => EXIT_USAGE,
        Some(err) if err.is_numerical() => EXIT_NUMERICAL,
        _ => 1,
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Solve { run, progress } => {
            let cfg = run.resolve()?;
            match cfg.precision {
                Precision::F32 => solve::<f32>(&cfg, progress),
                Precision::F64 => solve::<f64>(&cfg, progress),
            }?;
        }
        Command::Validate { run, weights } => cmd_validate(&run, weights)?,
        Command::Gradcheck { run, step } => {
            let cfg = run.resolve()?;
            match cfg.precision {
                Precision::F32 => gradcheck::<f32>(&cfg, step),
                Precision::F64 => gradcheck::<f64>(&cfg, step),
            }?;
        }
        Command::Fd { run, h } => cmd_fd(&run.resolve()?, &h)?,
        Command::Costmodel {
            delta,
            eps_coefficient,
            no_round,
            out,
        } => {
            let config = CostModelConfig {
                delta,
                eps_coefficient,
                round_h: !no_round,
                ..CostModelConfig::default()
            };
            let report = cost_model(&config)?;
            print!("{}", report.to_text());
            if let Some(dir) = out {
                let _lock = RunLock::acquire(&dir)?;
                report.save(&dir)?;
            }
        }
        Command::Presets => {
            for name in PRESETS {
                let cfg = RunConfig::preset(name)?;
                println!(
                    "{name:<16} topology {}  theta {:.4}  lambda {:.4}  epochs {}  test points {}",
                    cfg.topology,
                    cfg.theta,
                    cfg.lambda,
                    cfg.epochs(),
                    cfg.n_test
                );
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn solve<T: Real>(cfg: &RunConfig, progress: usize) -> Result<()> {
    let _lock = cfg.out_dir.as_deref().map(RunLock::acquire).transpose()?;
    print!("{}", cfg.to_text());
    println!();
    let total = cfg.epochs();
    let observer: Option<Observer> = (progress > 0).then(|| {
        Box::new(move |r: &LogRecord| {
            if r.epoch.is_multiple_of(progress) || r.epoch == total {
                eprintln!(
                    "epoch {}/{total} phase {} e_s {:.3e} rms V0 {:.3e} {:.0}s",
                    r.epoch,
                    r.phase + 1,
                    r.cost,
                    r.rms_v0,
                    r.seconds
                );
            }
        }) as Observer
    });
    let exp = run_experiment_observed::<T>(cfg, cfg.out_dir.as_deref(), observer)?;
    println!(
        "grid: {} points ({} surface, {} interior)",
        exp.surface_points + exp.interior_points,
        exp.surface_points,
        exp.interior_points
    );
    write_phase_summary(io::stdout().lock(), &exp.log)?;
    print!("{}", exp.report.to_text());
    Ok(())
}

fn cmd_validate(run: &RunArgs, weights: Option<PathBuf>) -> Result<()> {
    let mut run = run.clone();
    // A finished run directory carries its own resolved configuration.
    if run.config.is_none() && run.preset.is_none() {
        if let Some(dir) = &run.out {
            let stored = dir.join(artifacts::CONFIG);
            if stored.exists() {
                run.config = Some(stored);
            }
        }
    }
    let cfg = run.resolve()?;
    let path = match (weights, &cfg.out_dir) {
        (Some(p), _) => p,
        (None, Some(dir)) => dir.join(artifacts::WEIGHTS),
        (None, None) => return Err(usage("validate needs --weights or --out")),
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    let header = text.lines().next().unwrap_or_default();
    let (_, bits) = parse_header(header)?;
    let mut report = match bits {
        32 => validate_text::<f32>(&cfg, &text)?,
        _ => validate_text::<f64>(&cfg, &text)?,
    };
    if let Some(dir) = &cfg.out_dir {
        let stored = dir.join(artifacts::REPORT);
        if let Ok(s) = fs::read_to_string(&stored) {
            let stored = ValidationReport::from_text(&s)?;
            report.rms_v0_final = stored.rms_v0_final;
            let same = stored.eps_max.to_bits() == report.eps_max.to_bits()
                && stored.eps_median.to_bits() == report.eps_median.to_bits();
            println!("matches stored report: {}", if same { "yes" } else { "no" });
        }
    }
    print!("{}", report.to_text());
    Ok(())
}

fn validate_text<T: Real>(cfg: &RunConfig, text: &str) -> Result<ValidationReport> {
    let w = WeightSet::<T>::from_text(text)?;
    if w.topology().input() != cfg.spec.dim() {
        return Err(usage(format!(
            "weights take {} inputs but the problem has dimension {}",
            w.topology().input(),
            cfg.spec.dim()
        )));
    }
    Ok(validate(&cfg.spec, &w, cfg.n_test, cfg.seeds.validation, cfg.eval_options())?)
}

fn gradcheck<T: Real>(cfg: &RunConfig, step: Option<f64>) -> Result<()> {
    let step = step.unwrap_or(if T::BITS == 64 { 1e-6 } else { 1e-2 });
    if !(step > 0.0) {
        return Err(usage("--step must be positive"));
    }
    let n = cfg.spec.dim();
    let topology = if cfg.topology.n_params() <= GRADCHECK_MAX_PARAMS {
        cfg.topology.clone()
    } else {
        let small = Topology::new(vec![n, 8, 8, 1])?;
        println!(
            "topology {} has {} parameters (limit {GRADCHECK_MAX_PARAMS}); checking {small} instead",
            cfg.topology,
            cfg.topology.n_params()
        );
        small
    };
    let points = ball_sample(n, GRADCHECK_POINTS, cfg.seeds.grid);
    let dirs = direction_pairs(points.len(), n, cfg.seeds.directions);
    let weights: WeightSet<T> = init_weights(&topology, cfg.seeds.weights);
    let tolerance = if T::BITS == 64 { 1e-5 } else { 1e-2 };
    println!(
        "problem {} dimension {} topology {} ({} parameters), {}-bit, step {step:e}",
        cfg.spec.kind(),
        n,
        topology,
        topology.n_params(),
        T::BITS
    );
    for order in [2, 3, 4] {
        let g = gradient_check(&cfg.spec, &weights, &points, &dirs, order, step)?;
        let verdict = if g.max_rel_error <= tolerance { "ok" } else { "above" };
        println!(
            "e{order}: max relative error {:.3e}, normwise {:.3e} ({verdict} tolerance {tolerance:e})",
            g.max_rel_error, g.normwise_error
        );
    }
    Ok(())
}

fn cmd_fd(cfg: &RunConfig, hs: &[f64]) -> Result<()> {
    if cfg.spec.dim() != 2 {
        return Err(usage("the finite-difference baseline solves the disc only (dimension 2)"));
    }
    if let Some(h) = hs.iter().find(|h| !(**h > 0.0 && **h <= 0.125)) {
        return Err(usage(format!("mesh width {h} outside (0, 1/8]")));
    }
    let _lock = cfg.out_dir.as_deref().map(RunLock::acquire).transpose()?;
    let study = convergence_study(&cfg.spec, hs)?;
    println!("{:>10} {:>12} {:>12} {:>8}", "h", "max error", "predicted", "ratio");
    for (i, p) in study.iter().enumerate() {
        let ratio = i
            .checked_sub(1)
            .map(|j| format!("{:.3}", study[j].max_error / p.max_error))
            .unwrap_or_default();
        println!("{:>10.6} {:>12.4e} {:>12.4e} {:>8}", p.h, p.max_error, p.predicted, ratio);
    }
    if let Some(dir) = &cfg.out_dir {
        let path = dir.join("fd_convergence.csv");
        let mut f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
        f.write_all(convergence_csv(&study).as_bytes())?;
    }
    Ok(())
}
