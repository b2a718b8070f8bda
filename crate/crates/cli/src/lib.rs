//! Batch driver: one subcommand per workflow, configured by a TOML file.

pub mod commands;
pub mod config;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::RunConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] electroinv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    /// A run that finished but missed its configured tolerance.
    #[error("{0}")]
    Tolerance(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use electroinv::Error as E;
        match self {
            CliError::Config(_) | CliError::Io(_) | CliError::Json(_) => EXIT_VALIDATION,
            CliError::Tolerance(_) => EXIT_NUMERICAL,
            CliError::Core(e) => match e {
                E::LinearSolve { .. }
                | E::PicardNotConverged { .. }
                | E::BracketExpansion { .. }
                | E::NonFinite { .. }
                | E::Identifiability { .. }
                | E::Monotonicity { .. } => EXIT_NUMERICAL,
                _ => EXIT_VALIDATION,
            },
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "electroinv", version, about = "Forward and inverse solvers for coupled electro-diffusion models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true, value_name = "N")]
    pub threads: Option<usize>,
    /// Overrides `solver.fixed_point_tol`.
    #[arg(long, global = true, value_name = "X")]
    pub tol: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Solve the forward problem for each experiment and write the states.
    Forward,
    /// Write boundary flux, voltage and probe measurements as JSON lines.
    Measure,
    /// Compare scaled fluxes with the linearised map for shrinking perturbations.
    VerifyLinearisation,
    /// Tabulate the normalised potential on the boundary and at interior probes.
    ReconstructPhi,
    /// Fit a parametrised diffusion family to boundary fluxes.
    FitD,
    /// Compare two potentials that differ only inside a compact bump.
    DemoBoundaryNonuniqueness,
    /// Residuals of the two zero-boundary solutions of the source demo.
    DemoSourceNonuniqueness,
    /// Mesh-refinement study on a manufactured solution.
    Convergence,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Forward => "forward",
            Command::Measure => "measure",
            Command::VerifyLinearisation => "verify-linearisation",
            Command::ReconstructPhi => "reconstruct-phi",
            Command::FitD => "fit-d",
            Command::DemoBoundaryNonuniqueness => "demo-boundary-nonuniqueness",
            Command::DemoSourceNonuniqueness => "demo-source-nonuniqueness",
            Command::Convergence => "convergence",
        }
    }
}

#[derive(Debug, Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    config_sha256: String,
    seed: u64,
    threads: usize,
    elapsed_seconds: f64,
    outputs: Vec<String>,
    summary: String,
}

/// What a command reports back to the driver.
#[derive(Debug, Default)]
pub struct Outcome {
    pub outputs: Vec<String>,
    pub summary: String,
    /// Set when the run completed but missed a configured tolerance.
    pub failure: Option<String>,
}

/// Parses `args` (including the program name) and runs the command; returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(&cli) {
        Ok(out) => {
            println!("{}", out.summary);
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<Outcome, CliError> {
    let path = cli
        .config
        .as_deref()
        .ok_or_else(|| CliError::Config("--config PATH is required".into()))?;
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text).map_err(|e| match e {
        CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
        e => e,
    })?;
    apply_overrides(&mut cfg, cli)?;

    let threads = cfg.threads.unwrap_or_else(rayon::current_num_threads);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;

    let out_dir = cfg.out.clone();
    std::fs::create_dir_all(&out_dir)?;
    let effective = cfg.to_toml()?;
    std::fs::write(out_dir.join("config.effective.toml"), &effective)?;

    let start = Instant::now();
    let mut outcome = pool.install(|| commands::dispatch(cli.command, &cfg, &out_dir))?;
    outcome.outputs.insert(0, "config.effective.toml".into());
    write_manifest(&out_dir, cli.command, &text, &cfg, threads, start.elapsed().as_secs_f64(), &outcome)?;
    match outcome.failure.take() {
        Some(msg) => {
            println!("{}", outcome.summary);
            Err(CliError::Tolerance(msg))
        }
        None => Ok(outcome),
    }
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) -> Result<(), CliError> {
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(t) = cli.threads {
        if t == 0 {
            return Err(CliError::Config("--threads must be positive".into()));
        }
        cfg.threads = Some(t);
    }
    if let Some(tol) = cli.tol {
        if !(tol > 0.0) {
            return Err(CliError::Config(format!("--tol must be positive, got {tol}")));
        }
        cfg.solver.fixed_point_tol = tol;
    }
    cfg.noise.seed = cfg.seed;
    cfg.validate()
}

fn write_manifest(
    dir: &Path,
    command: Command,
    config_text: &str,
    cfg: &RunConfig,
    threads: usize,
    elapsed: f64,
    outcome: &Outcome,
) -> Result<(), CliError> {
    let manifest = Manifest {
        command: command.name(),
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: format!("{:x}", Sha256::digest(config_text.as_bytes())),
        seed: cfg.seed,
        threads,
        elapsed_seconds: elapsed,
        outputs: outcome.outputs.clone(),
        summary: outcome.summary.clone(),
    };
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}
