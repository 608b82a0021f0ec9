//! Command-line front end: `run`, `bench` and `selftest`.
//!
//! Exit codes: 0 success, 1 run failure, 2 configuration error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Deserialize;

use crate::bench::{fly, run_matrix, ScenarioMatrix};
use crate::controllers::{ControllerConfig, ControllerKind};
use crate::error::Error;
use crate::model::MotorVariant;
use crate::params::VehicleParams;
use crate::plant::{Desaturation, NoiseStd, PlantConfig};
use crate::selftest::Selftest;
use crate::so3::Vec3;
use crate::trajectories::{make_hover, ReferenceTrajectory, Shape};

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUN: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "lolnmpc", version, about = "Quadrotor NMPC simulation and benchmark harness")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fly one closed-loop run and write its logs.
    Run(RunArgs),
    /// Run a scenario matrix and write the comparison report.
    Bench(BenchArgs),
    /// Run the numerical self-checks.
    Selftest(SelftestArgs),
}

#[derive(Debug, Args, Default)]
pub struct RunArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// fig8, slanted, hyp, hover, or a reference CSV file.
    #[arg(long)]
    pub traj: Option<String>,
    /// Target peak acceleration in g (presets only).
    #[arg(long)]
    pub g: Option<f64>,
    /// standard or lol.
    #[arg(long)]
    pub controller: Option<String>,
    /// Motor model of the standard controller: none, speed or force.
    #[arg(long)]
    pub motor_variant: Option<String>,
    /// Vehicle parameter JSON file.
    #[arg(long)]
    pub vehicle: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seed of the measurement noise.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Flight time in seconds (default: one lap, or 10 s for hover).
    #[arg(long)]
    pub duration: Option<f64>,
    /// Measurement noise: none or desk.
    #[arg(long)]
    pub noise: Option<String>,
    /// Mixer desaturation: clip or shift.
    #[arg(long)]
    pub desaturation: Option<String>,
}

#[derive(Debug, Args, Default)]
pub struct BenchArgs {
    /// Scenario matrix JSON (default: the built-in desk matrix).
    pub matrix: Option<PathBuf>,
    #[arg(long)]
    pub vehicle: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Base noise seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: LOLNMPC_THREADS, else all cores).
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Override the repetition count.
    #[arg(long)]
    pub reps: Option<usize>,
}

#[derive(Debug, Args, Default)]
pub struct SelftestArgs {
    #[arg(long)]
    pub vehicle: Option<PathBuf>,
}

/// Run configuration file. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub vehicle: Option<PathBuf>,
    pub traj: Option<String>,
    pub g: Option<f64>,
    pub controller: Option<String>,
    pub motor_variant: Option<MotorVariant>,
    pub duration: Option<f64>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub plant: Option<PlantConfig>,
    pub controller_config: Option<ControllerConfig>,
}

enum Failure {
    Config(String),
    Run(String),
}

fn config_err(path: &Path, e: impl std::fmt::Display) -> Failure {
    Failure::Config(format!("config error in {}: {e}", path.display()))
}

fn from_error(e: Error) -> Failure {
    match e {
        Error::Config { .. } | Error::InvalidParam(_) | Error::Parse { .. } => Failure::Config(e.to_string()),
        other => Failure::Run(other.to_string()),
    }
}

fn load_vehicle(path: Option<&Path>) -> Result<VehicleParams, Failure> {
    match path {
        Some(p) => VehicleParams::load(p).map_err(from_error),
        None => Ok(VehicleParams::default()),
    }
}

fn parse_variant(s: &str) -> Result<MotorVariant, Failure> {
    match s {
        "none" => Ok(MotorVariant::None),
        "speed" => Ok(MotorVariant::Speed),
        "force" => Ok(MotorVariant::Force),
        other => Err(Failure::Config(format!("unknown motor variant `{other}` (none, speed, force)"))),
    }
}

/// Parses `args` (including the program name) and executes the command.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Bench(a) => cmd_bench(&a),
        Command::Selftest(a) => cmd_selftest(&a),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            EXIT_CONFIG
        }
        Err(Failure::Run(m)) => {
            eprintln!("run failed: {m}");
            EXIT_RUN
        }
    }
}

fn build_reference(traj: &str, g: f64, params: &VehicleParams, duration: Option<f64>) -> Result<ReferenceTrajectory, Failure> {
    if traj == "hover" {
        return Ok(make_hover(Vec3::new(0.0, 0.0, 2.0), duration.unwrap_or(10.0)));
    }
    if traj.ends_with(".csv") || Path::new(traj).is_file() {
        let path = Path::new(traj);
        return ReferenceTrajectory::load_csv(path).map_err(|e| config_err(path, e));
    }
    let shape: Shape = traj.parse().map_err(from_error)?;
    shape.build(g, params).map_err(from_error)
}

pub fn cmd_run_summary(args: &RunArgs) -> Result<String, String> {
    run_inner(args).map(|(s, _)| s).map_err(|f| match f {
        Failure::Config(m) | Failure::Run(m) => m,
    })
}

fn run_inner(args: &RunArgs) -> Result<(String, Vec<PathBuf>), Failure> {
    let file = match &args.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| config_err(p, e))?;
            serde_json::from_str::<RunConfig>(&text).map_err(|e| config_err(p, e))?
        }
        None => RunConfig::default(),
    };
    let params = load_vehicle(args.vehicle.as_deref().or(file.vehicle.as_deref()))?;
    let variant = match &args.motor_variant {
        Some(s) => parse_variant(s)?,
        None => file.motor_variant.unwrap_or_default(),
    };
    let controller_name = args.controller.clone().or(file.controller.clone()).unwrap_or_else(|| "lol".into());
    let kind = ControllerKind::parse(&controller_name, variant).map_err(from_error)?;
    let traj = args.traj.clone().or(file.traj.clone()).unwrap_or_else(|| "fig8".into());
    let g = args.g.or(file.g).unwrap_or(2.5);
    let duration = args.duration.or(file.duration);
    if let Some(d) = duration {
        if !(d > 0.0) {
            return Err(Failure::Config(format!("duration must be positive, got {d}")));
        }
    }
    let reference = build_reference(&traj, g, &params, duration)?;
    let duration = duration.unwrap_or_else(|| reference.meta.period.unwrap_or_else(|| reference.duration()));

    let mut plant = file.plant.clone().unwrap_or_default();
    if let Some(s) = args.seed.or(file.seed) {
        plant.seed = s;
    }
    match args.noise.as_deref() {
        None => {}
        Some("none") => plant.noise = NoiseStd::default(),
        Some("desk") => plant.noise = NoiseStd::desk(),
        Some(other) => return Err(Failure::Config(format!("unknown noise level `{other}` (none, desk)"))),
    }
    match args.desaturation.as_deref() {
        None => {}
        Some("clip") => plant.desaturation = Desaturation::Clip,
        Some("shift") => plant.desaturation = Desaturation::CollectiveShift,
        Some(other) => return Err(Failure::Config(format!("unknown desaturation `{other}` (clip, shift)"))),
    }
    plant.validate().map_err(from_error)?;
    let controller = match file.controller_config.clone() {
        Some(c) if c.kind == kind => c,
        Some(_) => return Err(Failure::Config("controller_config.kind disagrees with the selected controller".into())),
        None => ControllerConfig::default_for(kind, &params),
    };
    controller.validate().map_err(from_error)?;

    let (log, metrics) = fly(&params, controller, plant, &reference, duration).map_err(from_error)?;
    let out = args.out.clone().or(file.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let g_tag = reference.meta.target_g.map_or(String::new(), |g| format!("_{g}g"));
    let stem = format!("{}_{}{}", crate::bench::controller_label(kind), reference.meta.name, g_tag);
    let files = log.write_all(&out, &stem).map_err(|e| Failure::Run(e.to_string()))?;
    let mean_solve = metrics.solve_times_us.iter().sum::<f64>() / metrics.solve_times_us.len().max(1) as f64;
    let summary = format!(
        "{stem}: rmse {:.4} m, max speed {:.2} m/s, mean solve {:.0} us, clip events {}, stale ticks {}",
        metrics.rmse, metrics.max_speed, mean_solve, metrics.clip_events, metrics.stale_ticks
    );
    Ok((summary, files.to_vec()))
}

fn cmd_run(args: &RunArgs) -> Result<i32, Failure> {
    let (summary, files) = run_inner(args)?;
    for f in files {
        eprintln!("wrote {}", f.display());
    }
    println!("{summary}");
    Ok(EXIT_OK)
}

fn cmd_bench(args: &BenchArgs) -> Result<i32, Failure> {
    let params = load_vehicle(args.vehicle.as_deref())?;
    let mut matrix = match &args.matrix {
        Some(p) => ScenarioMatrix::load(p).map_err(from_error)?,
        None => ScenarioMatrix::default(),
    };
    if let Some(s) = args.seed {
        matrix.seed = s;
    }
    if let Some(r) = args.reps {
        matrix.repetitions = r;
    }
    matrix.validate().map_err(from_error)?;
    if args.jobs == Some(0) {
        return Err(Failure::Config("--jobs must be at least 1".into()));
    }
    let (report, timing) = run_matrix(&matrix, &params, args.jobs).map_err(from_error)?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from("bench_out"));
    let mut files = report.write(&out).map_err(|e| Failure::Run(e.to_string()))?;
    files.extend(timing.write(&out).map_err(|e| Failure::Run(e.to_string()))?);
    for f in &files {
        eprintln!("wrote {}", f.display());
    }
    print!("{}", report.table());
    println!();
    print!("{}", timing.table());
    Ok(EXIT_OK)
}

fn cmd_selftest(args: &SelftestArgs) -> Result<i32, Failure> {
    let params = load_vehicle(args.vehicle.as_deref())?;
    let results = Selftest { params, ..Selftest::default() }.run();
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    Ok(if failed == 0 { EXIT_OK } else { EXIT_RUN })
}
