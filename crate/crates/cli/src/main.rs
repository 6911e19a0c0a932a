//! Command-line front end: calibrate, filter, altitude, simulate, register,
//! evaluate and reproduce.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use altimeter_icp::barometry::Pattern;
use altimeter_icp::registration::ConstraintMode;
use clap::{ArgAction, Args, Parser, Subcommand};

const FORMATS: &str = "\
File formats:
  pressure log   CSV  timestamp,sensor_id,p_raw,t   (s, -, Pa, degrees C)
  model          JSON {order, pattern, coeffs (16, row i = pressure power), sigma_p2}
  filtered       CSV  timestamp,pressure
  altitude       CSV  timestamp,delta_z,variance    (s, m, m^2)
  point cloud    text x y z [nx ny nz] per line, '#' starts a comment;
                 missing normals are estimated from 10 neighbours
  trajectory     CSV  timestamp,x,y,z,qx,qy,qz,qw[,final_error,iterations,converged]
  world spec     JSON {floors, floor_height, corridor_length, corridor_width}
                   or {shaft_depth, shaft_radius}
  report         CSV  mode,median_pct,std_pct,n_segments

Exit status: 0 on success, 2 for usage errors such as a missing channel,
1 for any other failure.";

#[derive(Parser, Debug)]
#[command(name = "altimeter-icp", version, about = "Barometric altimetry and altitude-constrained ICP", after_long_help = FORMATS)]
struct Cli {
    /// Seed for every random draw of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output file, or directory for simulate and reproduce. Single-file
    /// outputs go to stdout when omitted; directories default to ./out.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit a temperature-compensation model against a reference channel.
    Calibrate(CalibrateArgs),
    /// Calibrate and smooth one pressure channel.
    Filter(FilterArgs),
    /// Differential altitude of a rover relative to a base station.
    Altitude(AltitudeArgs),
    /// Generate a synthetic scenario: trajectories, pressure logs and scans.
    Simulate(SimulateArgs),
    /// Register one scan against a map.
    Register(RegisterArgs),
    /// z-RPE of an estimated trajectory against ground truth.
    Evaluate(EvaluateArgs),
    /// Run the mode comparison on a named scenario.
    Reproduce(ReproduceArgs),
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct CalibrateArgs {
    /// Pressure log holding the reference and the sensor channel.
    #[arg(long)]
    input: PathBuf,
    /// sensor_id of the reference channel.
    #[arg(long, default_value = "reference")]
    reference: String,
    /// sensor_id to calibrate; required when the log has several.
    #[arg(long)]
    sensor: Option<String>,
    /// A_p, A_simple, A_ind, A_m, A'_m or A_full.
    #[arg(long, default_value = "A_simple")]
    pattern: Pattern,
    /// Print residual statistics of every pattern.
    #[arg(long = "all-patterns")]
    all_patterns: bool,
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct FilterArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// sensor_id to keep; all rows when omitted.
    #[arg(long)]
    sensor: Option<String>,
    /// Pa^2 per sample; defaults to the model variance / 100.
    #[arg(long)]
    process_variance: Option<f64>,
    /// Pa^2; defaults to the model variance.
    #[arg(long)]
    observation_variance: Option<f64>,
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct AltitudeArgs {
    /// Base-station pressure log.
    #[arg(long)]
    base: PathBuf,
    /// Rover pressure log.
    #[arg(long)]
    rover: PathBuf,
    #[arg(long)]
    base_model: PathBuf,
    #[arg(long)]
    rover_model: PathBuf,
    /// sensor_id of the base rows; all rows when omitted.
    #[arg(long)]
    base_id: Option<String>,
    /// sensor_id of the rover rows; all rows when omitted.
    #[arg(long)]
    rover_id: Option<String>,
    /// Mean virtual temperature of the layer, K.
    #[arg(long, default_value_t = 288.15)]
    t_v: f64,
    /// Skip the Kalman smoothing of both channels.
    #[arg(long)]
    no_filter: bool,
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct SimulateArgs {
    /// corridor3 or shaft.
    #[arg(long, default_value = "corridor3", conflicts_with = "world")]
    scenario: String,
    /// World spec file; replaces the named scenario's geometry.
    #[arg(long)]
    world: Option<PathBuf>,
    /// Points per scan.
    #[arg(long)]
    points_per_scan: Option<usize>,
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct RegisterArgs {
    /// Scan in the sensor frame.
    #[arg(long)]
    reading: PathBuf,
    /// Reference cloud in the map frame.
    #[arg(long)]
    map: PathBuf,
    /// six_dof, four_dof or three_dof.
    #[arg(long, default_value = "three_dof")]
    mode: ConstraintMode,
    /// Trajectory file whose first row is the initial pose; identity when omitted.
    #[arg(long)]
    prior: Option<PathBuf>,
    /// Altitude relative to the base station, m. Required for three_dof.
    #[arg(long, allow_hyphen_values = true)]
    altitude: Option<f64>,
    /// Measured gravity direction in the sensor frame, "gx,gy,gz".
    #[arg(long, default_value = "0,0,-1", allow_hyphen_values = true)]
    gravity: String,
    #[arg(long, default_value_t = 40)]
    max_iterations: usize,
    #[arg(long, default_value_t = 1e-4)]
    rotation_tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    translation_tol: f64,
    #[arg(long, default_value_t = 0.1)]
    trim_ratio: f64,
    #[arg(long, default_value_t = 1.0)]
    max_dist: f64,
    #[arg(long, default_value_t = 1e-9)]
    damping: f64,
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct EvaluateArgs {
    #[arg(long)]
    estimate: PathBuf,
    #[arg(long)]
    ground_truth: PathBuf,
    /// Path length per segment, m.
    #[arg(long, default_value_t = 5.0)]
    segment_distance: f64,
    /// Excluded time window "start:end", repeatable.
    #[arg(long)]
    mask: Vec<String>,
    /// Row label in the report.
    #[arg(long, default_value = "estimate")]
    mode: String,
}

#[derive(Args, Debug)]
#[command(rename_all = "snake_case")]
struct ReproduceArgs {
    /// corridor3 or shaft.
    scenario: String,
    /// Number of consecutive seeds starting at --seed (default seeds 0..=9).
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// Comma-separated series; all six when omitted.
    #[arg(long, value_delimiter = ',')]
    series: Vec<String>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<commands::UsageError>().is_some() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
