use std::collections::BTreeSet;
use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use altimeter_icp::altimetry::{differential_altitude, AtmosphereConstants, PressureStream};
use altimeter_icp::barometry::{
    fit_calibration, residuals, CalibrationModel, FilterConfig, Pattern, PressureFilter, PressureSample,
};
use altimeter_icp::evaluation::{
    compare_seeds, median, pool, sample_std, z_rpe_masked, CompareConfig, Comparison, Series,
};
use altimeter_icp::io as formats;
use altimeter_icp::pointcloud::{Frame, RigidTransform};
use altimeter_icp::registration::{icp, IcpConfig};
use altimeter_icp::simulation::{
    calibration_campaign, render_scan, scenario, scenario_from_spec, simulate_baro, simulate_prior, Scenario, WorldSpec,
};
use altimeter_icp::Vec3;
use anyhow::{bail, Context, Result};

use crate::{
    AltitudeArgs, CalibrateArgs, Cli, Command, EvaluateArgs, FilterArgs, RegisterArgs, ReproduceArgs, SimulateArgs,
};

/// Errors that exit with status 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(message: impl Into<String>) -> anyhow::Error {
    UsageError(message.into()).into()
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Calibrate(a) => calibrate(cli, a),
        Command::Filter(a) => filter(cli, a),
        Command::Altitude(a) => altitude(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::Register(a) => register(cli, a),
        Command::Evaluate(a) => evaluate(cli, a),
        Command::Reproduce(a) => reproduce(cli, a),
    }
}

fn check_inputs<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(usage(format!("input file {} does not exist", p.display())));
        }
    }
    Ok(())
}

fn check_output_file(out: Option<&Path>) -> Result<()> {
    if let Some(parent) = out.and_then(Path::parent).filter(|p| !p.as_os_str().is_empty()) {
        if !parent.is_dir() {
            return Err(usage(format!("output directory {} does not exist", parent.display())));
        }
    }
    Ok(())
}

fn output_dir(cli: &Cli) -> Result<PathBuf> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

/// Writes to `out` or stdout, flushing before returning.
fn emit(out: Option<&Path>, write: impl FnOnce(&mut dyn Write) -> altimeter_icp::Result<()>) -> Result<()> {
    match out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
            write(&mut w)?;
            w.flush()?;
        }
        None => {
            let stdout = io::stdout();
            let mut w = stdout.lock();
            write(&mut w)?;
            w.flush()?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, write: impl FnOnce(&mut dyn Write) -> altimeter_icp::Result<()>) -> Result<()> {
    emit(Some(path), write)
}

fn read_log(path: &Path) -> Result<Vec<PressureSample>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    formats::read_pressure_log(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn read_model(path: &Path) -> Result<CalibrationModel> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    CalibrationModel::from_json(&text).with_context(|| format!("parsing {}", path.display()))
}

fn channel(samples: Vec<PressureSample>, id: Option<&str>, file: &Path) -> Result<Vec<PressureSample>> {
    let Some(id) = id else {
        return Ok(samples);
    };
    let kept: Vec<_> = samples.into_iter().filter(|s| s.sensor_id == id).collect();
    if kept.is_empty() {
        return Err(usage(format!("channel {id:?} not found in {}", file.display())));
    }
    Ok(kept)
}

fn abs_median(values: &[f64]) -> f64 {
    median(&values.iter().map(|v| v.abs()).collect::<Vec<_>>())
}

/// Pairs every sensor sample with the reference sample closest in time,
/// within 50 ms.
fn pair_with_reference(sensor: Vec<PressureSample>, reference: &[PressureSample]) -> Result<Vec<(PressureSample, f64)>> {
    let mut refs: Vec<(f64, f64)> = reference.iter().map(|s| (s.timestamp, s.p_raw)).collect();
    refs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut pairs = Vec::with_capacity(sensor.len());
    for s in sensor {
        let idx = refs.partition_point(|r| r.0 < s.timestamp);
        let best = [idx.checked_sub(1), (idx < refs.len()).then_some(idx)]
            .into_iter()
            .flatten()
            .min_by(|&a, &b| (refs[a].0 - s.timestamp).abs().total_cmp(&(refs[b].0 - s.timestamp).abs()));
        match best {
            Some(j) if (refs[j].0 - s.timestamp).abs() <= 0.05 => pairs.push((s, refs[j].1)),
            _ => log::debug!("no reference sample near t = {}", s.timestamp),
        }
    }
    if pairs.is_empty() {
        bail!("no sensor sample has a reference sample within 50 ms");
    }
    Ok(pairs)
}

fn calibrate(cli: &Cli, a: &CalibrateArgs) -> Result<()> {
    check_inputs([a.input.as_path()])?;
    check_output_file(cli.out.as_deref())?;
    let log = read_log(&a.input)?;
    let (reference, others): (Vec<_>, Vec<_>) = log.into_iter().partition(|s| s.sensor_id == a.reference);
    if reference.is_empty() {
        return Err(usage(format!("reference channel {:?} not found in {}", a.reference, a.input.display())));
    }
    let sensor = match &a.sensor {
        Some(id) => channel(others, Some(id), &a.input)?,
        None => {
            let ids: BTreeSet<&str> = others.iter().map(|s| s.sensor_id.as_str()).collect();
            if ids.len() != 1 {
                return Err(usage(format!("expected exactly one non-reference channel, found {ids:?}; pass --sensor")));
            }
            others
        }
    };
    let pairs = pair_with_reference(sensor, &reference)?;

    let stats = |pattern: Pattern| -> Result<(CalibrationModel, f64, f64)> {
        let model = fit_calibration(&pairs, pattern).with_context(|| format!("fitting {pattern}"))?;
        let r = residuals(&model, &pairs)?;
        Ok((model, abs_median(&r), sample_std(&r)))
    };
    let (model, chosen_median, chosen_std) = stats(a.pattern)?;
    // Statistics share stdout only when the model goes to a file.
    let mut table: Box<dyn Write> = if cli.out.is_some() { Box::new(io::stdout()) } else { Box::new(io::stderr()) };
    writeln!(table, "pattern,median_abs_residual_pa,std_residual_pa")?;
    if a.all_patterns {
        for p in Pattern::ALL {
            match stats(p) {
                Ok((_, m, s)) => writeln!(table, "{p},{m},{s}")?,
                Err(e) => writeln!(table, "{p},failed: {e:#}")?,
            }
        }
    } else {
        writeln!(table, "{},{chosen_median},{chosen_std}", a.pattern)?;
    }
    table.flush()?;
    if a.pattern != Pattern::Full {
        if let Ok((_, full_median, _)) = stats(Pattern::Full) {
            if chosen_median > 2.0 * full_median + 1e-9 {
                log::warn!(
                    "{} leaves a median residual of {chosen_median:.3} Pa against {full_median:.3} Pa for A_full; \
                     the data carry a dependence the pattern does not model",
                    a.pattern
                );
            }
        }
    }
    let json = model.to_json();
    emit(cli.out.as_deref(), |w| Ok(writeln!(w, "{json}")?))
}

fn calibrated_stream(samples: &[PressureSample], model: &CalibrationModel, cfg: Option<FilterConfig>) -> Result<PressureStream> {
    let mut filter = cfg.map(PressureFilter::new).transpose()?;
    let mut out = Vec::with_capacity(samples.len());
    for s in samples {
        let p = model.apply_sample(s)?;
        let p = match filter.as_mut() {
            Some(f) => f.update(p)?,
            None => p,
        };
        out.push((s.timestamp, p));
    }
    let variance = filter.map_or(model.sigma_p2(), |f| f.variance());
    Ok(PressureStream { samples: out, variance })
}

fn filter(cli: &Cli, a: &FilterArgs) -> Result<()> {
    check_inputs([a.input.as_path(), a.model.as_path()])?;
    check_output_file(cli.out.as_deref())?;
    let model = read_model(&a.model)?;
    let samples = channel(read_log(&a.input)?, a.sensor.as_deref(), &a.input)?;
    let cfg = FilterConfig::new(
        a.process_variance.unwrap_or(model.sigma_p2() / 100.0),
        a.observation_variance.unwrap_or(model.sigma_p2()),
    )?;
    let stream = calibrated_stream(&samples, &model, Some(cfg))?;
    emit(cli.out.as_deref(), |w| {
        writeln!(w, "timestamp,pressure")?;
        for (t, p) in &stream.samples {
            writeln!(w, "{t},{p}")?;
        }
        Ok(())
    })
}

fn default_filter(model: &CalibrationModel) -> Result<FilterConfig> {
    FilterConfig::for_model(model).context("model variance must be > 0 to filter; pass --no_filter")
}

fn altitude(cli: &Cli, a: &AltitudeArgs) -> Result<()> {
    check_inputs([a.base.as_path(), a.rover.as_path(), a.base_model.as_path(), a.rover_model.as_path()])?;
    check_output_file(cli.out.as_deref())?;
    let base_model = read_model(&a.base_model)?;
    let rover_model = read_model(&a.rover_model)?;
    let base = channel(read_log(&a.base)?, a.base_id.as_deref(), &a.base)?;
    let rover = channel(read_log(&a.rover)?, a.rover_id.as_deref(), &a.rover)?;
    let (base_cfg, rover_cfg) = if a.no_filter {
        (None, None)
    } else {
        (Some(default_filter(&base_model)?), Some(default_filter(&rover_model)?))
    };
    let readings = differential_altitude(
        &calibrated_stream(&base, &base_model, base_cfg)?,
        &calibrated_stream(&rover, &rover_model, rover_cfg)?,
        a.t_v,
        &AtmosphereConstants::default(),
    )?;
    emit(cli.out.as_deref(), |w| formats::write_altitude(w, &readings))
}

fn chamber_log(campaign: Vec<(PressureSample, f64)>) -> Vec<PressureSample> {
    campaign
        .into_iter()
        .flat_map(|(s, reference)| {
            let r = PressureSample { timestamp: s.timestamp, p_raw: reference, t: s.t, sensor_id: "reference".into() };
            [r, s]
        })
        .collect()
}

fn load_scenario(cli: &Cli, a: &SimulateArgs) -> Result<Scenario> {
    let mut s = match &a.world {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let spec = WorldSpec::from_json(&text).with_context(|| format!("parsing {}", path.display()))?;
            scenario_from_spec("custom", &spec, cli.seed)?
        }
        None => scenario(&a.scenario, cli.seed).map_err(|e| usage(e.to_string()))?,
    };
    if let Some(n) = a.points_per_scan {
        s.rig.points_per_scan = n;
    }
    Ok(s)
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> Result<()> {
    if let Some(world) = &a.world {
        check_inputs([world.as_path()])?;
    }
    let s = load_scenario(cli, a)?;
    let dir = output_dir(cli)?;
    let scans_dir = dir.join("scans");
    fs::create_dir_all(&scans_dir)?;

    let gt = &s.ground_truth;
    let (base, rover) = simulate_baro(gt, &s.rig, s.t_ambient, &AtmosphereConstants::default())?;
    let prior = simulate_prior(gt, &s.drift, &s.rig)?;
    let prior_rows: Vec<_> =
        gt.trajectory.samples().iter().zip(&prior).map(|((t, _), p)| formats::TrajectoryRow::pose_only(*t, *p)).collect();
    write_file(&dir.join("ground_truth.csv"), |w| formats::write_trajectory(w, &formats::rows_from_trajectory(&gt.trajectory)))?;
    write_file(&dir.join("prior.csv"), |w| formats::write_trajectory(w, &prior_rows))?;
    write_file(&dir.join("base.csv"), |w| formats::write_pressure_log(w, &base))?;
    write_file(&dir.join("rover.csv"), |w| formats::write_pressure_log(w, &rover))?;
    let n = altimeter_icp::evaluation::CAMPAIGN_SIZE;
    let base_campaign = chamber_log(calibration_campaign(&s.rig, "base", &[], n, 0));
    let rover_campaign = chamber_log(calibration_campaign(&s.rig, "rover", &s.rig.baro_temp_bias, n, 1));
    write_file(&dir.join("chamber_base.csv"), |w| formats::write_pressure_log(w, &base_campaign))?;
    write_file(&dir.join("chamber_rover.csv"), |w| formats::write_pressure_log(w, &rover_campaign))?;
    for (k, (_, pose)) in gt.trajectory.samples().iter().enumerate() {
        let scan = render_scan(&s.world, pose, &s.rig, k as u64)?;
        write_file(&scans_dir.join(format!("scan_{k:05}.xyz")), |w| formats::write_cloud(w, &scan))?;
    }
    let g = s.rig.measured_gravity();
    let masks: Vec<String> = gt.masks.iter().map(|(a, b)| format!("{a}:{b}")).collect();
    write_file(&dir.join("scenario.txt"), |w| {
        writeln!(w, "name {}", s.name)?;
        writeln!(w, "seed {}", s.rig.seed)?;
        writeln!(w, "t_ambient {}", s.t_ambient)?;
        // + 0.0 turns -0 into 0
        writeln!(w, "gravity {},{},{}", g.x + 0.0, g.y + 0.0, g.z + 0.0)?;
        writeln!(w, "masks {}", masks.join(" "))?;
        Ok(())
    })?;
    log::info!("wrote {} scans to {}", gt.trajectory.len(), dir.display());
    Ok(())
}

fn parse_vec3(text: &str) -> Result<Vec3> {
    let parts = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| usage(format!("bad component {v:?}: {e}"))))
        .collect::<Result<Vec<_>>>()?;
    let [x, y, z] = parts[..] else {
        return Err(usage(format!("expected three comma-separated values, got {text:?}")));
    };
    Ok(Vec3::new(x, y, z))
}

fn read_rows(path: &Path) -> Result<Vec<formats::TrajectoryRow>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    formats::read_trajectory(BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

fn register(cli: &Cli, a: &RegisterArgs) -> Result<()> {
    check_inputs([a.reading.as_path(), a.map.as_path()].into_iter().chain(a.prior.as_deref()))?;
    check_output_file(cli.out.as_deref())?;
    let gravity = parse_vec3(&a.gravity)?.normalize();
    let cfg = IcpConfig {
        max_iterations: a.max_iterations,
        rotation_tol: a.rotation_tol,
        translation_tol: a.translation_tol,
        trim_ratio: a.trim_ratio,
        max_dist: a.max_dist,
        damping: a.damping,
    };
    cfg.validate().map_err(|e| usage(e.to_string()))?;
    if a.mode == altimeter_icp::registration::ConstraintMode::ThreeDof && a.altitude.is_none() {
        return Err(usage("three_dof registration needs --altitude"));
    }
    let (timestamp, prior) = match &a.prior {
        Some(path) => {
            let rows = read_rows(path)?;
            let first = rows.first().with_context(|| format!("{} has no rows", path.display()))?;
            (first.timestamp, first.pose)
        }
        None => (0.0, RigidTransform::identity()),
    };
    let reading = formats::read_cloud(BufReader::new(File::open(&a.reading)?), Frame::Sensor)
        .with_context(|| format!("reading {}", a.reading.display()))?;
    let map = formats::read_cloud(BufReader::new(File::open(&a.map)?), Frame::Map)
        .with_context(|| format!("reading {}", a.map.display()))?;
    let altitude = a.altitude.map(|z| altimeter_icp::altimetry::AltitudeReading { timestamp, delta_z: z, variance: 0.0 });
    let result = icp(&reading, &map, &prior, altitude.as_ref(), &gravity, a.mode, &cfg)?;
    if !result.degenerate_directions.is_empty() {
        log::warn!("unobservable directions: {}", result.degenerate_directions.join(", "));
    }
    let row = formats::TrajectoryRow {
        timestamp,
        pose: result.transform,
        final_error: Some(result.final_error),
        iterations: Some(result.iterations),
        converged: Some(result.converged),
    };
    emit(cli.out.as_deref(), |w| formats::write_trajectory(w, &[row]))
}

fn parse_mask(text: &str) -> Result<(f64, f64)> {
    let parsed = text.split_once(':').and_then(|(a, b)| Some((a.trim().parse().ok()?, b.trim().parse().ok()?)));
    match parsed {
        Some((a, b)) if a <= b => Ok((a, b)),
        _ => Err(usage(format!("mask must be \"start:end\" with start <= end, got {text:?}"))),
    }
}

fn evaluate(cli: &Cli, a: &EvaluateArgs) -> Result<()> {
    check_inputs([a.estimate.as_path(), a.ground_truth.as_path()])?;
    check_output_file(cli.out.as_deref())?;
    let masks = a.mask.iter().map(|m| parse_mask(m)).collect::<Result<Vec<_>>>()?;
    let estimate = formats::trajectory_from_rows(&read_rows(&a.estimate)?)?;
    let truth = formats::trajectory_from_rows(&read_rows(&a.ground_truth)?)?;
    let report = z_rpe_masked(&estimate, &truth, a.segment_distance, &masks)?;
    emit(cli.out.as_deref(), |w| formats::write_report(w, &[(a.mode.clone(), report)]))
}

fn reproduce(cli: &Cli, a: &ReproduceArgs) -> Result<()> {
    if a.scenario != "corridor3" && a.scenario != "shaft" {
        return Err(usage(format!("unknown scenario {:?}, expected corridor3 or shaft", a.scenario)));
    }
    if a.seeds == 0 {
        return Err(usage("--seeds must be >= 1"));
    }
    let series = if a.series.is_empty() {
        Series::DEFAULT.to_vec()
    } else {
        a.series.iter().map(|s| s.parse().map_err(|e: altimeter_icp::Error| usage(e.to_string()))).collect::<Result<_>>()?
    };
    let dir = output_dir(cli)?;
    let seeds: Vec<u64> = (cli.seed..cli.seed + a.seeds).collect();
    let cfg = CompareConfig { series, ..Default::default() };
    let comparisons = compare_seeds(&a.scenario, &seeds, &cfg)?;
    let pooled: Vec<(String, _)> = pool(&comparisons)?.into_iter().map(|(s, r)| (s.name(), r)).collect();

    write_file(&dir.join("report.csv"), |w| formats::write_report(w, &pooled))?;
    write_file(&dir.join("boxplot.dat"), |w| formats::write_boxplot(w, &pooled))?;
    write_file(&dir.join("segments.csv"), |w| formats::write_segments(w, &pooled))?;
    write_file(&dir.join("degeneracy.csv"), |w| formats::write_degeneracy(w, &comparisons))?;
    write_file(&dir.join("failures.csv"), |w| write_failures(w, &comparisons))?;

    println!("{:<20} {:>10} {:>10} {:>10}", "mode", "median %", "std %", "segments");
    for (name, r) in &pooled {
        println!("{name:<20} {:>10.3} {:>10.3} {:>10}", r.median, r.std, r.per_segment.len());
    }
    for (k, r) in comparisons[0].results.iter().enumerate() {
        let flagged: usize = comparisons.iter().map(|c| c.results[k].degenerate_z).sum();
        if flagged > 0 {
            println!("{}: z unobservable in {flagged} registrations", r.series);
        }
    }
    Ok(())
}

fn write_failures(w: &mut dyn Write, comparisons: &[Comparison]) -> altimeter_icp::Result<()> {
    writeln!(w, "seed,mode,scan")?;
    for c in comparisons {
        for r in &c.results {
            for scan in &r.failed {
                writeln!(w, "{},{},{scan}", c.seed, r.series)?;
            }
        }
    }
    Ok(())
}
