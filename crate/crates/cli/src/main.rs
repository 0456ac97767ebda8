//! `sarfield`: simulate datasets, train fields, render, extract and evaluate.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O error, 4 numerical
//! fault during training.

mod config;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sarfield::evalio::evaluate::evaluate_views;
use sarfield::evalio::pfm::write_pfm;
use sarfield::evalio::split::{make_split, PitchRule, SplitSpec};
use sarfield::evalio::DatasetManifest;
use sarfield::field::load_checkpoint;
use sarfield::geometry::RadarPose;
use sarfield::reconstruct::{export_ply, extract_voxels_within, voxel_iou, Coverage, VolumeSpec};
use sarfield::scenes::{generate_dataset, Scene};
use sarfield::trainer::{render_field, train, Profile, TrainConfig, FINAL_CHECKPOINT};
use sarfield::Error;

use config::{ConfigError, RunConfig};

const RESOLVED: &str = "resolved.cfg";

#[derive(Parser, Debug)]
#[command(name = "sarfield", version, about = "Neural field pipeline for simulated SAR images")]
struct Cli {
    /// key = value run configuration; unknown keys are rejected
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// RNG seed [default: 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// desk or full [default: desk]
    #[arg(long, global = true)]
    profile: Option<String>,
    /// Worker threads, 0 = all cores [default: 0]
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Render a scene from a grid of poses into a dataset directory
    Simulate(SimulateArgs),
    /// Split a dataset and fit a field to its training part
    Train(TrainArgs),
    /// Render a checkpoint at arbitrary poses into PFM files
    Render(RenderArgs),
    /// Threshold the attenuation on a lattice and write a PLY point cloud
    Extract(ExtractArgs),
    /// Score a checkpoint against the images of a manifest
    Eval(EvalArgs),
}

#[derive(Args, Debug)]
struct PoseArgs {
    /// Radar altitude in meters [default: 10000]
    #[arg(long)]
    altitude: Option<f64>,
    /// Pitch used to size the elevation fan [default: 45]
    #[arg(long)]
    reference_theta: Option<f64>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scene TOML file
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output dataset directory
    #[arg(long)]
    out: PathBuf,
    /// Comma-separated pitch angles in degrees [default: 45]
    #[arg(long)]
    theta: Option<String>,
    /// First azimuth in degrees [default: 0]
    #[arg(long, allow_negative_numbers = true)]
    phi_start: Option<f64>,
    /// Last azimuth in degrees, inclusive [default: 359]
    #[arg(long, allow_negative_numbers = true)]
    phi_end: Option<f64>,
    /// Azimuth step in degrees [default: 1]
    #[arg(long)]
    phi_step: Option<f64>,
    #[command(flatten)]
    pose: PoseArgs,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Training azimuth interval in degrees, must divide 360 [default: 10]
    #[arg(long)]
    interval: Option<u32>,
    /// all, odd_even, or a comma list of training pitches [default: all]
    #[arg(long)]
    pitch_rule: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Dataset directory or manifest.csv
    #[arg(long)]
    manifest: PathBuf,
    /// Run name; outputs go to runs/<name> unless --out is given
    #[arg(long, default_value = "default")]
    name: String,
    /// Run directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    split: SplitArgs,
    /// Training steps [default: 2000]
    #[arg(long)]
    iterations: Option<usize>,
    /// Azimuth rows per step [default: 4]
    #[arg(long)]
    rows_per_batch: Option<usize>,
    /// Adam learning rate [default: 0.0005]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Steps between checkpoints, 0 = final only [default: 0]
    #[arg(long)]
    checkpoint_interval: Option<usize>,
    /// Steps between loss-log rows [default: 10]
    #[arg(long)]
    log_interval: Option<usize>,
}

#[derive(Args, Debug)]
struct RenderArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Pose as theta_deg,phi_deg; repeatable
    #[arg(long = "pose", allow_negative_numbers = true)]
    poses: Vec<String>,
    /// File with one theta_deg,phi_deg pose per line
    #[arg(long)]
    pose_file: Option<PathBuf>,
    /// Output directory for PFM files
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pose: PoseArgs,
}

#[derive(Args, Debug)]
struct ExtractArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output PLY file
    #[arg(long)]
    out: PathBuf,
    /// Edge of the extraction cube in meters [default: 20]
    #[arg(long)]
    size: Option<f64>,
    /// Lattice cells per axis [default: 64]
    #[arg(long)]
    resolution: Option<usize>,
    /// Attenuation threshold [default: 0.001]
    #[arg(long)]
    threshold: Option<f64>,
    /// Scene TOML; when given, IoU against its occupancy is printed
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Training manifest; when given, only cells whose attenuation its views constrain are kept
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Dataset directory or manifest.csv
    #[arg(long)]
    manifest: PathBuf,
    /// Output CSV
    #[arg(long)]
    out: PathBuf,
    /// all, train or test part of the split [default: all]
    #[arg(long, default_value = "all")]
    subset: String,
    #[command(flatten)]
    split: SplitArgs,
}

enum Failure {
    Config(String),
    Io(String),
    Fault(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. } | Error::Format { .. } => Failure::Io(e.to_string()),
            Error::Diverged { .. } | Error::NonFinite { .. } => Failure::Fault(e.to_string()),
            Error::InvalidArgument(_) | Error::Config { .. } => Failure::Config(e.to_string()),
        }
    }
}

/// Inputs that are configuration rather than data: unreadable is a config error.
fn config_input(e: Error) -> Failure {
    Failure::Config(e.to_string())
}

fn io_failure(path: &Path, e: std::io::Error) -> Failure {
    Failure::Io(format!("i/o error on {}: {e}", path.display()))
}

fn resolve(cli: &Cli) -> Result<RunConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    cfg.set_opt("seed", cli.seed)?;
    cfg.set_opt("profile", cli.profile.as_ref())?;
    cfg.set_opt("threads", cli.threads)?;
    Ok(cfg)
}

fn apply_pose(cfg: &mut RunConfig, a: &PoseArgs) -> Result<(), Failure> {
    cfg.set_opt("altitude_m", a.altitude)?;
    cfg.set_opt("reference_theta_deg", a.reference_theta)?;
    Ok(())
}

fn apply_split(cfg: &mut RunConfig, a: &SplitArgs) -> Result<(), Failure> {
    cfg.set_opt("azimuth_interval", a.interval)?;
    cfg.set_opt("pitch_rule", a.pitch_rule.as_ref())?;
    Ok(())
}

fn profile(cfg: &RunConfig) -> Result<Profile, Failure> {
    Profile::parse(cfg.raw("profile")).map_err(Failure::from)
}

fn split_spec(cfg: &RunConfig) -> Result<SplitSpec, Failure> {
    let rule = match cfg.raw("pitch_rule") {
        "all" => PitchRule::All,
        "odd_even" => PitchRule::OddTrainEvenTest,
        _ => PitchRule::List(cfg.list_f64("pitch_rule")?),
    };
    Ok(SplitSpec::new(cfg.get("azimuth_interval")?, rule)?)
}

fn sampling(cfg: &RunConfig) -> Result<sarfield::geometry::SamplingConfig<f64>, Failure> {
    let altitude: f64 = cfg.get("altitude_m")?;
    let reference = RadarPose::at_altitude_degrees(cfg.get("reference_theta_deg")?, 0.0, altitude)?;
    Ok(profile(cfg)?.sampling(reference.range)?)
}

fn echo(cfg: &RunConfig, dir: &Path) -> Result<(), Failure> {
    fs::create_dir_all(dir).map_err(|e| io_failure(dir, e))?;
    let path = dir.join(RESOLVED);
    fs::write(&path, cfg.render()).map_err(|e| io_failure(&path, e))
}

fn load_scene(cfg: &RunConfig, flag: Option<&PathBuf>) -> Result<Option<Scene<f64>>, Failure> {
    let path = match flag {
        Some(p) => p.display().to_string(),
        None => cfg.raw("scene").to_string(),
    };
    if path.is_empty() {
        return Ok(None);
    }
    Scene::load(Path::new(&path)).map(Some).map_err(config_input)
}

fn cmd_simulate(mut cfg: RunConfig, a: &SimulateArgs) -> Result<(), Failure> {
    cfg.set_opt("scene", a.scene.as_ref().map(|p| p.display()))?;
    cfg.set_opt("theta_deg", a.theta.as_ref())?;
    cfg.set_opt("phi_start_deg", a.phi_start)?;
    cfg.set_opt("phi_end_deg", a.phi_end)?;
    cfg.set_opt("phi_step_deg", a.phi_step)?;
    apply_pose(&mut cfg, &a.pose)?;
    let scene = load_scene(&cfg, None)?
        .ok_or_else(|| Failure::Config("simulate needs a scene file".into()))?;
    let (start, end, step): (f64, f64, f64) = (
        cfg.get("phi_start_deg")?,
        cfg.get("phi_end_deg")?,
        cfg.get("phi_step_deg")?,
    );
    if step.is_nan() || step <= 0.0 || end < start {
        return Err(Failure::Config(format!(
            "azimuth range {start}..={end} step {step} is empty or invalid"
        )));
    }
    let altitude: f64 = cfg.get("altitude_m")?;
    let mut poses = Vec::new();
    for theta in cfg.list_f64("theta_deg")? {
        let mut n = 0u32;
        loop {
            let phi = start + n as f64 * step;
            if phi > end + 1e-9 {
                break;
            }
            poses.push(RadarPose::at_altitude_degrees(theta, phi, altitude)?);
            n += 1;
        }
    }
    let sampling = sampling(&cfg)?;
    let manifest = generate_dataset(&scene, &poses, &sampling, profile(&cfg)?.name(), &a.out)?;
    echo(&cfg, &a.out)?;
    println!(
        "manifest={} images={}",
        a.out.join(sarfield::evalio::manifest::MANIFEST_CSV).display(),
        manifest.len()
    );
    Ok(())
}

/// Copy of `m` whose entries point at absolute image paths, so it can be
/// stored anywhere.
fn detached(m: &DatasetManifest, root: &Path) -> Result<DatasetManifest, Failure> {
    let base = fs::canonicalize(&m.root).map_err(|e| io_failure(&m.root, e))?;
    let mut out = m.clone();
    out.root = root.to_path_buf();
    for e in &mut out.entries {
        e.path = base.join(&e.path);
    }
    Ok(out)
}

fn cmd_train(mut cfg: RunConfig, a: &TrainArgs) -> Result<(), Failure> {
    apply_split(&mut cfg, &a.split)?;
    cfg.set_opt("iterations", a.iterations)?;
    cfg.set_opt("rows_per_batch", a.rows_per_batch)?;
    cfg.set_opt("learning_rate", a.learning_rate)?;
    cfg.set_opt("checkpoint_interval", a.checkpoint_interval)?;
    cfg.set_opt("log_interval", a.log_interval)?;
    let tc = TrainConfig {
        iterations: cfg.get("iterations")?,
        rows_per_batch: cfg.get("rows_per_batch")?,
        learning_rate: cfg.get("learning_rate")?,
        beta1: cfg.get("beta1")?,
        beta2: cfg.get("beta2")?,
        epsilon: cfg.get("epsilon")?,
        seed: cfg.get("seed")?,
        checkpoint_interval: cfg.get("checkpoint_interval")?,
        log_interval: cfg.get("log_interval")?,
        profile: profile(&cfg)?,
    };
    tc.validate()?;
    let spec = split_spec(&cfg)?;
    let run_dir = a
        .out
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(&a.name));
    let manifest = DatasetManifest::load(&a.manifest)?;
    let split = make_split(&manifest, &spec)?;
    echo(&cfg, &run_dir)?;
    for (name, part) in [("split_train", &split.train), ("split_test", &split.test)] {
        let dir = run_dir.join(name);
        detached(part, &dir)?.save()?;
    }
    let outcome = train(&tc, &split.train, Some(&run_dir))?;
    let last = outcome.log.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "checkpoint={} train_views={} test_views={} steps={} final_loss={last:e}",
        run_dir.join(FINAL_CHECKPOINT).display(),
        split.train.len(),
        split.test.len(),
        outcome.state.step
    );
    Ok(())
}

fn parse_pose(text: &str) -> Result<(f64, f64), Failure> {
    let bad = || Failure::Config(format!("pose {text:?} must be theta_deg,phi_deg"));
    let (t, p) = text.split_once(',').ok_or_else(bad)?;
    Ok((t.trim().parse().map_err(|_| bad())?, p.trim().parse().map_err(|_| bad())?))
}

fn cmd_render(mut cfg: RunConfig, a: &RenderArgs) -> Result<(), Failure> {
    apply_pose(&mut cfg, &a.pose)?;
    let mut poses = Vec::new();
    for p in &a.poses {
        poses.push(parse_pose(p)?);
    }
    if let Some(f) = &a.pose_file {
        let text = fs::read_to_string(f).map_err(|e| Failure::Config(format!("cannot read {}: {e}", f.display())))?;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            poses.push(parse_pose(line)?);
        }
    }
    let sampling = sampling(&cfg)?;
    let altitude: f64 = cfg.get("altitude_m")?;
    let params = load_checkpoint::<f64>(&a.checkpoint).map_err(|e| Failure::Io(e.to_string()))?;
    if poses.is_empty() {
        println!("rendered=0");
        return Ok(());
    }
    fs::create_dir_all(&a.out).map_err(|e| io_failure(&a.out, e))?;
    for (n, (theta, phi)) in poses.iter().enumerate() {
        let pose = RadarPose::at_altitude_degrees(*theta, *phi, altitude)?;
        let img = render_field(&params, &pose, &sampling)?;
        let path = a.out.join(format!("render_{n:04}.pfm"));
        write_pfm(&img, &path)?;
        println!("{} theta={theta} phi={phi} max={:.6}", path.display(), img.max_value());
    }
    println!("rendered={}", poses.len());
    Ok(())
}

fn cmd_extract(mut cfg: RunConfig, a: &ExtractArgs) -> Result<(), Failure> {
    cfg.set_opt("volume_size_m", a.size)?;
    cfg.set_opt("volume_resolution", a.resolution)?;
    cfg.set_opt("threshold", a.threshold)?;
    let scene = load_scene(&cfg, a.scene.as_ref())?;
    let spec = VolumeSpec::above_ground(cfg.get("volume_size_m")?, cfg.get("volume_resolution")?)?;
    let params = load_checkpoint::<f64>(&a.checkpoint).map_err(|e| Failure::Io(e.to_string()))?;
    let coverage = match &a.manifest {
        Some(path) => Some(Coverage::from_manifest(&DatasetManifest::load(path)?)?),
        None => None,
    };
    let model = extract_voxels_within(&params, &spec, cfg.get("threshold")?, coverage.as_ref())?;
    export_ply(&model, &a.out)?;
    println!("points={}", model.len());
    if let Some(scene) = scene {
        println!("iou={:.6}", voxel_iou(&model, &scene));
    }
    Ok(())
}

fn cmd_eval(mut cfg: RunConfig, a: &EvalArgs) -> Result<(), Failure> {
    apply_split(&mut cfg, &a.split)?;
    let manifest = DatasetManifest::load(&a.manifest)?;
    let subset = match a.subset.as_str() {
        "all" => manifest,
        "train" => make_split(&manifest, &split_spec(&cfg)?)?.train,
        "test" => make_split(&manifest, &split_spec(&cfg)?)?.test,
        other => return Err(Failure::Config(format!("unknown subset {other:?}"))),
    };
    let params = load_checkpoint::<f64>(&a.checkpoint).map_err(|e| Failure::Io(e.to_string()))?;
    let table = evaluate_views(&params, &subset)?;
    table.write_csv(&a.out)?;
    match table.psnr_summary() {
        Some(s) => println!("views={} psnr_mean={:.4}", table.rows.len(), s.mean),
        None => println!("views=0 psnr_mean=undefined"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = resolve(&cli)?;
    let threads: usize = cfg.get("threads")?;
    if threads > 0 {
        // A second initialisation in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    profile(&cfg)?;
    match &cli.command {
        Command::Simulate(a) => cmd_simulate(cfg, a),
        Command::Train(a) => cmd_train(cfg, a),
        Command::Render(a) => cmd_render(cfg, a),
        Command::Extract(a) => cmd_extract(cfg, a),
        Command::Eval(a) => cmd_eval(cfg, a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
        Err(Failure::Fault(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(4)
        }
    }
}
