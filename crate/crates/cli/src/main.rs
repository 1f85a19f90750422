use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dmimo_mpc::bounce::{ClassifierConfig, InfeasiblePolicy};
use dmimo_mpc::geometry::ElevationConvention;
use dmimo_mpc::io::{load_geometry, load_mpc_csv, save_mpc_csv, write_truth_csv, GeometryFile};
use dmimo_mpc::pipeline::{
    classify_records, export_plot_data, track_records, validate_records, ErrorKind, InputSpec, PanelFit,
    PipelineError, Report, RunConfig, Stage,
};
use dmimo_mpc::pointcloud::{ensure_labels, load_ply, save_ply, MarchParams, SpatialIndex};
use dmimo_mpc::stats::{compare_models, fit_samples, DistanceMode};
use dmimo_mpc::synth::{export_cloud, synthesize, Scenario};
use dmimo_mpc::tracker::TrackerConfig;

#[derive(Parser)]
#[command(name = "dmimo-mpc", version, about = "Classify and track multipath components of distributed MIMO channels")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run ingest, classification, tracking and statistics, and write the report.
    Run(RunArgs),
    /// Generate a synthetic scenario: point cloud, MPC table, geometry and ground truth.
    Synth(SynthArgs),
    /// Label every MPC single-, multi-bounce, LOS or indeterminate.
    Classify(ClassifyArgs),
    /// Track virtual scatterers across panels within each snapshot.
    Track(TrackArgs),
    /// Refit the distance models from an existing report.
    Stats(StatsArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Convention {
    Zenith,
    Elevation,
}

impl From<Convention> for ElevationConvention {
    fn from(c: Convention) -> Self {
        match c {
            Convention::Zenith => ElevationConvention::Zenith,
            Convention::Elevation => ElevationConvention::Elevation,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    Multi,
    Indeterminate,
}

#[derive(Args)]
struct MeasuredInputs {
    /// ASCII PLY point cloud.
    #[arg(long)]
    cloud: Option<PathBuf>,
    /// MPC table (CSV).
    #[arg(long)]
    mpcs: Option<PathBuf>,
    /// Panel and UE geometry (TOML).
    #[arg(long)]
    geometry: Option<PathBuf>,
    /// Meaning of the `zenith_rad` column.
    #[arg(long, value_enum, default_value = "zenith")]
    elevation_convention: Convention,
}

#[derive(Args)]
struct ClassifierArgs {
    /// Single-bounce threshold on the scatterer mismatch, meters.
    #[arg(long, default_value_t = 1.5)]
    threshold: f64,
    #[arg(long, default_value_t = 0.05)]
    march_step: f64,
    #[arg(long, default_value_t = 0.10)]
    capture_radius: f64,
    #[arg(long, default_value_t = 5)]
    min_support: usize,
    /// Label for MPCs whose one-bounce geometry has no solution.
    #[arg(long, value_enum, default_value = "multi")]
    infeasible_policy: Policy,
    /// Spatial index voxel size, meters.
    #[arg(long, default_value_t = 0.2)]
    voxel_size: f64,
}

impl ClassifierArgs {
    fn config(&self) -> ClassifierConfig {
        ClassifierConfig {
            threshold_m: self.threshold,
            march: MarchParams { step: self.march_step, capture_radius: self.capture_radius, min_support: self.min_support },
            infeasible_policy: match self.infeasible_policy {
                Policy::Multi => InfeasiblePolicy::Multi,
                Policy::Indeterminate => InfeasiblePolicy::Indeterminate,
            },
            ..ClassifierConfig::default()
        }
    }
}

#[derive(Args)]
struct TrackerArgs {
    /// Process noise variance q, m².
    #[arg(long, default_value_t = 0.0025)]
    process_noise: f64,
    /// Measurement noise variance r, m².
    #[arg(long, default_value_t = 0.09)]
    measurement_noise: f64,
    /// Association gate, meters (`inf` disables it).
    #[arg(long, default_value_t = 1.0)]
    gate: f64,
    #[arg(long, default_value_t = 3)]
    confirm_min_panels: usize,
}

impl TrackerArgs {
    fn config(&self) -> TrackerConfig {
        TrackerConfig {
            process_noise: self.process_noise,
            measurement_noise: self.measurement_noise,
            gate: self.gate,
            confirm_min_panels: self.confirm_min_panels,
            ..TrackerConfig::default()
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    seed: u64,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Scenario TOML for synthetic mode, or `default` for the built-in room.
    #[arg(long, conflicts_with_all = ["cloud", "mpcs", "geometry"])]
    scenario: Option<String>,
    #[command(flatten)]
    measured: MeasuredInputs,
    #[command(flatten)]
    classifier: ClassifierArgs,
    #[command(flatten)]
    tracker: TrackerArgs,
    /// Use the horizontal panel-UE distance for statistics.
    #[arg(long)]
    horizontal_distance: bool,
}

#[derive(Args)]
struct SynthArgs {
    /// Scenario TOML; the built-in room if omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ClassifyArgs {
    #[command(flatten)]
    measured: MeasuredInputs,
    #[command(flatten)]
    classifier: ClassifierArgs,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrackArgs {
    #[arg(long)]
    mpcs: PathBuf,
    #[arg(long)]
    geometry: PathBuf,
    #[arg(long, value_enum, default_value = "zenith")]
    elevation_convention: Convention,
    #[command(flatten)]
    tracker: TrackerArgs,
    /// Output JSON file.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct StatsArgs {
    /// `report.json` written by `run`.
    #[arg(long)]
    report: PathBuf,
    /// Directory for the refreshed plot data.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
        Command::Classify(a) => classify(a),
        Command::Track(a) => track(a),
        Command::Stats(a) => stats(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn input_err(stage: Stage, m: impl ToString) -> PipelineError {
    PipelineError::input(stage, m.to_string())
}

fn io_err(path: &Path, e: impl ToString) -> PipelineError {
    PipelineError::io(Stage::Export, format!("{}: {}", path.display(), e.to_string()))
}

fn read_scenario(path: &Path) -> Result<Scenario, PipelineError> {
    let text = fs::read_to_string(path).map_err(|e| PipelineError::io(Stage::Config, format!("{}: {e}", path.display())))?;
    Scenario::from_toml(&text).map_err(|e| input_err(Stage::Config, e))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), PipelineError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::numeric(Stage::Export, e.to_string()))?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

fn run(a: RunArgs) -> Result<(), PipelineError> {
    let input = match (&a.scenario, &a.measured.cloud, &a.measured.mpcs, &a.measured.geometry) {
        (Some(s), None, None, None) => {
            let scenario = if s == "default" { Scenario::default() } else { read_scenario(Path::new(s))? };
            InputSpec::Synthetic { scenario }
        }
        (None, Some(cloud), Some(mpcs), Some(geometry)) => InputSpec::Measured {
            cloud: cloud.clone(),
            mpcs: mpcs.clone(),
            geometry: geometry.clone(),
            elevation_convention: a.measured.elevation_convention.into(),
        },
        _ => {
            return Err(input_err(Stage::Config, "give either --scenario or all of --cloud, --mpcs and --geometry"))
        }
    };
    let cfg = RunConfig {
        input,
        classifier: a.classifier.config(),
        tracker: a.tracker.config(),
        distance_mode: if a.horizontal_distance { DistanceMode::Horizontal } else { DistanceMode::Euclidean },
        voxel_size: a.classifier.voxel_size,
        seed: a.seed,
        ..RunConfig::synthetic(Scenario::default(), a.seed)
    };
    let report = dmimo_mpc::run_pipeline(&cfg)?;
    let files = export_plot_data(&report, &a.out)?;
    write_json(&a.out.join("config.json"), &cfg)?;
    for f in files {
        log::info!("wrote {}", f.display());
    }
    println!(
        "{} MPCs, {} confirmed tracks; report in {}",
        report.decisions.len(),
        report.tracks.len(),
        a.out.display()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> Result<(), PipelineError> {
    let mut scenario = match &a.scenario {
        Some(p) => read_scenario(p)?,
        None => Scenario::default(),
    };
    if let Some(seed) = a.seed {
        scenario.seed = seed;
    }
    let data = synthesize(&scenario).map_err(|e| input_err(Stage::Config, e))?;
    fs::create_dir_all(&a.out).map_err(|e| io_err(&a.out, e))?;
    let path = a.out.join("room.ply");
    save_ply(&export_cloud(&scenario, scenario.cloud_pitch), &path).map_err(|e| io_err(&path, e))?;
    let path = a.out.join("mpcs.csv");
    save_mpc_csv(&data.records(), &path, ElevationConvention::Zenith).map_err(|e| io_err(&path, e))?;
    let path = a.out.join("geometry.toml");
    let geometry = GeometryFile { panels: data.panels.clone(), ue: data.ues.clone() };
    fs::write(&path, geometry.to_toml()).map_err(|e| io_err(&path, e))?;
    let path = a.out.join("truth.csv");
    let file = fs::File::create(&path).map_err(|e| io_err(&path, e))?;
    write_truth_csv(&data.paths, file).map_err(|e| io_err(&path, e))?;
    let path = a.out.join("scenario.toml");
    fs::write(&path, scenario.to_toml()).map_err(|e| io_err(&path, e))?;
    println!("{} MPCs over {} links written to {}", data.paths.len(), data.panels.len() * data.ues.len(), a.out.display());
    Ok(())
}

fn load_measured(m: &MeasuredInputs, need_cloud: bool) -> Result<(Option<dmimo_mpc::PointCloud>, Vec<dmimo_mpc::MpcRecord>, GeometryFile), PipelineError> {
    let (Some(mpcs), Some(geometry)) = (&m.mpcs, &m.geometry) else {
        return Err(input_err(Stage::Config, "--mpcs and --geometry are required"));
    };
    let from_io = |e: dmimo_mpc::io::IoError| match e {
        dmimo_mpc::io::IoError::Io(e) => PipelineError::io(Stage::Ingest, e.to_string()),
        other => input_err(Stage::Ingest, other),
    };
    let records = load_mpc_csv(mpcs, m.elevation_convention.into()).map_err(from_io)?;
    if records.is_empty() {
        return Err(input_err(Stage::Ingest, "no records"));
    }
    let geometry = load_geometry(geometry).map_err(from_io)?;
    let cloud = match (&m.cloud, need_cloud) {
        (Some(c), _) => Some(ensure_labels(
            load_ply(c).map_err(|e| input_err(Stage::Ingest, e))?,
            dmimo_mpc::pointcloud::DEFAULT_WALL_MARGIN,
        )),
        (None, true) => return Err(input_err(Stage::Config, "--cloud is required")),
        (None, false) => None,
    };
    validate_records(&records, &geometry.panels, &geometry.ue)?;
    Ok((cloud, records, geometry))
}

fn classify(a: ClassifyArgs) -> Result<(), PipelineError> {
    let (cloud, records, geometry) = load_measured(&a.measured, true)?;
    let cfg = a.classifier.config();
    cfg.validate().map_err(|e| input_err(Stage::Config, e))?;
    let index = SpatialIndex::build(cloud.expect("cloud required"), a.classifier.voxel_size)
        .map_err(|e| input_err(Stage::Ingest, e))?;
    let decisions = classify_records(&records, &geometry.panels, &geometry.ue, &index, &cfg)?;
    write_json(&a.out, &decisions)
}

fn track(a: TrackArgs) -> Result<(), PipelineError> {
    let m = MeasuredInputs {
        cloud: None,
        mpcs: Some(a.mpcs.clone()),
        geometry: Some(a.geometry.clone()),
        elevation_convention: a.elevation_convention,
    };
    let (_, records, geometry) = load_measured(&m, false)?;
    let cfg = a.tracker.config();
    cfg.validate().map_err(|e| input_err(Stage::Config, e))?;
    let tracks = track_records(&records, &geometry.panels, None, &cfg)?;
    write_json(&a.out, &tracks)
}

fn stats(a: StatsArgs) -> Result<(), PipelineError> {
    let text = fs::read_to_string(&a.report).map_err(|e| PipelineError::io(Stage::Ingest, format!("{}: {e}", a.report.display())))?;
    let mut report: Report = serde_json::from_str(&text).map_err(|e| input_err(Stage::Ingest, e))?;
    let mut panels: Vec<u32> = report.stat_points.iter().map(|p| p.panel_id).collect();
    panels.sort_unstable();
    panels.dedup();
    let fit = |panel_id: Option<u32>| {
        let samples = fit_samples(report.stat_points.iter().filter(|p| panel_id.map_or(true, |id| p.panel_id == id)));
        match compare_models(&samples) {
            Ok(c) => PanelFit { panel_id, comparison: Some(c), error: None },
            Err(e) => PanelFit { panel_id, comparison: None, error: Some(e.to_string()) },
        }
    };
    let mut fits: Vec<PanelFit> = panels.iter().map(|&p| fit(Some(p))).collect();
    fits.push(fit(None));
    for f in &fits {
        let id = f.panel_id.map(|p| p.to_string()).unwrap_or_else(|| "all".into());
        match (&f.comparison, &f.error) {
            (Some(c), _) => println!(
                "panel {id}: linear a={:.4} b={:.4} R²={:.3}; exponential a={:.4} b={:.4} R²={:.3}",
                c.linear.a, c.linear.b, c.linear.r_squared, c.exponential.a, c.exponential.b, c.exponential.r_squared
            ),
            (None, Some(e)) => println!("panel {id}: {e}"),
            _ => {}
        }
    }
    report.fits = fits;
    export_plot_data(&report, &a.out)?;
    if report.fits.iter().all(|f| f.comparison.is_none()) {
        return Err(PipelineError { stage: Stage::Stats, kind: ErrorKind::Numeric, record: None, message: "no fit succeeded".into() });
    }
    Ok(())
}
