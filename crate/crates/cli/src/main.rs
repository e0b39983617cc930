//! `minicity`: build maps, run crossing and stopping experiments, run the
//! particle filter over a scan log and score maps or depth predictions.
//!
//! Exit codes: 0 success, 1 usage error, 2 config or validation error,
//! 3 runtime error. Diagnostics go to stderr; results go to files under
//! `--out` and short tables to stdout.

use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use log::{info, LevelFilter};
use sha2::{Digest, Sha256};

use minicity::city::{build_city, Approach, CityLayout, DEFAULT_LAYOUT_JSON};
use minicity::gridio::{load_grid, save_grid};
use minicity::mapping::{ground_truth, simulate_drive, MappingConfig};
use minicity::metrics::{
    align_maps, evaluate_maps, mae, mre, read_depth_column, render_depth_table, render_map_report, transform_grid,
    AlignSearch, DepthRow,
};
use minicity::rng::{stream, streams};
use minicity::scenario::{
    emit_results, reference, run_batch, stopping_experiment, to_fixed_json, InfraConfig, IntersectionSpec,
    OutputFormat, Scenario, ScenarioConfig, StoppingConfig,
};
use minicity::sensing::{LidarParams, ScanLog, TrackerParams};
use minicity::slam::{run_slam, SlamConfig};
use minicity::v2i::{ChannelParams, InfraParams};
use minicity::vehicle::VehicleParams;
use minicity::Error;

#[derive(Parser, Debug)]
#[command(
    name = "minicity",
    about = "Mini-city simulator: mapping, V2I intersection safety and evaluation"
)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Base random seed
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Output directory; created if missing
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads for trial batches (0 = one per core)
    #[arg(long, global = true, default_value_t = 0)]
    workers: usize,
    /// Diagnostic verbosity on stderr
    #[arg(long, global = true, default_value = "warn", value_parser = ["off", "error", "warn", "info", "debug", "trace"])]
    log_level: String,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Rasterize a city layout into a ground-truth grid, optionally with a mapping-drive scan log
    BuildMap(BuildMapArgs),
    /// Run a batch of crossing trials
    Run(RunArgs),
    /// Run the stopping-distance experiment
    Stopping(StoppingArgs),
    /// Build a map from a scan log with the particle filter
    Slam(SlamArgs),
    /// Compare an estimated map with a ground-truth map
    MapEval(MapEvalArgs),
    /// Score depth predictions against ground truth
    DepthEval(DepthEvalArgs),
    /// Print default parameters
    Params(ParamsArgs),
}

#[derive(Args, Debug)]
struct BuildMapArgs {
    /// City layout JSON (default: built-in layout)
    #[arg(long)]
    layout: Option<PathBuf>,
    /// Cell size in meters
    #[arg(long, default_value_t = 0.05)]
    resolution: f64,
    /// Also simulate the mapping drive and write drive.jsonl
    #[arg(long)]
    drive: bool,
    /// Mapping-drive config JSON (used with --drive)
    #[arg(long, requires = "drive")]
    mapping_config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Scenario config JSON
    #[arg(long)]
    config: PathBuf,
    /// Number of trials
    #[arg(long, default_value_t = 200)]
    trials: usize,
    /// Per-trial results format
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
}

#[derive(Args, Debug)]
struct StoppingArgs {
    /// Stopping experiment config JSON
    #[arg(long)]
    config: PathBuf,
    /// Comma-separated intersection scales
    #[arg(long, value_delimiter = ',', default_value = "1.0,1.25")]
    scales: Vec<f64>,
    /// Trials per (approach, scale) cell
    #[arg(long, default_value_t = 5)]
    trials: usize,
    /// Comma-separated approaches (n, e, s, w)
    #[arg(long, value_delimiter = ',', default_value = "north,east,south,west")]
    approaches: Vec<String>,
    /// Results format
    #[arg(long, default_value = "csv", value_parser = ["csv", "json"])]
    format: String,
}

#[derive(Args, Debug)]
struct SlamArgs {
    /// Scan log (line-delimited JSON)
    #[arg(long)]
    log: PathBuf,
    /// Filter config JSON (default: built-in)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Ground-truth grid; sets the map geometry and adds a metric report
    #[arg(long)]
    gt: Option<PathBuf>,
    /// City layout JSON giving the map extent when --gt is absent
    #[arg(long, conflicts_with = "gt")]
    layout: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct MapEvalArgs {
    /// Ground-truth grid (.pgm with .meta sidecar)
    #[arg(long)]
    gt: PathBuf,
    /// Estimated grid (.pgm with .meta sidecar)
    #[arg(long)]
    est: PathBuf,
    /// Search for a rigid alignment of the estimate before scoring
    #[arg(long)]
    align: bool,
}

#[derive(Args, Debug)]
struct DepthEvalArgs {
    /// Predicted depths, CSV (last column used, meters)
    #[arg(long)]
    pred: PathBuf,
    /// Ground-truth depths, CSV (last column used, meters)
    #[arg(long)]
    gt: PathBuf,
    /// Method name for the report row
    #[arg(long, default_value = "prediction")]
    method: String,
    /// Inference time in seconds, reported as given
    #[arg(long)]
    inference_time: Option<f64>,
}

#[derive(Args, Debug)]
struct ParamsArgs {
    /// Print every default parameter block as JSON
    #[arg(long, required = true)]
    dump: bool,
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Validation(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Validation(msg.into())
}

/// sha256 over the built-in layout and every shipped reference config.
fn config_hash() -> String {
    let mut h = Sha256::new();
    h.update(b"default_city.json\0");
    h.update(DEFAULT_LAYOUT_JSON.as_bytes());
    for (name, text) in reference::ALL {
        h.update(b"\0");
        h.update(name.as_bytes());
        h.update(b"\0");
        h.update(text.as_bytes());
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

fn version_string() -> String {
    format!("{} (config sha256 {})", env!("CARGO_PKG_VERSION"), config_hash())
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, Failure> {
    let text = fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn prepare_out(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, text: &str) -> Outcome {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn stem_or(name: &str, path: &Path) -> String {
    if !name.is_empty() {
        return name.to_string();
    }
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "scenario".into())
}

fn format_of(s: &str) -> Result<OutputFormat, Failure> {
    s.parse::<OutputFormat>().map_err(Failure::from)
}

fn ext(format: OutputFormat) -> &'static str {
    match format {
        OutputFormat::Csv => "csv",
        OutputFormat::Json => "json",
    }
}

fn build_map(g: &Global, a: &BuildMapArgs) -> Outcome {
    let layout = match &a.layout {
        Some(p) => CityLayout::load(p)?,
        None => CityLayout::default_layout(),
    };
    layout.validate()?;
    if !(a.resolution > 0.0) {
        return Err(invalid("--resolution must be positive"));
    }
    let mapping = match &a.mapping_config {
        Some(p) => read_json::<MappingConfig>(p)?,
        None => MappingConfig {
            resolution: a.resolution,
            ..MappingConfig::default()
        },
    };
    if a.drive {
        mapping.validate()?;
        if (mapping.resolution - a.resolution).abs() > 1e-12 {
            return Err(invalid("mapping config resolution differs from --resolution"));
        }
    }
    let gt = build_city(&layout, a.resolution)?;
    prepare_out(&g.out)?;
    save_grid(&gt, &g.out.join("gt.pgm"))?;
    info!("wrote {}", g.out.join("gt.pgm").display());
    if a.drive {
        let log = simulate_drive(&gt, &layout, &mapping, g.seed)?;
        let mut buf = Vec::new();
        log.write(&mut buf)?;
        fs::write(g.out.join("drive.jsonl"), buf).map_err(|e| Failure::Runtime(e.to_string()))?;
        println!("drive: {} scans", log.records.len());
    }
    let (w, h) = (gt.geometry.width, gt.geometry.height);
    println!("gt.pgm: {w}x{h} cells at {} m", a.resolution);
    Ok(())
}

fn run(g: &Global, a: &RunArgs) -> Outcome {
    let cfg = ScenarioConfig::load(&a.config)?;
    cfg.validate()?;
    Scenario::new(cfg.clone())?;
    if a.trials == 0 {
        return Err(invalid("--trials must be at least 1"));
    }
    let format = format_of(&a.format)?;
    let name = stem_or(&cfg.name, &a.config);
    let report = run_batch(&cfg, a.trials, g.seed, g.workers)?;
    prepare_out(&g.out)?;
    emit_results(&report, format, &g.out.join(format!("{name}_trials.{}", ext(format))))?;
    emit_results(
        &report.summary,
        OutputFormat::Json,
        &g.out.join(format!("{name}_summary.json")),
    )?;
    print!("{}", report.summary.render(&cfg));
    Ok(())
}

fn stopping(g: &Global, a: &StoppingArgs) -> Outcome {
    let cfg = StoppingConfig::load(&a.config)?;
    cfg.validate()?;
    let approaches = a
        .approaches
        .iter()
        .map(|s| s.parse::<Approach>())
        .collect::<minicity::Result<Vec<_>>>()?;
    if a.scales.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
        return Err(invalid("--scales must be positive"));
    }
    if a.trials == 0 {
        return Err(invalid("--trials must be at least 1"));
    }
    let format = format_of(&a.format)?;
    let name = stem_or(&cfg.name, &a.config);
    let table = stopping_experiment(&cfg, &approaches, &a.scales, a.trials, g.seed, g.workers)?;
    prepare_out(&g.out)?;
    emit_results(&table, format, &g.out.join(format!("{name}_stopping.{}", ext(format))))?;
    print!("{}", table.render());
    Ok(())
}

fn slam(g: &Global, a: &SlamArgs) -> Outcome {
    let cfg = match &a.config {
        Some(p) => read_json::<SlamConfig>(p)?,
        None => SlamConfig::default(),
    };
    cfg.validate()?;
    let file = fs::File::open(&a.log).map_err(|e| invalid(format!("cannot read {}: {e}", a.log.display())))?;
    let log = ScanLog::read(BufReader::new(file))?;
    if log.records.is_empty() {
        return Err(invalid("scan log has no records"));
    }
    let gt = match &a.gt {
        Some(p) => Some(load_grid(p)?),
        None => None,
    };
    let geometry = match &gt {
        Some(gt) => gt.geometry,
        None => {
            let layout = match &a.layout {
                Some(p) => CityLayout::load(p)?,
                None => CityLayout::default_layout(),
            };
            ground_truth(&layout, cfg.resolution)?.geometry
        }
    };
    let mut rng = stream(g.seed, streams::SLAM);
    let outcome = run_slam(geometry, &log, &cfg, &mut rng)?;
    let map = outcome.best_map(&cfg);
    prepare_out(&g.out)?;
    save_grid(&map, &g.out.join("map.pgm"))?;
    if let Some(gt) = &gt {
        let report = evaluate_maps(gt, &map)?;
        write_file(&g.out.join("slam_report.json"), &to_fixed_json(&report)?)?;
        print!("{}", render_map_report(&report));
    }
    println!("resamples: {}", outcome.resample_count());
    Ok(())
}

fn map_eval(g: &Global, a: &MapEvalArgs) -> Outcome {
    let gt = load_grid(&a.gt)?;
    let mut est = load_grid(&a.est)?;
    if a.align {
        let t = align_maps(&est, &gt, &AlignSearch::default())?;
        info!("alignment {t:?}");
        est = transform_grid(&est, &t, &gt);
    }
    let report = evaluate_maps(&gt, &est)?;
    prepare_out(&g.out)?;
    write_file(&g.out.join("report.json"), &to_fixed_json(&report)?)?;
    print!("{}", render_map_report(&report));
    Ok(())
}

fn depth_eval(g: &Global, a: &DepthEvalArgs) -> Outcome {
    let read = |p: &Path| {
        fs::read_to_string(p)
            .map_err(|e| invalid(format!("cannot read {}: {e}", p.display())))
            .and_then(|t| read_depth_column(&t).map_err(Failure::from))
    };
    let pred = read(&a.pred)?;
    let gt = read(&a.gt)?;
    let row = DepthRow {
        method: a.method.clone(),
        inference_time_s: a.inference_time,
        mae: mae(&pred, &gt).map_err(|e| invalid(e.to_string()))?,
        mre: mre(&pred, &gt).map_err(|e| invalid(e.to_string()))?,
    };
    prepare_out(&g.out)?;
    write_file(&g.out.join("depth_report.json"), &to_fixed_json(&row)?)?;
    print!("{}", render_depth_table(&[row]));
    Ok(())
}

fn params() -> Outcome {
    let dump = serde_json::json!({
        "vehicle": VehicleParams::default(),
        "lidar": LidarParams::default(),
        "tracker": TrackerParams::default(),
        "channel": ChannelParams::default(),
        "infra_decision": InfraParams::default(),
        "infra": InfraConfig::default(),
        "intersection": IntersectionSpec::default(),
        "slam": SlamConfig::default(),
        "mapping": MappingConfig::default(),
    });
    let text = serde_json::to_string_pretty(&dump).map_err(|e| Failure::Runtime(e.to_string()))?;
    println!("{text}");
    Ok(())
}

impl Command {
    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = Vec::new();
        match self {
            Command::BuildMap(a) => v.extend(a.layout.as_deref().into_iter().chain(a.mapping_config.as_deref())),
            Command::Run(a) => v.push(&a.config),
            Command::Stopping(a) => v.push(&a.config),
            Command::Slam(a) => {
                v.push(&a.log);
                v.extend(
                    a.config
                        .as_deref()
                        .into_iter()
                        .chain(a.gt.as_deref())
                        .chain(a.layout.as_deref()),
                );
            }
            Command::MapEval(a) => v.extend([a.gt.as_path(), a.est.as_path()]),
            Command::DepthEval(a) => v.extend([a.pred.as_path(), a.gt.as_path()]),
            Command::Params(_) => {}
        }
        v
    }
}

fn dispatch(cli: &Cli) -> Outcome {
    let g = &cli.global;
    if let Some(p) = cli.command.inputs().into_iter().find(|p| !p.is_file()) {
        return Err(invalid(format!("input file {} does not exist", p.display())));
    }
    match &cli.command {
        Command::BuildMap(a) => build_map(g, a),
        Command::Run(a) => run(g, a),
        Command::Stopping(a) => stopping(g, a),
        Command::Slam(a) => slam(g, a),
        Command::MapEval(a) => map_eval(g, a),
        Command::DepthEval(a) => depth_eval(g, a),
        Command::Params(_) => params(),
    }
}

fn main() -> ExitCode {
    let matches = match Cli::command().version(version_string()).try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(1);
        }
    };
    let level = cli.global.log_level.parse::<LevelFilter>().unwrap_or(LevelFilter::Warn);
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
