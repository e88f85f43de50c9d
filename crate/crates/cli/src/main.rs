use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use lanemap::association::AssociationConfig;
use lanemap::evaluation::{compare_trajectories, MapQualityReport, RpeEntry};
use lanemap::io::{plot_svg, read_frames, write_frames, FrameStream, IoError, MapExport, TrajectoryFile, TruthFile};
use lanemap::pipeline::{association_pairs, evaluate_association_pairs, evaluate_map_final, evaluate_map_online, run_pipeline};
use lanemap::simulation::simulate;
use lanemap::{PipelineConfig, Pose, Vec3};

#[derive(Parser)]
#[command(name = "lanemap", version, about = "Online lane mapping with spline landmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExportFormat {
    MapJson,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic frame stream and its ground truth.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dropout: Option<f64>,
    },
    /// Build a map from a frame stream.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Frame-pair association benchmark, full method and distance-only.
    EvalAssoc {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Relative pose error of odometry and refined poses.
    EvalPose {
        #[arg(long)]
        frames: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Map quality. With `--dropout`, simulates and scores the online map
    /// against single-frame detections for each dropout probability.
    EvalMap {
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        truth: Option<PathBuf>,
        /// Refined trajectory; defaults to `trajectory.json` beside the map.
        #[arg(long)]
        trajectory: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        dropout: Vec<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-emit a map export.
    Export {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, value_enum, default_value = "map-json")]
        format: ExportFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Bird's-eye SVG of the map over ground truth.
    Plot {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig> {
    match path {
        None => Ok(PipelineConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("[E_IO] reading config {}", p.display()))?;
            PipelineConfig::from_json(&text).with_context(|| format!("[E_CONFIG] parsing config {}", p.display()))
        }
    }
}

fn load_frames(path: &Path) -> Result<FrameStream> {
    let file = File::open(path).with_context(|| format!("[E_IO] opening frames {}", path.display()))?;
    let stream = read_frames(BufReader::new(file)).map_err(|e| tagged(e, path))?;
    for s in &stream.skipped {
        log::warn!("[{}] {}:{} skipped: {}", s.code, path.display(), s.line, s.message);
    }
    Ok(stream)
}

fn load_truth(path: &Path) -> Result<TruthFile> {
    let text = fs::read_to_string(path).with_context(|| format!("[E_IO] reading truth {}", path.display()))?;
    TruthFile::parse(&text).map_err(|e| tagged(e, path))
}

fn load_map(path: &Path) -> Result<MapExport> {
    let text = fs::read_to_string(path).with_context(|| format!("[E_IO] reading map {}", path.display()))?;
    MapExport::parse(&text).map_err(|e| tagged(e, path))
}

fn tagged(e: IoError, path: &Path) -> anyhow::Error {
    anyhow::anyhow!("[{}] {}: {e}", e.code(), path.display())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).with_context(|| format!("[E_IO] writing {}", path.display()))
}

fn simulate_cmd(config: Option<&Path>, out: &Path, seed: Option<u64>, dropout: Option<f64>) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.scenario.seed = s;
    }
    if let Some(p) = dropout {
        cfg.scenario.dropout = p;
    }
    if let Err(msg) = cfg.scenario.validate() {
        bail!("[E_CONFIG] {msg}");
    }
    let scenario = simulate(&cfg.scenario);
    fs::create_dir_all(out)?;
    let mut w = BufWriter::new(File::create(out.join("frames.jsonl"))?);
    write_frames(&mut w, &scenario.label, &scenario.frames)?;
    w.flush()?;
    let truth = serde_json::to_string_pretty(&TruthFile::from_scenario(&scenario))?;
    write_file(&out.join("truth.json"), &(truth + "\n"))?;
    println!("wrote {} frames ({}) to {}", scenario.frames.len(), scenario.label, out.display());
    Ok(())
}

fn run_cmd(config: Option<&Path>, frames: &Path, out: &Path) -> Result<()> {
    let cfg = load_config(config)?;
    let stream = load_frames(frames)?;
    let result = run_pipeline(&stream.frames, &cfg);
    fs::create_dir_all(out)?;
    let export = MapExport::from_map(&result.map, &cfg.hash(), stream.frames.len() as u64);
    write_file(&out.join("map.json"), &export.to_json())?;
    let traj = TrajectoryFile::new(result.frames.clone(), &result.poses);
    write_file(&out.join("trajectory.json"), &(serde_json::to_string_pretty(&traj)? + "\n"))?;
    let mut log = String::new();
    for entry in &result.logs {
        log.push_str(&serde_json::to_string(entry)?);
        log.push('\n');
    }
    write_file(&out.join("log.jsonl"), &log)?;
    println!(
        "{} frames, {} landmarks, {} control points -> {}",
        stream.frames.len(),
        export.landmarks.len(),
        export.control_point_count(),
        out.display()
    );
    Ok(())
}

fn eval_assoc_cmd(frames: &Path, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let stream = load_frames(frames)?;
    if stream.frames.iter().any(|f| f.lanes.iter().any(|l| l.instance_id.is_none())) {
        bail!("[E_INPUT] association scoring needs instance ids on every lane");
    }
    let pairs = association_pairs(&stream.frames, &cfg);
    let distance_only = PipelineConfig {
        association: AssociationConfig { use_consistency: false, ..cfg.association },
        ..cfg.clone()
    };
    println!("{:<16} {:>7} {:>9} {:>7} {:>9}", "method", "F1", "Precision", "Recall", "Time(ms)");
    for (name, c) in [("full", &cfg), ("distance-only", &distance_only)] {
        let m = evaluate_association_pairs(&pairs, c);
        println!("{:<16} {:>7.3} {:>9.3} {:>7.3} {:>9.3}", name, m.f1, m.precision, m.recall, m.mean_runtime_ms);
    }
    println!("{} pairs", pairs.len());
    Ok(())
}

fn rpe_row(label: &str, entries: &[RpeEntry]) -> String {
    let cols: Vec<String> = entries
        .iter()
        .map(|e| format!("{:>3}m {:>7.3}° {:>7.3}m", e.distance, e.rotation_deg, e.translation))
        .collect();
    format!("{label:<9} {}", cols.join("   "))
}

fn eval_pose_cmd(frames: &Path, truth: &Path, out: Option<&Path>, config: Option<&Path>) -> Result<()> {
    let cfg = load_config(config)?;
    let stream = load_frames(frames)?;
    let truth = load_truth(truth)?;
    let true_poses = truth.pose_list()?;
    if true_poses.len() != stream.frames.len() {
        bail!("[E_INPUT] {} true poses for {} frames", true_poses.len(), stream.frames.len());
    }
    let odometry: Vec<Pose> = stream.frames.iter().map(|f| f.odometry).collect();
    let result = run_pipeline(&stream.frames, &cfg);
    let report = compare_trajectories(&true_poses, &odometry, &result.poses);
    println!("{}", rpe_row("odometry", &report.odometry));
    println!("{}", rpe_row("updated", &report.updated));
    if let Some(dir) = out {
        write_file(&dir.join("rpe.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    }
    Ok(())
}

fn print_map_report(r: &MapQualityReport) {
    println!("{:<28} {:>7.3} {:>9.3} {:>7.3}", r.label, r.f1, r.precision, r.recall);
}

fn eval_map_cmd(
    map: Option<&Path>,
    truth: Option<&Path>,
    trajectory: Option<&Path>,
    dropout: &[f64],
    config: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let cfg = load_config(config)?;
    println!("{:<28} {:>7} {:>9} {:>7}", "map", "F1", "Precision", "Recall");
    let mut reports = Vec::new();
    if !dropout.is_empty() {
        for &p in dropout {
            let mut c = cfg.clone();
            c.scenario.dropout = p;
            if let Err(msg) = c.scenario.validate() {
                bail!("[E_CONFIG] {msg}");
            }
            let s = simulate(&c.scenario);
            let cmp = evaluate_map_online(&s.frames, &s.lanes, &c, &format!("{} p={p}", s.label));
            print_map_report(&cmp.method);
            print_map_report(&cmp.baseline);
            reports.push(cmp.method);
            reports.push(cmp.baseline);
        }
    } else {
        let (Some(map), Some(truth)) = (map, truth) else {
            bail!("[E_USAGE] eval-map needs --map and --truth, or --dropout");
        };
        let export = load_map(map)?;
        let truth = load_truth(truth)?;
        let true_poses = truth.pose_list()?;
        let traj_path = trajectory.map(Path::to_path_buf).unwrap_or_else(|| map.with_file_name("trajectory.json"));
        let estimated: Vec<Pose> = if traj_path.exists() {
            let t: TrajectoryFile = serde_json::from_str(&fs::read_to_string(&traj_path)?)
                .with_context(|| format!("[E_JSON] {}", traj_path.display()))?;
            t.poses.iter().map(Pose::try_from).collect::<Result<_, _>>()?
        } else {
            log::warn!("no trajectory at {}; scoring at true poses", traj_path.display());
            true_poses.clone()
        };
        let spacing = cfg.map_score.sample_spacing;
        let lanes: Vec<(lanemap::Category, Vec<Vec3>)> = export
            .landmarks
            .iter()
            .filter(|l| l.control_points.len() >= 4)
            .filter_map(|l| Some((l.category, l.spline(export.tau)?.sample_with_ends(spacing))))
            .collect();
        let report = evaluate_map_final(&lanes, &truth.lanes, &true_poses, &estimated, &cfg, &truth.label);
        print_map_report(&report);
        reports.push(report);
    }
    if let Some(path) = out {
        write_file(path, &(serde_json::to_string_pretty(&reports)? + "\n"))?;
    }
    Ok(())
}

fn export_cmd(map: &Path, format: ExportFormat, out: Option<&Path>) -> Result<()> {
    let export = load_map(map)?;
    let text = match format {
        ExportFormat::MapJson => export.to_json(),
        ExportFormat::Csv => export.to_csv(),
    };
    match out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn plot_cmd(map: &Path, truth: Option<&Path>, out: &Path) -> Result<()> {
    let export = load_map(map)?;
    let truth = truth.map(load_truth).transpose()?;
    write_file(out, &plot_svg(&export, truth.as_ref(), 0.5))
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { config, out, seed, dropout } => simulate_cmd(config.as_deref(), &out, seed, dropout),
        Command::Run { config, frames, out } => run_cmd(config.as_deref(), &frames, &out),
        Command::EvalAssoc { frames, config } => eval_assoc_cmd(&frames, config.as_deref()),
        Command::EvalPose { frames, truth, out, config } => {
            eval_pose_cmd(&frames, &truth, out.as_deref(), config.as_deref())
        }
        Command::EvalMap { map, truth, trajectory, dropout, config, out } => eval_map_cmd(
            map.as_deref(),
            truth.as_deref(),
            trajectory.as_deref(),
            &dropout,
            config.as_deref(),
            out.as_deref(),
        ),
        Command::Export { map, format, out } => export_cmd(&map, format, out.as_deref()),
        Command::Plot { map, truth, out } => plot_cmd(&map, truth.as_deref(), &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
