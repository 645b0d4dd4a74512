//! `bevloc`: synthetic data, map building, localization, evaluation and the
//! property self-test.
//!
//! Exit codes: 0 success, 1 usage, 2 incompatible map or config, 3 bad data,
//! 4 property failure.

mod config;

use std::collections::HashMap;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bevloc_core::cloud_io::{read_cloud, read_poses, scan_file_name, write_cloud, write_poses, CloudIoError};
use bevloc_core::eval::metrics::{
    metrics_report, outcomes_csv, pr_curve_csv, revisit_sweep, sweep_csv, DEFAULT_REVISIT_THRESHOLDS,
};
use bevloc_core::eval::protocol::{evaluate_queries, localize_scan, synthesize, StageTimings};
use bevloc_core::localize::LocalizeError;
use bevloc_core::map_store::MapError;
use bevloc_core::repr::AngularTransform;
use bevloc_core::selftest::{run_selftest, SelftestConfig, TrialCounts};
use bevloc_core::{build_map, load_map, save_map, Exec, KeyframeDatabase, Localizer, Observation, PointCloud, Pose2};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;
use thiserror::Error;

use crate::config::RunConfig;

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Incompatible(String),
    #[error("{0}")]
    BadData(String),
    #[error("{0}")]
    Property(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Incompatible(_) => 2,
            CliError::BadData(_) => 3,
            CliError::Property(_) => 4,
        }
    }
}

fn io_error(e: &std::io::Error, msg: String) -> CliError {
    if e.kind() == ErrorKind::NotFound {
        CliError::Usage(msg)
    } else {
        CliError::BadData(msg)
    }
}

impl From<CloudIoError> for CliError {
    fn from(e: CloudIoError) -> Self {
        match &e {
            CloudIoError::Io { source, .. } => io_error(source, e.to_string()),
            CloudIoError::UnknownFormat { .. } => CliError::Usage(e.to_string()),
            _ => CliError::BadData(e.to_string()),
        }
    }
}

impl From<MapError> for CliError {
    fn from(e: MapError) -> Self {
        match &e {
            MapError::FingerprintMismatch { .. } | MapError::ShapeMismatch(_) | MapError::UnsupportedVersion(_) => {
                CliError::Incompatible(e.to_string())
            }
            MapError::InvalidConfig(_) | MapError::InvalidInterval(_) | MapError::Repr(_) => CliError::Usage(e.to_string()),
            MapError::Io(source) => io_error(source, e.to_string()),
            _ => CliError::BadData(e.to_string()),
        }
    }
}

impl From<LocalizeError> for CliError {
    fn from(e: LocalizeError) -> Self {
        match e {
            LocalizeError::Map(m) => m.into(),
            LocalizeError::SpecMismatch | LocalizeError::InvalidConfig(_) => CliError::Incompatible(e.to_string()),
            LocalizeError::EmptyObservation | LocalizeError::EmptyDatabase => CliError::BadData(e.to_string()),
            _ => CliError::BadData(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Debug, Parser)]
#[command(name = "bevloc", version, about = "Learning-free BEV place recognition and pose estimation")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Search threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Keyframe sampling interval for `build-map`.
    #[arg(long, global = true)]
    interval_m: Option<f64>,
    /// Revisit threshold for the primary report.
    #[arg(long, global = true)]
    revisit_m: Option<f64>,
    #[arg(long, global = true)]
    refine_window_deg: Option<f64>,
    #[arg(long, global = true, value_enum)]
    icp: Option<Switch>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a world, a mapping pass and a query pass.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Build a keyframe map from scans and their poses.
    BuildMap {
        /// Directory of `{id:06}.bin` scans.
        #[arg(long)]
        scans: PathBuf,
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Localize one scan against a map; JSON on stdout.
    Localize {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        scan: PathBuf,
        /// Raw keyframe scans, needed for ICP.
        #[arg(long)]
        map_scans: Option<PathBuf>,
    },
    /// Localize every query and write the metric reports.
    Evaluate {
        #[arg(long)]
        map: PathBuf,
        /// Directory of `{id:06}.bin` query scans.
        #[arg(long)]
        queries: PathBuf,
        /// Ground-truth query poses.
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        map_scans: Option<PathBuf>,
    },
    /// Run the property battery.
    Selftest {
        /// Substitute the polar pathway for the Radon one (mutation check).
        #[arg(long)]
        polar: bool,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn run_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(CliError::Usage)?,
        None => RunConfig::default(),
    };
    if let Some(v) = cli.seed {
        cfg.seed = v;
    }
    if let Some(v) = cli.threads {
        cfg.threads = v;
    }
    if let Some(v) = cli.interval_m {
        cfg.interval_m = v;
    }
    if let Some(v) = cli.revisit_m {
        cfg.revisit_m = v;
    }
    if let Some(v) = cli.refine_window_deg {
        cfg.localizer.refine_window_deg = Some(v);
    }
    if let Some(v) = cli.icp {
        cfg.localizer.icp = Some(matches!(v, Switch::On));
    }
    if !(cfg.revisit_m > 0.0 && cfg.revisit_m.is_finite()) {
        return Err(CliError::Usage("revisit_m must be positive".into()));
    }
    cfg.map_config().validate()?;
    Ok(cfg)
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| io_error(&e, format!("{}: {e}", path.display())))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(path).map_err(|e| io_error(&e, format!("{}: {e}", path.display())))
}

/// Scans named by the ids of a poses file.
fn read_observations(scans: &Path, poses: &Path) -> Result<Vec<Observation>, CliError> {
    read_poses(poses)?
        .into_iter()
        .map(|(id, pose)| {
            Ok(Observation {
                id,
                cloud: read_cloud(scans.join(scan_file_name(id)))?,
                pose,
            })
        })
        .collect()
}

fn write_pass(dir: &Path, observations: &[Observation]) -> Result<(), CliError> {
    let scans = dir.join("scans");
    create_dir(&scans)?;
    for o in observations {
        write_cloud(scans.join(scan_file_name(o.id)), &o.cloud)?;
    }
    let poses: Vec<(u64, Pose2)> = observations.iter().map(|o| (o.id, o.pose)).collect();
    write_poses(dir.join("poses.txt"), &poses)?;
    Ok(())
}

fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<(), CliError> {
    let data = synthesize(&cfg.protocol());
    create_dir(out)?;
    let world = serde_json::json!({
        "seed": data.world.seed,
        "extent_m": data.world.extent_m,
        "structures": data.world.structures,
    });
    write_file(&out.join("world.json"), serde_json::to_string_pretty(&world).expect("json"))?;
    write_cloud(out.join("world.bin"), &PointCloud::new(data.world.points.clone()))?;
    write_pass(&out.join("map"), &data.map_observations)?;
    write_pass(&out.join("queries"), &data.queries)?;
    println!(
        "world {} structures, {} map scans, {} queries -> {}",
        data.world.structures.len(),
        data.map_observations.len(),
        data.queries.len(),
        out.display()
    );
    Ok(())
}

fn cmd_build_map(cfg: &RunConfig, scans: &Path, poses: &Path, out: &Path) -> Result<(), CliError> {
    let observations = read_observations(scans, poses)?;
    let db = build_map(&observations, cfg.interval_m, &cfg.map_config(), Exec::Parallel)?;
    save_map(&db, out)?;
    println!("keyframes {}", db.len());
    println!("fingerprint {}", db.fingerprint());
    Ok(())
}

/// Loads a map and checks it against the run configuration.
fn open_map(cfg: &RunConfig, path: &Path) -> Result<(KeyframeDatabase, Localizer), CliError> {
    let db = load_map(path)?;
    let expected = cfg.map_config().fingerprint();
    if db.fingerprint() != expected {
        return Err(CliError::Incompatible(format!(
            "{}: configuration fingerprint mismatch: map {}, config {expected}",
            path.display(),
            db.fingerprint()
        )));
    }
    let loc = Localizer::new(db.config(), cfg.localizer_config(db.config()))?;
    Ok((db, loc))
}

fn keyframe_clouds(
    loc: &Localizer,
    db: &KeyframeDatabase,
    dir: Option<&Path>,
) -> Result<Option<HashMap<u64, PointCloud>>, CliError> {
    if !loc.config().icp_enabled {
        return Ok(None);
    }
    let dir = dir.ok_or_else(|| CliError::Usage("--icp on needs --map-scans".into()))?;
    db.keyframes()
        .iter()
        .map(|k| Ok((k.id, read_cloud(dir.join(scan_file_name(k.id)))?)))
        .collect::<Result<_, CliError>>()
        .map(Some)
}

fn print_timings(t: &StageTimings) {
    eprintln!(
        "timing representation {:.3}s search {:.3}s refinement {:.3}s",
        t.representation_s, t.search_s, t.refinement_s
    );
}

#[derive(Serialize)]
struct RankedJson {
    id: u64,
    translation_score: f64,
}

#[derive(Serialize)]
struct LocalizeJson {
    keyframe_id: u64,
    relative_pose: Pose2,
    global_pose: Pose2,
    coarse_pose: Pose2,
    rotation_score: f64,
    translation_score: f64,
    shift_cells: (i64, i64),
    ranked: Vec<RankedJson>,
}

fn cmd_localize(cfg: &RunConfig, map: &Path, scan: &Path, map_scans: Option<&Path>) -> Result<(), CliError> {
    let (db, loc) = open_map(cfg, map)?;
    let cloud = read_cloud(scan)?;
    let clouds = keyframe_clouds(&loc, &db, map_scans)?;
    let (result, global, timings) = localize_scan(&loc, &db, &cloud, clouds.as_ref(), Exec::Parallel)?;
    let kf = db.get(result.keyframe_id).expect("retrieved id is in the map");
    let out = LocalizeJson {
        keyframe_id: result.keyframe_id,
        relative_pose: kf.pose.inverse().compose(&global),
        global_pose: global,
        coarse_pose: result.coarse.pose,
        rotation_score: result.refined.rotation_score,
        translation_score: result.refined.translation_score,
        shift_cells: result.refined.shift_cells,
        ranked: result
            .ranked
            .entries
            .iter()
            .take(cfg.max_n.max(1))
            .map(|e| RankedJson {
                id: e.id,
                translation_score: e.estimate.translation_score,
            })
            .collect(),
    };
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    print_timings(&timings);
    Ok(())
}

fn cmd_evaluate(
    cfg: &RunConfig,
    map: &Path,
    queries: &Path,
    poses: &Path,
    out: &Path,
    map_scans: Option<&Path>,
) -> Result<(), CliError> {
    let (db, loc) = open_map(cfg, map)?;
    let observations = read_observations(queries, poses)?;
    if observations.is_empty() {
        return Err(CliError::BadData(format!("{}: no queries", poses.display())));
    }
    let clouds = keyframe_clouds(&loc, &db, map_scans)?;
    let (outcomes, timings) = evaluate_queries(&loc, &db, &observations, clouds.as_ref(), cfg.max_n, Exec::Parallel)?;
    let mut thresholds = DEFAULT_REVISIT_THRESHOLDS.to_vec();
    if !thresholds.contains(&cfg.revisit_m) {
        thresholds.push(cfg.revisit_m);
        thresholds.sort_by(f64::total_cmp);
    }
    let sweep = revisit_sweep(&outcomes, &thresholds, cfg.max_n);
    let primary = metrics_report(&outcomes, cfg.revisit_m, cfg.max_n);
    create_dir(out)?;
    let report = serde_json::json!({
        "fingerprint": db.fingerprint(),
        "n_keyframes": db.len(),
        "revisit_m": cfg.revisit_m,
        "report": primary,
        "sweep": sweep,
    });
    write_file(&out.join("report.json"), serde_json::to_string_pretty(&report).expect("json"))?;
    write_file(&out.join("report.csv"), sweep_csv(&sweep))?;
    write_file(&out.join("outcomes.csv"), outcomes_csv(&outcomes))?;
    write_file(&out.join("pr_curve.csv"), pr_curve_csv(&primary.pr_curve))?;
    println!(
        "queries {} keyframes {} revisit {} m: recall@1 {:.4} gl one-stage {:.4} gl two-stage {:.4} auc {:.4} max f1 {:.4}",
        outcomes.len(),
        db.len(),
        cfg.revisit_m,
        primary.recall_at_1(),
        primary.gl_succ_one_stage,
        primary.gl_succ_two_stage,
        primary.auc,
        primary.max_f1
    );
    print_timings(&timings);
    Ok(())
}

fn cmd_selftest(cfg: &RunConfig, polar: bool) -> Result<(), CliError> {
    let st = SelftestConfig {
        seed: cfg.seed,
        grid: cfg.grid(),
        transform: if polar {
            AngularTransform::Polar
        } else {
            AngularTransform::Radon
        },
    };
    let report = run_selftest(&st, &TrialCounts::default());
    for r in &report.results {
        println!("{r}");
    }
    let failed: Vec<String> = report
        .results
        .iter()
        .filter(|r| !r.passed)
        .map(|r| match r.failing_seed {
            Some(s) => format!("{} (seed {s})", r.name),
            None => r.name.clone(),
        })
        .collect();
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Property(format!("failing properties: {}", failed.join(", "))))
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = run_config(&cli)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Synth { out } => cmd_synth(&cfg, out),
        Command::BuildMap { scans, poses, out } => cmd_build_map(&cfg, scans, poses, out),
        Command::Localize { map, scan, map_scans } => cmd_localize(&cfg, map, scan, map_scans.as_deref()),
        Command::Evaluate {
            map,
            queries,
            poses,
            out,
            map_scans,
        } => cmd_evaluate(&cfg, map, queries, poses, out, map_scans.as_deref()),
        Command::Selftest { polar } => cmd_selftest(&cfg, *polar),
        Command::Config => {
            print!("{}", cfg.to_toml());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
