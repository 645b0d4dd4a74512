//! Closed-loop synthetic benchmark: a world, a mapping pass sampled into
//! keyframes, a second pass of queries with random headings, and the metric
//! suite over the outcomes.

use std::collections::HashMap;
use std::f64::consts::TAU;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{revisit_sweep, MetricsReport, QueryOutcome, DEFAULT_REVISIT_THRESHOLDS};
use super::synth::{derive_seed, generate_world, random_route, render_scan, resample_route, ScanModel, World};
use crate::exec::Exec;
use crate::geometry::{compose_global_pose, PointCloud, Pose2};
use crate::localize::{icp_refine, LocalizeError, Localizer, LocalizerConfig};
use crate::map_store::{build_map, nearest_keyframe, KeyframeDatabase, MapConfig, MapError, Observation};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub seed: u64,
    pub extent_m: f64,
    pub n_structures: usize,
    pub route_length_m: f64,
    /// Spacing of the raw mapping-pass scans.
    pub map_step_m: f64,
    pub map_interval_m: f64,
    pub query_interval_m: f64,
    /// Arc length of the first query along the route.
    pub query_offset_m: f64,
    pub lateral_jitter_m: f64,
    pub scan: ScanModel,
    pub revisit_thresholds: Vec<f64>,
    pub max_n: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            extent_m: 400.0,
            n_structures: 600,
            route_length_m: 400.0,
            map_step_m: 0.5,
            map_interval_m: 20.0,
            query_interval_m: 5.0,
            query_offset_m: 2.5,
            lateral_jitter_m: 1.0,
            scan: ScanModel {
                max_range_m: 40.0,
                dropout_rate: 0.2,
                noise_sigma_m: 0.05,
            },
            revisit_thresholds: DEFAULT_REVISIT_THRESHOLDS.to_vec(),
            max_n: 10,
        }
    }
}

const STREAM_ROUTE: u64 = 1;
const STREAM_MAP_SCAN: u64 = 2;
const STREAM_QUERY: u64 = 3;
const STREAM_QUERY_SCAN: u64 = 4;

/// World, mapping-pass observations and ground-truth queries.
#[derive(Debug, Clone)]
pub struct SyntheticDataset {
    pub world: World,
    pub map_observations: Vec<Observation>,
    pub queries: Vec<Observation>,
}

pub fn synthesize(cfg: &ProtocolConfig) -> SyntheticDataset {
    let world = generate_world(cfg.seed, cfg.extent_m, cfg.n_structures);
    let margin = cfg.scan.max_range_m.min(cfg.extent_m / 4.0);
    let route = random_route(
        derive_seed(cfg.seed, STREAM_ROUTE, 0),
        cfg.extent_m,
        cfg.route_length_m,
        cfg.map_step_m.min(1.0),
        margin,
    );
    let map_poses = resample_route(&route, 0.0, cfg.map_step_m);
    let map_observations = map_poses
        .iter()
        .enumerate()
        .map(|(i, pose)| Observation {
            id: i as u64,
            cloud: render_scan(&world, pose, &cfg.scan, derive_seed(cfg.seed, STREAM_MAP_SCAN, i as u64)),
            pose: *pose,
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, STREAM_QUERY, 0));
    let queries = resample_route(&route, cfg.query_offset_m, cfg.query_interval_m)
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let j = if cfg.lateral_jitter_m > 0.0 {
                rng.gen_range(-cfg.lateral_jitter_m..=cfg.lateral_jitter_m)
            } else {
                0.0
            };
            let (s, c) = p.theta.sin_cos();
            let pose = Pose2::new(rng.gen_range(0.0..TAU), p.x - s * j, p.y + c * j);
            Observation {
                id: i as u64,
                cloud: render_scan(&world, &pose, &cfg.scan, derive_seed(cfg.seed, STREAM_QUERY_SCAN, i as u64)),
                pose,
            }
        })
        .collect();
    SyntheticDataset {
        world,
        map_observations,
        queries,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub representation_s: f64,
    pub search_s: f64,
    pub refinement_s: f64,
}

impl std::ops::AddAssign for StageTimings {
    fn add_assign(&mut self, o: Self) {
        self.representation_s += o.representation_s;
        self.search_s += o.search_s;
        self.refinement_s += o.refinement_s;
    }
}

/// Localizes one scan against the database, with optional ICP against the
/// retrieved keyframe's raw scan.
pub fn localize_scan(
    loc: &Localizer,
    db: &KeyframeDatabase,
    cloud: &PointCloud,
    map_clouds: Option<&HashMap<u64, PointCloud>>,
    exec: Exec,
) -> Result<(crate::localize::Localization, Pose2, StageTimings), LocalizeError> {
    let t0 = Instant::now();
    let query = loc.prepare_cloud(cloud)?;
    let t1 = Instant::now();
    let ranked = loc.search(&query, db, exec)?;
    let t2 = Instant::now();
    let top = *ranked.top().expect("nonempty database");
    let kf = db.get(top.id).expect("ranked id comes from the database");
    let refined = loc.refine_pose(&query, kf, &top.estimate)?;
    let mut relative = refined.pose;
    if loc.config().icp_enabled {
        if let Some(map_cloud) = map_clouds.and_then(|m| m.get(&top.id)) {
            let icp = icp_refine(cloud, map_cloud, &relative, &loc.config().icp(db.config().ground_z_m));
            relative = icp.pose;
        }
    }
    let global = compose_global_pose(&kf.pose, &relative);
    let t3 = Instant::now();
    let timings = StageTimings {
        representation_s: (t1 - t0).as_secs_f64(),
        search_s: (t2 - t1).as_secs_f64(),
        refinement_s: (t3 - t2).as_secs_f64(),
    };
    let result = crate::localize::Localization {
        keyframe_id: top.id,
        coarse: top.estimate,
        refined,
        global_pose: global,
        ranked,
    };
    Ok((result, global, timings))
}

/// Runs every query and records its outcome against ground truth.
pub fn evaluate_queries(
    loc: &Localizer,
    db: &KeyframeDatabase,
    queries: &[Observation],
    map_clouds: Option<&HashMap<u64, PointCloud>>,
    max_n: usize,
    exec: Exec,
) -> Result<(Vec<QueryOutcome>, StageTimings), LocalizeError> {
    let mut timings = StageTimings::default();
    let mut outcomes = Vec::with_capacity(queries.len());
    for q in queries {
        let (result, global, t) = localize_scan(loc, db, &q.cloud, map_clouds, exec)?;
        timings += t;
        let ranked_dists_m = result
            .ranked
            .entries
            .iter()
            .take(max_n.max(1))
            .map(|e| db.get(e.id).expect("known id").pose.distance_xy(&q.pose))
            .collect();
        outcomes.push(QueryOutcome {
            query_id: q.id,
            gt_pose: q.pose,
            retrieved_id: result.keyframe_id,
            est_pose: global,
            score: result.refined.translation_score,
            nearest_dist_m: nearest_keyframe(db, &q.pose)?.1,
            ranked_dists_m,
        });
    }
    Ok((outcomes, timings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolRun {
    pub seed: u64,
    pub n_keyframes: usize,
    pub n_queries: usize,
    pub outcomes: Vec<QueryOutcome>,
    pub sweep: Vec<MetricsReport>,
    pub timings: StageTimings,
    pub build_s: f64,
}

impl ProtocolRun {
    pub fn at_revisit(&self, revisit_m: f64) -> Option<&MetricsReport> {
        self.sweep.iter().find(|r| r.revisit_m == revisit_m)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ProtocolError {
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Localize(#[from] LocalizeError),
}

pub fn run_protocol(
    cfg: &ProtocolConfig,
    map_cfg: &MapConfig,
    loc_cfg: &LocalizerConfig,
    exec: Exec,
) -> Result<ProtocolRun, ProtocolError> {
    let data = synthesize(cfg);
    let t0 = Instant::now();
    let db = build_map(&data.map_observations, cfg.map_interval_m, map_cfg, exec)?;
    let build_s = t0.elapsed().as_secs_f64();
    let clouds: HashMap<u64, PointCloud> = db
        .keyframes()
        .iter()
        .map(|k| (k.id, data.map_observations[k.id as usize].cloud.clone()))
        .collect();
    let loc = Localizer::new(map_cfg, *loc_cfg)?;
    let (outcomes, timings) = evaluate_queries(&loc, &db, &data.queries, Some(&clouds), cfg.max_n, exec)?;
    Ok(ProtocolRun {
        seed: cfg.seed,
        n_keyframes: db.len(),
        n_queries: outcomes.len(),
        sweep: revisit_sweep(&outcomes, &cfg.revisit_thresholds, cfg.max_n),
        outcomes,
        timings,
        build_s,
    })
}
