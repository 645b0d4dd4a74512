//! Acceptance battery: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::f64::consts::{PI, TAU};
use std::time::Instant;

use bevloc_core::correlation::{circular_xcorr_1d, xcorr_2d};
use bevloc_core::eval::metrics::sweep_csv;
use bevloc_core::eval::protocol::{run_protocol, synthesize, ProtocolConfig, ProtocolRun};
use bevloc_core::eval::synth::{derive_seed, generate_world, interior_scan, render_scan, ScanModel};
use bevloc_core::geometry::angular_distance;
use bevloc_core::localize::icp_refine;
use bevloc_core::map_store::{decode_map, encode_map, Keyframe};
use bevloc_core::objectives::{rotation_kl_loss, translation_nll_loss, DEFAULT_SIGMA_BINS};
use bevloc_core::repr::neural_plane;
use bevloc_core::selftest::{
    property_correlation_oracle, property_radon_vs_polar, property_rotation_equivariance,
    property_translation_invariance, property_translation_recovery, PropertyResult, SelftestConfig,
};
use bevloc_core::{
    build_map, load_map, rotate_grid, save_map, Exec, Localizer, LocalizerConfig, MapConfig, Pose2,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn outcome(name: &'static str, passed: bool, detail: String) -> Outcome {
    Outcome { name, passed, detail }
}

fn properties(name: &'static str, results: &[PropertyResult], extra: String) -> Outcome {
    let passed = results.iter().all(|r| r.passed);
    let detail = results.iter().map(|r| r.to_string()).collect::<Vec<_>>().join("; ");
    outcome(name, passed, format!("{detail}{extra}"))
}

fn fft_oracles() -> Outcome {
    let t = Instant::now();
    let r = property_correlation_oracle(&SelftestConfig::default(), 100);
    let secs = t.elapsed().as_secs_f64();
    let mut o = properties("fft_oracles", &[r], format!("; {secs:.2}s of 10s"));
    o.passed &= secs < 10.0;
    o
}

fn spectrum_invariance() -> Outcome {
    let cfg = SelftestConfig::default();
    properties(
        "spectrum_invariance",
        &[property_rotation_equivariance(&cfg, 50), property_translation_invariance(&cfg, 50)],
        String::new(),
    )
}

fn translation_recovery() -> Outcome {
    properties(
        "translation_recovery",
        &[property_translation_recovery(&SelftestConfig::default(), 50)],
        String::new(),
    )
}

fn radon_vs_polar() -> Outcome {
    properties(
        "radon_vs_polar",
        &[property_radon_vs_polar(&SelftestConfig::default(), 100)],
        String::new(),
    )
}

fn protocol_runs() -> (Vec<ProtocolRun>, Vec<f64>) {
    let map_cfg = MapConfig::default();
    let loc_cfg = LocalizerConfig::for_map(&map_cfg);
    let mut runs = Vec::new();
    let mut secs = Vec::new();
    for seed in 0..10 {
        let cfg = ProtocolConfig { seed, ..Default::default() };
        let t = Instant::now();
        runs.push(run_protocol(&cfg, &map_cfg, &loc_cfg, Exec::Parallel).expect("protocol runs"));
        secs.push(t.elapsed().as_secs_f64());
    }
    (runs, secs)
}

fn protocol(runs: &[ProtocolRun], secs: &[f64]) -> Outcome {
    let n = runs.len() as f64;
    let at10 = |r: &ProtocolRun| r.at_revisit(10.0).expect("10 m in the sweep").clone();
    let recall: Vec<f64> = runs.iter().map(|r| at10(r).recall_at_1()).collect();
    let gl: Vec<f64> = runs.iter().map(|r| at10(r).gl_succ_one_stage).collect();
    let mean_recall = recall.iter().sum::<f64>() / n;
    let mean_gl = gl.iter().sum::<f64>() / n;
    let slowest = secs.iter().cloned().fold(0.0, f64::max);
    let min = |v: &[f64]| v.iter().cloned().fold(1.0, f64::min);
    outcome(
        "synthetic_protocol",
        mean_recall >= 0.90 && mean_gl >= 0.90 && slowest < 300.0,
        format!(
            "{} seeds: recall@1 {mean_recall:.3} (min seed {:.3}), gl one-stage {mean_gl:.3} (min seed {:.3}), slowest seed {slowest:.1}s",
            runs.len(),
            min(&recall),
            min(&gl)
        ),
    )
}

fn revisit_sweep(runs: &[ProtocolRun]) -> Outcome {
    let mut ok = true;
    for r in runs {
        let thresholds: Vec<f64> = r.sweep.iter().map(|m| m.revisit_m).collect();
        ok &= thresholds == [5.0, 10.0, 20.0, 25.0];
        ok &= r.sweep.windows(2).all(|w| w[1].recall_at_1() >= w[0].recall_at_1());
        ok &= r.sweep.iter().all(|m| m.gl_succ_one_stage == r.sweep[0].gl_succ_one_stage);
    }
    let first = &runs[0].sweep;
    let curve: Vec<String> = first.iter().map(|m| format!("{}m:{:.3}", m.revisit_m, m.recall_at_1())).collect();
    outcome(
        "revisit_sweep",
        ok,
        format!("{} seeds checked; seed 0 recall@1 {}", runs.len(), curve.join(" ")),
    )
}

/// Rotation KL and translation NLL at the pipeline pose against perturbed
/// poses on synthetic pairs.
fn loss_oracles() -> Outcome {
    let n = 16;
    let target = bevloc_core::objectives::bimodal_target(1.3, n, DEFAULT_SIGMA_BINS);
    let matched = bevloc_core::correlation::CorrVector {
        values: target.p.iter().map(|p| p.ln() - 2.0).collect(),
    };
    let kl_matched = rotation_kl_loss(&matched, 1.3, DEFAULT_SIGMA_BINS);
    let side = 9;
    let w = 2 * side - 1;
    let uniform = bevloc_core::correlation::CorrMap::from_values(side, vec![0.25; w * w]);
    let nll_err = (translation_nll_loss(&uniform, 3, -2).unwrap() - ((w * w) as f64).ln()).abs();

    let map_cfg = MapConfig::default();
    let loc = Localizer::new(&map_cfg, LocalizerConfig::for_map(&map_cfg)).unwrap();
    let bank = map_cfg.bank();
    let filter = map_cfg.repr.plane_filter();
    let n_theta = map_cfg.repr.n_theta;
    let bin = TAU / n_theta as f64;
    let (mut wins, mut total) = (0usize, 0usize);
    for pair in 0..20u64 {
        let seed = derive_seed(7, 70, pair);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let q = interior_scan(seed, 35.0);
        let truth = Pose2::new(rng.gen_range(0.0..TAU), rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0));
        let kf = Keyframe::from_cloud(0, Pose2::identity(), &q.transform(&truth), &map_cfg, &bank).unwrap();
        let query = loc.prepare_cloud(&q).unwrap();
        let est = loc.localize_pair(&query, &kf).unwrap();
        let rot_corr = circular_xcorr_1d(&kf.spectrum, &query.spectrum).unwrap();
        let qbev = bevloc_core::map_store::scan_to_bev(&q, &map_cfg);
        let plane = neural_plane(&rotate_grid(&qbev, est.pose.theta), &bank, &filter).unwrap();
        let trans_corr = xcorr_2d(&kf.neural, &plane).unwrap();
        let loss = |theta: f64, dx: i64, dy: i64| {
            rotation_kl_loss(&rot_corr, theta, DEFAULT_SIGMA_BINS) + translation_nll_loss(&trans_corr, dx, dy).unwrap()
        };
        let (sx, sy) = est.shift_cells;
        let at_pipeline = loss(est.pose.theta, sx, sy);
        for _ in 0..10 {
            // offsets near 0 or π leave the bimodal target unchanged
            let k = rng.gen_range(3..n_theta / 2 - 3) as f64;
            let sign = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let (ox, oy) = loop {
                let o = (rng.gen_range(-8..=8i64), rng.gen_range(-8..=8i64));
                if o.0.abs().max(o.1.abs()) >= 2 {
                    break o;
                }
            };
            total += 1;
            if at_pipeline < loss(est.pose.theta + sign * k * bin, sx + ox, sy + oy) {
                wins += 1;
            }
        }
    }
    let rate = wins as f64 / total as f64;
    outcome(
        "loss_oracles",
        kl_matched < 1e-9 && nll_err < 1e-9 && rate >= 0.95,
        format!("kl at matched target {kl_matched:.2e}, |nll - ln N| {nll_err:.2e}, pipeline beats perturbed {wins}/{total}"),
    )
}

fn refinement() -> Outcome {
    let map_cfg = MapConfig::default();
    let loc_cfg = LocalizerConfig::for_map(&map_cfg);
    let loc = Localizer::new(&map_cfg, loc_cfg).unwrap();
    let bank = map_cfg.bank();
    let icp_cfg = loc_cfg.icp(map_cfg.ground_z_m);
    let world = generate_world(5, 400.0, 600);
    let model = ScanModel {
        max_range_m: 40.0,
        dropout_rate: 0.2,
        noise_sigma_m: 0.05,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut score_ok, mut residual_ok, mut pairs) = (0usize, 0usize, 0usize);
    for i in 0..30u64 {
        let a = Pose2::new(rng.gen_range(0.0..TAU), rng.gen_range(-120.0..120.0), rng.gen_range(-120.0..120.0));
        let b = Pose2::new(rng.gen_range(0.0..TAU), a.x + rng.gen_range(-8.0..8.0), a.y + rng.gen_range(-8.0..8.0));
        let map_cloud = render_scan(&world, &a, &model, derive_seed(5, 1, i));
        let query_cloud = render_scan(&world, &b, &model, derive_seed(5, 2, i));
        let kf = Keyframe::from_cloud(0, a, &map_cloud, &map_cfg, &bank).unwrap();
        let query = loc.prepare_cloud(&query_cloud).unwrap();
        let coarse = loc.localize_pair(&query, &kf).unwrap();
        let refined = loc.refine_pose(&query, &kf, &coarse).unwrap();
        let icp = icp_refine(&query_cloud, &map_cloud, &refined.pose, &icp_cfg);
        pairs += 1;
        score_ok += (refined.translation_score >= coarse.translation_score) as usize;
        residual_ok += icp.residuals.windows(2).all(|w| w[1] <= w[0]) as usize;
    }
    let (mut recovered, mut trials) = (0usize, 0usize);
    let mut worst = (0.0f64, 0.0f64);
    for seed in 0..30u64 {
        let q = interior_scan(derive_seed(9, 80, seed), 35.0);
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let phi = r.gen_range(0.0..TAU);
        let sign = if r.gen_bool(0.5) { 1.0 } else { -1.0 };
        let truth = Pose2::new(sign * 5f64.to_radians(), 0.5 * phi.cos(), 0.5 * phi.sin());
        let res = icp_refine(&q, &q.transform(&truth), &Pose2::identity(), &icp_cfg);
        let re = angular_distance(res.pose.theta, truth.theta).to_degrees();
        let te = res.pose.distance_xy(&truth);
        worst = (worst.0.max(re), worst.1.max(te));
        trials += 1;
        residual_ok += res.residuals.windows(2).all(|w| w[1] <= w[0]) as usize;
        recovered += (re < 0.5 && te < 0.05) as usize;
    }
    outcome(
        "refinement_monotonicity",
        score_ok == pairs && residual_ok == pairs + trials && recovered == trials,
        format!(
            "refine kept score {score_ok}/{pairs}, icp residual non-increasing {residual_ok}/{}, recovered {recovered}/{trials} (worst {:.3} deg, {:.4} m)",
            pairs + trials,
            worst.0,
            worst.1
        ),
    )
}

fn in_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .expect("thread pool")
        .install(f)
}

fn determinism() -> Outcome {
    let map_cfg = MapConfig::default();
    let loc_cfg = LocalizerConfig::for_map(&map_cfg);
    let cfg = ProtocolConfig {
        seed: 3,
        route_length_m: 120.0,
        ..Default::default()
    };
    let data = synthesize(&cfg);
    let mut maps = Vec::new();
    let mut reports = Vec::new();
    for threads in [1, 2, 4] {
        maps.push(in_pool(threads, || {
            encode_map(&build_map(&data.map_observations, cfg.map_interval_m, &map_cfg, Exec::Parallel).unwrap())
        }));
        let run = in_pool(threads, || run_protocol(&cfg, &map_cfg, &loc_cfg, Exec::Parallel).unwrap());
        let outcomes = serde_json::to_vec(&run.outcomes).unwrap();
        reports.push((outcomes, serde_json::to_vec(&run.sweep).unwrap(), sweep_csv(&run.sweep)));
    }
    let sequential = encode_map(&build_map(&data.map_observations, cfg.map_interval_m, &map_cfg, Exec::Sequential).unwrap());
    let maps_equal = maps.iter().all(|m| *m == maps[0]) && sequential == maps[0];
    let reports_equal = reports.iter().all(|r| *r == reports[0]);

    let db = decode_map(&maps[0]).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.bin");
    save_map(&db, &path).unwrap();
    let loaded = load_map(&path).unwrap();
    let round_trip = loaded == db && std::fs::read(&path).unwrap() == maps[0] && encode_map(&loaded) == maps[0];
    outcome(
        "determinism_persistence",
        maps_equal && reports_equal && round_trip,
        format!(
            "maps identical across 1/2/4 threads and sequential: {maps_equal}, reports identical: {reports_equal}, save/load bit-exact: {round_trip} ({} keyframes, {} bytes)",
            db.len(),
            maps[0].len()
        ),
    )
}

fn search_throughput() -> Outcome {
    let map_cfg = MapConfig::default();
    let loc = Localizer::new(&map_cfg, LocalizerConfig::for_map(&map_cfg)).unwrap();
    let world = generate_world(11, 400.0, 600);
    let model = ScanModel {
        max_range_m: 40.0,
        dropout_rate: 0.2,
        noise_sigma_m: 0.05,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let observations: Vec<_> = (0..100u64)
        .map(|i| {
            let pose = Pose2::new(rng.gen_range(0.0..TAU), rng.gen_range(-150.0..150.0), rng.gen_range(-150.0..150.0));
            bevloc_core::Observation {
                id: i,
                cloud: render_scan(&world, &pose, &model, derive_seed(11, 1, i)),
                pose,
            }
        })
        .collect();
    let db = build_map(&observations, 1e-3, &map_cfg, Exec::Parallel).unwrap();
    let query_pose = Pose2::new(PI / 3.0, observations[42].pose.x + 3.0, observations[42].pose.y - 2.0);
    let cloud = render_scan(&world, &query_pose, &model, 99);
    let t = Instant::now();
    let query = loc.prepare_cloud(&cloud).unwrap();
    let ranked = loc.search(&query, &db, Exec::Parallel).unwrap();
    let secs = t.elapsed().as_secs_f64();
    outcome(
        "search_throughput",
        db.len() == 100 && ranked.entries.len() == 100 && secs < 2.0,
        format!(
            "{} keyframes at {}x{} in {secs:.3}s on {} threads",
            db.len(),
            map_cfg.grid.side_cells,
            map_cfg.grid.side_cells,
            rayon::current_num_threads()
        ),
    )
}

fn main() {
    let t = Instant::now();
    let mut results = vec![fft_oracles(), spectrum_invariance(), translation_recovery(), radon_vs_polar()];
    let (runs, secs) = protocol_runs();
    results.push(protocol(&runs, &secs));
    results.push(revisit_sweep(&runs));
    results.push(loss_oracles());
    results.push(refinement());
    results.push(determinism());
    results.push(search_throughput());
    let mut failed = 0;
    for (i, r) in results.iter().enumerate() {
        println!("{} {:>2} {}: {}", if r.passed { "PASS" } else { "FAIL" }, i + 1, r.name, r.detail);
        failed += (!r.passed) as usize;
    }
    println!(
        "{} of {} criteria passed in {:.1}s",
        results.len() - failed,
        results.len(),
        t.elapsed().as_secs_f64()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
