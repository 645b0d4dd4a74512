use std::f64::consts::TAU;

use bevloc_core::eval::metrics::metrics_report;
use bevloc_core::eval::protocol::{evaluate_queries, run_protocol, ProtocolConfig};
use bevloc_core::eval::synth::{derive_seed, generate_world, interior_scan, random_route, render_scan, resample_route, ScanModel};
use bevloc_core::geometry::angular_distance;
use bevloc_core::map_store::Keyframe;
use bevloc_core::{build_map, load_map, save_map, Exec, Localizer, LocalizerConfig, MapConfig, Observation, Pose2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scan_model() -> ScanModel {
    ScanModel {
        max_range_m: 40.0,
        dropout_rate: 0.2,
        noise_sigma_m: 0.05,
    }
}

/// Keyframes every 25 m along a random route through a fresh world.
fn route_map(seed: u64, n: usize) -> (Vec<Observation>, bevloc_core::eval::synth::World) {
    let world = generate_world(seed, 400.0, 600);
    let route = random_route(derive_seed(seed, 1, 0), 400.0, 25.0 * n as f64, 1.0, 40.0);
    let obs = resample_route(&route, 0.0, 25.0)
        .into_iter()
        .take(n)
        .enumerate()
        .map(|(i, pose)| Observation {
            id: i as u64,
            cloud: render_scan(&world, &pose, &scan_model(), derive_seed(seed, 2, i as u64)),
            pose,
        })
        .collect();
    (obs, world)
}

#[test]
fn synthetic_transform_is_recovered_at_the_operating_point() {
    let cfg = MapConfig::default();
    let loc = Localizer::new(&cfg, LocalizerConfig::for_map(&cfg)).unwrap();
    let bank = cfg.bank();
    let tol_theta = cfg.repr.theta_step() + loc.config().refine_step_deg.to_radians();
    let tol_xy = 1.5 * cfg.grid.cell_size_m;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for i in 0..12 {
        let q = interior_scan(derive_seed(21, 0, i), 35.0);
        let truth = Pose2::new(rng.gen_range(0.0..TAU), rng.gen_range(-8.0..8.0), rng.gen_range(-8.0..8.0));
        let kf = Keyframe::from_cloud(0, Pose2::identity(), &q.transform(&truth), &cfg, &bank).unwrap();
        let query = loc.prepare_cloud(&q).unwrap();
        let coarse = loc.localize_pair(&query, &kf).unwrap();
        let refined = loc.refine_pose(&query, &kf, &coarse).unwrap();
        assert!(angular_distance(refined.pose.theta, truth.theta) <= tol_theta, "trial {i}: {refined:?} vs {truth:?}");
        assert!(refined.pose.distance_xy(&truth) <= tol_xy, "trial {i}: {refined:?} vs {truth:?}");
    }
}

#[test]
fn twenty_keyframes_rank_the_revisited_one_first() {
    let cfg = MapConfig::default();
    let loc = Localizer::new(&cfg, LocalizerConfig::for_map(&cfg)).unwrap();
    let seeds = 10;
    let mut hits = 0;
    for seed in 0..seeds {
        let (obs, world) = route_map(seed, 20);
        let db = build_map(&obs, 1e-3, &cfg, Exec::Parallel).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let target = &obs[rng.gen_range(0..obs.len())];
        let (r, phi) = (rng.gen_range(0.0..6.0), rng.gen_range(0.0..TAU));
        let pose = Pose2::new(rng.gen_range(0.0..TAU), target.pose.x + r * phi.cos(), target.pose.y + r * phi.sin());
        let within: Vec<u64> = obs.iter().filter(|o| o.pose.distance_xy(&pose) <= 10.0).map(|o| o.id).collect();
        assert_eq!(within, vec![target.id]);
        let cloud = render_scan(&world, &pose, &scan_model(), derive_seed(seed, 3, 0));
        let ranked = loc.search(&loc.prepare_cloud(&cloud).unwrap(), &db, Exec::Parallel).unwrap();
        hits += (ranked.top().unwrap().id == target.id) as usize;
    }
    assert!(hits as f64 >= 0.9 * seeds as f64, "{hits}/{seeds}");
}

#[test]
fn true_neighbour_outscores_a_foreign_world() {
    let cfg = MapConfig::default();
    let loc = Localizer::new(&cfg, LocalizerConfig::for_map(&cfg)).unwrap();
    let seeds = 20;
    let mut wins = 0;
    for seed in 0..seeds {
        let (own, world) = route_map(100 + seed, 1);
        let (foreign, _) = route_map(500 + seed, 8);
        let own_db = build_map(&own, 1e-3, &cfg, Exec::Parallel).unwrap();
        let foreign_db = build_map(&foreign, 1e-3, &cfg, Exec::Parallel).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = own[0].pose;
        let pose = Pose2::new(rng.gen_range(0.0..TAU), p.x + rng.gen_range(-4.0..4.0), p.y + rng.gen_range(-4.0..4.0));
        let query = loc.prepare_cloud(&render_scan(&world, &pose, &scan_model(), 9)).unwrap();
        let own_score = loc.search(&query, &own_db, Exec::Parallel).unwrap().entries[0].estimate.translation_score;
        let foreign_best = loc.search(&query, &foreign_db, Exec::Parallel).unwrap().entries[0].estimate.translation_score;
        wins += (own_score > foreign_best) as usize;
    }
    assert!(wins as f64 >= 0.95 * seeds as f64, "{wins}/{seeds}");
}

#[test]
fn short_protocol_is_policy_independent_and_sane() {
    let map_cfg = MapConfig::default();
    let loc_cfg = LocalizerConfig::for_map(&map_cfg);
    let cfg = ProtocolConfig {
        seed: 4,
        route_length_m: 100.0,
        ..Default::default()
    };
    let seq = run_protocol(&cfg, &map_cfg, &loc_cfg, Exec::Sequential).unwrap();
    let par = run_protocol(&cfg, &map_cfg, &loc_cfg, Exec::Parallel).unwrap();
    assert_eq!(seq.outcomes, par.outcomes);
    assert_eq!(seq.sweep, par.sweep);
    assert_eq!(seq.n_queries, 20);
    let at10 = seq.at_revisit(10.0).unwrap();
    assert!(at10.gl_succ_one_stage >= 0.8, "{at10:?}");
    for w in seq.sweep.windows(2) {
        assert!(w[1].recall_at_1() >= w[0].recall_at_1());
        assert_eq!(w[0].gl_succ_one_stage, w[1].gl_succ_one_stage);
    }
}

#[test]
fn keyframe_scans_as_queries_are_perfect_after_reload() {
    let cfg = MapConfig::default();
    let loc_cfg = LocalizerConfig::for_map(&cfg);
    let (obs, _) = route_map(8, 6);
    let db = build_map(&obs, 1e-3, &cfg, Exec::Parallel).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("map.bin");
    save_map(&db, &path).unwrap();
    let loaded = load_map(&path).unwrap();
    assert_eq!(loaded, db);
    let loc = Localizer::new(loaded.config(), loc_cfg).unwrap();
    let (outcomes, timings) = evaluate_queries(&loc, &loaded, &obs, None, 5, Exec::Parallel).unwrap();
    for o in &outcomes {
        assert_eq!(o.retrieved_id, o.query_id);
        let (re, te) = o.errors();
        assert!(re < 1e-6 && te < 1e-6, "{o:?}");
    }
    let report = metrics_report(&outcomes, 10.0, 5);
    assert_eq!(report.recall_at_1(), 1.0);
    assert_eq!(report.gl_succ_one_stage, 1.0);
    assert!(timings.representation_s > 0.0 && timings.search_s > 0.0);
}
