use std::f64::consts::{FRAC_PI_2, PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::eval::synth::interior_scan;
use crate::exec::Exec;
use crate::geometry::angular_distance;
use crate::grid::{rotate_grid, translate_grid};
use crate::map_store::{scan_to_bev, Keyframe, KeyframeDatabase, MapConfig};
use crate::repr::ReprConfig;

fn small_cfg() -> MapConfig {
    let grid = GridSpec {
        side_cells: 64,
        cell_size_m: 1.0,
        z_min_m: 0.3,
        z_max_m: 10.0,
        n_z_channels: 8,
    };
    MapConfig {
        grid,
        repr: ReprConfig::for_grid(&grid),
        ground_z_m: 0.3,
    }
}

fn scene(seed: u64) -> PointCloud {
    interior_scan(seed, 18.0)
}

fn keyframe(id: u64, cloud: &PointCloud, cfg: &MapConfig) -> Keyframe {
    Keyframe::from_cloud(id, Pose2::identity(), cloud, cfg, &cfg.bank()).unwrap()
}

fn db_of(clouds: &[PointCloud], cfg: &MapConfig) -> KeyframeDatabase {
    let kfs = clouds.iter().enumerate().map(|(i, c)| keyframe(i as u64, c, cfg)).collect();
    KeyframeDatabase::new(*cfg, kfs).unwrap()
}

fn localizer(cfg: &MapConfig) -> Localizer {
    Localizer::new(cfg, LocalizerConfig::for_map(cfg)).unwrap()
}

fn spectrum(bev: &BevGrid, cfg: &MapConfig) -> Spectrum {
    rotation_spectrum(bev, &cfg.bank(), &cfg.repr).unwrap()
}

/// Angular error modulo the π-ambiguity of the rotation branch.
fn pi_error(estimate: f64, truth: f64) -> f64 {
    angular_distance(estimate, truth).min(angular_distance(estimate + PI, truth))
}

#[test]
fn rotation_of_identical_spectra_is_zero() {
    let cfg = small_cfg();
    let s = spectrum(&scan_to_bev(&scene(1), &cfg), &cfg);
    let r = estimate_rotation(&s, &s).unwrap();
    assert_eq!(r.bin, 0);
    assert_eq!(r.theta_hat, 0.0);
    assert!((r.theta_alt.abs() - PI).abs() < 1e-12);
}

#[test]
fn rotation_quarter_turn() {
    let cfg = small_cfg();
    let bev = scan_to_bev(&scene(2), &cfg);
    let r = estimate_rotation(&spectrum(&bev, &cfg), &spectrum(&rotate_grid(&bev, FRAC_PI_2), &cfg)).unwrap();
    let n = cfg.repr.n_theta;
    assert!(r.bin == n / 4 || r.bin == 3 * n / 4, "bin {}", r.bin);
}

#[test]
fn rotation_random_angles_within_one_bin() {
    let cfg = small_cfg();
    let step = cfg.repr.theta_step();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let trials = 40;
    let mut ok = 0;
    for i in 0..trials {
        let bev = scan_to_bev(&scene(100 + i), &cfg);
        let alpha = rng.gen_range(0.0..TAU);
        let r = estimate_rotation(&spectrum(&bev, &cfg), &spectrum(&rotate_grid(&bev, alpha), &cfg)).unwrap();
        if pi_error(r.theta_hat, alpha) <= step + 0.02 {
            ok += 1;
        }
    }
    assert!(ok as f64 >= 0.95 * trials as f64, "{ok}/{trials}");
}

#[test]
fn translation_identity_and_shift() {
    let cfg = small_cfg();
    let bank = cfg.bank();
    let bev = scan_to_bev(&scene(4), &cfg);
    let est = estimate_translation(&bev, &bev, 0.0, &bank, 32).unwrap();
    assert_eq!(est.shift_cells, (0, 0));
    let moved = translate_grid(&bev, 3, -2);
    let est = estimate_translation(&bev, &moved, 0.0, &bank, 32).unwrap();
    assert_eq!(est.shift_cells, (3, -2));
    assert_eq!((est.dx_m, est.dy_m), (3.0, -2.0));
    let other = GridSpec {
        side_cells: 32,
        ..cfg.grid
    };
    assert!(matches!(
        estimate_translation(&bev, &BevGrid::zeros(other, 8), 0.0, &bank, 8),
        Err(LocalizeError::SpecMismatch)
    ));
}

#[test]
fn pair_identity() {
    let cfg = small_cfg();
    let c = scene(5);
    let db = db_of(std::slice::from_ref(&c), &cfg);
    let kf = &db.keyframes()[0];
    let est = localize_pair(kf, kf, &db, &LocalizerConfig::for_map(&cfg)).unwrap();
    assert_eq!(est.shift_cells, (0, 0));
    assert!(angular_distance(est.pose.theta, 0.0) < 1e-12);
}

#[test]
fn pair_recovers_synthetic_transform() {
    let cfg = small_cfg();
    let loc = localizer(&cfg);
    let step = cfg.repr.theta_step();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for i in 0..10 {
        let q = scene(200 + i);
        let truth = Pose2::new(rng.gen_range(0.0..TAU), rng.gen_range(-6.0..6.0), rng.gen_range(-6.0..6.0));
        let kf = keyframe(0, &q.transform(&truth), &cfg);
        let query = loc.prepare_cloud(&q).unwrap();
        let coarse = loc.localize_pair(&query, &kf).unwrap();
        let refined = loc.refine_pose(&query, &kf, &coarse).unwrap();
        for est in [coarse, refined] {
            assert!(angular_distance(est.pose.theta, truth.theta) <= step, "trial {i}: {est:?} vs {truth:?}");
            assert!(est.pose.distance_xy(&truth) <= 1.5, "trial {i}: {est:?} vs {truth:?}");
        }
    }
}

#[test]
fn pair_scores_prefer_matching_scene() {
    let cfg = small_cfg();
    let loc = localizer(&cfg);
    let q = scene(7);
    let same = keyframe(0, &q.transform(&Pose2::new(1.0, 2.0, -1.0)), &cfg);
    let query = loc.prepare_cloud(&q).unwrap();
    let s_same = loc.localize_pair(&query, &same).unwrap().translation_score;
    for seed in 300..305 {
        let other = keyframe(1, &scene(seed), &cfg);
        let s_other = loc.localize_pair(&query, &other).unwrap().translation_score;
        assert!(s_other < s_same, "{s_other} >= {s_same}");
    }
}

#[test]
fn empty_observation_is_rejected() {
    let cfg = small_cfg();
    let loc = localizer(&cfg);
    assert!(matches!(loc.prepare_cloud(&PointCloud::default()), Err(LocalizeError::EmptyObservation)));
    let ground_only = PointCloud::new(vec![[1.0, 1.0, 0.1], [2.0, -3.0, 0.0]]);
    assert!(matches!(loc.prepare_cloud(&ground_only), Err(LocalizeError::EmptyObservation)));
}

#[test]
fn config_mismatch_is_rejected() {
    let cfg = small_cfg();
    let bad = LocalizerConfig {
        n_theta: cfg.repr.n_theta + 2,
        ..LocalizerConfig::for_map(&cfg)
    };
    assert!(Localizer::new(&cfg, bad).is_err());
    let bad_step = LocalizerConfig {
        refine_step_deg: 0.7,
        refine_window_deg: 1.0,
        ..LocalizerConfig::for_map(&cfg)
    };
    assert!(Localizer::new(&cfg, bad_step).is_err());
}

#[test]
fn search_ranks_self_first_and_is_deterministic() {
    let cfg = small_cfg();
    let clouds: Vec<PointCloud> = (400..408).map(scene).collect();
    let db = db_of(&clouds, &cfg);
    let lcfg = LocalizerConfig::for_map(&cfg);
    for kf in db.keyframes() {
        let seq = pr_by_pe_search(kf, &db, &lcfg, Exec::Sequential).unwrap();
        assert_eq!(seq.top().unwrap().id, kf.id);
        let par = pr_by_pe_search(kf, &db, &lcfg, Exec::Parallel).unwrap();
        assert_eq!(seq, par);
        let scores: Vec<f64> = seq.entries.iter().map(|e| e.estimate.translation_score).collect();
        assert!(scores.windows(2).all(|w| w[0] >= w[1]));
    }
}

#[test]
fn search_ignores_query_scale() {
    let cfg = small_cfg();
    let clouds: Vec<PointCloud> = (500..506).map(scene).collect();
    let db = db_of(&clouds, &cfg);
    let loc = localizer(&cfg);
    let bev = scan_to_bev(&scene(550), &cfg);
    let mut scaled = bev.clone();
    scaled.data_mut().iter_mut().for_each(|v| *v *= 3.0);
    let a = loc.search(&loc.prepare(&bev).unwrap(), &db, Exec::Sequential).unwrap();
    let b = loc.search(&loc.prepare(&scaled).unwrap(), &db, Exec::Sequential).unwrap();
    assert_eq!(a.ids(), b.ids());
    for (x, y) in a.entries.iter().zip(&b.entries) {
        assert!((x.estimate.translation_score - y.estimate.translation_score).abs() < 1e-5);
        assert_eq!(x.estimate.shift_cells, y.estimate.shift_cells);
    }
}

#[test]
fn search_rejects_empty_or_foreign_database() {
    let cfg = small_cfg();
    let loc = localizer(&cfg);
    let query = loc.prepare_cloud(&scene(9)).unwrap();
    let empty = KeyframeDatabase::new(cfg, vec![]).unwrap();
    assert!(matches!(loc.search(&query, &empty, Exec::Sequential), Err(LocalizeError::EmptyDatabase)));
    let other_cfg = MapConfig {
        ground_z_m: 0.5,
        ..cfg
    };
    let foreign = db_of(&[scene(9)], &other_cfg);
    assert!(loc.search(&query, &foreign, Exec::Sequential).is_err());
}

#[test]
fn refine_zero_window_keeps_coarse() {
    let cfg = small_cfg();
    let lcfg = LocalizerConfig {
        refine_window_deg: 0.0,
        ..LocalizerConfig::for_map(&cfg)
    };
    let loc = Localizer::new(&cfg, lcfg).unwrap();
    let q = scene(10);
    let kf = keyframe(0, &q.transform(&Pose2::new(0.3, 1.0, 2.0)), &cfg);
    let query = loc.prepare_cloud(&q).unwrap();
    let coarse = loc.localize_pair(&query, &kf).unwrap();
    assert_eq!(loc.refine_pose(&query, &kf, &coarse).unwrap(), coarse);
}

#[test]
fn refine_never_lowers_the_score() {
    let cfg = small_cfg();
    let lcfg = LocalizerConfig {
        refine_window_deg: 12.0,
        refine_step_deg: 1.5,
        ..LocalizerConfig::for_map(&cfg)
    };
    let loc = Localizer::new(&cfg, lcfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for i in 0..6 {
        let q = scene(600 + i);
        let truth = Pose2::new(rng.gen_range(0.0..TAU), rng.gen_range(-4.0..4.0), rng.gen_range(-4.0..4.0));
        let kf = keyframe(0, &q.transform(&truth), &cfg);
        let other = keyframe(1, &scene(700 + i), &cfg);
        let query = loc.prepare_cloud(&q).unwrap();
        for k in [&kf, &other] {
            let coarse = loc.localize_pair(&query, k).unwrap();
            let refined = loc.refine_pose(&query, k, &coarse).unwrap();
            assert!(refined.translation_score >= coarse.translation_score);
            assert!(angular_distance(refined.pose.theta, coarse.pose.theta) <= 12f64.to_radians() + 1e-9);
        }
    }
}

#[test]
fn refine_offsets_are_symmetric() {
    let cfg = LocalizerConfig {
        refine_window_deg: 2.0,
        refine_step_deg: 0.5,
        ..LocalizerConfig::for_map(&small_cfg())
    };
    let offs = cfg.refine_offsets_rad();
    assert_eq!(offs.len(), 9);
    assert_eq!(offs[4], 0.0);
    for i in 0..9 {
        assert!((offs[i] + offs[8 - i]).abs() < 1e-15);
    }
}

fn icp_cfg() -> IcpConfig {
    LocalizerConfig::for_map(&small_cfg()).icp(0.3)
}

#[test]
fn icp_fixed_point() {
    let c = interior_scan(12, 15.0);
    let r = icp_refine(&c, &c, &Pose2::identity(), &icp_cfg());
    assert!(!r.degenerate);
    assert!(r.pose.distance_xy(&Pose2::identity()) < 1e-9);
    assert!(angular_distance(r.pose.theta, 0.0) < 1e-9);
    assert!(r.final_residual() < 1e-9);
}

#[test]
fn icp_recovers_small_offset_and_residual_decreases() {
    let cfg = icp_cfg();
    for seed in 13..16 {
        let q = interior_scan(seed, 35.0);
        let truth = Pose2::new(5f64.to_radians(), 0.5, -0.3);
        let r = icp_refine(&q, &q.transform(&truth), &Pose2::identity(), &cfg);
        assert!(!r.degenerate);
        assert!(angular_distance(r.pose.theta, truth.theta) < 0.2f64.to_radians(), "{:?}", r.pose);
        assert!(r.pose.distance_xy(&truth) < 0.05, "{:?}", r.pose);
        assert!(r.residuals.windows(2).all(|w| w[1] < w[0]));
    }
}

#[test]
fn icp_residual_never_rises_on_partial_overlap() {
    use crate::eval::synth::{generate_world, render_scan, ScanModel};
    let cfg = LocalizerConfig::for_map(&MapConfig::default()).icp(0.3);
    let world = generate_world(5, 400.0, 600);
    let model = ScanModel {
        max_range_m: 40.0,
        dropout_rate: 0.2,
        noise_sigma_m: 0.05,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for i in 0..8 {
        let a = Pose2::new(rng.gen_range(0.0..TAU), rng.gen_range(-120.0..120.0), rng.gen_range(-120.0..120.0));
        let b = Pose2::new(rng.gen_range(0.0..TAU), a.x + rng.gen_range(-8.0..8.0), a.y + rng.gen_range(-8.0..8.0));
        let init = Pose2::new(rng.gen_range(-0.2..0.2), rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)).compose(&a.inverse().compose(&b));
        let r = icp_refine(&render_scan(&world, &b, &model, i), &render_scan(&world, &a, &model, 100 + i), &init, &cfg);
        assert!(r.residuals.windows(2).all(|w| w[1] <= w[0]), "trial {i}: {:?}", r.residuals);
    }
}

#[test]
fn icp_flags_degenerate_input() {
    let line = PointCloud::new((0..50).map(|i| [i as f64 * 0.5, 0.0, 1.0]).collect());
    let r = icp_refine(&line, &line, &Pose2::new(0.01, 0.1, 0.0), &icp_cfg());
    assert!(r.degenerate);
    let r = icp_refine(&PointCloud::default(), &line, &Pose2::identity(), &icp_cfg());
    assert!(r.degenerate);
    assert_eq!(r.pose, Pose2::identity());
}

#[test]
fn global_pose_composition() {
    let kf = Pose2::new(FRAC_PI_2, 10.0, 0.0);
    let rel = Pose2::new(0.0, 1.0, 0.0);
    let g = compose_global_pose(&kf, &rel);
    assert!((g.x - 10.0).abs() < 1e-12 && (g.y - 1.0).abs() < 1e-12);
    assert!((g.theta - FRAC_PI_2).abs() < 1e-12);
}
