//! Deterministic synthetic worlds of walls, boxes and poles, scan rendering
//! and routes through them.

use std::f64::consts::{PI, TAU};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{PointCloud, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Structure {
    Wall { x0: f64, y0: f64, x1: f64, y1: f64, height: f64 },
    Box { cx: f64, cy: f64, half_w: f64, half_l: f64, yaw: f64, height: f64 },
    Pole { x: f64, y: f64, radius: f64, height: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub seed: u64,
    pub extent_m: f64,
    pub structures: Vec<Structure>,
    pub points: Vec<[f64; 3]>,
}

const H_STEP: f64 = 0.3;
const V_STEP: f64 = 0.4;

/// Samples a vertical segment from `a` to `b` whose top follows a gentle
/// random profile, so height slabs carry information.
fn vertical_face(out: &mut Vec<[f64; 3]>, a: (f64, f64), b: (f64, f64), height: f64, phase: f64) {
    let len = ((b.0 - a.0).powi(2) + (b.1 - a.1).powi(2)).sqrt();
    let n = (len / H_STEP).ceil().max(1.0) as usize;
    for i in 0..=n {
        let t = i as f64 / n as f64;
        let (x, y) = (a.0 + t * (b.0 - a.0), a.1 + t * (b.1 - a.1));
        let top = height * (0.75 + 0.25 * (phase + 0.7 * t * len).sin().abs());
        let mut z = 0.0;
        while z <= top {
            out.push([x, y, z]);
            z += V_STEP;
        }
    }
}

fn sample_structure(s: &Structure, phase: f64, out: &mut Vec<[f64; 3]>) {
    match *s {
        Structure::Wall { x0, y0, x1, y1, height } => vertical_face(out, (x0, y0), (x1, y1), height, phase),
        Structure::Box {
            cx,
            cy,
            half_w,
            half_l,
            yaw,
            height,
        } => {
            let (sn, cs) = yaw.sin_cos();
            let corner = |u: f64, v: f64| (cx + cs * u - sn * v, cy + sn * u + cs * v);
            let c = [
                corner(-half_l, -half_w),
                corner(half_l, -half_w),
                corner(half_l, half_w),
                corner(-half_l, half_w),
            ];
            for i in 0..4 {
                vertical_face(out, c[i], c[(i + 1) % 4], height, phase + i as f64);
            }
        }
        Structure::Pole { x, y, radius, height } => {
            let n = ((TAU * radius / H_STEP).ceil() as usize).max(4);
            for k in 0..n {
                let a = TAU * k as f64 / n as f64;
                let mut z = 0.0;
                while z <= height {
                    out.push([x + radius * a.cos(), y + radius * a.sin(), z]);
                    z += V_STEP;
                }
            }
        }
    }
}

/// A square world `[−extent/2, extent/2]²` with `n_structures` structures.
pub fn generate_world(seed: u64, extent_m: f64, n_structures: usize) -> World {
    assert!(extent_m > 0.0, "extent must be positive");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let half = extent_m / 2.0;
    let mut structures = Vec::with_capacity(n_structures);
    let mut points = Vec::new();
    for _ in 0..n_structures {
        let (x, y) = (rng.gen_range(-half..half), rng.gen_range(-half..half));
        let kind = rng.gen_range(0..10);
        let s = if kind < 4 {
            let len = rng.gen_range(4.0..20.0);
            let a: f64 = rng.gen_range(0.0..PI);
            Structure::Wall {
                x0: x,
                y0: y,
                x1: x + len * a.cos(),
                y1: y + len * a.sin(),
                height: rng.gen_range(1.5..9.0),
            }
        } else if kind < 7 {
            Structure::Box {
                cx: x,
                cy: y,
                half_w: rng.gen_range(1.0..6.0),
                half_l: rng.gen_range(1.5..10.0),
                yaw: rng.gen_range(0.0..PI),
                height: rng.gen_range(2.0..9.5),
            }
        } else {
            Structure::Pole {
                x,
                y,
                radius: rng.gen_range(0.15..0.6),
                height: rng.gen_range(3.0..9.5),
            }
        };
        let phase = rng.gen_range(0.0..TAU);
        sample_structure(&s, phase, &mut points);
        structures.push(s);
    }
    World {
        seed,
        extent_m,
        structures,
        points,
    }
}

/// Scan noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScanModel {
    pub max_range_m: f64,
    pub dropout_rate: f64,
    pub noise_sigma_m: f64,
}

/// World points within `max_range_m` (XY) of `pose`, expressed in the sensor
/// frame, each dropped with probability `dropout_rate` and perturbed by
/// isotropic Gaussian noise.
pub fn render_scan(world: &World, pose: &Pose2, model: &ScanModel, seed: u64) -> PointCloud {
    assert!((0.0..=1.0).contains(&model.dropout_rate), "dropout rate must lie in [0, 1]");
    assert!(model.noise_sigma_m >= 0.0, "noise sigma must be nonnegative");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, model.noise_sigma_m).expect("valid sigma");
    let inv = pose.inverse();
    let r2 = model.max_range_m * model.max_range_m;
    let mut points = Vec::new();
    for p in &world.points {
        let (dx, dy) = (p[0] - pose.x, p[1] - pose.y);
        if dx * dx + dy * dy > r2 {
            continue;
        }
        if model.dropout_rate > 0.0 && rng.gen::<f64>() < model.dropout_rate {
            continue;
        }
        let (x, y) = inv.apply(p[0], p[1]);
        let mut q = [x, y, p[2]];
        if model.noise_sigma_m > 0.0 {
            for v in &mut q {
                *v += noise.sample(&mut rng);
            }
        }
        points.push(q);
    }
    PointCloud::new(points)
}

/// Smooth random walk kept `margin_m` inside the world; poses every
/// `step_m`, heading along the direction of travel. Empty for a zero length.
pub fn random_route(seed: u64, extent_m: f64, length_m: f64, step_m: f64, margin_m: f64) -> Vec<Pose2> {
    if length_m <= 0.0 || step_m <= 0.0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let turn = Normal::new(0.0, 0.06 * step_m.sqrt()).expect("valid sigma");
    let lim = extent_m / 2.0 - margin_m;
    let start = 0.25 * lim;
    let (mut x, mut y) = (rng.gen_range(-start..start), rng.gen_range(-start..start));
    let mut heading: f64 = rng.gen_range(0.0..TAU);
    let n = (length_m / step_m).floor() as usize;
    let mut out = Vec::with_capacity(n + 1);
    out.push(Pose2::new(heading, x, y));
    for _ in 0..n {
        heading += turn.sample(&mut rng);
        let (nx, ny) = (x + step_m * heading.cos(), y + step_m * heading.sin());
        if nx.abs() > lim || ny.abs() > lim {
            // steer back toward the middle
            let target = (-y).atan2(-x);
            let diff = (target - heading + PI).rem_euclid(TAU) - PI;
            heading += diff.clamp(-0.5, 0.5);
        }
        x += step_m * heading.cos();
        y += step_m * heading.sin();
        out.push(Pose2::new(heading, x, y));
    }
    out
}

/// Points along a polyline at arc lengths `offset + k·interval`.
pub fn resample_route(route: &[Pose2], offset_m: f64, interval_m: f64) -> Vec<Pose2> {
    let mut out = Vec::new();
    if route.len() < 2 || interval_m <= 0.0 {
        return out;
    }
    let mut target = offset_m;
    let mut walked = 0.0;
    for w in route.windows(2) {
        let seg = w[0].distance_xy(&w[1]);
        while seg > 0.0 && target <= walked + seg {
            let t = (target - walked) / seg;
            let x = w[0].x + t * (w[1].x - w[0].x);
            let y = w[0].y + t * (w[1].y - w[0].y);
            let heading = (w[1].y - w[0].y).atan2(w[1].x - w[0].x);
            out.push(Pose2::new(heading, x, y));
            target += interval_m;
        }
        walked += seg;
    }
    out
}

/// Noise-free scan of a small random world, support within `radius_m` of
/// the sensor.
pub fn interior_scan(seed: u64, radius_m: f64) -> PointCloud {
    let extent = 2.0 * radius_m + 10.0;
    let n = ((extent * extent) * 600.0 / 160_000.0).round().max(8.0) as usize;
    let world = generate_world(seed, extent, n);
    let model = ScanModel {
        max_range_m: radius_m,
        dropout_rate: 0.0,
        noise_sigma_m: 0.0,
    };
    render_scan(&world, &Pose2::identity(), &model, seed)
}

/// Per-item seed derived from a base seed and a stream label.
pub fn derive_seed(base: u64, stream: u64, index: u64) -> u64 {
    let mut z = base ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ index.wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
