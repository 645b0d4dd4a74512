//! Planar rigid motions and raw point clouds.

use std::f64::consts::{PI, TAU};

use serde::{Deserialize, Serialize};

/// Wraps an angle into `[0, 2π)`.
pub fn wrap_angle(theta: f64) -> f64 {
    let t = theta.rem_euclid(TAU);
    // rem_euclid rounds tiny negatives up to exactly 2π
    if t >= TAU {
        0.0
    } else {
        t
    }
}

/// Smallest absolute angle between two headings, in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = wrap_angle(a - b);
    if d > PI {
        TAU - d
    } else {
        d
    }
}

/// An SE(2) pose: rotation `theta` followed by translation `(x, y)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose2 {
    pub theta: f64,
    pub x: f64,
    pub y: f64,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2 {
    pub fn new(theta: f64, x: f64, y: f64) -> Self {
        Self {
            theta: wrap_angle(theta),
            x,
            y,
        }
    }

    pub const fn identity() -> Self {
        Self {
            theta: 0.0,
            x: 0.0,
            y: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.theta.is_finite() && self.x.is_finite() && self.y.is_finite()
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        let (s, c) = self.theta.sin_cos();
        (c * x - s * y + self.x, s * x + c * y + self.y)
    }

    /// `self · other`: first `other`, then `self`.
    pub fn compose(&self, other: &Pose2) -> Pose2 {
        let (x, y) = self.apply(other.x, other.y);
        Pose2::new(self.theta + other.theta, x, y)
    }

    pub fn inverse(&self) -> Pose2 {
        let (s, c) = self.theta.sin_cos();
        Pose2::new(-self.theta, -(c * self.x + s * self.y), s * self.x - c * self.y)
    }

    pub fn distance_xy(&self, other: &Pose2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// Global pose of a query from the map pose of a keyframe and the
/// keyframe-relative pose of the query.
pub fn compose_global_pose(map_pose: &Pose2, relative: &Pose2) -> Pose2 {
    map_pose.compose(relative)
}

/// Points in the sensor frame, meters.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<[f64; 3]>,
}

impl PointCloud {
    pub fn new(points: Vec<[f64; 3]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }

    /// Keeps only points strictly above `ground_z_m`, preserving order.
    pub fn remove_ground(&self, ground_z_m: f64) -> PointCloud {
        PointCloud::new(
            self.points
                .iter()
                .copied()
                .filter(|p| p[2] > ground_z_m)
                .collect(),
        )
    }

    /// Applies `pose` to the XY components; z is untouched.
    pub fn transform(&self, pose: &Pose2) -> PointCloud {
        let (s, c) = pose.theta.sin_cos();
        PointCloud::new(
            self.points
                .iter()
                .map(|p| [c * p[0] - s * p[1] + pose.x, s * p[0] + c * p[1] + pose.y, p[2]])
                .collect(),
        )
    }

    pub fn extend_from(&mut self, other: &PointCloud) {
        self.points.extend_from_slice(&other.points);
    }
}

pub fn remove_ground(cloud: &PointCloud, ground_z_m: f64) -> PointCloud {
    cloud.remove_ground(ground_z_m)
}

pub fn transform_cloud(cloud: &PointCloud, pose: &Pose2) -> PointCloud {
    cloud.transform(pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn matrix(p: &Pose2) -> [[f64; 3]; 3] {
        let (s, c) = p.theta.sin_cos();
        [[c, -s, p.x], [s, c, p.y], [0.0, 0.0, 1.0]]
    }

    fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
            }
        }
        out
    }

    #[test]
    fn wrap_handles_negative_epsilon() {
        assert_eq!(wrap_angle(-1e-18), 0.0);
        assert!((wrap_angle(-PI / 2.0) - 1.5 * PI).abs() < 1e-15);
        assert!(wrap_angle(TAU) < 1e-12);
    }

    #[test]
    fn remove_ground_threshold() {
        let c = PointCloud::new(vec![[0.0, 0.0, -0.1], [0.0, 0.0, 1.0]]);
        assert_eq!(c.remove_ground(0.0).points, vec![[0.0, 0.0, 1.0]]);
        assert!(PointCloud::default().remove_ground(0.0).is_empty());
    }

    #[test]
    fn remove_ground_median_keeps_half() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let pts: Vec<[f64; 3]> = (0..1000).map(|_| [0.0, 0.0, rng.gen_range(-2.0..5.0)]).collect();
        let mut zs: Vec<f64> = pts.iter().map(|p| p[2]).collect();
        zs.sort_by(f64::total_cmp);
        let median = 0.5 * (zs[499] + zs[500]);
        let kept = PointCloud::new(pts.clone()).remove_ground(median);
        let oracle = pts.iter().filter(|p| p[2] > median).count();
        assert_eq!(kept.len(), oracle);
        assert!((475..=525).contains(&kept.len()));
    }

    #[test]
    fn half_turn() {
        let c = PointCloud::new(vec![[1.0, 0.0, 2.5]]);
        let t = c.transform(&Pose2::new(PI, 0.0, 0.0));
        assert!((t.points[0][0] + 1.0).abs() < 1e-12);
        assert!(t.points[0][1].abs() < 1e-12);
        assert_eq!(t.points[0][2], 2.5);
        assert_eq!(c.transform(&Pose2::identity()), c);
    }

    #[test]
    fn compose_identities() {
        let p = Pose2::new(1.2, 3.0, -4.0);
        assert_eq!(compose_global_pose(&p, &Pose2::identity()), p);
        let q = compose_global_pose(&Pose2::identity(), &p);
        assert!((q.theta - p.theta).abs() < 1e-15 && q.x == p.x && q.y == p.y);
    }

    proptest! {
        #[test]
        fn compose_matches_matrix_product(
            a in (0.0..TAU, -50.0..50.0f64, -50.0..50.0f64),
            b in (0.0..TAU, -50.0..50.0f64, -50.0..50.0f64),
        ) {
            let pa = Pose2::new(a.0, a.1, a.2);
            let pb = Pose2::new(b.0, b.1, b.2);
            let m = matmul(&matrix(&pa), &matrix(&pb));
            let c = pa.compose(&pb);
            let mc = matrix(&c);
            for i in 0..2 {
                for j in 0..3 {
                    prop_assert!((m[i][j] - mc[i][j]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn transform_round_trip(
            pose in (0.0..TAU, -100.0..100.0f64, -100.0..100.0f64),
            pts in prop::collection::vec((-80.0..80.0f64, -80.0..80.0f64, -3.0..10.0f64), 1..50),
        ) {
            let pose = Pose2::new(pose.0, pose.1, pose.2);
            let cloud = PointCloud::new(pts.iter().map(|p| [p.0, p.1, p.2]).collect());
            let back = cloud.transform(&pose).transform(&pose.inverse());
            for (a, b) in cloud.points.iter().zip(&back.points) {
                for k in 0..3 {
                    prop_assert!((a[k] - b[k]).abs() < 1e-9);
                }
            }
        }
    }
}
