//! Planar ICP on ground-removed XY projections. Map points on locally linear
//! structure contribute point-to-line terms, the rest point-to-point terms.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::geometry::{PointCloud, Pose2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IcpConfig {
    pub ground_z_m: f64,
    pub max_iters: usize,
    /// Stop once an accepted step lowers the residual by less than this.
    pub tol_m: f64,
    /// Pairs farther apart are ignored; also the residual truncation.
    pub max_corr_m: f64,
    /// XY deduplication cell; 0 keeps every point.
    pub voxel_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IcpResult {
    pub pose: Pose2,
    pub degenerate: bool,
    pub iterations: usize,
    /// Truncated RMS at the final gate: initial pose, then each accepted step.
    pub residuals: Vec<f64>,
}

impl IcpResult {
    pub fn final_residual(&self) -> f64 {
        *self.residuals.last().unwrap_or(&f64::INFINITY)
    }
}

fn project(cloud: &PointCloud, ground_z_m: f64, voxel_m: f64) -> Vec<[f64; 2]> {
    let mut seen = HashSet::new();
    cloud
        .points
        .iter()
        .filter(|p| p[2] > ground_z_m)
        .filter(|p| {
            voxel_m <= 0.0 || seen.insert(((p[0] / voxel_m).floor() as i64, (p[1] / voxel_m).floor() as i64))
        })
        .map(|p| [p[0], p[1]])
        .collect()
}

/// True when the points are (numerically) collinear or too few.
fn is_degenerate(pts: &[[f64; 2]]) -> bool {
    if pts.len() < 3 {
        return true;
    }
    let n = pts.len() as f64;
    let (mx, my) = pts.iter().fold((0.0, 0.0), |(a, b), p| (a + p[0] / n, b + p[1] / n));
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for p in pts {
        let (dx, dy) = (p[0] - mx, p[1] - my);
        sxx += dx * dx / n;
        sxy += dx * dy / n;
        syy += dy * dy / n;
    }
    let tr = sxx + syy;
    let det = sxx * syy - sxy * sxy;
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let (lmax, lmin) = (tr / 2.0 + disc, tr / 2.0 - disc);
    lmax <= 0.0 || lmin <= 1e-6 * lmax
}

struct BucketGrid<'a> {
    pts: &'a [[f64; 2]],
    cell: f64,
    buckets: HashMap<(i64, i64), Vec<usize>>,
}

impl<'a> BucketGrid<'a> {
    fn new(pts: &'a [[f64; 2]], cell: f64) -> Self {
        let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
        for (i, p) in pts.iter().enumerate() {
            buckets.entry(Self::key(p, cell)).or_default().push(i);
        }
        Self { pts, cell, buckets }
    }

    fn key(p: &[f64; 2], cell: f64) -> (i64, i64) {
        ((p[0] / cell).floor() as i64, (p[1] / cell).floor() as i64)
    }

    /// Nearest point within one cell size; ties go to the lower index.
    fn nearest(&self, p: &[f64; 2]) -> Option<(usize, f64)> {
        let (kx, ky) = Self::key(p, self.cell);
        let mut best: Option<(usize, f64)> = None;
        for dx in -1..=1 {
            for dy in -1..=1 {
                let Some(ids) = self.buckets.get(&(kx + dx, ky + dy)) else { continue };
                for &i in ids {
                    let q = self.pts[i];
                    let d2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2);
                    let better = match best {
                        None => true,
                        Some((bi, bd)) => d2 < bd || (d2 == bd && i < bi),
                    };
                    if better {
                        best = Some((i, d2));
                    }
                }
            }
        }
        best.map(|(i, d2)| (i, d2.sqrt())).filter(|&(_, d)| d <= self.cell)
    }
}

/// Unit normal of the line through the neighbours of each point, `None` where
/// the neighbourhood is too small or not elongated.
fn line_normals(pts: &[[f64; 2]], radius: f64) -> Vec<Option<[f64; 2]>> {
    let grid = BucketGrid::new(pts, radius);
    let r2 = radius * radius;
    pts.iter()
        .map(|p| {
            let (kx, ky) = BucketGrid::key(p, radius);
            let mut near = Vec::new();
            for dx in -1..=1 {
                for dy in -1..=1 {
                    if let Some(ids) = grid.buckets.get(&(kx + dx, ky + dy)) {
                        near.extend(
                            ids.iter()
                                .map(|&i| pts[i])
                                .filter(|q| (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) <= r2),
                        );
                    }
                }
            }
            if near.len() < 4 {
                return None;
            }
            let n = near.len() as f64;
            let (mx, my) = near.iter().fold((0.0, 0.0), |(a, b), q| (a + q[0] / n, b + q[1] / n));
            let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
            for q in &near {
                let (dx, dy) = (q[0] - mx, q[1] - my);
                sxx += dx * dx;
                sxy += dx * dy;
                syy += dy * dy;
            }
            let tr = sxx + syy;
            let disc = ((sxx - syy).powi(2) / 4.0 + sxy * sxy).sqrt();
            let (lmax, lmin) = (tr / 2.0 + disc, tr / 2.0 - disc);
            if lmax <= 0.0 || lmin > LINEARITY * lmax {
                return None;
            }
            // eigenvector of the smaller eigenvalue
            let (nx, ny) = if sxy.abs() > 1e-12 * tr {
                (sxy, lmin - sxx)
            } else if sxx < syy {
                (1.0, 0.0)
            } else {
                (0.0, 1.0)
            };
            let norm = (nx * nx + ny * ny).sqrt();
            Some([nx / norm, ny / norm])
        })
        .collect()
}

/// Eigenvalue ratio below which a neighbourhood counts as a line.
const LINEARITY: f64 = 0.05;

/// A query point in the map frame matched to a map point.
struct Pair {
    x: [f64; 2],
    target: [f64; 2],
    normal: Option<[f64; 2]>,
}

impl Pair {
    fn squared_error(&self) -> f64 {
        let d = [self.x[0] - self.target[0], self.x[1] - self.target[1]];
        match self.normal {
            Some(n) => (n[0] * d[0] + n[1] * d[1]).powi(2),
            None => d[0] * d[0] + d[1] * d[1],
        }
    }
}

/// Truncated RMS residual and the inlier pairs.
fn evaluate(src: &[[f64; 2]], tree: &BucketGrid<'_>, normals: &[Option<[f64; 2]>], pose: &Pose2) -> (f64, Vec<Pair>) {
    let gate2 = tree.cell * tree.cell;
    let mut total = 0.0;
    let mut pairs = Vec::new();
    for p in src {
        let (x, y) = pose.apply(p[0], p[1]);
        match tree.nearest(&[x, y]) {
            Some((i, _)) => {
                let pair = Pair {
                    x: [x, y],
                    target: tree.pts[i],
                    normal: normals[i],
                };
                total += pair.squared_error().min(gate2);
                pairs.push(pair);
            }
            None => total += gate2,
        }
    }
    ((total / src.len() as f64).sqrt(), pairs)
}

/// Gauss-Newton step: the small motion applied after the current pose that
/// minimizes the linearized pair errors.
fn solve(pairs: &[Pair]) -> Pose2 {
    let mut a = [[0.0f64; 3]; 3];
    let mut b = [0.0f64; 3];
    let mut add = |j: [f64; 3], e: f64| {
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] += j[r] * j[c];
            }
            b[r] -= j[r] * e;
        }
    };
    for p in pairs {
        let d = [p.x[0] - p.target[0], p.x[1] - p.target[1]];
        // derivative of the moved point with respect to the rotation
        let dr = [-p.x[1], p.x[0]];
        match p.normal {
            Some(n) => add([n[0] * dr[0] + n[1] * dr[1], n[0], n[1]], n[0] * d[0] + n[1] * d[1]),
            None => {
                add([dr[0], 1.0, 0.0], d[0]);
                add([dr[1], 0.0, 1.0], d[1]);
            }
        }
    }
    let damp = 1e-9 * (a[0][0] + a[1][1] + a[2][2]).max(1e-300);
    for (i, row) in a.iter_mut().enumerate() {
        row[i] += damp;
    }
    let x = solve3(a, b);
    Pose2::new(x[0], x[1], x[2])
}

/// Gaussian elimination with partial pivoting on a 3×3 system.
fn solve3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> [f64; 3] {
    for col in 0..3 {
        let piv = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        if a[col][col] == 0.0 {
            return [0.0; 3];
        }
        for r in col + 1..3 {
            let f = a[r][col] / a[col][col];
            for c in col..3 {
                a[r][c] -= f * a[col][c];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = [0.0; 3];
    for r in (0..3).rev() {
        let tail: f64 = (r + 1..3).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - tail) / a[r][r];
    }
    x
}

const GATE_LEVELS: u32 = 3;
const NORMAL_RADIUS_M: f64 = 1.0;

/// Refines `init` (query → map) so the projected query points land on the
/// map points. A step is accepted only if it lowers the residual.
pub fn icp_refine(query: &PointCloud, map: &PointCloud, init: &Pose2, cfg: &IcpConfig) -> IcpResult {
    let src = project(query, cfg.ground_z_m, cfg.voxel_m);
    let dst = project(map, cfg.ground_z_m, cfg.voxel_m);
    if is_degenerate(&src) || is_degenerate(&dst) {
        return IcpResult {
            pose: *init,
            degenerate: true,
            iterations: 0,
            residuals: Vec::new(),
        };
    }
    let normals = line_normals(&dst, NORMAL_RADIUS_M.max(5.0 * cfg.voxel_m));
    let mut pose = *init;
    let mut iterations = 0;
    // Residuals are always reported at the final gate. Coarser gates widen
    // the basin, but a step is kept only if it also lowers that residual.
    let fine = BucketGrid::new(&dst, cfg.max_corr_m);
    let (mut reported, _) = evaluate(&src, &fine, &normals, &pose);
    let mut residuals = vec![reported];
    for level in (0..GATE_LEVELS).rev() {
        let coarse = (level > 0).then(|| BucketGrid::new(&dst, cfg.max_corr_m * (1 << level) as f64));
        let tree = coarse.as_ref().unwrap_or(&fine);
        let (mut residual, mut pairs) = evaluate(&src, tree, &normals, &pose);
        let mut level_iters = 0;
        while level_iters < cfg.max_iters && pairs.len() >= 3 {
            level_iters += 1;
            let candidate = solve(&pairs).compose(&pose);
            let (r, p) = evaluate(&src, tree, &normals, &candidate);
            if r >= residual {
                break;
            }
            let r_fine = if coarse.is_some() { evaluate(&src, &fine, &normals, &candidate).0 } else { r };
            if r_fine >= reported {
                break;
            }
            let gain = residual - r;
            pose = candidate;
            residual = r;
            pairs = p;
            reported = r_fine;
            residuals.push(r_fine);
            if gain < cfg.tol_m {
                break;
            }
        }
        iterations += level_iters;
    }
    IcpResult {
        pose,
        degenerate: false,
        iterations,
        residuals,
    }
}
