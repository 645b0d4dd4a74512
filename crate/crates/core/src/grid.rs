//! Sensor-centered square BEV grids: rasterization and resampling.
//!
//! Cell `(row, col)` covers `x ∈ [col·s − W/2, (col+1)·s − W/2)` and the
//! analogous interval in `y` for `row`, where `s` is the cell size and `W`
//! the metric extent. The sensor origin sits on the corner shared by the four
//! central cells, so quarter turns permute cells exactly.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::PointCloud;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("invalid grid spec: {0}")]
    InvalidSpec(&'static str),
    #[error("grid shape mismatch: {0}")]
    ShapeMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub side_cells: usize,
    pub cell_size_m: f64,
    pub z_min_m: f64,
    pub z_max_m: f64,
    pub n_z_channels: usize,
}

impl Default for GridSpec {
    /// 160 × 160 cells of 0.875 m, 20 height slabs over [0.3 m, 10 m).
    fn default() -> Self {
        Self {
            side_cells: 160,
            cell_size_m: 0.875,
            z_min_m: 0.3,
            z_max_m: 10.0,
            n_z_channels: 20,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<(), GridError> {
        if self.side_cells < 8 {
            return Err(GridError::InvalidSpec("side_cells must be at least 8"));
        }
        if !(self.cell_size_m > 0.0 && self.cell_size_m.is_finite()) {
            return Err(GridError::InvalidSpec("cell_size_m must be positive"));
        }
        if !(self.z_min_m < self.z_max_m) || !self.z_min_m.is_finite() || !self.z_max_m.is_finite()
        {
            return Err(GridError::InvalidSpec("z_min_m must be below z_max_m"));
        }
        if self.n_z_channels == 0 {
            return Err(GridError::InvalidSpec("n_z_channels must be positive"));
        }
        Ok(())
    }

    pub fn extent_m(&self) -> f64 {
        self.side_cells as f64 * self.cell_size_m
    }
}

/// Channel-interleaved `side × side × channels` array of nonnegative values.
#[derive(Debug, Clone, PartialEq)]
pub struct BevGrid {
    spec: GridSpec,
    channels: usize,
    data: Vec<f32>,
}

impl BevGrid {
    pub fn zeros(spec: GridSpec, channels: usize) -> Self {
        let n = spec.side_cells * spec.side_cells * channels;
        Self {
            spec,
            channels,
            data: vec![0.0; n],
        }
    }

    pub fn from_data(spec: GridSpec, channels: usize, data: Vec<f32>) -> Result<Self, GridError> {
        let expected = spec.side_cells * spec.side_cells * channels;
        if data.len() != expected {
            return Err(GridError::ShapeMismatch(format!(
                "expected {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            spec,
            channels,
            data,
        })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn side(&self) -> usize {
        self.spec.side_cells
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, row: usize, col: usize, ch: usize) -> usize {
        (row * self.spec.side_cells + col) * self.channels + ch
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> f32 {
        self.data[self.index(row, col, ch)]
    }

    pub fn set(&mut self, row: usize, col: usize, ch: usize, value: f32) {
        let i = self.index(row, col, ch);
        self.data[i] = value;
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().map(|&v| v as f64).sum()
    }

    pub fn channel_sum(&self, ch: usize) -> f64 {
        self.data
            .iter()
            .skip(ch)
            .step_by(self.channels)
            .map(|&v| v as f64)
            .sum()
    }

    pub fn same_shape(&self, other: &BevGrid) -> bool {
        self.spec.side_cells == other.spec.side_cells && self.channels == other.channels
    }

    /// Extracts one channel as a single-channel grid.
    pub fn channel(&self, ch: usize) -> BevGrid {
        let data = self.data.iter().skip(ch).step_by(self.channels).copied().collect();
        BevGrid {
            spec: self.spec,
            channels: 1,
            data,
        }
    }

    /// Weighted sum over channels.
    pub fn collapse(&self, weights: &[f64]) -> Result<BevGrid, GridError> {
        if weights.len() != self.channels {
            return Err(GridError::ShapeMismatch(format!(
                "{} weights for {} channels",
                weights.len(),
                self.channels
            )));
        }
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|cell| {
                cell.iter()
                    .zip(weights)
                    .map(|(&v, &w)| v as f64 * w)
                    .sum::<f64>() as f32
            })
            .collect();
        Ok(BevGrid {
            spec: self.spec,
            channels: 1,
            data,
        })
    }

    pub fn max_abs_diff(&self, other: &BevGrid) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max)
    }

    /// Distance in cells from the support's bounding box to the nearest border,
    /// or `None` for an all-zero grid.
    pub fn border_margin(&self) -> Option<usize> {
        let n = self.side();
        let mut margin: Option<usize> = None;
        for row in 0..n {
            for col in 0..n {
                let cell = &self.data[self.index(row, col, 0)..][..self.channels];
                if cell.iter().any(|&v| v != 0.0) {
                    let m = row.min(col).min(n - 1 - row).min(n - 1 - col);
                    margin = Some(margin.map_or(m, |cur| cur.min(m)));
                }
            }
        }
        margin
    }
}

/// Multi-channel occupancy: a cell is 1 iff at least one point falls in it.
pub fn voxelize_to_bev(cloud: &PointCloud, spec: &GridSpec) -> BevGrid {
    let mut grid = BevGrid::zeros(*spec, spec.n_z_channels);
    let half = spec.extent_m() / 2.0;
    let dz = (spec.z_max_m - spec.z_min_m) / spec.n_z_channels as f64;
    let n = spec.side_cells as i64;
    for p in &cloud.points {
        if !(p[2] >= spec.z_min_m && p[2] < spec.z_max_m) {
            continue;
        }
        let col = ((p[0] + half) / spec.cell_size_m).floor();
        let row = ((p[1] + half) / spec.cell_size_m).floor();
        let ch = ((p[2] - spec.z_min_m) / dz).floor();
        if !(col >= 0.0 && row >= 0.0 && (col as i64) < n && (row as i64) < n) {
            continue;
        }
        let ch = ch as usize;
        if ch >= spec.n_z_channels {
            continue;
        }
        grid.set(row as usize, col as usize, ch, 1.0);
    }
    grid
}

/// Bilinear taps around a continuous index-space position; out-of-range taps
/// are omitted (zero fill).
#[inline]
pub(crate) fn bilinear_taps(
    side: usize,
    col_f: f64,
    row_f: f64,
    mut visit: impl FnMut(usize, usize, f64),
) {
    let c0 = col_f.floor();
    let r0 = row_f.floor();
    let fx = col_f - c0;
    let fy = row_f - r0;
    let c0 = c0 as i64;
    let r0 = r0 as i64;
    let n = side as i64;
    if c0 < -1 || r0 < -1 || c0 >= n || r0 >= n {
        return;
    }
    let taps = [
        (r0, c0, (1.0 - fx) * (1.0 - fy)),
        (r0, c0 + 1, fx * (1.0 - fy)),
        (r0 + 1, c0, (1.0 - fx) * fy),
        (r0 + 1, c0 + 1, fx * fy),
    ];
    for (r, c, w) in taps {
        if r >= 0 && c >= 0 && r < n && c < n && w != 0.0 {
            visit(r as usize, c as usize, w);
        }
    }
}

/// Rotates the content counter-clockwise by `angle` about the grid center.
///
/// Each output cell samples the input at its center rotated by `-angle`,
/// bilinear, zero outside the grid. Channels are resampled independently.
pub fn rotate_grid(grid: &BevGrid, angle: f64) -> BevGrid {
    let n = grid.side();
    let ch = grid.channels();
    let (s, c) = angle.sin_cos();
    let center = n as f64 / 2.0;
    let mut out = BevGrid::zeros(*grid.spec(), ch);
    let mut acc = vec![0.0f64; ch];
    for row in 0..n {
        let v = row as f64 + 0.5 - center;
        for col in 0..n {
            let u = col as f64 + 0.5 - center;
            // R(-angle) · (u, v)
            let su = c * u + s * v;
            let sv = -s * u + c * v;
            acc.iter_mut().for_each(|a| *a = 0.0);
            bilinear_taps(n, su + center - 0.5, sv + center - 0.5, |r, cc, w| {
                let base = grid.index(r, cc, 0);
                for (a, &x) in acc.iter_mut().zip(&grid.data[base..base + ch]) {
                    *a += w * x as f64;
                }
            });
            let base = out.index(row, col, 0);
            for (o, &a) in out.data[base..base + ch].iter_mut().zip(&acc) {
                *o = a as f32;
            }
        }
    }
    out
}

/// Integer shift with zero fill: content moves `dx` columns (+x) and `dy`
/// rows (+y).
pub fn translate_grid(grid: &BevGrid, dx_cells: i64, dy_cells: i64) -> BevGrid {
    let n = grid.side() as i64;
    let ch = grid.channels();
    let mut out = BevGrid::zeros(*grid.spec(), ch);
    for row in 0..n {
        let src_row = row - dy_cells;
        if src_row < 0 || src_row >= n {
            continue;
        }
        for col in 0..n {
            let src_col = col - dx_cells;
            if src_col < 0 || src_col >= n {
                continue;
            }
            let src = grid.index(src_row as usize, src_col as usize, 0);
            let dst = out.index(row as usize, col as usize, 0);
            out.data[dst..dst + ch].copy_from_slice(&grid.data[src..src + ch]);
        }
    }
    out
}
