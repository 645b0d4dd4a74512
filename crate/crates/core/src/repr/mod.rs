//! Rotation- and translation-equivariant BEV representations.
//!
//! Two pathways are built from a multi-channel BEV grid:
//!
//! * the **rotation spectrum**: Radon transform → channel aggregation and a
//!   fixed θ-convolution → per-row Fourier magnitude along τ. Rotating the
//!   input circularly shifts the rows; translating it only shifts each row
//!   along τ, which the magnitude discards.
//! * the **neural BEV plane**: channel aggregation followed by a fixed 2D
//!   convolution. After rotation compensation it is translation equivariant,
//!   so 2D correlation recovers the shift.
//!
//! The polar transform is provided as the non-equivariant baseline.

mod filter;

pub use filter::{BankSpec, FilterBank};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fft::{self, C64};
use crate::grid::{bilinear_taps, BevGrid, GridError, GridSpec};

#[derive(Debug, Error, PartialEq)]
pub enum ReprError {
    #[error("invalid filter bank: {0}")]
    InvalidBank(&'static str),
    #[error("filter bank expects {bank} channels, input has {input}")]
    ChannelMismatch { bank: usize, input: usize },
    #[error("expected a single-channel input, got {0} channels")]
    NotSingleChannel(usize),
    #[error("invalid representation config: {0}")]
    InvalidConfig(&'static str),
    #[error(transparent)]
    Grid(#[from] GridError),
}

pub const DEFAULT_ANTIALIAS_SIGMA: f64 = 1.0;
pub const DEFAULT_PLANE_SIGMA: f64 = 1.0;

/// Sizes of the angular representations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReprConfig {
    pub n_theta: usize,
    pub n_tau: usize,
    pub n_omega: usize,
    pub bank: BankSpec,
    /// Gaussian pre-filter applied to the collapsed plane before angular
    /// resampling; suppresses aliasing of sub-cell line offsets. 0 disables.
    pub antialias_sigma_cells: f64,
    /// Gaussian applied to the translation-branch planes; makes the
    /// correlation peak tolerant to sub-bin rotation error. 0 disables.
    pub plane_sigma_cells: f64,
    /// Std-dev of a Gaussian weight on distance from the grid center applied
    /// to the translation-branch planes. 0 disables.
    pub plane_window_cells: f64,
}

impl ReprConfig {
    /// `side` angle bins over [0, 2π), `side` one-cell offset bins, the
    /// lowest quarter of the non-DC frequencies, and a plane window of
    /// `side / 8` cells.
    pub fn for_grid(spec: &GridSpec) -> Self {
        let n = spec.side_cells;
        Self {
            n_theta: n + n % 2,
            n_tau: n,
            n_omega: n / 4,
            bank: BankSpec::Uniform,
            antialias_sigma_cells: DEFAULT_ANTIALIAS_SIGMA,
            plane_sigma_cells: DEFAULT_PLANE_SIGMA,
            plane_window_cells: n as f64 / 8.0,
        }
    }

    pub fn validate(&self) -> Result<(), ReprError> {
        if self.n_theta < 4 || self.n_theta % 2 != 0 {
            return Err(ReprError::InvalidConfig("n_theta must be even and at least 4"));
        }
        if self.n_tau < 4 {
            return Err(ReprError::InvalidConfig("n_tau must be at least 4"));
        }
        if self.n_omega == 0 || self.n_omega >= self.n_tau {
            return Err(ReprError::InvalidConfig("n_omega must lie in [1, n_tau)"));
        }
        if !(self.antialias_sigma_cells >= 0.0 && self.antialias_sigma_cells.is_finite()) {
            return Err(ReprError::InvalidConfig("antialias_sigma_cells must be finite and nonnegative"));
        }
        if !(self.plane_sigma_cells >= 0.0 && self.plane_sigma_cells.is_finite()) {
            return Err(ReprError::InvalidConfig("plane_sigma_cells must be finite and nonnegative"));
        }
        if !(self.plane_window_cells >= 0.0 && self.plane_window_cells.is_finite()) {
            return Err(ReprError::InvalidConfig("plane_window_cells must be finite and nonnegative"));
        }
        Ok(())
    }

    pub fn plane_filter(&self) -> PlaneFilter {
        PlaneFilter {
            sigma_cells: self.plane_sigma_cells,
            window_cells: self.plane_window_cells,
        }
    }

    pub fn theta_step(&self) -> f64 {
        std::f64::consts::TAU / self.n_theta as f64
    }
}

/// Rows indexed by angle over [0, 2π), columns by a second coordinate (signed
/// line offset τ for a sinogram, radius for a polar grid), channels last.
#[derive(Debug, Clone, PartialEq)]
pub struct AngularGrid {
    n_theta: usize,
    n_bins: usize,
    channels: usize,
    data: Vec<f32>,
}

/// Radon-space representation `S(θ, τ)`.
pub type Sinogram = AngularGrid;
/// Polar resampling `p(θ, r)`.
pub type PolarGrid = AngularGrid;

impl AngularGrid {
    pub fn zeros(n_theta: usize, n_bins: usize, channels: usize) -> Self {
        Self {
            n_theta,
            n_bins,
            channels,
            data: vec![0.0; n_theta * n_bins * channels],
        }
    }

    pub fn from_data(n_theta: usize, n_bins: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n_theta * n_bins * channels);
        Self {
            n_theta,
            n_bins,
            channels,
            data,
        }
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn index(&self, t: usize, b: usize, ch: usize) -> usize {
        (t * self.n_bins + b) * self.channels + ch
    }

    pub fn get(&self, t: usize, b: usize, ch: usize) -> f32 {
        self.data[self.index(t, b, ch)]
    }

    pub fn set(&mut self, t: usize, b: usize, ch: usize, v: f32) {
        let i = self.index(t, b, ch);
        self.data[i] = v;
    }

    pub fn max_value(&self) -> f32 {
        self.data.iter().copied().fold(0.0, f32::max)
    }

    /// Circular shift along θ: row `t` of the result is row `t - shift`.
    pub fn shift_theta(&self, shift: i64) -> AngularGrid {
        let mut out = Self::zeros(self.n_theta, self.n_bins, self.channels);
        let row = self.n_bins * self.channels;
        for t in 0..self.n_theta {
            let src = (t as i64 - shift).rem_euclid(self.n_theta as i64) as usize;
            out.data[t * row..(t + 1) * row].copy_from_slice(&self.data[src * row..(src + 1) * row]);
        }
        out
    }
}

/// Per-row Fourier magnitudes `A(θ, ω)`, DC dropped.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    n_theta: usize,
    n_omega: usize,
    data: Vec<f32>,
}

impl Spectrum {
    pub fn from_data(n_theta: usize, n_omega: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), n_theta * n_omega);
        Self {
            n_theta,
            n_omega,
            data,
        }
    }

    pub fn n_theta(&self) -> usize {
        self.n_theta
    }

    pub fn n_omega(&self) -> usize {
        self.n_omega
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, t: usize, w: usize) -> f32 {
        self.data[t * self.n_omega + w]
    }

    pub fn same_shape(&self, other: &Spectrum) -> bool {
        self.n_theta == other.n_theta && self.n_omega == other.n_omega
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }

    /// Unit L2 norm; an all-zero spectrum is returned unchanged.
    pub fn normalized(&self) -> Spectrum {
        self.scaled_by(self.l2_norm())
    }

    /// Divides by the largest entry; an all-zero spectrum is returned unchanged.
    pub fn max_normalized(&self) -> Spectrum {
        let m = self.data.iter().copied().fold(0.0f32, f32::max) as f64;
        self.scaled_by(m)
    }

    fn scaled_by(&self, denom: f64) -> Spectrum {
        if denom <= 0.0 {
            return self.clone();
        }
        Spectrum {
            n_theta: self.n_theta,
            n_omega: self.n_omega,
            data: self.data.iter().map(|&v| (v as f64 / denom) as f32).collect(),
        }
    }

    pub fn scale(&self, factor: f64) -> Spectrum {
        Spectrum {
            n_theta: self.n_theta,
            n_omega: self.n_omega,
            data: self.data.iter().map(|&v| (v as f64 * factor) as f32).collect(),
        }
    }

    /// Circular row shift: row `t` of the result is row `t - shift`.
    pub fn shift_theta(&self, shift: i64) -> Spectrum {
        let mut data = vec![0.0; self.data.len()];
        for t in 0..self.n_theta {
            let src = (t as i64 - shift).rem_euclid(self.n_theta as i64) as usize;
            data[t * self.n_omega..(t + 1) * self.n_omega]
                .copy_from_slice(&self.data[src * self.n_omega..(src + 1) * self.n_omega]);
        }
        Spectrum {
            n_theta: self.n_theta,
            n_omega: self.n_omega,
            data,
        }
    }

    pub fn max_abs_diff(&self, other: &Spectrum) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).abs())
            .fold(0.0, f64::max)
    }

    /// `‖self − other‖₂`.
    pub fn l2_distance(&self, other: &Spectrum) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Radon transform with `side` angles over [0, 2π) and `side` offset bins.
pub fn radon_transform(grid: &BevGrid) -> Sinogram {
    let n = grid.side();
    radon_transform_with(grid, n + n % 2, n)
}

/// Rotate-and-sum Radon transform.
///
/// Row `k` (θ_k = 2πk / n_theta) holds the column sums of the grid rotated by
/// `-θ_k`, sampled on an `n_tau × n_tau` one-cell frame centered on the grid.
/// Rows `k` and `k + n_theta/2` sample point-reflected positions, so the second
/// half is the τ-reversal of the first.
pub fn radon_transform_with(grid: &BevGrid, n_theta: usize, n_tau: usize) -> Sinogram {
    assert!(n_theta % 2 == 0, "n_theta must be even");
    let side = grid.side();
    let ch = grid.channels();
    let data = grid.data();
    let half_frame = n_tau as f64 / 2.0;
    let offset = side as f64 / 2.0 - 0.5;
    let mut sino = Sinogram::zeros(n_theta, n_tau, ch);
    let mut row_acc = vec![0.0f64; n_tau * ch];
    for k in 0..n_theta / 2 {
        let theta = std::f64::consts::TAU * k as f64 / n_theta as f64;
        let (s, c) = theta.sin_cos();
        row_acc.iter_mut().for_each(|a| *a = 0.0);
        for u in 0..n_tau {
            let px = u as f64 + 0.5 - half_frame;
            let acc = &mut row_acc[u * ch..(u + 1) * ch];
            for v in 0..n_tau {
                let py = v as f64 + 0.5 - half_frame;
                let qx = c * px - s * py;
                let qy = s * px + c * py;
                bilinear_taps(side, qx + offset, qy + offset, |r, cc, w| {
                    let base = (r * side + cc) * ch;
                    for (a, &x) in acc.iter_mut().zip(&data[base..base + ch]) {
                        *a += w * x as f64;
                    }
                });
            }
        }
        let mirror = k + n_theta / 2;
        for u in 0..n_tau {
            for c_i in 0..ch {
                let v = row_acc[u * ch + c_i] as f32;
                sino.set(k, u, c_i, v);
                sino.set(mirror, n_tau - 1 - u, c_i, v);
            }
        }
    }
    sino
}

/// Polar resampling with `side` angles over [0, 2π) and `side/2` radii of
/// one cell spacing starting at the grid center.
pub fn polar_transform(grid: &BevGrid) -> PolarGrid {
    let n = grid.side();
    polar_transform_with(grid, n + n % 2, n / 2)
}

pub fn polar_transform_with(grid: &BevGrid, n_theta: usize, n_r: usize) -> PolarGrid {
    let side = grid.side();
    let ch = grid.channels();
    let offset = side as f64 / 2.0 - 0.5;
    let mut out = PolarGrid::zeros(n_theta, n_r, ch);
    let mut acc = vec![0.0f64; ch];
    for t in 0..n_theta {
        let (s, c) = (std::f64::consts::TAU * t as f64 / n_theta as f64).sin_cos();
        for j in 0..n_r {
            let r = j as f64;
            acc.iter_mut().for_each(|a| *a = 0.0);
            bilinear_taps(side, r * c + offset, r * s + offset, |row, col, w| {
                let base = grid.index(row, col, 0);
                for (a, &x) in acc.iter_mut().zip(&grid.data()[base..base + ch]) {
                    *a += w * x as f64;
                }
            });
            for (c_i, &a) in acc.iter().enumerate() {
                out.set(t, j, c_i, a as f32);
            }
        }
    }
    out
}

/// Circular correlation-form convolution along θ of a single-channel grid.
fn theta_convolve(input: &AngularGrid, kernel: &[f64]) -> AngularGrid {
    debug_assert_eq!(input.channels, 1);
    if kernel.len() == 1 && kernel[0] == 1.0 {
        return input.clone();
    }
    let n = input.n_theta as i64;
    let half = (kernel.len() / 2) as i64;
    let mut out = AngularGrid::zeros(input.n_theta, input.n_bins, 1);
    for t in 0..input.n_theta {
        for b in 0..input.n_bins {
            let mut acc = 0.0f64;
            for (j, &h) in kernel.iter().enumerate() {
                let src = (t as i64 + j as i64 - half).rem_euclid(n) as usize;
                acc += h * input.get(src, b, 0) as f64;
            }
            out.set(t, b, 0, acc as f32);
        }
    }
    out
}

/// Weighted channel sum followed by the bank's circular θ kernel.
pub fn aggregate_channels(sino: &AngularGrid, bank: &FilterBank) -> Result<AngularGrid, ReprError> {
    bank.check_channels(sino.channels)?;
    let w = bank.weights();
    let data = sino
        .data
        .chunks_exact(sino.channels)
        .map(|cell| cell.iter().zip(w).map(|(&v, &w)| v as f64 * w).sum::<f64>() as f32)
        .collect();
    let summed = AngularGrid::from_data(sino.n_theta, sino.n_bins, 1, data);
    Ok(theta_convolve(&summed, bank.theta_kernel()))
}

/// Per-row DFT magnitudes along the second axis, keeping bins `1..=n_omega`.
pub fn magnitude_spectrum(sino: &AngularGrid, n_omega: usize) -> Result<Spectrum, ReprError> {
    if sino.channels != 1 {
        return Err(ReprError::NotSingleChannel(sino.channels));
    }
    if n_omega == 0 || n_omega >= sino.n_bins {
        return Err(ReprError::InvalidConfig("n_omega must lie in [1, n_bins)"));
    }
    let len = sino.n_bins;
    let mut buf: Vec<C64> = sino.data.iter().map(|&v| C64::new(v as f64, 0.0)).collect();
    if !buf.is_empty() {
        fft::forward(len).process(&mut buf);
    }
    let mut data = Vec::with_capacity(sino.n_theta * n_omega);
    for row in buf.chunks_exact(len) {
        data.extend(row[1..=n_omega].iter().map(|z| z.norm() as f32));
    }
    Ok(Spectrum::from_data(sino.n_theta, n_omega, data))
}

/// Weighted channel sum followed by the bank's 2D kernel (zero padding,
/// stride 1, same size).
pub fn neural_bev(grid: &BevGrid, bank: &FilterBank) -> Result<BevGrid, ReprError> {
    bank.check_channels(grid.channels())?;
    let plane = grid.collapse(bank.weights())?;
    Ok(plane_convolve(&plane, bank))
}

fn plane_convolve(plane: &BevGrid, bank: &FilterBank) -> BevGrid {
    let (kernel, k) = bank.plane_kernel();
    if k == 1 && kernel[0] == 1.0 {
        return plane.clone();
    }
    let n = plane.side() as i64;
    let half = (k / 2) as i64;
    let mut out = BevGrid::zeros(*plane.spec(), 1);
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0f64;
            for i in 0..k as i64 {
                let r = row + i - half;
                if r < 0 || r >= n {
                    continue;
                }
                for j in 0..k as i64 {
                    let c = col + j - half;
                    if c < 0 || c >= n {
                        continue;
                    }
                    acc += kernel[(i * k as i64 + j) as usize] * plane.get(r as usize, c as usize, 0) as f64;
                }
            }
            out.set(row as usize, col as usize, 0, acc as f32);
        }
    }
    out
}

/// Which angular resampling feeds the rotation spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngularTransform {
    Radon,
    Polar,
}

/// L2-normalized rotation spectrum of a multi-channel grid.
///
/// Channels are aggregated before the Radon transform; by linearity this
/// equals aggregating the per-channel sinogram, at a fraction of the cost.
pub fn rotation_spectrum(
    grid: &BevGrid,
    bank: &FilterBank,
    cfg: &ReprConfig,
) -> Result<Spectrum, ReprError> {
    angular_spectrum(grid, bank, cfg, AngularTransform::Radon)
}

pub fn angular_spectrum(
    grid: &BevGrid,
    bank: &FilterBank,
    cfg: &ReprConfig,
    kind: AngularTransform,
) -> Result<Spectrum, ReprError> {
    bank.check_channels(grid.channels())?;
    let plane = gaussian_smooth(&grid.collapse(bank.weights())?, cfg.antialias_sigma_cells);
    let (angular, n_omega) = match kind {
        AngularTransform::Radon => (radon_transform_with(&plane, cfg.n_theta, cfg.n_tau), cfg.n_omega),
        AngularTransform::Polar => {
            let n_r = grid.side() / 2;
            (polar_transform_with(&plane, cfg.n_theta, n_r), (n_r / 4).max(1))
        }
    };
    let filtered = theta_convolve(&angular, bank.theta_kernel());
    Ok(magnitude_spectrum(&filtered, n_omega)?.normalized())
}

/// Separable normalized Gaussian blur of a single-channel plane, zero
/// padding, radius `ceil(3σ)`.
pub fn gaussian_smooth(plane: &BevGrid, sigma: f64) -> BevGrid {
    debug_assert_eq!(plane.channels(), 1);
    if sigma <= 0.0 {
        return plane.clone();
    }
    let r = (3.0 * sigma).ceil() as i64;
    let raw: Vec<f64> = (-r..=r).map(|i| (-0.5 * (i as f64 / sigma).powi(2)).exp()).collect();
    let total: f64 = raw.iter().sum();
    let k: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let n = plane.side() as i64;
    let src = plane.data();
    let mut tmp = vec![0.0f64; src.len()];
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for (j, &h) in k.iter().enumerate() {
                let c = col + j as i64 - r;
                if (0..n).contains(&c) {
                    acc += h * src[(row * n + c) as usize] as f64;
                }
            }
            tmp[(row * n + col) as usize] = acc;
        }
    }
    let mut out = BevGrid::zeros(*plane.spec(), 1);
    let dst = out.data_mut();
    for row in 0..n {
        for col in 0..n {
            let mut acc = 0.0;
            for (j, &h) in k.iter().enumerate() {
                let rr = row + j as i64 - r;
                if (0..n).contains(&rr) {
                    acc += h * tmp[(rr * n + col) as usize];
                }
            }
            dst[(row * n + col) as usize] = acc as f32;
        }
    }
    out
}

/// Post-processing of translation-branch planes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneFilter {
    pub sigma_cells: f64,
    pub window_cells: f64,
}

impl PlaneFilter {
    pub const NONE: Self = Self {
        sigma_cells: 0.0,
        window_cells: 0.0,
    };

    /// Blur, radial window, then L2 normalization.
    pub fn apply(&self, plane: &BevGrid) -> BevGrid {
        normalize_plane(radial_window(gaussian_smooth(plane, self.sigma_cells), self.window_cells))
    }
}

/// Multiplies a plane by `exp(-r² / 2σ²)`, `r` the distance in cells from the
/// grid center. Rotation about the center commutes with it.
pub fn radial_window(mut plane: BevGrid, sigma: f64) -> BevGrid {
    if sigma <= 0.0 {
        return plane;
    }
    let n = plane.side();
    let ch = plane.channels();
    let center = n as f64 / 2.0;
    let k = -0.5 / (sigma * sigma);
    let data = plane.data_mut();
    for row in 0..n {
        let v = row as f64 + 0.5 - center;
        for col in 0..n {
            let u = col as f64 + 0.5 - center;
            let w = (k * (u * u + v * v)).exp();
            let base = (row * n + col) * ch;
            data[base..base + ch].iter_mut().for_each(|x| *x = (*x as f64 * w) as f32);
        }
    }
    plane
}

/// Translation-branch features of a grid after `filter`.
pub fn neural_plane(grid: &BevGrid, bank: &FilterBank, filter: &PlaneFilter) -> Result<BevGrid, ReprError> {
    Ok(filter.apply(&neural_bev(grid, bank)?))
}

/// Rotation-compensated translation features of a query: the aggregated plane
/// is rotated by `theta` before the 2D kernel, then filtered.
pub(crate) fn compensated_plane(collapsed: &BevGrid, theta: f64, bank: &FilterBank, filter: &PlaneFilter) -> BevGrid {
    let rotated = crate::grid::rotate_grid(collapsed, theta);
    filter.apply(&plane_convolve(&rotated, bank))
}

pub(crate) fn normalize_plane(mut plane: BevGrid) -> BevGrid {
    let norm = plane.data().iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    if norm > 0.0 {
        plane
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = (*v as f64 / norm) as f32);
    }
    plane
}
