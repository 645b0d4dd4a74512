//! FFT-backed correlation kernels used as the rotation and translation
//! similarity functions.

use thiserror::Error;

use crate::fft::{self, C64};
use crate::grid::BevGrid;
use crate::repr::Spectrum;

#[derive(Debug, Error, PartialEq)]
pub enum CorrError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("expected single-channel grids")]
    NotSingleChannel,
}

/// `c(d)` for every circular θ-shift `d`.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrVector {
    pub values: Vec<f64>,
}

/// Full linear 2D correlation over signed shifts `|dx|, |dy| ≤ n - 1`,
/// stored row-major with `dy` as the row.
#[derive(Debug, Clone, PartialEq)]
pub struct CorrMap {
    n: usize,
    values: Vec<f64>,
}

impl CorrMap {
    pub fn from_values(n: usize, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), (2 * n - 1) * (2 * n - 1));
        Self { n, values }
    }

    /// Side length of the grids that were correlated.
    pub fn grid_side(&self) -> usize {
        self.n
    }

    pub fn width(&self) -> usize {
        2 * self.n - 1
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn max_shift(&self) -> i64 {
        self.n as i64 - 1
    }

    pub fn contains(&self, dx: i64, dy: i64) -> bool {
        dx.abs() <= self.max_shift() && dy.abs() <= self.max_shift()
    }

    pub fn flat_index(&self, dx: i64, dy: i64) -> usize {
        let m = self.max_shift();
        ((dy + m) as usize) * self.width() + (dx + m) as usize
    }

    pub fn shift_of(&self, flat: usize) -> (i64, i64) {
        let m = self.max_shift();
        ((flat % self.width()) as i64 - m, (flat / self.width()) as i64 - m)
    }

    pub fn get(&self, dx: i64, dy: i64) -> f64 {
        self.values[self.flat_index(dx, dy)]
    }

    pub fn scale(&self, factor: f64) -> CorrMap {
        CorrMap {
            n: self.n,
            values: self.values.iter().map(|v| v * factor).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeakResult<I> {
    pub score: f64,
    pub index: I,
}

/// `c(d) = Σ_θ Σ_ω a(θ, ω) · b((θ − d) mod n_theta, ω)`.
pub fn circular_xcorr_1d(a: &Spectrum, b: &Spectrum) -> Result<CorrVector, CorrError> {
    if !a.same_shape(b) {
        return Err(CorrError::ShapeMismatch(format!(
            "{}x{} vs {}x{}",
            a.n_theta(),
            a.n_omega(),
            b.n_theta(),
            b.n_omega()
        )));
    }
    let n = a.n_theta();
    let cols = a.n_omega();
    if n == 0 || cols == 0 {
        return Ok(CorrVector { values: vec![0.0; n] });
    }
    let fwd = fft::forward(n);
    // column-major copies so each ω column is one contiguous FFT
    let mut fa = vec![C64::new(0.0, 0.0); n * cols];
    let mut fb = fa.clone();
    for t in 0..n {
        for w in 0..cols {
            fa[w * n + t] = C64::new(a.get(t, w) as f64, 0.0);
            fb[w * n + t] = C64::new(b.get(t, w) as f64, 0.0);
        }
    }
    fwd.process(&mut fa);
    fwd.process(&mut fb);
    let mut acc = vec![C64::new(0.0, 0.0); n];
    for w in 0..cols {
        for (k, slot) in acc.iter_mut().enumerate() {
            *slot += fa[w * n + k] * fb[w * n + k].conj();
        }
    }
    fft::inverse(n).process(&mut acc);
    let scale = 1.0 / n as f64;
    Ok(CorrVector {
        values: acc.iter().map(|z| z.re * scale).collect(),
    })
}

/// Zero-padded 2D DFT of a single-channel grid, reusable across many
/// correlations against grids of the same size.
#[derive(Debug, Clone)]
pub struct PlaneSpectrum {
    n: usize,
    padded: usize,
    data: Vec<C64>,
}

impl PlaneSpectrum {
    /// Padding `2n`, enough for every linear shift.
    pub fn new(grid: &BevGrid) -> Result<Self, CorrError> {
        Self::with_padding(grid, 2 * grid.side())
    }

    /// Padding `padded ≥ n`; shifts with `|d| ≤ padded − n` are alias-free.
    pub fn with_padding(grid: &BevGrid, padded: usize) -> Result<Self, CorrError> {
        if grid.channels() != 1 {
            return Err(CorrError::NotSingleChannel);
        }
        let n = grid.side();
        if padded < n {
            return Err(CorrError::ShapeMismatch(format!("padding {padded} below side {n}")));
        }
        let p = padded;
        let mut data = vec![C64::new(0.0, 0.0); p * p];
        for row in 0..n {
            for col in 0..n {
                data[row * p + col] = C64::new(grid.get(row, col, 0) as f64, 0.0);
            }
        }
        fft::fft2(&mut data, p, p, false);
        Ok(Self { n, padded: p, data })
    }

    pub fn side(&self) -> usize {
        self.n
    }

    pub fn padded(&self) -> usize {
        self.padded
    }
}

/// Smallest length `≥ n` whose only prime factors are 2, 3 and 5.
pub fn fast_fft_len(n: usize) -> usize {
    let mut m = n.max(1);
    loop {
        let mut r = m;
        for f in [2, 3, 5] {
            while r % f == 0 {
                r /= f;
            }
        }
        if r == 1 {
            return m;
        }
        m += 1;
    }
}

/// Padding that makes shifts up to `max_shift` exact for side `n`.
pub fn padding_for(n: usize, max_shift: usize) -> usize {
    fast_fft_len(n + max_shift.min(n - 1))
}

/// Windowed peaks of `xcorr_2d(map, q1)` and `xcorr_2d(map, q2)` over
/// `|dx|, |dy| ≤ max_shift`.
///
/// Both real query planes share one complex transform: with `z = q1 + i·q2`,
/// `M(k)·Z(−k)` is the transform of `c1 + i·c2`.
pub fn xcorr_2d_peaks_packed(
    map: &PlaneSpectrum,
    q1: &BevGrid,
    q2: Option<&BevGrid>,
    max_shift: i64,
) -> Result<[PeakResult<(i64, i64)>; 2], CorrError> {
    let n = map.n;
    let p = map.padded;
    for q in std::iter::once(q1).chain(q2) {
        if q.channels() != 1 {
            return Err(CorrError::NotSingleChannel);
        }
        if q.side() != n {
            return Err(CorrError::ShapeMismatch(format!("{} vs {}", q.side(), n)));
        }
    }
    let m = max_shift.clamp(0, n as i64 - 1);
    if (p as i64) < n as i64 + m {
        return Err(CorrError::ShapeMismatch(format!("padding {p} too small for shift {m}")));
    }
    let mut z = vec![C64::new(0.0, 0.0); p * p];
    for row in 0..n {
        for col in 0..n {
            let im = q2.map_or(0.0, |q| q.get(row, col, 0) as f64);
            z[row * p + col] = C64::new(q1.get(row, col, 0) as f64, im);
        }
    }
    fft::fft2(&mut z, p, p, false);
    let mut prod = vec![C64::new(0.0, 0.0); p * p];
    for r in 0..p {
        let nr = (p - r) % p;
        for c in 0..p {
            let nc = (p - c) % p;
            prod[r * p + c] = map.data[r * p + c] * z[nr * p + nc];
        }
    }
    fft::fft2(&mut prod, p, p, true);
    let scale = 1.0 / (p * p) as f64;
    let empty = PeakResult {
        score: f64::NEG_INFINITY,
        index: (0, 0),
    };
    let mut best = [empty, empty];
    for dy in -m..=m {
        let row = dy.rem_euclid(p as i64) as usize;
        for dx in -m..=m {
            let v = prod[row * p + dx.rem_euclid(p as i64) as usize] * scale;
            if v.re > best[0].score {
                best[0] = PeakResult { score: v.re, index: (dx, dy) };
            }
            if v.im > best[1].score {
                best[1] = PeakResult { score: v.im, index: (dx, dy) };
            }
        }
    }
    if q2.is_none() {
        best[1] = best[0];
    }
    Ok(best)
}

/// Correlation of two precomputed plane spectra; see [`xcorr_2d`].
pub fn xcorr_2d_spectra(a: &PlaneSpectrum, b: &PlaneSpectrum) -> Result<CorrMap, CorrError> {
    if a.n != b.n {
        return Err(CorrError::ShapeMismatch(format!("{} vs {}", a.n, b.n)));
    }
    let p = a.padded;
    let mut prod: Vec<C64> = a.data.iter().zip(&b.data).map(|(x, y)| x * y.conj()).collect();
    fft::fft2(&mut prod, p, p, true);
    let n = a.n as i64;
    let width = (2 * n - 1) as usize;
    let scale = 1.0 / (p * p) as f64;
    let mut values = vec![0.0; width * width];
    for dy in -(n - 1)..n {
        let src_row = dy.rem_euclid(p as i64) as usize;
        for dx in -(n - 1)..n {
            let src_col = dx.rem_euclid(p as i64) as usize;
            values[((dy + n - 1) as usize) * width + (dx + n - 1) as usize] =
                prod[src_row * p + src_col].re * scale;
        }
    }
    Ok(CorrMap::from_values(a.n, values))
}

/// Linear 2D cross-correlation `c(dx, dy) = Σ a(x, y) · b(x − dx, y − dy)`.
///
/// If `a` is `b` translated by `(p, q)` cells the peak sits at `(p, q)`.
pub fn xcorr_2d(a: &BevGrid, b: &BevGrid) -> Result<CorrMap, CorrError> {
    if a.side() != b.side() {
        return Err(CorrError::ShapeMismatch(format!("{} vs {}", a.side(), b.side())));
    }
    xcorr_2d_spectra(&PlaneSpectrum::new(a)?, &PlaneSpectrum::new(b)?)
}

/// Largest value and its first index in scan order.
pub fn peak(values: &[f64]) -> Option<PeakResult<usize>> {
    let mut best: Option<PeakResult<usize>> = None;
    for (i, &v) in values.iter().enumerate() {
        if best.map_or(true, |b| v > b.score) {
            best = Some(PeakResult { score: v, index: i });
        }
    }
    best
}

pub fn peak_1d(corr: &CorrVector) -> Option<PeakResult<usize>> {
    peak(&corr.values)
}

/// Peak over shifts with `|dx|, |dy| ≤ max_shift`, first in row-major order.
pub fn peak_2d(corr: &CorrMap, max_shift: i64) -> PeakResult<(i64, i64)> {
    let m = max_shift.clamp(0, corr.max_shift());
    let mut best = PeakResult {
        score: f64::NEG_INFINITY,
        index: (0, 0),
    };
    for dy in -m..=m {
        for dx in -m..=m {
            let v = corr.get(dx, dy);
            if v > best.score {
                best = PeakResult { score: v, index: (dx, dy) };
            }
        }
    }
    best
}

/// Max-subtracted softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `ln Σ exp(v)`, stable.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
