//! Pose estimation between a query and map keyframes, and the exhaustive
//! search in which the best pose score doubles as the place-recognition
//! result.

mod icp;
mod refine;
mod search;

pub use icp::{icp_refine, IcpConfig, IcpResult};
pub use refine::refine_pose;
pub use search::{pr_by_pe_search, Localization, RankedEntry, RankedRetrieval};

use std::f64::consts::{PI, TAU};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::correlation::{
    circular_xcorr_1d, padding_for, peak_1d, peak_2d, xcorr_2d, xcorr_2d_peaks_packed, CorrError,
};
use crate::geometry::{wrap_angle, PointCloud, Pose2};
use crate::grid::{BevGrid, GridSpec};
use crate::map_store::{scan_to_bev, Keyframe, KeyframeDatabase, MapConfig, MapError};
use crate::repr::{compensated_plane, neural_plane, rotation_spectrum, FilterBank, PlaneFilter, ReprError, Spectrum};

#[derive(Debug, Error)]
pub enum LocalizeError {
    #[error("database is empty")]
    EmptyDatabase,
    #[error("empty observation")]
    EmptyObservation,
    #[error("invalid localizer config: {0}")]
    InvalidConfig(String),
    #[error("grid spec mismatch")]
    SpecMismatch,
    #[error(transparent)]
    Corr(#[from] CorrError),
    #[error(transparent)]
    Repr(#[from] ReprError),
    #[error(transparent)]
    Map(#[from] MapError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalizerConfig {
    pub n_theta: usize,
    pub n_omega: usize,
    pub refine_window_deg: f64,
    pub refine_step_deg: f64,
    pub max_translation_cells: usize,
    pub icp_enabled: bool,
    pub icp_max_iters: usize,
    pub icp_tol_m: f64,
    pub icp_max_corr_m: f64,
    pub icp_voxel_m: f64,
}

impl LocalizerConfig {
    /// Refinement over ±1 θ-bin at a quarter-bin step; translation search
    /// over half the grid.
    pub fn for_map(cfg: &MapConfig) -> Self {
        let bin_deg = 360.0 / cfg.repr.n_theta as f64;
        Self {
            n_theta: cfg.repr.n_theta,
            n_omega: cfg.repr.n_omega,
            refine_window_deg: bin_deg,
            refine_step_deg: bin_deg / 4.0,
            max_translation_cells: cfg.grid.side_cells / 2,
            icp_enabled: false,
            icp_max_iters: 30,
            icp_tol_m: 1e-4,
            icp_max_corr_m: 1.5,
            icp_voxel_m: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), LocalizeError> {
        let bad = |m: &str| Err(LocalizeError::InvalidConfig(m.to_string()));
        if self.n_theta == 0 || self.n_omega == 0 {
            return bad("n_theta and n_omega must be positive");
        }
        if !(self.refine_window_deg >= 0.0 && self.refine_window_deg.is_finite()) {
            return bad("refine_window_deg must be nonnegative");
        }
        if !(self.refine_step_deg > 0.0 && self.refine_step_deg.is_finite()) {
            return bad("refine_step_deg must be positive");
        }
        let ratio = 2.0 * self.refine_window_deg / self.refine_step_deg;
        if (ratio - ratio.round()).abs() > 1e-6 {
            return bad("refine_step_deg must divide 2 * refine_window_deg");
        }
        if self.max_translation_cells == 0 {
            return bad("max_translation_cells must be positive");
        }
        if !(self.icp_tol_m > 0.0 && self.icp_max_corr_m > 0.0 && self.icp_voxel_m >= 0.0) || self.icp_max_iters == 0 {
            return bad("icp parameters must be positive");
        }
        Ok(())
    }

    pub fn icp(&self, ground_z_m: f64) -> IcpConfig {
        IcpConfig {
            ground_z_m,
            max_iters: self.icp_max_iters,
            tol_m: self.icp_tol_m,
            max_corr_m: self.icp_max_corr_m,
            voxel_m: self.icp_voxel_m,
        }
    }

    /// Candidate offsets `k · step` for `k ∈ [−K, K]`.
    pub fn refine_offsets_rad(&self) -> Vec<f64> {
        let k = (self.refine_window_deg / self.refine_step_deg + 1e-9).floor() as i64;
        (-k..=k).map(|i| (i as f64 * self.refine_step_deg).to_radians()).collect()
    }
}

/// Relative pose taking query coordinates into the keyframe frame, with the
/// branch scores.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairEstimate {
    pub pose: Pose2,
    pub rotation_score: f64,
    pub translation_score: f64,
    pub shift_cells: (i64, i64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationEstimate {
    pub theta_hat: f64,
    pub theta_alt: f64,
    pub score: f64,
    pub bin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TranslationEstimate {
    pub dx_m: f64,
    pub dy_m: f64,
    pub shift_cells: (i64, i64),
    pub score: f64,
}

/// Rotation from the peak of `c(d) = Σ a_m(θ)·a_q(θ − d)`; `theta_alt` is the
/// π-twin produced by the Radon point symmetry.
pub fn estimate_rotation(a_q: &Spectrum, a_m: &Spectrum) -> Result<RotationEstimate, LocalizeError> {
    let corr = circular_xcorr_1d(a_m, a_q)?;
    let p = peak_1d(&corr).ok_or(LocalizeError::InvalidConfig("empty spectrum".into()))?;
    let theta_hat = TAU * p.index as f64 / a_q.n_theta() as f64;
    Ok(RotationEstimate {
        theta_hat,
        theta_alt: wrap_angle(theta_hat + PI),
        score: p.score,
        bin: p.index,
    })
}

/// Rotates the query grid by `theta`, filters both grids with the bank alone
/// (no plane blur or window) and correlates. The returned shift moves the compensated
/// query onto the map grid.
pub fn estimate_translation(
    b_q: &BevGrid,
    b_m: &BevGrid,
    theta: f64,
    bank: &FilterBank,
    max_translation_cells: usize,
) -> Result<TranslationEstimate, LocalizeError> {
    if b_q.spec() != b_m.spec() || b_q.channels() != b_m.channels() {
        return Err(LocalizeError::SpecMismatch);
    }
    bank.check_channels(b_q.channels())?;
    let q = compensated_plane(&b_q.collapse(bank.weights()).map_err(ReprError::from)?, theta, bank, &PlaneFilter::NONE);
    let m = neural_plane(b_m, bank, &PlaneFilter::NONE)?;
    let p = peak_2d(&xcorr_2d(&m, &q)?, max_translation_cells as i64);
    let cs = b_q.spec().cell_size_m;
    Ok(TranslationEstimate {
        dx_m: p.index.0 as f64 * cs,
        dy_m: p.index.1 as f64 * cs,
        shift_cells: p.index,
        score: p.score,
    })
}

/// Query features reused across every keyframe comparison.
#[derive(Debug)]
pub struct PreparedQuery {
    pub spectrum: Spectrum,
    collapsed: BevGrid,
    filter: PlaneFilter,
    planes: Vec<OnceLock<BevGrid>>,
}

impl PreparedQuery {
    fn compensated(&self, theta: f64, bank: &FilterBank) -> BevGrid {
        compensated_plane(&self.collapsed, theta, bank, &self.filter)
    }

    /// Compensated plane for an exact θ-bin, memoized.
    fn compensated_bin(&self, bin: usize, bank: &FilterBank) -> &BevGrid {
        let theta = TAU * bin as f64 / self.planes.len() as f64;
        self.planes[bin].get_or_init(|| self.compensated(theta, bank))
    }
}

/// Search context: map configuration, filter bank and localizer settings.
#[derive(Debug, Clone)]
pub struct Localizer {
    map_cfg: MapConfig,
    bank: FilterBank,
    cfg: LocalizerConfig,
    padded: usize,
}

impl Localizer {
    pub fn new(map_cfg: &MapConfig, cfg: LocalizerConfig) -> Result<Self, LocalizeError> {
        map_cfg.validate()?;
        cfg.validate()?;
        if cfg.n_theta != map_cfg.repr.n_theta || cfg.n_omega != map_cfg.repr.n_omega {
            return Err(LocalizeError::InvalidConfig(
                "n_theta/n_omega differ from the map representation".into(),
            ));
        }
        let side = map_cfg.grid.side_cells;
        let max_shift = cfg.max_translation_cells.min(side - 1);
        Ok(Self {
            map_cfg: *map_cfg,
            bank: map_cfg.bank(),
            cfg: LocalizerConfig {
                max_translation_cells: max_shift,
                ..cfg
            },
            padded: padding_for(side, max_shift),
        })
    }

    pub fn map_config(&self) -> &MapConfig {
        &self.map_cfg
    }

    pub fn config(&self) -> &LocalizerConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    fn grid(&self) -> &GridSpec {
        &self.map_cfg.grid
    }

    pub fn prepare(&self, bev: &BevGrid) -> Result<PreparedQuery, LocalizeError> {
        if bev.spec() != self.grid() {
            return Err(LocalizeError::SpecMismatch);
        }
        Ok(PreparedQuery {
            spectrum: rotation_spectrum(bev, &self.bank, &self.map_cfg.repr)?,
            collapsed: bev.collapse(self.bank.weights()).map_err(ReprError::from)?,
            filter: self.map_cfg.repr.plane_filter(),
            planes: (0..self.cfg.n_theta).map(|_| OnceLock::new()).collect(),
        })
    }

    /// Rasterizes and prepares a scan; scans with no usable points are
    /// rejected.
    pub fn prepare_cloud(&self, cloud: &PointCloud) -> Result<PreparedQuery, LocalizeError> {
        let bev = scan_to_bev(cloud, &self.map_cfg);
        if bev.sum() == 0.0 {
            return Err(LocalizeError::EmptyObservation);
        }
        self.prepare(&bev)
    }

    fn to_estimate(&self, theta: f64, rotation_score: f64, peak: crate::correlation::PeakResult<(i64, i64)>) -> PairEstimate {
        let cs = self.grid().cell_size_m;
        PairEstimate {
            pose: Pose2::new(theta, peak.index.0 as f64 * cs, peak.index.1 as f64 * cs),
            rotation_score,
            translation_score: peak.score,
            shift_cells: peak.index,
        }
    }

    /// Rotation branch, then both π-hypotheses through the translation
    /// branch; the higher translation score wins, ties keep `theta_hat`.
    pub fn localize_pair(&self, query: &PreparedQuery, kf: &Keyframe) -> Result<PairEstimate, LocalizeError> {
        let rot = estimate_rotation(&query.spectrum, &kf.spectrum)?;
        let n = self.cfg.n_theta;
        let alt_bin = (rot.bin + n / 2) % n;
        let map = kf.plane_spectrum(self.padded);
        let [a, b] = xcorr_2d_peaks_packed(
            &map,
            query.compensated_bin(rot.bin, &self.bank),
            Some(query.compensated_bin(alt_bin, &self.bank)),
            self.cfg.max_translation_cells as i64,
        )?;
        Ok(if b.score > a.score {
            self.to_estimate(rot.theta_alt, rot.score, b)
        } else {
            self.to_estimate(rot.theta_hat, rot.score, a)
        })
    }

    /// Translation branch at arbitrary angles against one keyframe, two
    /// angles per transform.
    fn score_angles(
        &self,
        query: &PreparedQuery,
        kf: &Keyframe,
        angles: &[f64],
    ) -> Result<Vec<crate::correlation::PeakResult<(i64, i64)>>, LocalizeError> {
        let map = kf.plane_spectrum(self.padded);
        let mut out = Vec::with_capacity(angles.len());
        for chunk in angles.chunks(2) {
            let q1 = query.compensated(chunk[0], &self.bank);
            let q2 = chunk.get(1).map(|&t| query.compensated(t, &self.bank));
            let peaks = xcorr_2d_peaks_packed(&map, &q1, q2.as_ref(), self.cfg.max_translation_cells as i64)?;
            out.extend_from_slice(&peaks[..chunk.len()]);
        }
        Ok(out)
    }
}

/// Convenience wrapper building a one-off context from the database.
pub fn localize_pair(
    query: &Keyframe,
    map_kf: &Keyframe,
    db: &KeyframeDatabase,
    cfg: &LocalizerConfig,
) -> Result<PairEstimate, LocalizeError> {
    let loc = Localizer::new(db.config(), *cfg)?;
    loc.localize_pair(&loc.prepare(&query.bev)?, map_kf)
}

pub use crate::geometry::compose_global_pose;

#[cfg(test)]
mod tests;
