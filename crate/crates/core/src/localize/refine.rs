use super::{LocalizeError, Localizer, PairEstimate, PreparedQuery};
use crate::geometry::wrap_angle;
use crate::map_store::{Keyframe, KeyframeDatabase};

impl Localizer {
    /// Exhaustive matching over `coarse.θ + k·step`, `|k·step| ≤ window`.
    /// A candidate replaces the coarse pose only with a strictly higher
    /// translation score, so the score never drops.
    pub fn refine_pose(
        &self,
        query: &PreparedQuery,
        kf: &Keyframe,
        coarse: &PairEstimate,
    ) -> Result<PairEstimate, LocalizeError> {
        let angles: Vec<f64> = self
            .cfg
            .refine_offsets_rad()
            .into_iter()
            .filter(|&o| o != 0.0)
            .map(|o| wrap_angle(coarse.pose.theta + o))
            .collect();
        if angles.is_empty() {
            return Ok(*coarse);
        }
        let peaks = self.score_angles(query, kf, &angles)?;
        let mut best = *coarse;
        for (&theta, peak) in angles.iter().zip(peaks) {
            if peak.score > best.translation_score {
                best = self.to_estimate(theta, coarse.rotation_score, peak);
            }
        }
        Ok(best)
    }
}

/// Convenience wrapper building a one-off context from the database.
pub fn refine_pose(
    query: &Keyframe,
    map_kf: &Keyframe,
    coarse: &PairEstimate,
    db: &KeyframeDatabase,
    cfg: &super::LocalizerConfig,
) -> Result<PairEstimate, LocalizeError> {
    let loc = Localizer::new(db.config(), *cfg)?;
    loc.refine_pose(&loc.prepare(&query.bev)?, map_kf, coarse)
}
