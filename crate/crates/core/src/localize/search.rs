use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::{LocalizeError, Localizer, LocalizerConfig, PairEstimate, PreparedQuery};
use crate::exec::Exec;
use crate::geometry::{compose_global_pose, Pose2};
use crate::map_store::{Keyframe, KeyframeDatabase};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: u64,
    pub estimate: PairEstimate,
}

/// Keyframes ordered by translation score (descending), then id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedRetrieval {
    pub entries: Vec<RankedEntry>,
}

impl RankedRetrieval {
    pub fn from_unsorted(mut entries: Vec<RankedEntry>) -> Self {
        entries.sort_by(rank_order);
        Self { entries }
    }

    pub fn top(&self) -> Option<&RankedEntry> {
        self.entries.first()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

fn rank_order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    b.estimate
        .translation_score
        .total_cmp(&a.estimate.translation_score)
        .then(a.id.cmp(&b.id))
}

/// Search result with the refined top-1 pose.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Localization {
    pub ranked: RankedRetrieval,
    pub keyframe_id: u64,
    pub coarse: PairEstimate,
    pub refined: PairEstimate,
    pub global_pose: Pose2,
}

impl Localizer {
    fn check_db(&self, db: &KeyframeDatabase) -> Result<(), LocalizeError> {
        if db.is_empty() {
            return Err(LocalizeError::EmptyDatabase);
        }
        if db.config() != self.map_config() {
            return Err(LocalizeError::InvalidConfig("database configuration differs".into()));
        }
        Ok(())
    }

    /// Scores every keyframe; the order is canonical, so the execution
    /// policy cannot change the result.
    pub fn search(
        &self,
        query: &PreparedQuery,
        db: &KeyframeDatabase,
        exec: Exec,
    ) -> Result<RankedRetrieval, LocalizeError> {
        self.check_db(db)?;
        let entries = exec
            .map(db.keyframes(), |kf: &Keyframe| {
                self.localize_pair(query, kf).map(|estimate| RankedEntry { id: kf.id, estimate })
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
        Ok(RankedRetrieval::from_unsorted(entries))
    }

    /// Search, then angular refinement of the top-1 pair.
    pub fn localize(
        &self,
        query: &PreparedQuery,
        db: &KeyframeDatabase,
        exec: Exec,
    ) -> Result<Localization, LocalizeError> {
        let ranked = self.search(query, db, exec)?;
        let top = *ranked.top().expect("nonempty database");
        let kf = db.get(top.id).expect("ranked id comes from the database");
        let refined = self.refine_pose(query, kf, &top.estimate)?;
        Ok(Localization {
            keyframe_id: top.id,
            coarse: top.estimate,
            refined,
            global_pose: compose_global_pose(&kf.pose, &refined.pose),
            ranked,
        })
    }
}

pub fn pr_by_pe_search(
    query: &Keyframe,
    db: &KeyframeDatabase,
    cfg: &LocalizerConfig,
    exec: Exec,
) -> Result<RankedRetrieval, LocalizeError> {
    let loc = Localizer::new(db.config(), *cfg)?;
    loc.search(&loc.prepare(&query.bev)?, db, exec)
}
