//! Retrieval and pose metrics over per-query outcomes.

use serde::{Deserialize, Serialize};

use crate::geometry::{angular_distance, Pose2};

/// Everything measured for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryOutcome {
    pub query_id: u64,
    pub gt_pose: Pose2,
    pub retrieved_id: u64,
    pub est_pose: Pose2,
    pub score: f64,
    /// Distance from the ground truth to the closest keyframe.
    pub nearest_dist_m: f64,
    /// Distances from the ground truth to the ranked keyframes, best first.
    pub ranked_dists_m: Vec<f64>,
}

impl QueryOutcome {
    pub fn retrieved_dist_m(&self) -> f64 {
        self.ranked_dists_m.first().copied().unwrap_or(f64::INFINITY)
    }

    pub fn is_correct(&self, revisit_m: f64) -> bool {
        self.retrieved_dist_m() <= revisit_m
    }

    pub fn errors(&self) -> (f64, f64) {
        pose_errors(&self.est_pose, &self.gt_pose)
    }
}

/// Rotation error in degrees and translation error in meters.
pub fn pose_errors(est: &Pose2, gt: &Pose2) -> (f64, f64) {
    let re = angular_distance(est.theta, gt.theta).to_degrees();
    let rel = gt.inverse().compose(est);
    (re, rel.x.hypot(rel.y))
}

/// Fraction of queries with a correct retrieval among the top `n`.
pub fn recall_at_n(outcomes: &[QueryOutcome], revisit_m: f64, n: usize) -> f64 {
    assert!(n >= 1, "n must be at least 1");
    if outcomes.is_empty() {
        return 0.0;
    }
    let hits = outcomes
        .iter()
        .filter(|o| o.ranked_dists_m.iter().take(n).any(|&d| d <= revisit_m))
        .count();
    hits as f64 / outcomes.len() as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrSummary {
    pub curve: Vec<PrPoint>,
    pub auc: f64,
    pub max_f1: f64,
}

/// Threshold sweep over the distinct top-1 scores, high to low.
///
/// A query is accepted when its score reaches the threshold; an accepted
/// query is a true positive if its top-1 is within `revisit_m`. Actual
/// positives are queries with some keyframe within `revisit_m`. The AUC is
/// the trapezoid over recall, starting from recall 0 at the first point's
/// precision.
pub fn pr_curve_and_auc(outcomes: &[QueryOutcome], revisit_m: f64) -> PrSummary {
    let positives = outcomes.iter().filter(|o| o.nearest_dist_m <= revisit_m).count();
    let mut scores: Vec<f64> = outcomes.iter().map(|o| o.score).collect();
    scores.sort_by(|a, b| b.total_cmp(a));
    scores.dedup();
    let mut curve = Vec::new();
    if positives > 0 {
        for &t in &scores {
            let (mut tp, mut fp) = (0usize, 0usize);
            for o in outcomes.iter().filter(|o| o.score >= t) {
                if o.is_correct(revisit_m) {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
            curve.push(PrPoint {
                threshold: t,
                precision: tp as f64 / (tp + fp) as f64,
                recall: tp as f64 / positives as f64,
            });
        }
    }
    let mut auc = 0.0;
    if let Some(first) = curve.first() {
        let mut prev = (0.0, first.precision);
        for p in &curve {
            auc += (p.recall - prev.0) * (p.precision + prev.1) / 2.0;
            prev = (p.recall, p.precision);
        }
    }
    let max_f1 = curve
        .iter()
        .filter(|p| p.precision + p.recall > 0.0)
        .map(|p| 2.0 * p.precision * p.recall / (p.precision + p.recall))
        .fold(0.0, f64::max);
    PrSummary { curve, auc, max_f1 }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuccessRates {
    /// Successes among correctly retrieved queries; absent if there are none.
    pub pe_succ: Option<f64>,
    pub gl_two_stage: f64,
    pub gl_one_stage: f64,
}

pub const RE_MAX_DEG: f64 = 5.0;
pub const TE_MAX_M: f64 = 2.0;

pub fn is_success(o: &QueryOutcome, re_max_deg: f64, te_max_m: f64) -> bool {
    let (re, te) = o.errors();
    re < re_max_deg && te < te_max_m
}

pub fn success_rates(outcomes: &[QueryOutcome], revisit_m: f64, re_max_deg: f64, te_max_m: f64) -> SuccessRates {
    assert!(re_max_deg > 0.0 && te_max_m > 0.0, "thresholds must be positive");
    let correct: Vec<&QueryOutcome> = outcomes.iter().filter(|o| o.is_correct(revisit_m)).collect();
    let pe_succ = (!correct.is_empty()).then(|| {
        correct.iter().filter(|o| is_success(o, re_max_deg, te_max_m)).count() as f64 / correct.len() as f64
    });
    let gl_one_stage = if outcomes.is_empty() {
        0.0
    } else {
        outcomes.iter().filter(|o| is_success(o, re_max_deg, te_max_m)).count() as f64 / outcomes.len() as f64
    };
    SuccessRates {
        pe_succ,
        gl_two_stage: recall_at_n(outcomes, revisit_m, 1) * pe_succ.unwrap_or(0.0),
        gl_one_stage,
    }
}

/// Linear-interpolation percentile, `q` in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 100.0) / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(v[lo] + (pos - lo as f64) * (v[hi] - v[lo]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub revisit_m: f64,
    pub n_queries: usize,
    /// `recall_at_n[i]` is Recall@(i + 1).
    pub recall_at_n: Vec<f64>,
    pub max_f1: f64,
    pub auc: f64,
    pub pr_curve: Vec<PrPoint>,
    pub re_p50: Option<f64>,
    pub re_p75: Option<f64>,
    pub te_p50: Option<f64>,
    pub te_p75: Option<f64>,
    pub pe_succ: Option<f64>,
    pub gl_succ_two_stage: f64,
    pub gl_succ_one_stage: f64,
}

impl MetricsReport {
    pub fn recall_at_1(&self) -> f64 {
        self.recall_at_n.first().copied().unwrap_or(0.0)
    }

    pub const CSV_HEADER: &'static str = "revisit_m,n_queries,recall_at_1,recall_at_5,recall_at_10,max_f1,auc,re_p50_deg,re_p75_deg,te_p50_m,te_p75_m,pe_succ,gl_succ_two_stage,gl_succ_one_stage";

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
        let r = |n: usize| opt(self.recall_at_n.get(n - 1).copied());
        format!(
            "{},{},{},{},{},{:.6},{:.6},{},{},{},{},{},{:.6},{:.6}",
            self.revisit_m,
            self.n_queries,
            r(1),
            r(5),
            r(10),
            self.max_f1,
            self.auc,
            opt(self.re_p50),
            opt(self.re_p75),
            opt(self.te_p50),
            opt(self.te_p75),
            opt(self.pe_succ),
            self.gl_succ_two_stage,
            self.gl_succ_one_stage
        )
    }
}

/// Full metric set at one revisit threshold. Error percentiles are taken over
/// correctly retrieved queries.
pub fn metrics_report(outcomes: &[QueryOutcome], revisit_m: f64, max_n: usize) -> MetricsReport {
    let pr = pr_curve_and_auc(outcomes, revisit_m);
    let rates = success_rates(outcomes, revisit_m, RE_MAX_DEG, TE_MAX_M);
    let (re, te): (Vec<f64>, Vec<f64>) = outcomes
        .iter()
        .filter(|o| o.is_correct(revisit_m))
        .map(QueryOutcome::errors)
        .unzip();
    MetricsReport {
        revisit_m,
        n_queries: outcomes.len(),
        recall_at_n: (1..=max_n.max(1)).map(|n| recall_at_n(outcomes, revisit_m, n)).collect(),
        max_f1: pr.max_f1,
        auc: pr.auc,
        pr_curve: pr.curve,
        re_p50: percentile(&re, 50.0),
        re_p75: percentile(&re, 75.0),
        te_p50: percentile(&te, 50.0),
        te_p75: percentile(&te, 75.0),
        pe_succ: rates.pe_succ,
        gl_succ_two_stage: rates.gl_two_stage,
        gl_succ_one_stage: rates.gl_one_stage,
    }
}

pub const DEFAULT_REVISIT_THRESHOLDS: [f64; 4] = [5.0, 10.0, 20.0, 25.0];

pub fn revisit_sweep(outcomes: &[QueryOutcome], thresholds: &[f64], max_n: usize) -> Vec<MetricsReport> {
    assert!(thresholds.windows(2).all(|w| w[0] <= w[1]), "thresholds must be sorted");
    thresholds.iter().map(|&r| metrics_report(outcomes, r, max_n)).collect()
}

pub fn sweep_csv(reports: &[MetricsReport]) -> String {
    let mut s = String::from(MetricsReport::CSV_HEADER);
    s.push('\n');
    for r in reports {
        s.push_str(&r.csv_row());
        s.push('\n');
    }
    s
}

pub fn outcomes_csv(outcomes: &[QueryOutcome]) -> String {
    let mut s = String::from(
        "query_id,gt_theta,gt_x,gt_y,retrieved_id,est_theta,est_x,est_y,score,retrieved_dist_m,nearest_dist_m,re_deg,te_m\n",
    );
    for o in outcomes {
        let (re, te) = o.errors();
        s.push_str(&format!(
            "{},{:.6},{:.4},{:.4},{},{:.6},{:.4},{:.4},{:.6},{:.4},{:.4},{:.4},{:.4}\n",
            o.query_id,
            o.gt_pose.theta,
            o.gt_pose.x,
            o.gt_pose.y,
            o.retrieved_id,
            o.est_pose.theta,
            o.est_pose.x,
            o.est_pose.y,
            o.score,
            o.retrieved_dist_m(),
            o.nearest_dist_m,
            re,
            te
        ));
    }
    s
}

pub fn pr_curve_csv(curve: &[PrPoint]) -> String {
    let mut s = String::from("threshold,precision,recall\n");
    for p in curve {
        s.push_str(&format!("{:.6},{:.6},{:.6}\n", p.threshold, p.precision, p.recall));
    }
    s
}
