//! Metrics, synthetic worlds and the closed-loop benchmark harness.

pub mod metrics;
pub mod protocol;
pub mod synth;

pub use metrics::{
    metrics_report, pose_errors, pr_curve_and_auc, recall_at_n, revisit_sweep, success_rates, MetricsReport,
    PrPoint, PrSummary, QueryOutcome, SuccessRates,
};
pub use protocol::{run_protocol, synthesize, ProtocolConfig, ProtocolRun, SyntheticDataset};
pub use synth::{generate_world, render_scan, ScanModel, World};
