//! KITTI-style evaluation (greedy matching, interpolated AP, difficulty
//! tiers) and the adaptation diagnostics.

mod analysis;
mod ap;
mod matching;
mod report;
mod tiers;

pub use analysis::{
    confidence_density_report, density_csv, density_summary_csv, map_csv, map_over_iterations, variance_csv,
    variance_report, DensityRow, IterationAp, RoiRecord, VarianceRow, VarianceSnapshot, CONFIDENCE_BINS, VARIANCE_EDGES,
};
pub use ap::{average_precision, pr_curve, PrPoint};
pub use matching::{best_iou, match_detections, match_with_ignore, MatchResult, Outcome};
pub use report::{evaluate, EvalConfig, EvalReport, TierResult};
pub use tiers::{counts_in, difficulty_bin, Tier, TierRules};
