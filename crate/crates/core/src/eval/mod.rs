//! Scoring of predicted placement distributions.

mod consistency;
mod metrics;
mod report;

pub use consistency::{
    evaluate_distributions, oracle_ground_truth, self_consistency, uniform_baseline, DistributionConfig, OracleMaps,
    PlacementSource, SelfConsistencyConfig, SelfConsistencyReport, UniformMaps,
};
pub use metrics::{
    centroid, centroid_distance, iou_at, js_divergence, kl_divergence, kruskal_wallis, mode_distance, spray_to_dense,
    Grid, GroundTruthDistribution, KruskalWallis, DIVERGENCE_EPSILON, KW_SIGNIFICANCE,
};
pub use report::{evaluate, evaluate_cases, CaseMetrics, MetricReport, MetricRow, IOU_THRESHOLDS};

/// Spray kernel radius for an image width: 15 px at 96 px, scaled linearly.
pub fn kernel_radius_for(width: usize) -> usize {
    ((15.0 * width as f64 / 96.0).round() as usize).max(1)
}
