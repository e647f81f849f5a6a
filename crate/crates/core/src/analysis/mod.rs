//! Metrics, rank-based model comparison and saliency maps.

mod metrics;
mod saliency;
mod stats;

pub use metrics::{accuracy, evaluate, mean_se, mse, r2_score, Evaluated, MetricReport, Score, SetMetrics};
pub use saliency::{abs_cam, jaccard, top_fraction, upsample_linear, Saliency};
pub use stats::{
    arrangement_count, dunn_posthoc, kruskal_wallis, pooled_ranks, Adjustment, KruskalWallis, PValueMethod,
    SignificanceMatrix, EXACT_LIMIT,
};
