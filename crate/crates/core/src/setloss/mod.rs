//! Hungarian-matched set prediction loss and segmentation metrics.

mod hungarian;
mod loss;
mod metrics;

pub use hungarian::{assignment_cost, hungarian, MatchResult};
pub use loss::{
    match_cost, matched_loss, saturation_bound, segm_loss, targets_from_mask, LossBreakdown, LossWeights, TargetSet,
    LOGIT_CLAMP,
};
pub use metrics::{metrics, Confusion, MetricAccumulator, MetricReport};
