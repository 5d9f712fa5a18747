//! Classification metrics, attention rollout and overlay export.

mod metrics;
mod overlay;
mod rollout;

pub use metrics::{accuracy_from_scores, auc, compute_metrics, positive_probability, Metrics, PredictionSet};
pub use overlay::{export_overlay, mid_slice, overlay_color, write_ppm, OverlayFiles};
pub use rollout::{
    attention_rollout, attribution_volume, hierarchical_rollout, layer_matrix, raw_attribution, residual_mix, rollout_map,
    rollout_matrix,
};
