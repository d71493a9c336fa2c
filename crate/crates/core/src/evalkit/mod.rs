//! Detection and forecasting metrics.

mod iou;
mod metrics;
pub mod report;

pub use iou::{iou_unchecked, pivot_sweep, rotated_iou, DegenerateBox};
pub use metrics::{
    average_precision, box_at_waypoint, breakdown, collision_counts, l2_at_recall, match_frame, pr_curve, summarize,
    tcr, BinResult, BreakdownKind, EvalConfig, EvalFrame, EvalLabel, FrameResult, PrCurve, Summary,
};
