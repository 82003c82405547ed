//! Panoptic metrics (PQ, SQ, RQ, thing/stuff PQ, mask AP, mIoU), overall and
//! per occlusion level.
//!
//! Per-image work produces accumulators (per-category counts, a confusion
//! matrix, scored detections); subset and overall numbers come from merging
//! them, so the overall row is computed on the union of images.

mod ap;
mod matching;
mod miou;
mod pq;
mod report;

pub use ap::{ap_pan, iou_thresholds, ApAccumulator, MAX_DETECTIONS, NUM_THRESHOLDS, RECALL_POINTS};
pub use matching::{match_segments, MatchResult, TruePositive, Unmatched, MATCH_IOU};
pub use miou::{miou_pan, ConfusionAccumulator};
pub use pq::{averaged, pq, pq_breakdown, CategoryCounts, PqAccumulator, PqBreakdown, PqScore};
pub use report::{
    evaluate_datasets, report_from_maps, stratified_report, EvalOptions, MetricRow, StratifiedReport,
    SubsetAccumulator, CSV_HEADER,
};
