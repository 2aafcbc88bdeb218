//! Evaluation engine and reward kernel for mask-grounded visual reasoning
//! traces.
//!
//! * [`mask`]: binary masks, column-major RLE, IoU, boxes, duplicate removal
//! * [`assignment`]: Hungarian and greedy one-to-one matching
//! * [`trace`]: benchmark samples, manifests, model-output and tag parsing
//! * [`metrics`]: Logic Quality, Visual Quality, answer mIoU, aggregation
//! * [`reward`]: format rewards, matching IoU reward, variance filtering
//! * [`eval`]: batch evaluation over a manifest and a predictions file
//! * [`report`]: table / CSV / JSON rendering

pub mod assignment;
pub mod eval;
pub mod mask;
pub mod metrics;
pub mod par;
pub mod report;
pub mod reward;
pub mod trace;

pub use assignment::{
    Assignment, MatchResult, Pair, WeightMatrix, apply_threshold, greedy_match, hungarian_match,
};
pub use eval::{Diagnostics, EvalError, Evaluation, RunConfig, evaluate, evaluate_predictions};
pub use mask::{
    BinaryMask, BoundingBox, Iou, MaskError, RleCounts, box_iou, decode_rle, dedup_masks,
    encode_rle, iou, tight_box,
};
pub use metrics::{
    LqAggregation, MetricsReport, Mode, ReportCell, SampleScore, aggregate, answer_score,
    logic_quality, trace_match, visual_quality,
};
pub use report::{Format, render};
pub use reward::{
    GroupRewards, RewardBreakdown, RewardScope, format_reward_seg, format_reward_thinking,
    matching_iou_reward, reward_variance_filter, total_reward,
};
pub use trace::{
    Benchmark, Category, LoadError, ParsedOutput, PredictionRecord, Sample, load_manifest,
    parse_model_output, parse_object_tags,
};
