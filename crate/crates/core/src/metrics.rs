//! Logic Quality, Visual Quality and answer mIoU.
//!
//! Per-sample scoring is independent; [`aggregate`] pools counts and sums in
//! input order and divides once, so results only depend on the sample order,
//! never on how the scoring was scheduled.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::assignment::{MatchResult, WeightMatrix, apply_threshold, hungarian_match};
use crate::mask::{BinaryMask, BoundingBox, MaskError, box_iou, iou, tight_box};
use crate::trace::{Category, ParsedOutput, Sample};

pub const DEFAULT_TAU: f64 = 0.5;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error(transparent)]
    Mask(#[from] MaskError),
    #[error("ground truth has no objects")]
    EmptyGroundTruth,
    #[error("no sample scores to aggregate")]
    EmptyInput,
    #[error("sample {0:?} carries no category")]
    Uncategorized(String),
}

/// How predicted and ground-truth regions are compared.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Mask,
    /// Both sides reduced to their tight bounding boxes first.
    Box,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Mask => "mask",
            Mode::Box => "box",
        })
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mask" => Ok(Mode::Mask),
            "box" => Ok(Mode::Box),
            _ => Err(format!("unknown mode {s:?} (expected mask|box)")),
        }
    }
}

/// Dataset-level LQ averaging.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LqAggregation {
    /// Mean of per-sample LQ.
    #[default]
    Macro,
    /// Total matched objects over total ground-truth objects.
    Micro,
}

impl fmt::Display for LqAggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LqAggregation::Macro => "macro",
            LqAggregation::Micro => "micro",
        })
    }
}

impl FromStr for LqAggregation {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "macro" => Ok(LqAggregation::Macro),
            "micro" => Ok(LqAggregation::Micro),
            _ => Err(format!(
                "unknown LQ aggregation {s:?} (expected macro|micro)"
            )),
        }
    }
}

fn check_shapes(preds: &[&BinaryMask], gts: &[&BinaryMask]) -> Result<(), MaskError> {
    if let Some(first) = gts.first().or(preds.first()) {
        for m in preds.iter().chain(gts) {
            if !m.same_shape(first) {
                return Err(MaskError::ShapeMismatch {
                    left_h: m.height(),
                    left_w: m.width(),
                    right_h: first.height(),
                    right_w: first.width(),
                });
            }
        }
    }
    Ok(())
}

/// IoU of every prediction (rows) against every ground truth (columns).
pub fn iou_matrix(
    preds: &[&BinaryMask],
    gts: &[&BinaryMask],
    mode: Mode,
) -> Result<WeightMatrix, MaskError> {
    check_shapes(preds, gts)?;
    let mut data = Vec::with_capacity(preds.len() * gts.len());
    match mode {
        Mode::Mask => {
            for p in preds {
                for g in gts {
                    data.push(iou(p, g)?.value);
                }
            }
        }
        Mode::Box => {
            let boxes = |ms: &[&BinaryMask]| -> Vec<Option<BoundingBox>> {
                ms.iter().map(|m| tight_box(m).ok()).collect()
            };
            let (pb, gb) = (boxes(preds), boxes(gts));
            for p in &pb {
                for g in &gb {
                    data.push(match (p, g) {
                        (Some(p), Some(g)) => box_iou(p, g),
                        _ => 0.0,
                    });
                }
            }
        }
    }
    Ok(WeightMatrix::new(preds.len(), gts.len(), data).expect("IoU values lie in [0, 1]"))
}

/// Indices of `masks` in canonical order. Matching on this order makes the
/// outcome independent of how the caller ordered the masks.
pub(crate) fn canonical_order(masks: &[&BinaryMask]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..masks.len()).collect();
    order.sort_by(|&a, &b| masks[a].canonical_cmp(masks[b]).then(a.cmp(&b)));
    order
}

/// Optimal one-to-one matching of `preds` to `gts`, thresholded at `tau`.
/// Returned indices refer to the caller's order.
pub fn match_masks(
    preds: &[&BinaryMask],
    gts: &[&BinaryMask],
    tau: f64,
    mode: Mode,
) -> Result<MatchResult, MaskError> {
    let order = canonical_order(preds);
    let sorted: Vec<&BinaryMask> = order.iter().map(|&i| preds[i]).collect();
    let w = iou_matrix(&sorted, gts, mode)?;
    let mut assignment = hungarian_match(&w);
    for p in &mut assignment.pairs {
        p.pred = order[p.pred];
    }
    assignment.pairs.sort_by_key(|p| p.gt);
    Ok(apply_threshold(&assignment, tau))
}

/// Matches the trace masks of a prediction against the sample's trace.
/// Answer masks take no part; they are scored by [`answer_score`].
pub fn trace_match(
    pred: &ParsedOutput,
    gt: &Sample,
    tau: f64,
    mode: Mode,
) -> Result<MatchResult, MaskError> {
    let preds: Vec<&BinaryMask> = pred.trace_masks.iter().collect();
    let gts: Vec<&BinaryMask> = gt.trace_masks().collect();
    check_image(&preds, gt)?;
    match_masks(&preds, &gts, tau, mode)
}

fn check_image(preds: &[&BinaryMask], gt: &Sample) -> Result<(), MaskError> {
    for m in preds {
        if m.height() != gt.height || m.width() != gt.width {
            return Err(MaskError::ShapeMismatch {
                left_h: m.height(),
                left_w: m.width(),
                right_h: gt.height,
                right_w: gt.width,
            });
        }
    }
    Ok(())
}

pub fn logic_quality(m: &MatchResult, gt_count: usize) -> Result<f64, MetricsError> {
    if gt_count == 0 {
        return Err(MetricsError::EmptyGroundTruth);
    }
    Ok(m.matched.len() as f64 / gt_count as f64)
}

/// Mean of the matched IoUs; 0 when nothing matched.
pub fn visual_quality(matched_ious: &[f64]) -> f64 {
    if matched_ious.is_empty() {
        0.0
    } else {
        matched_ious.iter().sum::<f64>() / matched_ious.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnswerScore {
    pub value: f64,
    /// No answer mask was predicted.
    pub empty_prediction: bool,
}

/// Mean IoU over ground-truth answer objects after optimal matching; gt
/// objects left unmatched contribute 0. With one object on each side this is
/// the plain IoU.
pub fn answer_score(
    pred: &[&BinaryMask],
    gt: &[&BinaryMask],
    mode: Mode,
) -> Result<AnswerScore, MetricsError> {
    if gt.is_empty() {
        return Err(MetricsError::EmptyGroundTruth);
    }
    if pred.is_empty() {
        check_shapes(pred, gt)?;
        return Ok(AnswerScore {
            value: 0.0,
            empty_prediction: true,
        });
    }
    let m = match_masks(pred, gt, 0.0, mode)?;
    let sum: f64 = m.matched_ious().sum();
    Ok(AnswerScore {
        value: sum / gt.len() as f64,
        empty_prediction: false,
    })
}

/// Scores for one benchmark sample.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleScore {
    pub id: String,
    pub categories: BTreeSet<Category>,
    pub gt_count: usize,
    pub matched_count: usize,
    /// Matched IoUs in ground-truth order; every value exceeds tau.
    pub matched_ious: Vec<f64>,
    pub lq: f64,
    pub answer_iou: f64,
    /// Prediction was missing or unusable and scored as empty.
    pub degenerate: bool,
}

impl SampleScore {
    /// Score for a sample with no usable prediction.
    pub fn degenerate(gt: &Sample) -> Self {
        SampleScore {
            id: gt.id.clone(),
            categories: gt.categories.clone(),
            gt_count: gt.trace.len(),
            matched_count: 0,
            matched_ious: Vec::new(),
            lq: 0.0,
            answer_iou: 0.0,
            degenerate: true,
        }
    }
}

pub fn score_sample(
    pred: &ParsedOutput,
    gt: &Sample,
    tau: f64,
    mode: Mode,
) -> Result<SampleScore, MetricsError> {
    let m = trace_match(pred, gt, tau, mode)?;
    let lq = logic_quality(&m, gt.trace.len())?;
    let preds: Vec<&BinaryMask> = pred.answer_masks.iter().collect();
    check_image(&preds, gt)?;
    let gts: Vec<&BinaryMask> = gt.answer_masks().collect();
    let a = answer_score(&preds, &gts, mode)?;
    Ok(SampleScore {
        id: gt.id.clone(),
        categories: gt.categories.clone(),
        gt_count: gt.trace.len(),
        matched_count: m.matched.len(),
        matched_ious: m.matched_ious().collect(),
        lq,
        answer_iou: a.value,
        degenerate: false,
    })
}

/// Percentage with one decimal, halves rounded away from zero.
pub fn to_percent(fraction: f64) -> f64 {
    (fraction * 1000.0).round() / 10.0
}

/// One Table-1 cell group: `(R-LQ, R-VQ, A)` in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub group: String,
    pub samples: usize,
    /// Pooled number of matched trace objects (VQ denominator).
    pub matched: usize,
    pub r_lq: Option<f64>,
    pub r_vq: Option<f64>,
    pub a: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: Mode,
    pub tau: f64,
    pub lq_aggregation: LqAggregation,
    /// One cell per category, in [`Category::ALL`] order.
    pub categories: Vec<ReportCell>,
    pub overall: ReportCell,
}

impl MetricsReport {
    pub fn cells(&self) -> impl Iterator<Item = &ReportCell> {
        self.categories.iter().chain(std::iter::once(&self.overall))
    }

    pub fn category(&self, cat: Category) -> Option<&ReportCell> {
        self.categories.iter().find(|c| c.group == cat.as_str())
    }
}

#[derive(Default)]
struct Accumulator {
    samples: usize,
    lq_sum: f64,
    matched: usize,
    gt: usize,
    iou_sum: f64,
    answer_sum: f64,
}

impl Accumulator {
    fn add(&mut self, s: &SampleScore) {
        self.samples += 1;
        self.lq_sum += s.lq;
        self.matched += s.matched_count;
        self.gt += s.gt_count;
        self.iou_sum += s.matched_ious.iter().sum::<f64>();
        self.answer_sum += s.answer_iou;
    }

    fn finish(&self, group: &str, lq_agg: LqAggregation) -> ReportCell {
        if self.samples == 0 {
            return ReportCell {
                group: group.to_string(),
                samples: 0,
                matched: 0,
                r_lq: None,
                r_vq: None,
                a: None,
            };
        }
        let lq = match lq_agg {
            LqAggregation::Macro => self.lq_sum / self.samples as f64,
            LqAggregation::Micro => self.matched as f64 / self.gt as f64,
        };
        let vq = if self.matched == 0 {
            0.0
        } else {
            self.iou_sum / self.matched as f64
        };
        ReportCell {
            group: group.to_string(),
            samples: self.samples,
            matched: self.matched,
            r_lq: Some(to_percent(lq)),
            r_vq: Some(to_percent(vq)),
            a: Some(to_percent(self.answer_sum / self.samples as f64)),
        }
    }
}

pub fn aggregate(
    scores: &[SampleScore],
    tau: f64,
    mode: Mode,
    lq_aggregation: LqAggregation,
) -> Result<MetricsReport, MetricsError> {
    if scores.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let mut overall = Accumulator::default();
    let mut per_cat: [Accumulator; 4] = Default::default();
    for s in scores {
        if s.categories.is_empty() {
            return Err(MetricsError::Uncategorized(s.id.clone()));
        }
        overall.add(s);
        for (i, cat) in Category::ALL.iter().enumerate() {
            if s.categories.contains(cat) {
                per_cat[i].add(s);
            }
        }
    }
    Ok(MetricsReport {
        mode,
        tau,
        lq_aggregation,
        categories: Category::ALL
            .iter()
            .zip(&per_cat)
            .map(|(cat, acc)| acc.finish(cat.as_str(), lq_aggregation))
            .collect(),
        overall: overall.finish("overall", lq_aggregation),
    })
}
