//! Rewards for reinforcement fine-tuning.
//!
//! `R = R_think + R_seg + R_iou`, where the two format terms are 0/1 and
//! `R_iou` is the mean IoU over greedily matched mask pairs minus `lambda`
//! per unmatched prediction or ground-truth mask.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::assignment::greedy_match;
use crate::mask::{BinaryMask, MaskError, RleCounts, decode_rle};
use crate::metrics::{Mode, canonical_order, iou_matrix};
use crate::par::map_ordered;
use crate::trace::{Benchmark, ParsedOutput, Sample, SampleRecord, parse_model_output};

pub const DEFAULT_LAMBDA: f64 = 0.1;

/// Which ground-truth objects the IoU reward is computed against.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardScope {
    /// Answer masks vs. answer objects.
    #[default]
    AnswerOnly,
    /// Trace and answer masks vs. trace objects plus answer objects.
    Joint,
}

impl fmt::Display for RewardScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RewardScope::AnswerOnly => "answer_only",
            RewardScope::Joint => "joint",
        })
    }
}

impl FromStr for RewardScope {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "answer_only" => Ok(RewardScope::AnswerOnly),
            "joint" => Ok(RewardScope::Joint),
            _ => Err(format!(
                "unknown reward scope {s:?} (expected answer_only|joint)"
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub format_think: u8,
    pub format_seg: u8,
    pub iou_reward: f64,
    pub total: f64,
    pub matched_count: usize,
    pub unmatched_count: usize,
}

/// 1 iff exactly one think region precedes exactly one answer region.
pub fn format_reward_thinking(parsed: &ParsedOutput) -> u8 {
    parsed.flags.well_formed as u8
}

/// 1 iff the answer region holds at least one `[SEG]` token. Token/mask
/// alignment is already enforced when the output is parsed.
pub fn format_reward_seg(parsed: &ParsedOutput) -> u8 {
    (parsed.answer_seg_count > 0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IouReward {
    pub value: f64,
    pub matched: usize,
    pub unmatched: usize,
}

/// Order-invariant matching IoU reward.
///
/// Both mask lists are put in canonical order before greedy matching, so any
/// permutation of either input yields the same pairs and the same bits.
pub fn matching_iou_reward(
    pred: &[&BinaryMask],
    gt: &[&BinaryMask],
    lambda: f64,
) -> Result<IouReward, MaskError> {
    let po = canonical_order(pred);
    let go = canonical_order(gt);
    let pred: Vec<&BinaryMask> = po.iter().map(|&i| pred[i]).collect();
    let gt: Vec<&BinaryMask> = go.iter().map(|&i| gt[i]).collect();
    let w = iou_matrix(&pred, &gt, Mode::Mask)?;
    let a = greedy_match(&w);

    let matched = a.pairs.len();
    let unmatched = (pred.len() - matched) + (gt.len() - matched);
    let mean = if matched == 0 {
        0.0
    } else {
        a.total_weight() / matched as f64
    };
    Ok(IouReward {
        value: mean - lambda * unmatched as f64,
        matched,
        unmatched,
    })
}

/// Drops pixel-identical repeats, keeping the first occurrence.
fn distinct<'a>(masks: impl IntoIterator<Item = &'a BinaryMask>) -> Vec<&'a BinaryMask> {
    let mut out: Vec<&BinaryMask> = Vec::new();
    for m in masks {
        if !out.iter().any(|k| k.canonical_cmp(m) == Ordering::Equal) {
            out.push(m);
        }
    }
    out
}

pub fn total_reward(
    parsed: &ParsedOutput,
    gt: &Sample,
    lambda: f64,
    scope: RewardScope,
) -> Result<RewardBreakdown, MaskError> {
    let format_think = format_reward_thinking(parsed);
    let format_seg = format_reward_seg(parsed);
    let (pred, gts): (Vec<&BinaryMask>, Vec<&BinaryMask>) = match scope {
        RewardScope::AnswerOnly => (
            parsed.answer_masks.iter().collect(),
            gt.answer_masks().collect(),
        ),
        RewardScope::Joint => (
            distinct(parsed.trace_masks.iter().chain(&parsed.answer_masks)),
            gt.joint_masks(),
        ),
    };
    let r = matching_iou_reward(&pred, &gts, lambda)?;
    Ok(RewardBreakdown {
        format_think,
        format_seg,
        iou_reward: r.value,
        total: format_think as f64 + format_seg as f64 + r.value,
        matched_count: r.matched,
        unmatched_count: r.unmatched,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupRewards {
    pub id: String,
    pub rewards: Vec<f64>,
}

impl GroupRewards {
    /// Population standard deviation; 0 for fewer than two rewards.
    pub fn std_dev(&self) -> f64 {
        let n = self.rewards.len();
        if n < 2 {
            return 0.0;
        }
        let mean = self.rewards.iter().sum::<f64>() / n as f64;
        let var = self.rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n as f64;
        var.sqrt()
    }
}

/// Ids of the `k` groups whose rewards spread the most, largest first.
pub fn reward_variance_filter(groups: &[GroupRewards], k: usize) -> Vec<String> {
    let mut scored: Vec<(f64, &str)> = groups
        .iter()
        .map(|g| (g.std_dev(), g.id.as_str()))
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored
        .into_iter()
        .take(k)
        .map(|(_, id)| id.to_string())
        .collect()
}

/// Ground truth for a reward request: an id resolved against a manifest, or
/// an inline manifest record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GtRef {
    Id(String),
    Inline(Box<SampleRecord>),
}

/// One line of a reward requests file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardRequest {
    pub id: String,
    pub raw_text: String,
    #[serde(default)]
    pub masks: Vec<RleCounts>,
    pub gt: GtRef,
}

/// Flat response record: the breakdown, or an error message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardResponse {
    pub id: String,
    #[serde(flatten)]
    pub breakdown: Option<RewardBreakdown>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

pub fn reward_for_request(
    req: &RewardRequest,
    benchmark: Option<&Benchmark>,
    lambda: f64,
    scope: RewardScope,
) -> Result<RewardBreakdown, String> {
    let inline;
    let gt = match &req.gt {
        GtRef::Id(id) => benchmark
            .ok_or_else(|| format!("ground truth {id:?} referenced by id but no manifest given"))?
            .get(id)
            .ok_or_else(|| format!("unknown ground-truth id {id:?}"))?,
        GtRef::Inline(record) => {
            inline = Sample::from_record((**record).clone())?;
            &inline
        }
    };
    let masks = req
        .masks
        .iter()
        .map(decode_rle)
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| e.to_string())?;
    let parsed = parse_model_output(&req.raw_text, masks).map_err(|e| e.to_string())?;
    total_reward(&parsed, gt, lambda, scope).map_err(|e| e.to_string())
}

/// Scores a batch of requests, preserving input order.
pub fn batch_rewards(
    requests: &[RewardRequest],
    benchmark: Option<&Benchmark>,
    lambda: f64,
    scope: RewardScope,
    jobs: usize,
) -> Vec<RewardResponse> {
    map_ordered(requests, jobs, |req| {
        match reward_for_request(req, benchmark, lambda, scope) {
            Ok(b) => RewardResponse {
                id: req.id.clone(),
                breakdown: Some(b),
                error: None,
            },
            Err(e) => RewardResponse {
                id: req.id.clone(),
                breakdown: None,
                error: Some(e),
            },
        }
    })
}
