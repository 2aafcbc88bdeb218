//! Batch evaluation of a predictions file against a benchmark.
//!
//! Samples are scored independently (in parallel with the `parallel`
//! feature), collected back in manifest order and reduced sequentially, so the
//! report does not depend on the worker count.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{
    DEFAULT_TAU, LqAggregation, MetricsError, MetricsReport, Mode, SampleScore, aggregate,
    score_sample,
};
use crate::par::map_ordered;
use crate::report::Format;
use crate::reward::{DEFAULT_LAMBDA, RewardScope};
use crate::trace::{
    Benchmark, LoadError, PredictionRecord, Sample, load_manifest, load_predictions,
    parse_prediction,
};

/// Evaluation and reward settings. Defaults are the standard protocol
/// (`tau = 0.5`, `lambda = 0.1`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub tau: f64,
    pub mode: Mode,
    pub lambda: f64,
    pub lq_aggregation: LqAggregation,
    pub reward_gt_scope: RewardScope,
    /// Worker count; 0 lets the pool pick.
    pub jobs: usize,
    pub format: Format,
    /// Drop samples without a prediction instead of scoring them as empty.
    pub skip_missing: bool,
    /// Fail on prediction ids absent from the manifest.
    pub strict_ids: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            tau: DEFAULT_TAU,
            mode: Mode::Mask,
            lambda: DEFAULT_LAMBDA,
            lq_aggregation: LqAggregation::Macro,
            reward_gt_scope: RewardScope::AnswerOnly,
            jobs: 0,
            format: Format::Table,
            skip_missing: false,
            strict_ids: true,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..1.0).contains(&self.tau) {
            return Err(format!("tau must lie in [0, 1), got {}", self.tau));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(format!(
                "lambda must be finite and non-negative, got {}",
                self.lambda
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Load(#[from] LoadError),
    #[error("predictions reference unknown sample ids: {}", .0.join(", "))]
    UnknownIds(Vec<String>),
    #[error("duplicate prediction for sample {0:?}")]
    DuplicatePrediction(String),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no samples left to evaluate")]
    NothingToEvaluate,
}

/// Per-run facts kept apart from the report payload.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    /// Manifest samples without a prediction.
    pub missing: Vec<String>,
    /// Prediction ids not present in the manifest (non-strict runs).
    pub unknown: Vec<String>,
    /// Predictions that could not be parsed or scored, with the reason.
    pub failures: BTreeMap<String, String>,
    /// Predictions whose think/answer tags are not well formed.
    pub format_violations: Vec<String>,
    /// Predictions with `[SEG]` tokens outside both regions.
    pub stray_masks: Vec<String>,
    /// Predictions whose object tags violate the tag grammar.
    pub tag_errors: Vec<String>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub scores: Vec<SampleScore>,
    pub diagnostics: Diagnostics,
}

enum Outcome {
    Scored(SampleScore, SampleNotes),
    Failed(SampleScore, String),
    Missing(SampleScore),
}

#[derive(Default)]
struct SampleNotes {
    format_violation: bool,
    stray: bool,
    tag_error: bool,
}

fn score_one(sample: &Sample, pred: Option<&PredictionRecord>, cfg: &RunConfig) -> Outcome {
    let Some(pred) = pred else {
        return Outcome::Missing(SampleScore::degenerate(sample));
    };
    let parsed = match parse_prediction(pred) {
        Ok(p) => p,
        Err(e) => return Outcome::Failed(SampleScore::degenerate(sample), e.to_string()),
    };
    match score_sample(&parsed, sample, cfg.tau, cfg.mode) {
        Ok(score) => Outcome::Scored(
            score,
            SampleNotes {
                format_violation: !parsed.flags.well_formed,
                stray: !parsed.stray_masks.is_empty(),
                tag_error: parsed.tag_error.is_some(),
            },
        ),
        Err(e) => Outcome::Failed(SampleScore::degenerate(sample), e.to_string()),
    }
}

type Job<'a> = (&'a Sample, Option<&'a PredictionRecord>);

/// Scores every sample, falling back to sequential for `jobs == 1` or when
/// built without the `parallel` feature.
pub fn evaluate(
    benchmark: &Benchmark,
    predictions: &[PredictionRecord],
    cfg: &RunConfig,
) -> Result<Evaluation, EvalError> {
    cfg.validate().map_err(EvalError::Config)?;
    let mut by_id: BTreeMap<&str, &PredictionRecord> = BTreeMap::new();
    let mut unknown = BTreeSet::new();
    for p in predictions {
        if !benchmark.contains(&p.id) {
            unknown.insert(p.id.clone());
            continue;
        }
        if by_id.insert(p.id.as_str(), p).is_some() {
            return Err(EvalError::DuplicatePrediction(p.id.clone()));
        }
    }
    if cfg.strict_ids && !unknown.is_empty() {
        return Err(EvalError::UnknownIds(unknown.into_iter().collect()));
    }

    let jobs: Vec<Job<'_>> = benchmark
        .samples
        .iter()
        .map(|s| (s, by_id.get(s.id.as_str()).copied()))
        .filter(|(_, p)| !(cfg.skip_missing && p.is_none()))
        .collect();
    if jobs.is_empty() {
        return Err(EvalError::NothingToEvaluate);
    }

    let outcomes = map_ordered(&jobs, cfg.jobs, |(s, p)| score_one(s, *p, cfg));

    let mut diagnostics = Diagnostics {
        unknown: unknown.into_iter().collect(),
        ..Default::default()
    };
    let mut missing_skipped: Vec<String> = if cfg.skip_missing {
        benchmark
            .samples
            .iter()
            .filter(|s| !by_id.contains_key(s.id.as_str()))
            .map(|s| s.id.clone())
            .collect()
    } else {
        Vec::new()
    };
    let mut scores = Vec::with_capacity(outcomes.len());
    for outcome in outcomes {
        match outcome {
            Outcome::Scored(score, notes) => {
                if notes.format_violation {
                    diagnostics.format_violations.push(score.id.clone());
                }
                if notes.stray {
                    diagnostics.stray_masks.push(score.id.clone());
                }
                if notes.tag_error {
                    diagnostics.tag_errors.push(score.id.clone());
                }
                scores.push(score);
            }
            Outcome::Failed(score, reason) => {
                diagnostics.failures.insert(score.id.clone(), reason);
                scores.push(score);
            }
            Outcome::Missing(score) => {
                diagnostics.missing.push(score.id.clone());
                scores.push(score);
            }
        }
    }
    diagnostics.missing.append(&mut missing_skipped);

    let report = aggregate(&scores, cfg.tau, cfg.mode, cfg.lq_aggregation)?;
    Ok(Evaluation {
        report,
        scores,
        diagnostics,
    })
}

pub fn evaluate_predictions(
    manifest: impl AsRef<Path>,
    predictions: impl AsRef<Path>,
    cfg: &RunConfig,
) -> Result<Evaluation, EvalError> {
    let benchmark = load_manifest(manifest)?;
    let predictions = load_predictions(predictions)?;
    evaluate(&benchmark, &predictions, cfg)
}
