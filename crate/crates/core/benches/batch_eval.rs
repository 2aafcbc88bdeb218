//! Sequential vs. parallel batch evaluation and reward scoring.
//!
//! `jobs = 1` takes the sequential path; `jobs = 0` uses the rayon pool (or
//! falls back to sequential when built with `--no-default-features`).

#[path = "../tests/common/mod.rs"]
mod common;

use criterion::{BenchmarkId, Criterion, Throughput, criterion_group, criterion_main};
use vrt_eval::reward::{GtRef, RewardRequest, batch_rewards};
use vrt_eval::{RewardScope, RunConfig, encode_rle, evaluate};

fn bench_evaluate(c: &mut Criterion) {
    let b = common::reference_benchmark();
    let preds = common::shifted_predictions(&b, 3);
    let mut g = c.benchmark_group("evaluate");
    g.throughput(Throughput::Elements(b.samples.len() as u64));
    for (label, jobs) in [("sequential", 1), ("parallel", 0)] {
        let cfg = RunConfig {
            jobs,
            ..RunConfig::default()
        };
        g.bench_with_input(
            BenchmarkId::new(label, b.samples.len()),
            &cfg,
            |bench, cfg| bench.iter(|| evaluate(&b, &preds, cfg).unwrap()),
        );
    }
    g.finish();
}

fn bench_rewards(c: &mut Criterion) {
    let b = common::reference_benchmark();
    // eight rollouts per sample, as in a grouped policy update
    let requests: Vec<RewardRequest> = b
        .samples
        .iter()
        .flat_map(|s| {
            (0..8u32).map(move |k| {
                let masks: Vec<_> = s
                    .trace_masks()
                    .chain(s.answer_masks())
                    .map(encode_rle)
                    .collect();
                let text = format!(
                    "<think>{}</think><answer>{}</answer>",
                    "[SEG] ".repeat(s.trace.len()),
                    "[SEG] ".repeat(s.answer.len())
                );
                RewardRequest {
                    id: format!("{}-{k}", s.id),
                    raw_text: text,
                    masks,
                    gt: GtRef::Id(s.id.clone()),
                }
            })
        })
        .collect();
    let mut g = c.benchmark_group("batch_rewards");
    g.throughput(Throughput::Elements(requests.len() as u64));
    for (label, jobs) in [("sequential", 1), ("parallel", 0)] {
        for scope in [RewardScope::AnswerOnly, RewardScope::Joint] {
            g.bench_function(BenchmarkId::new(label, scope), |bench| {
                bench.iter(|| batch_rewards(&requests, Some(&b), 0.1, scope, jobs))
            });
        }
    }
    g.finish();
}

criterion_group!(benches, bench_evaluate, bench_rewards);
criterion_main!(benches);
