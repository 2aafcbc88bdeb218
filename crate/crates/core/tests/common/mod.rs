#![allow(dead_code)]

use std::collections::BTreeSet;
use std::io::Write;

use rand::Rng;
use vrt_eval::mask::encode_rle;
use vrt_eval::trace::{AnswerObject, CategoryCounts, TraceObject};
use vrt_eval::{Benchmark, BinaryMask, BoundingBox, Category, PredictionRecord, Sample};

pub const H: u32 = 32;
pub const W: u32 = 64;

pub fn rect(h: u32, w: u32, r0: u32, c0: u32, r1: u32, c1: u32) -> BinaryMask {
    BinaryMask::from_box(h, w, &BoundingBox::new(r0, c0, r1, c1)).unwrap()
}

/// 10x10 square with top-left corner at `(row, col)` on the default canvas.
pub fn square(row: u32, col: u32) -> BinaryMask {
    rect(H, W, row, col, row + 9, col + 9)
}

pub fn random_mask(rng: &mut impl Rng, h: u32, w: u32, density: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(density)).unwrap()
}

pub fn random_rect(rng: &mut impl Rng, h: u32, w: u32) -> BinaryMask {
    let (a, b) = (rng.gen_range(0..h), rng.gen_range(0..h));
    let (c, d) = (rng.gen_range(0..w), rng.gen_range(0..w));
    rect(h, w, a.min(b), c.min(d), a.max(b), c.max(d))
}

/// Category sets for the full-size reference benchmark:
/// 304 samples; comp 102, func 128, loc 132, visf 126; 184 with two tags.
pub fn reference_categories() -> Vec<BTreeSet<Category>> {
    use Category::*;
    let mut out = Vec::new();
    let mut push = |n: usize, cats: &[Category]| {
        for _ in 0..n {
            out.push(cats.iter().copied().collect());
        }
    };
    push(20, &[Comp]);
    push(30, &[Func]);
    push(35, &[Loc]);
    push(35, &[Visf]);
    push(27, &[Comp, Func]);
    push(28, &[Comp, Loc]);
    push(27, &[Comp, Visf]);
    push(38, &[Func, Loc]);
    push(33, &[Func, Visf]);
    push(31, &[Loc, Visf]);
    out
}

pub fn reference_counts() -> CategoryCounts {
    CategoryCounts {
        total: 304,
        comp: 102,
        func: 128,
        loc: 132,
        visf: 126,
        multiple: 184,
    }
}

/// A sample whose trace is `n_trace` disjoint 10x10 squares; the last trace
/// object is also the answer.
pub fn square_sample(id: &str, n_trace: usize, categories: BTreeSet<Category>) -> Sample {
    assert!((1..=4).contains(&n_trace));
    let seed: u32 = id.bytes().map(u32::from).sum();
    let trace: Vec<TraceObject> = (0..n_trace)
        .map(|i| {
            let row = (seed + i as u32 * 7) % (H - 10);
            TraceObject {
                obj: i as u32,
                text: format!("object {i}"),
                mask: square(row, i as u32 * 15),
            }
        })
        .collect();
    let last = trace.last().unwrap();
    let answer = vec![AnswerObject {
        obj: last.obj,
        mask: last.mask.clone(),
    }];
    Sample {
        id: id.to_string(),
        height: H,
        width: W,
        image_ref: format!("images/{id}.jpg"),
        question: "Which object?".into(),
        trace,
        answer_text: "the last one".into(),
        answer,
        categories,
    }
}

pub fn reference_benchmark() -> Benchmark {
    let samples = reference_categories()
        .into_iter()
        .enumerate()
        .map(|(i, cats)| square_sample(&format!("vrt-{i:04}"), 1 + i % 3, cats))
        .collect();
    Benchmark::new(samples, Some(reference_counts())).unwrap()
}

pub fn small_benchmark(n: usize) -> Benchmark {
    let cats = reference_categories();
    let samples = (0..n)
        .map(|i| {
            square_sample(
                &format!("s{i:03}"),
                1 + i % 4,
                cats[i * 7 % cats.len()].clone(),
            )
        })
        .collect();
    Benchmark::new(samples, None).unwrap()
}

fn prediction(id: &str, trace: &[BinaryMask], answer: &[BinaryMask]) -> PredictionRecord {
    let mut text = String::from("<think>");
    for i in 0..trace.len() {
        text.push_str(&format!("step {i} looks at [SEG]. "));
    }
    text.push_str("</think><answer>it is");
    for _ in answer {
        text.push_str(" [SEG]");
    }
    text.push_str("</answer>");
    PredictionRecord {
        id: id.to_string(),
        raw_text: text,
        masks: trace.iter().chain(answer).map(encode_rle).collect(),
    }
}

pub fn perfect_predictions(b: &Benchmark) -> Vec<PredictionRecord> {
    b.samples
        .iter()
        .map(|s| {
            let trace: Vec<_> = s.trace_masks().cloned().collect();
            let answer: Vec<_> = s.answer_masks().cloned().collect();
            prediction(&s.id, &trace, &answer)
        })
        .collect()
}

fn shift_cols(m: &BinaryMask, d: u32) -> BinaryMask {
    let mut out = BinaryMask::empty(m.height(), m.width()).unwrap();
    for (r, c) in m.pixels() {
        out.set(r, c + d, true);
    }
    out
}

/// Every mask moved `d` columns to the right.
pub fn shifted_predictions(b: &Benchmark, d: u32) -> Vec<PredictionRecord> {
    b.samples
        .iter()
        .map(|s| {
            let trace: Vec<_> = s.trace_masks().map(|m| shift_cols(m, d)).collect();
            let answer: Vec<_> = s.answer_masks().map(|m| shift_cols(m, d)).collect();
            prediction(&s.id, &trace, &answer)
        })
        .collect()
}

/// Exact answers with no reasoning trace at all.
pub fn trace_free_predictions(b: &Benchmark) -> Vec<PredictionRecord> {
    b.samples
        .iter()
        .map(|s| {
            let answer: Vec<_> = s.answer_masks().cloned().collect();
            PredictionRecord {
                id: s.id.clone(),
                raw_text: format!("<answer>It is{}</answer>", " [SEG]".repeat(answer.len())),
                masks: answer.iter().map(encode_rle).collect(),
            }
        })
        .collect()
}

pub fn write_manifest(b: &Benchmark) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    b.write_jsonl(&mut f).unwrap();
    f.flush().unwrap();
    f
}

pub fn write_jsonl<T: serde::Serialize>(items: &[T]) -> tempfile::NamedTempFile {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    for it in items {
        serde_json::to_writer(&mut f, it).unwrap();
        writeln!(f).unwrap();
    }
    f.flush().unwrap();
    f
}

/// Maximum total weight over all injective partial pairings, by exhaustive
/// enumeration.
pub fn brute_force_max(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let mut best = go(w, row + 1, used);
        for c in 0..used.len() {
            if !used[c] {
                used[c] = true;
                best = best.max(w[row][c] + go(w, row + 1, used));
                used[c] = false;
            }
        }
        best
    }
    let cols = w.first().map_or(0, Vec::len);
    go(w, 0, &mut vec![false; cols])
}
