//! `vrt-eval`: batch evaluation, manifest validation, offline rewards and
//! report rendering.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error.

use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result, anyhow};
use clap::{Args, Parser, Subcommand};
use serde_json::Value;

use vrt_eval::mask::{decode_rle, encode_rle, tight_box};
use vrt_eval::report::{Format, render};
use vrt_eval::reward::{RewardRequest, batch_rewards};
use vrt_eval::{
    BinaryMask, LqAggregation, MetricsReport, Mode, RewardScope, RleCounts, RunConfig,
    evaluate_predictions, load_manifest,
};

#[derive(Parser)]
#[command(
    name = "vrt-eval",
    version,
    about = "Evaluate grounded reasoning traces and compute rewards"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score a predictions file against a benchmark manifest.
    Evaluate(EvaluateArgs),
    /// Load a manifest and verify every sample and declared count.
    Validate(ValidateArgs),
    /// Compute rewards for a JSONL file of reward requests.
    Reward(RewardArgs),
    /// Re-render a JSON report in another format.
    Report(ReportArgs),
    /// Replace every RLE mask in a JSONL file by its filled bounding box.
    ConvertBox(ConvertBoxArgs),
}

/// Settings shared by `evaluate` and `reward`. Flags override the config file.
#[derive(Args)]
struct Common {
    /// TOML file with run settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long, value_parser = ["mask", "box"])]
    mode: Option<String>,
    #[arg(long = "lambda")]
    lambda: Option<f64>,
    #[arg(long = "lq-agg", value_parser = ["macro", "micro"])]
    lq_agg: Option<String>,
    #[arg(long = "reward-scope", value_parser = ["answer_only", "joint"])]
    reward_scope: Option<String>,
    /// Worker threads (0 = all cores).
    #[arg(long, env = "VRT_EVAL_JOBS")]
    jobs: Option<usize>,
    #[arg(long, value_parser = ["csv", "table", "json"])]
    format: Option<String>,
    /// Output file (stdout when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn config(&self) -> Result<RunConfig, Usage> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path)
                    .map_err(|e| Usage(format!("cannot read config {}: {e}", path.display())))?;
                toml::from_str(&text)
                    .map_err(|e| Usage(format!("invalid config {}: {e}", path.display())))?
            }
            None => RunConfig::default(),
        };
        if let Some(t) = self.tau {
            cfg.tau = t;
        }
        if let Some(m) = &self.mode {
            cfg.mode = m.parse::<Mode>().map_err(Usage)?;
        }
        if let Some(l) = self.lambda {
            cfg.lambda = l;
        }
        if let Some(a) = &self.lq_agg {
            cfg.lq_aggregation = a.parse::<LqAggregation>().map_err(Usage)?;
        }
        if let Some(s) = &self.reward_scope {
            cfg.reward_gt_scope = s.parse::<RewardScope>().map_err(Usage)?;
        }
        if let Some(j) = self.jobs {
            cfg.jobs = j;
        }
        if let Some(f) = &self.format {
            cfg.format = f.parse::<Format>().map_err(Usage)?;
        }
        cfg.validate().map_err(Usage)?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    predictions: PathBuf,
    #[command(flatten)]
    common: Common,
    /// Leave samples without predictions out instead of scoring them as empty.
    #[arg(long)]
    skip_missing: bool,
    /// Ignore prediction ids that are not in the manifest.
    #[arg(long)]
    no_strict_ids: bool,
    /// Write run diagnostics (missing ids, parse failures, ...) as JSON.
    #[arg(long)]
    diagnostics: Option<PathBuf>,
    /// Write per-sample scores as JSONL.
    #[arg(long)]
    per_sample: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    manifest: PathBuf,
}

#[derive(Args)]
struct RewardArgs {
    /// JSONL reward requests.
    #[arg(long)]
    requests: PathBuf,
    /// Manifest used to resolve ground truth given by id.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[command(flatten)]
    common: Common,
}

#[derive(Args)]
struct ReportArgs {
    /// JSON report produced by `evaluate --format json`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_parser = ["csv", "table", "json"], default_value = "table")]
    format: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ConvertBoxArgs {
    /// Manifest or predictions JSONL.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Bad invocation or configuration; exits with 1.
#[derive(Debug)]
struct Usage(String);

enum Failure {
    Usage(String),
    Data(anyhow::Error),
}

impl From<Usage> for Failure {
    fn from(u: Usage) -> Self {
        Failure::Usage(u.0)
    }
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Data(e)
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = io::stdout().lock();
            stdout.write_all(text.as_bytes())?;
            stdout.flush()?;
            Ok(())
        }
    }
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let mut cfg = args.common.config()?;
    cfg.skip_missing |= args.skip_missing;
    if args.no_strict_ids {
        cfg.strict_ids = false;
    }
    let eval =
        evaluate_predictions(&args.manifest, &args.predictions, &cfg).map_err(|e| anyhow!(e))?;
    write_output(
        args.common.out.as_deref(),
        &render(&eval.report, cfg.format),
    )?;

    let d = &eval.diagnostics;
    if !d.missing.is_empty() || !d.failures.is_empty() || !d.unknown.is_empty() {
        eprintln!(
            "vrt-eval: {} missing, {} failed, {} unknown prediction ids, {} format violations",
            d.missing.len(),
            d.failures.len(),
            d.unknown.len(),
            d.format_violations.len()
        );
    }
    if let Some(path) = &args.diagnostics {
        let json = serde_json::to_string_pretty(d).map_err(|e| anyhow!(e))?;
        write_output(Some(path), &(json + "\n"))?;
    }
    if let Some(path) = &args.per_sample {
        let mut text = String::new();
        for s in &eval.scores {
            text.push_str(&serde_json::to_string(s).map_err(|e| anyhow!(e))?);
            text.push('\n');
        }
        write_output(Some(path), &text)?;
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<(), Failure> {
    let bench = load_manifest(&args.manifest).map_err(|e| anyhow!(e))?;
    let c = bench.counts();
    let source = if bench.declared_counts.is_some() {
        "verified against header"
    } else {
        "no declared counts in header"
    };
    println!(
        "ok: {} samples (comp {}, func {}, loc {}, visf {}, multiple {}); {source}",
        c.total, c.comp, c.func, c.loc, c.visf, c.multiple
    );
    Ok(())
}

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line)
                .with_context(|| format!("{} line {}", path.display(), i + 1))?,
        );
    }
    Ok(out)
}

fn cmd_reward(args: RewardArgs) -> Result<(), Failure> {
    let cfg = args.common.config()?;
    let bench = match &args.manifest {
        Some(p) => Some(load_manifest(p).map_err(|e| anyhow!(e))?),
        None => None,
    };
    let requests: Vec<RewardRequest> = read_jsonl(&args.requests)?;
    let responses = batch_rewards(
        &requests,
        bench.as_ref(),
        cfg.lambda,
        cfg.reward_gt_scope,
        cfg.jobs,
    );
    let mut text = String::new();
    let mut failed = 0;
    for r in &responses {
        failed += r.error.is_some() as usize;
        text.push_str(&serde_json::to_string(r).map_err(|e| anyhow!(e))?);
        text.push('\n');
    }
    write_output(args.common.out.as_deref(), &text)?;
    if failed > 0 {
        return Err(Failure::Data(anyhow!(
            "{failed} of {} requests failed",
            responses.len()
        )));
    }
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    let format: Format = args.format.parse().map_err(Usage)?;
    let text = fs::read_to_string(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let report: MetricsReport = serde_json::from_str(&text)
        .with_context(|| format!("{} is not a JSON report", args.input.display()))?;
    write_output(args.out.as_deref(), &render(&report, format))?;
    Ok(())
}

fn boxed(rle: &RleCounts) -> Result<RleCounts> {
    let mask = decode_rle(rle)?;
    Ok(match tight_box(&mask) {
        Ok(b) => encode_rle(&BinaryMask::from_box(mask.height(), mask.width(), &b)?),
        Err(_) => rle.clone(),
    })
}

/// Rewrites every `{"size": [h, w], "counts": [...]}` object in place.
fn box_masks(value: &mut Value) -> Result<()> {
    match value {
        Value::Object(map) if map.contains_key("size") && map.contains_key("counts") => {
            let rle: RleCounts = serde_json::from_value(value.clone())?;
            *value = serde_json::to_value(boxed(&rle)?)?;
        }
        Value::Object(map) => {
            for v in map.values_mut() {
                box_masks(v)?;
            }
        }
        Value::Array(items) => {
            for v in items {
                box_masks(v)?;
            }
        }
        _ => {}
    }
    Ok(())
}

fn cmd_convert_box(args: ConvertBoxArgs) -> Result<(), Failure> {
    let records: Vec<Value> = read_jsonl(&args.input)?;
    let mut text = String::new();
    for (i, mut v) in records.into_iter().enumerate() {
        box_masks(&mut v).with_context(|| format!("record {}", i + 1))?;
        text.push_str(&serde_json::to_string(&v).map_err(|e| anyhow!(e))?);
        text.push('\n');
    }
    write_output(args.out.as_deref(), &text)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Reward(a) => cmd_reward(a),
        Command::Report(a) => cmd_report(a),
        Command::ConvertBox(a) => cmd_convert_box(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("vrt-eval: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Data(e)) => {
            eprintln!("vrt-eval: {e:#}");
            ExitCode::from(2)
        }
    }
}
