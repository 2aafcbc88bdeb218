//! Renders a [`MetricsReport`] as an aligned text table, CSV or JSON.
//!
//! Output is a pure function of the report: no timestamps, no run metadata.

use std::fmt::Write as _;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::metrics::{MetricsReport, ReportCell};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    #[default]
    Table,
    Json,
}

impl FromStr for Format {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(Format::Csv),
            "table" => Ok(Format::Table),
            "json" => Ok(Format::Json),
            _ => Err(format!("unknown format {s:?} (expected csv|table|json)")),
        }
    }
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |v| format!("{v:.1}"))
}

fn heading(c: &ReportCell) -> String {
    if c.group == "overall" {
        "Overall".to_string()
    } else {
        format!("#{}", c.group)
    }
}

pub fn render(report: &MetricsReport, format: Format) -> String {
    match format {
        Format::Table => render_table(report),
        Format::Csv => render_csv(report),
        Format::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

const LABEL: usize = 8;
const COL: usize = 6;
const BLOCK: usize = 3 * COL + 2;

fn render_table(r: &MetricsReport) -> String {
    let cells: Vec<&ReportCell> = r.cells().collect();
    let mut out = String::new();
    writeln!(out, "mode={} tau={} lq={}", r.mode, r.tau, r.lq_aggregation).unwrap();

    let mut groups = format!("{:LABEL$}", "");
    let mut cols = format!("{:LABEL$}", "");
    let mut values = format!("{:LABEL$}", "score");
    let mut counts = format!("{:LABEL$}", "samples");
    for c in &cells {
        write!(groups, " |{:^BLOCK$}", heading(c)).unwrap();
        write!(cols, " | {:>COL$}{:>COL$}{:>COL$} ", "R-LQ", "R-VQ", "A").unwrap();
        write!(
            values,
            " | {:>COL$}{:>COL$}{:>COL$} ",
            cell(c.r_lq),
            cell(c.r_vq),
            cell(c.a)
        )
        .unwrap();
        write!(counts, " | {:>w$} ", c.samples, w = 3 * COL).unwrap();
    }
    for line in [groups, cols, values, counts] {
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn render_csv(r: &MetricsReport) -> String {
    let mut header = vec!["mode".to_string(), "tau".into(), "lq_agg".into()];
    let mut row = vec![
        r.mode.to_string(),
        r.tau.to_string(),
        r.lq_aggregation.to_string(),
    ];
    for c in r.cells() {
        for (name, v) in [
            ("r_lq", cell(c.r_lq)),
            ("r_vq", cell(c.r_vq)),
            ("a", cell(c.a)),
            ("samples", c.samples.to_string()),
        ] {
            header.push(format!("{}_{name}", c.group));
            row.push(v);
        }
    }
    format!("{}\n{}\n", header.join(","), row.join(","))
}
