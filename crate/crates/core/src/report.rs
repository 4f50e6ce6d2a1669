//! Multi-run summaries: mean and spread of accuracies over seeds.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{read_records, MetricsRecord, Protocol, RECORDS_FILE};
use crate::trainer::{read_metrics, METRICS_FILE};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StdMode {
    /// Divides by `n - 1`.
    #[default]
    Sample,
    /// Divides by `n`.
    Population,
}

/// Mean and standard deviation; the deviation is `None` for a single value.
pub fn mean_std(values: &[f64], mode: StdMode) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    let denom = match mode {
        StdMode::Sample => n - 1.0,
        StdMode::Population => n,
    };
    (mean, Some((ss / denom).sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub protocol: Protocol,
    pub target: String,
    pub runs: usize,
    pub mean: f64,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportOptions {
    pub std_mode: StdMode,
    pub loss_curve: bool,
}

/// Latest record per protocol from each run, grouped by protocol.
pub fn collect(run_dirs: &[PathBuf]) -> Result<BTreeMap<Protocol, Vec<MetricsRecord>>> {
    let mut missing = Vec::new();
    let mut groups: BTreeMap<Protocol, Vec<MetricsRecord>> = BTreeMap::new();
    for dir in run_dirs {
        match read_records(dir) {
            Ok(records) if !records.is_empty() => {
                let mut latest: BTreeMap<Protocol, MetricsRecord> = BTreeMap::new();
                for r in records {
                    latest.insert(r.protocol, r);
                }
                for (p, r) in latest {
                    groups.entry(p).or_default().push(r);
                }
            }
            _ => missing.push(dir.display().to_string()),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Data(format!("no {RECORDS_FILE} found in: {}", missing.join(", "))));
    }
    Ok(groups)
}

/// One row per (protocol, target) plus an `average` row per protocol.
pub fn summarize(groups: &BTreeMap<Protocol, Vec<MetricsRecord>>, mode: StdMode) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (protocol, records) in groups {
        let mut per: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in records {
            for (t, a) in &r.per_target {
                per.entry(t.as_str()).or_default().push(*a);
            }
        }
        for (t, v) in per {
            let (mean, std) = mean_std(&v, mode);
            rows.push(SummaryRow { protocol: *protocol, target: t.to_string(), runs: v.len(), mean, std });
        }
        let avgs: Vec<f64> = records.iter().map(|r| r.average).collect();
        let (mean, std) = mean_std(&avgs, mode);
        rows.push(SummaryRow { protocol: *protocol, target: "average".into(), runs: avgs.len(), mean, std });
    }
    rows
}

fn fmt_std(s: Option<f64>) -> String {
    s.map(|v| format!("{v:.4}")).unwrap_or_default()
}

/// Writes `report.md`, `report.csv` and optionally `loss_curve.svg` to `out`.
pub fn write_report(run_dirs: &[PathBuf], out: &Path, opts: &ReportOptions) -> Result<Vec<SummaryRow>> {
    let groups = collect(run_dirs)?;
    let rows = summarize(&groups, opts.std_mode);
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;

    let csv_path = out.join("report.csv");
    let mut w = csv::Writer::from_path(&csv_path)?;
    w.write_record(["protocol", "target", "runs", "mean", "std"])?;
    for r in &rows {
        w.write_record([r.protocol.name().to_string(), r.target.clone(), r.runs.to_string(), format!("{:.6}", r.mean), r.std.map(|s| format!("{s:.6}")).unwrap_or_default()])?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;

    let mode = match opts.std_mode {
        StdMode::Sample => "sample (n-1)",
        StdMode::Population => "population (n)",
    };
    let mut md = String::new();
    let _ = writeln!(md, "# Accuracy summary\n\nRuns: {}. Standard deviation: {mode}.", run_dirs.len());
    for (protocol, records) in &groups {
        let _ = writeln!(md, "\n## {}\n", protocol.name());
        let selections: Vec<&str> = records.iter().filter_map(|r| r.selection.as_deref()).collect();
        if let Some(s) = selections.first() {
            let _ = writeln!(md, "Model selection: {s}.\n");
        }
        let _ = writeln!(md, "| target | runs | mean | std |\n|---|---|---|---|");
        for r in rows.iter().filter(|r| r.protocol == *protocol) {
            let _ = writeln!(md, "| {} | {} | {:.4} | {} |", r.target, r.runs, r.mean, fmt_std(r.std));
        }
    }
    let md_path = out.join("report.md");
    std::fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;

    if opts.loss_curve {
        let svg = loss_curve_svg(run_dirs)?;
        let p = out.join("loss_curve.svg");
        std::fs::write(&p, svg).map_err(|e| Error::io(&p, e))?;
    }
    Ok(rows)
}

/// Total loss against iteration, one polyline per run.
pub fn loss_curve_svg(run_dirs: &[PathBuf]) -> Result<String> {
    let (w, h, pad) = (640.0, 400.0, 40.0);
    let mut series = Vec::new();
    for d in run_dirs {
        let m = read_metrics(d).map_err(|_| Error::Data(format!("{}: no {METRICS_FILE} for the loss curve", d.display())))?;
        series.push(m.into_iter().map(|l| (l.iter as f64, l.total)).collect::<Vec<_>>());
    }
    let pts = series.iter().flatten();
    let (xmax, ymin, ymax) = pts.fold((1.0f64, f64::INFINITY, f64::NEG_INFINITY), |(a, b, c), (x, y)| (a.max(*x), b.min(*y), c.max(*y)));
    let yspan = if ymax > ymin { ymax - ymin } else { 1.0 };
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{pad}" y="20" font-size="12">total loss, iterations 0..{xmax}, range {ymin:.3}..{ymax:.3}</text>"#);
    for (i, line) in series.iter().enumerate() {
        let coords: Vec<String> = line
            .iter()
            .map(|(x, y)| format!("{:.1},{:.1}", pad + x / xmax * (w - 2.0 * pad), h - pad - (y - ymin) / yspan * (h - 2.0 * pad)))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#, colors[i % colors.len()], coords.join(" "));
    }
    s.push_str("</svg>\n");
    Ok(s)
}
