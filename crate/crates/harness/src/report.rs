//! `report`: compare evaluation bundles as markdown tables, a summary CSV and
//! grouped bar plots.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use imagecore::io::write_png;
use imagecore::Image;
use metrics::report::{aggregate, Aggregate};
use serde::{Deserialize, Serialize};

use crate::config::{ReportEntry, RunConfig};
use crate::error::{HarnessError, IoContext, Result};
use crate::eval::Bundle;

pub const REPORT_FILE: &str = "report.md";
pub const SUMMARY_FILE: &str = "summary.csv";

const BAR_COLORS: [[f32; 3]; 8] = [
    [0.12, 0.47, 0.71],
    [1.0, 0.50, 0.05],
    [0.17, 0.63, 0.17],
    [0.84, 0.15, 0.16],
    [0.58, 0.40, 0.74],
    [0.55, 0.34, 0.29],
    [0.89, 0.47, 0.76],
    [0.50, 0.50, 0.50],
];

/// One `(model, task, metric)` aggregate; the rows of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub task: String,
    pub metric: String,
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub markdown: PathBuf,
    pub csv: PathBuf,
    pub plots: Vec<PathBuf>,
    pub rows: Vec<SummaryRow>,
}

fn fmt_value(v: f64) -> String {
    if v.is_nan() {
        "nan".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.3}")
    }
}

/// `mean ± s.d.` with three decimals.
pub fn fmt_cell(a: &Aggregate) -> String {
    let sd = if a.mean.is_infinite() && a.sd.is_nan() { 0.0 } else { a.sd };
    format!("{} ± {}", fmt_value(a.mean), fmt_value(sd))
}

/// Aggregates every metric of every task of every named bundle.
pub fn summarize(bundles: &[(String, Bundle)]) -> Vec<SummaryRow> {
    let mut rows = Vec::new();
    for (name, bundle) in bundles {
        for (task, report) in &bundle.reports {
            for metric in report.metrics() {
                let a = aggregate(&report.values(&metric));
                rows.push(SummaryRow { model: name.clone(), task: task.clone(), metric, mean: a.mean, sd: a.sd, n: a.n });
            }
        }
    }
    rows
}

pub fn render_markdown(rows: &[SummaryRow]) -> String {
    let tasks: BTreeSet<&str> = rows.iter().map(|r| r.task.as_str()).collect();
    let mut out = String::from("# Evaluation report\n");
    for task in tasks {
        let in_task: Vec<&SummaryRow> = rows.iter().filter(|r| r.task == task).collect();
        let metrics: BTreeSet<&str> = in_task.iter().map(|r| r.metric.as_str()).collect();
        let mut models: Vec<&str> = Vec::new();
        for r in &in_task {
            if !models.contains(&r.model.as_str()) {
                models.push(&r.model);
            }
        }
        let _ = writeln!(out, "\n## {task}\n");
        let _ = writeln!(out, "| model | {} |", metrics.iter().copied().collect::<Vec<_>>().join(" | "));
        let _ = writeln!(out, "|---|{}", "---|".repeat(metrics.len()));
        for model in models {
            let cells: Vec<String> = metrics
                .iter()
                .map(|m| {
                    in_task
                        .iter()
                        .find(|r| r.model == model && r.metric == *m)
                        .map(|r| fmt_cell(&Aggregate { mean: r.mean, sd: r.sd, n: r.n }))
                        .unwrap_or_else(|| "-".into())
                })
                .collect();
            let _ = writeln!(out, "| {model} | {} |", cells.join(" | "));
        }
    }
    out
}

pub fn write_summary_csv(rows: &[SummaryRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    }
    w.flush().at(path)
}

pub fn read_summary_csv(path: &Path) -> Result<Vec<SummaryRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| HarnessError::Runtime(format!("{}: {e}", path.display())))?;
    r.deserialize().map(|row| row.map_err(|e| HarnessError::Runtime(e.to_string()))).collect()
}

/// Grouped bars: one group per metric, one bar per model. Each metric is
/// scaled by its largest finite mean so different ranges share an axis.
pub fn bar_plot(rows: &[SummaryRow], task: &str) -> Image {
    let in_task: Vec<&SummaryRow> = rows.iter().filter(|r| r.task == task).collect();
    let metrics: Vec<&str> = in_task.iter().map(|r| r.metric.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
    let mut models: Vec<&str> = Vec::new();
    for r in &in_task {
        if !models.contains(&r.model.as_str()) {
            models.push(&r.model);
        }
    }
    let (bar, gap, margin, plot_h) = (8usize, 8usize, 8usize, 96usize);
    let group_w = models.len() * bar + gap;
    let w = 2 * margin + metrics.len().max(1) * group_w;
    let h = plot_h + 2 * margin;
    let mut img = Image::new(w, h, 3);
    for y in 0..h {
        for x in 0..w {
            img.set_pixel(x, y, &[1.0, 1.0, 1.0]);
        }
    }
    let base = margin + plot_h;
    for x in margin..w - margin {
        img.set_pixel(x, base, &[0.0, 0.0, 0.0]);
    }
    for (g, metric) in metrics.iter().enumerate() {
        let scale = in_task
            .iter()
            .filter(|r| r.metric == *metric && r.mean.is_finite())
            .map(|r| r.mean.abs())
            .fold(0.0f64, f64::max);
        for (k, model) in models.iter().enumerate() {
            let Some(r) = in_task.iter().find(|r| r.metric == *metric && r.model == *model) else { continue };
            let frac = |v: f64| {
                if v.is_nan() {
                    0.0
                } else if v.is_infinite() {
                    if v > 0.0 { 1.0 } else { 0.0 }
                } else if scale > 0.0 {
                    (v.abs() / scale).clamp(0.0, 1.0)
                } else {
                    0.0
                }
            };
            let top = base - (frac(r.mean) * plot_h as f64).round() as usize;
            let x0 = margin + g * group_w + gap / 2 + k * bar;
            for x in x0..x0 + bar - 1 {
                for y in top..base {
                    img.set_pixel(x, y, &BAR_COLORS[k % BAR_COLORS.len()]);
                }
            }
            if r.mean.is_finite() && r.sd.is_finite() && r.sd > 0.0 {
                let hi = base - (frac(r.mean.abs() + r.sd) * plot_h as f64).round() as usize;
                let lo = base - (frac((r.mean.abs() - r.sd).max(0.0)) * plot_h as f64).round() as usize;
                let cx = x0 + bar / 2 - 1;
                for y in hi..=lo.min(base) {
                    img.set_pixel(cx, y, &[0.1, 0.1, 0.1]);
                }
            }
        }
    }
    img
}

/// Loads the bundles named in `entries` and writes `report.md`,
/// `summary.csv` and `plots/<task>.png` under the configured output.
pub fn cmd_report(cfg: &RunConfig, entries: &[ReportEntry]) -> Result<ReportSummary> {
    cfg.validate()?;
    if entries.is_empty() {
        return Err(HarnessError::Config("report: no bundles given".into()));
    }
    let out = cfg.out()?.to_path_buf();
    let bundles = entries
        .iter()
        .map(|e| Ok((e.name.clone(), Bundle::load(&e.bundle)?)))
        .collect::<Result<Vec<_>>>()?;
    let rows = summarize(&bundles);
    if rows.is_empty() {
        return Err(HarnessError::Runtime("report: the bundles hold no metric rows".into()));
    }
    let plots_dir = out.join("plots");
    std::fs::create_dir_all(&plots_dir).at(&plots_dir)?;
    let markdown = out.join(REPORT_FILE);
    std::fs::write(&markdown, render_markdown(&rows)).at(&markdown)?;
    let csv = out.join(SUMMARY_FILE);
    write_summary_csv(&rows, &csv)?;
    let tasks: BTreeMap<&str, ()> = rows.iter().map(|r| (r.task.as_str(), ())).collect();
    let mut plots = Vec::new();
    for task in tasks.keys() {
        let path = plots_dir.join(format!("{task}.png"));
        write_png(&bar_plot(&rows, task), &path)?;
        plots.push(path);
    }
    Ok(ReportSummary { markdown, csv, plots, rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_sample_has_zero_sd() {
        let a = aggregate(&[0.5]);
        assert_eq!(fmt_cell(&a), "0.500 ± 0.000");
    }

    #[test]
    fn infinite_mean_renders() {
        let a = aggregate(&[f64::INFINITY, f64::INFINITY]);
        assert_eq!(fmt_cell(&a), "inf ± 0.000");
    }
}
