//! CSV and SVG result reporting.
//!
//! The CSV carries one row per pipeline under the fixed header
//! `pipeline,mean_accuracy,std_accuracy,feature_dim,wall_time_s` with six
//! decimal places, preceded by `#`-prefixed metadata lines (seeds, fold
//! and trial counts). The SVG is a bar chart of mean accuracy with error
//! bars plus a log-scale feature-dimension line on a secondary axis.

use super::ExperimentResult;
use crate::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub const CSV_HEADER: &str = "pipeline,mean_accuracy,std_accuracy,feature_dim,wall_time_s";

fn quote_label(label: &str) -> String {
    if label.contains(',') || label.contains('"') || label.contains('\n') {
        format!("\"{}\"", label.replace('"', "\"\""))
    } else {
        label.to_string()
    }
}

/// Render results to CSV text. `meta` lines are emitted first, each
/// prefixed with `# `.
pub fn csv_string(results: &[ExperimentResult], meta: &[String]) -> String {
    let mut out = String::new();
    for line in meta {
        let _ = writeln!(out, "# {line}");
    }
    let _ = writeln!(out, "{CSV_HEADER}");
    for r in results {
        let _ = writeln!(
            out,
            "{},{:.6},{:.6},{},{:.6}",
            quote_label(&r.pipeline),
            r.mean_accuracy,
            r.std_accuracy,
            r.feature_dim,
            r.wall_time
        );
    }
    out
}

pub fn write_csv(results: &[ExperimentResult], meta: &[String], path: &Path) -> Result<()> {
    if results.is_empty() {
        return Err(Error::EmptyInput("results".to_string()));
    }
    std::fs::write(path, csv_string(results, meta)).map_err(|e| Error::io(path, e))
}

/// Parse a results CSV back into [`ExperimentResult`]s (per-unit
/// accuracies are not stored in the file and come back empty).
pub fn parse_csv(text: &str) -> Result<Vec<ExperimentResult>> {
    let mut results = Vec::new();
    let mut saw_header = false;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if !saw_header {
            if line != CSV_HEADER {
                return Err(Error::Parse {
                    file: "results csv".to_string(),
                    line: lineno + 1,
                    message: format!("expected header {CSV_HEADER}"),
                });
            }
            saw_header = true;
            continue;
        }
        let (label, rest) = split_label(line).ok_or_else(|| Error::Parse {
            file: "results csv".to_string(),
            line: lineno + 1,
            message: "malformed row".to_string(),
        })?;
        let fields: Vec<&str> = rest.split(',').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                file: "results csv".to_string(),
                line: lineno + 1,
                message: format!("expected 5 fields, got {}", fields.len() + 1),
            });
        }
        let parse_f = |s: &str, what: &str| -> Result<f64> {
            s.parse::<f64>().map_err(|e| Error::Parse {
                file: "results csv".to_string(),
                line: lineno + 1,
                message: format!("bad {what}: {e}"),
            })
        };
        let mean = parse_f(fields[0], "mean accuracy")?;
        let std = parse_f(fields[1], "std accuracy")?;
        let dim = fields[2].parse::<usize>().map_err(|e| Error::Parse {
            file: "results csv".to_string(),
            line: lineno + 1,
            message: format!("bad feature dim: {e}"),
        })?;
        let wall = parse_f(fields[3], "wall time")?;
        results.push(ExperimentResult {
            pipeline: label,
            mean_accuracy: mean,
            std_accuracy: std,
            feature_dim: dim,
            per_unit: Vec::new(),
            wall_time: wall,
            std_degenerate: false,
        });
    }
    if !saw_header {
        return Err(Error::Parse {
            file: "results csv".to_string(),
            line: 0,
            message: "missing header".to_string(),
        });
    }
    Ok(results)
}

fn split_label(line: &str) -> Option<(String, &str)> {
    if let Some(stripped) = line.strip_prefix('"') {
        let mut label = String::new();
        let mut chars = stripped.char_indices();
        while let Some((i, ch)) = chars.next() {
            if ch == '"' {
                match chars.next() {
                    Some((_, '"')) => label.push('"'),
                    Some((j, ',')) => return Some((label, &stripped[j + 1..])),
                    _ => return None,
                }
            } else {
                label.push(ch);
            }
            let _ = i;
        }
        None
    } else {
        let pos = line.find(',')?;
        Some((line[..pos].to_string(), &line[pos + 1..]))
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

const SVG_W: f64 = 960.0;
const SVG_H: f64 = 540.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 85.0;
const MARGIN_T: f64 = 30.0;
const MARGIN_B: f64 = 130.0;

/// Bar chart with error bars (accuracy, left axis) and a feature-dimension
/// line (log scale, right axis).
pub fn svg_string(results: &[ExperimentResult]) -> String {
    let plot_w = SVG_W - MARGIN_L - MARGIN_R;
    let plot_h = SVG_H - MARGIN_T - MARGIN_B;
    let n = results.len().max(1);
    let slot = plot_w / n as f64;
    let bar_w = slot * 0.6;

    let acc_y = |a: f64| MARGIN_T + plot_h * (1.0 - a.clamp(0.0, 1.0));
    let max_dim = results.iter().map(|r| r.feature_dim).max().unwrap_or(1).max(1);
    let max_exp = (max_dim as f64).log10().ceil().max(1.0);
    let dim_y = |d: usize| {
        let e = (d.max(1) as f64).log10();
        MARGIN_T + plot_h * (1.0 - (e / max_exp).clamp(0.0, 1.0))
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{SVG_W}" height="{SVG_H}" fill="white"/>"#
    );

    // Left axis: accuracy gridlines and tick labels.
    for i in 0..=5 {
        let a = i as f64 / 5.0;
        let y = acc_y(a);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="rgb(221,221,221)" stroke-width="1"/>"#,
            MARGIN_L,
            SVG_W - MARGIN_R
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end" fill="rgb(51,51,51)">{a:.1}</text>"#,
            MARGIN_L - 8.0,
            y + 4.0
        );
    }
    // Right axis: dimension ticks at powers of ten.
    for e in 0..=(max_exp as usize) {
        let y = dim_y(10usize.pow(e as u32));
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="start" fill="rgb(85,85,85)">1e{e}</text>"#,
            SVG_W - MARGIN_R + 8.0,
            y + 4.0
        );
    }

    // Bars with error whiskers.
    for (i, r) in results.iter().enumerate() {
        let cx = MARGIN_L + slot * (i as f64 + 0.5);
        let x = cx - bar_w / 2.0;
        let y = acc_y(r.mean_accuracy);
        let h = (MARGIN_T + plot_h) - y;
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="{x:.2}" y="{y:.2}" width="{bar_w:.2}" height="{h:.2}" fill="rgb(72,120,168)"/>"#
        );
        let lo = acc_y(r.mean_accuracy - r.std_accuracy);
        let hi = acc_y(r.mean_accuracy + r.std_accuracy);
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{lo:.2}" x2="{cx:.2}" y2="{hi:.2}" stroke="rgb(34,34,34)" stroke-width="1.5"/>"#
        );
        for yy in [lo, hi] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{yy:.2}" x2="{:.2}" y2="{yy:.2}" stroke="rgb(34,34,34)" stroke-width="1.5"/>"#,
                cx - 5.0,
                cx + 5.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.2}" font-size="12" text-anchor="end" fill="rgb(51,51,51)" transform="rotate(-40 {cx:.2} {:.2})">{}</text>"#,
            MARGIN_T + plot_h + 16.0,
            MARGIN_T + plot_h + 16.0,
            xml_escape(&r.pipeline)
        );
    }

    // Dimension line on the secondary axis.
    if !results.is_empty() {
        let points: Vec<String> = results
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let cx = MARGIN_L + slot * (i as f64 + 0.5);
                format!("{:.2},{:.2}", cx, dim_y(r.feature_dim))
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline class="dim" points="{}" fill="none" stroke="rgb(17,17,17)" stroke-width="2"/>"#,
            points.join(" ")
        );
        for (i, r) in results.iter().enumerate() {
            let cx = MARGIN_L + slot * (i as f64 + 0.5);
            let _ = writeln!(
                s,
                r#"<circle cx="{cx:.2}" cy="{:.2}" r="3" fill="rgb(17,17,17)"/>"#,
                dim_y(r.feature_dim)
            );
        }
    }

    // Axis frames and captions.
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{:.2}" stroke="rgb(0,0,0)" stroke-width="1"/>"#,
        MARGIN_T + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{MARGIN_L}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="rgb(0,0,0)" stroke-width="1"/>"#,
        MARGIN_T + plot_h,
        SVG_W - MARGIN_R,
        MARGIN_T + plot_h
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" font-size="13" fill="rgb(51,51,51)" transform="rotate(-90 16 {:.2})">accuracy</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" fill="rgb(85,85,85)" transform="rotate(-90 {:.2} {:.2})">feature dimension (log)</text>"#,
        SVG_W - 14.0,
        MARGIN_T + plot_h / 2.0,
        SVG_W - 14.0,
        MARGIN_T + plot_h / 2.0
    );
    s.push_str("</svg>\n");
    s
}

pub fn write_svg(results: &[ExperimentResult], path: &Path) -> Result<()> {
    if results.is_empty() {
        return Err(Error::EmptyInput("results".to_string()));
    }
    std::fs::write(path, svg_string(results)).map_err(|e| Error::io(path, e))
}

/// Write both report files.
pub fn report(
    results: &[ExperimentResult],
    meta: &[String],
    csv_path: &Path,
    svg_path: &Path,
) -> Result<()> {
    write_csv(results, meta, csv_path)?;
    write_svg(results, svg_path)
}
