//! ROC AUC and the curve/sweep reports built on it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::model::TrainReport;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("ROC AUC needs at least one positive and one negative (got {n_pos} / {n_neg})")]
    SingleClass { n_pos: u64, n_neg: u64 },
    #[error("score at index {0} is NaN")]
    NanScore(usize),
    #[error("score/label length mismatch ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("nothing to report")]
    Empty,
    #[error("malformed curve file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocResult {
    pub auc: f64,
    pub n_pos: u64,
    pub n_neg: u64,
}

/// Rank-based (Mann–Whitney) ROC AUC. Ties between a positive and a negative
/// count one half. The statistic is accumulated as the integer `2U` and
/// divided once at the end.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<RocResult, EvalError> {
    if scores.len() != labels.len() {
        return Err(EvalError::LengthMismatch(scores.len(), labels.len()));
    }
    if let Some(i) = scores.iter().position(|s| s.is_nan()) {
        return Err(EvalError::NanScore(i));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u64;
    let n_neg = labels.len() as u64 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(EvalError::SingleClass { n_pos, n_neg });
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // -0.0 and 0.0 must tie
    let key = |i: usize| if scores[i] == 0.0 { 0.0 } else { scores[i] };
    let mut twice_u: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && key(order[end]) == key(order[start]) {
            end += 1;
        }
        let group = &order[start..end];
        let pos = group.iter().filter(|&&i| labels[i]).count() as u128;
        let neg = group.len() as u128 - pos;
        twice_u += pos * (2 * neg_below + neg);
        neg_below += neg;
        start = end;
    }
    let auc = twice_u as f64 / (2 * n_pos as u128 * n_neg as u128) as f64;
    Ok(RocResult { auc, n_pos, n_neg })
}

/// One row of a learning-curve file.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub step: u64,
    pub method: String,
    pub train_loss: Option<f64>,
    pub test_loss: Option<f64>,
    pub test_auc: Option<f64>,
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(crate::fmt_f64).unwrap_or_default()
}

/// Flattens reports into rows on the union of all step grids. Steps a method
/// did not record appear with empty cells.
pub fn curve_rows(reports: &[(String, TrainReport)]) -> Result<Vec<CurveRow>, EvalError> {
    if reports.is_empty() {
        return Err(EvalError::Empty);
    }
    let steps: BTreeSet<u64> = reports
        .iter()
        .flat_map(|(_, r)| r.records.iter().map(|rec| rec.step))
        .collect();
    let mut rows = Vec::new();
    for &step in &steps {
        for (method, report) in reports {
            let rec = report.records.iter().find(|r| r.step == step);
            rows.push(CurveRow {
                step,
                method: method.clone(),
                train_loss: rec.map(|r| r.train_loss),
                test_loss: rec.and_then(|r| r.test_loss),
                test_auc: rec.map(|r| r.test_auc),
            });
        }
    }
    Ok(rows)
}

pub fn write_curve_csv<W: Write>(mut out: W, rows: &[CurveRow]) -> std::io::Result<()> {
    writeln!(out, "step,method,train_loss,test_loss,test_auc")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.step,
            r.method,
            opt_cell(r.train_loss),
            opt_cell(r.test_loss),
            opt_cell(r.test_auc)
        )?;
    }
    Ok(())
}

pub fn read_curve_csv(text: &str) -> Result<Vec<CurveRow>, EvalError> {
    let mut lines = text.lines();
    if lines.next() != Some("step,method,train_loss,test_loss,test_auc") {
        return Err(EvalError::Parse("bad header".into()));
    }
    let parse_opt = |s: &str, line: usize| -> Result<Option<f64>, EvalError> {
        if s.is_empty() {
            Ok(None)
        } else {
            s.parse()
                .map(Some)
                .map_err(|_| EvalError::Parse(format!("line {line}: bad number `{s}`")))
        }
    };
    lines
        .enumerate()
        .map(|(i, line)| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 5 {
                return Err(EvalError::Parse(format!("line {}: expected 5 cells", i + 2)));
            }
            Ok(CurveRow {
                step: cells[0]
                    .parse()
                    .map_err(|_| EvalError::Parse(format!("line {}: bad step", i + 2)))?,
                method: cells[1].to_string(),
                train_loss: parse_opt(cells[2], i + 2)?,
                test_loss: parse_opt(cells[3], i + 2)?,
                test_auc: parse_opt(cells[4], i + 2)?,
            })
        })
        .collect()
}

/// A named polyline for [`line_chart_svg`].
pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Minimal SVG 1.1 line chart with axes, tick labels and a legend.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series<'_>], log_x: bool) -> String {
    let (w, h) = (720.0, 440.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let tx = |x: f64| if log_x { x.max(f64::MIN_POSITIVE).log10() } else { x };
    let pts = series.iter().flat_map(|s| s.points.iter()).filter(|p| p.1.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(tx(x));
        x1 = x1.max(tx(x));
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-12 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-12 {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let sx = |x: f64| left + (tx(x) - x0) / (x1 - x0) * pw;
    let sy = |y: f64| top + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="24" font-family="sans-serif" font-size="15" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        xml_escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let f = i as f64 / 5.0;
        let yv = y0 + f * (y1 - y0);
        let xv = x0 + f * (x1 - x0);
        let xv_label = if log_x { 10f64.powf(xv) } else { xv };
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="end">{:.4}</text>"#,
            left - 6.0,
            sy(yv) + 4.0,
            yv
        );
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            left + f * pw,
            top + ph + 16.0,
            fmt_tick(xv_label)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"#,
        left + pw / 2.0,
        h - 10.0,
        xml_escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="16" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
        top + ph / 2.0,
        top + ph / 2.0,
        xml_escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                svg,
                r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
                path.join(" ")
            );
        }
        let ly = top + 14.0 + 18.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            w - right + 10.0,
            w - right + 30.0,
            w - right + 36.0,
            ly + 4.0,
            xml_escape(s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn fmt_tick(v: f64) -> String {
    if v.abs() >= 1e4 {
        format!("{v:.1e}")
    } else if v.fract().abs() < 1e-9 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<stem>.csv` and `<stem>.svg` (test AUC vs step) for the reports.
pub fn learning_curve(reports: &[(String, TrainReport)], dir: &Path, stem: &str) -> Result<Vec<CurveRow>, EvalError> {
    let rows = curve_rows(reports)?;
    let mut csv = Vec::new();
    write_curve_csv(&mut csv, &rows)?;
    std::fs::write(dir.join(format!("{stem}.csv")), csv)?;
    let series: Vec<Series<'_>> = reports
        .iter()
        .map(|(name, r)| Series {
            name,
            points: r.records.iter().map(|rec| (rec.step as f64, rec.test_auc)).collect(),
        })
        .collect();
    let svg = line_chart_svg("Test ROC AUC during training", "step", "test ROC AUC", &series, false);
    std::fs::write(dir.join(format!("{stem}.svg")), svg)?;
    Ok(rows)
}

/// Outcome of one (size, method, seed) sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub enum CellOutcome {
    Auc(f64),
    Diverged { step: u64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub size: usize,
    pub method: String,
    pub seed: u64,
    pub outcome: CellOutcome,
}

/// Mean and standard deviation of the final AUC per (size, method).
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub size: usize,
    pub method: String,
    pub mean_auc: Option<f64>,
    pub std_auc: Option<f64>,
    pub n_ok: usize,
    pub n_diverged: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SweepTable {
    pub cells: Vec<SweepCell>,
}

impl SweepTable {
    /// Summaries in (size, method) order of first appearance of the method.
    pub fn summary(&self) -> Vec<SweepSummary> {
        let mut method_order: Vec<&str> = Vec::new();
        for c in &self.cells {
            if !method_order.contains(&c.method.as_str()) {
                method_order.push(&c.method);
            }
        }
        let sizes: BTreeSet<usize> = self.cells.iter().map(|c| c.size).collect();
        let mut out = Vec::new();
        for &size in &sizes {
            for &method in &method_order {
                let cells: Vec<&SweepCell> = self.cells.iter().filter(|c| c.size == size && c.method == method).collect();
                if cells.is_empty() {
                    continue;
                }
                let aucs: Vec<f64> = cells
                    .iter()
                    .filter_map(|c| match c.outcome {
                        CellOutcome::Auc(a) => Some(a),
                        CellOutcome::Diverged { .. } => None,
                    })
                    .collect();
                let (mean, std) = mean_std(&aucs);
                out.push(SweepSummary {
                    size,
                    method: method.to_string(),
                    mean_auc: mean,
                    std_auc: std,
                    n_ok: aucs.len(),
                    n_diverged: cells.len() - aucs.len(),
                });
            }
        }
        out
    }

    pub fn mean_auc(&self, size: usize, method: &str) -> Option<f64> {
        self.summary()
            .into_iter()
            .find(|s| s.size == size && s.method == method)
            .and_then(|s| s.mean_auc)
    }

    pub fn write_cells_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "size,method,seed,test_auc")?;
        for c in &self.cells {
            let cell = match c.outcome {
                CellOutcome::Auc(a) => crate::fmt_f64(a),
                CellOutcome::Diverged { step } => format!("DIVERGED@{step}"),
            };
            writeln!(out, "{},{},{},{}", c.size, c.method, c.seed, cell)?;
        }
        Ok(())
    }

    /// Error bars are the sample standard deviation across seeds.
    pub fn write_summary_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "size,method,mean_auc,std_auc_across_seeds,n_ok,n_diverged")?;
        for s in self.summary() {
            let (mean, std) = match (s.mean_auc, s.std_auc) {
                (Some(m), Some(sd)) => (crate::fmt_f64(m), crate::fmt_f64(sd)),
                (Some(m), None) => (crate::fmt_f64(m), String::new()),
                _ => ("DIVERGED".to_string(), String::new()),
            };
            writeln!(out, "{},{},{},{},{},{}", s.size, s.method, mean, std, s.n_ok, s.n_diverged)?;
        }
        Ok(())
    }

    pub fn svg(&self) -> String {
        let mut by_method: BTreeMap<usize, (String, Vec<(f64, f64)>)> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for s in self.summary() {
            let idx = match order.iter().position(|m| *m == s.method) {
                Some(i) => i,
                None => {
                    order.push(s.method.clone());
                    order.len() - 1
                }
            };
            let entry = by_method.entry(idx).or_insert_with(|| (s.method.clone(), Vec::new()));
            entry.1.push((s.size as f64, s.mean_auc.unwrap_or(f64::NAN)));
        }
        let series: Vec<Series<'_>> = by_method
            .values()
            .map(|(name, points)| Series {
                name,
                points: points.clone(),
            })
            .collect();
        let mut svg = line_chart_svg("Final test ROC AUC vs train size", "train size", "mean test ROC AUC", &series, true);
        // divergent cells as markers along the bottom edge
        let marks: Vec<String> = self
            .summary()
            .iter()
            .filter(|s| s.n_diverged > 0)
            .map(|s| format!("<!-- diverged: size={} method={} n={} -->", s.size, s.method, s.n_diverged))
            .collect();
        if !marks.is_empty() {
            let footer = format!(
                "<text x=\"70\" y=\"436\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#d62728\">\u{2717} diverged: {}</text>\n{}\n</svg>\n",
                xml_escape(
                    &self
                        .summary()
                        .iter()
                        .filter(|s| s.n_diverged > 0)
                        .map(|s| format!("{}@{} ({}x)", s.method, s.size, s.n_diverged))
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
                marks.join("\n")
            );
            svg.truncate(svg.len() - "</svg>\n".len());
            svg.push_str(&footer);
        }
        svg
    }
}

/// Mean and sample standard deviation; `None` for an empty slice, std `None`
/// for a single value.
pub fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (Some(mean), Some(var.sqrt()))
}
