//! Standalone SVG rendering of ROC curves.

use std::fmt::Write as _;
use std::path::Path;

use rediffuse_core::metrics::RocSummary;

use crate::error::{HarnessError, Phase, PhaseExt};

const SIZE: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn px(fpr: f64, tpr: f64) -> (f64, f64) {
    (MARGIN + fpr * SIZE, MARGIN + (1.0 - tpr) * SIZE)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

pub fn render_roc_svg(summaries: &[(String, RocSummary)]) -> Result<String, HarnessError> {
    if summaries.is_empty() {
        return Err(HarnessError::phase(Phase::Write, "no ROC summaries to plot"));
    }
    let full = SIZE + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{full}" height="{full}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let (x, _) = px(v, 0.0);
        let (_, y) = px(0.0, v);
        let bottom = MARGIN + SIZE;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="middle">{v:.1}</text>"#,
            bottom + 16.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{v:.1}</text>"#,
            MARGIN - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">false positive rate</text>"#,
        MARGIN + SIZE / 2.0,
        full - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">true positive rate</text>"#,
        MARGIN + SIZE / 2.0,
        MARGIN + SIZE / 2.0
    );
    let (x0, y0) = px(0.0, 0.0);
    let (x1, y1) = px(1.0, 1.0);
    let _ = writeln!(
        s,
        r##"<line class="chance" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y1}" stroke="#999999" stroke-dasharray="4 4"/>"##
    );
    for (i, (name, summary)) in summaries.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = summary
            .points
            .iter()
            .map(|p| {
                let (x, y) = px(p.fpr, p.tpr);
                format!("{x},{y}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        let ly = MARGIN + SIZE - 20.0 * (summaries.len() - i) as f64;
        let lx = MARGIN + SIZE * 0.45;
        let _ = writeln!(
            s,
            r#"<g class="legend"><line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{} (AUC {:.3})</text></g>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(name),
            summary.auc
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Writes one polyline per named summary; an empty list is an error and writes nothing.
pub fn plot_roc_svg(summaries: &[(String, RocSummary)], path: impl AsRef<Path>) -> Result<(), HarnessError> {
    let text = render_roc_svg(summaries)?;
    std::fs::write(path.as_ref(), text)
        .map_err(|e| format!("{}: {e}", path.as_ref().display()))
        .phase(Phase::Write)
}
