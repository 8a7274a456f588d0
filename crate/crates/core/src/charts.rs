//! Static SVG charts rendered from report files.
//!
//! Plain string-built SVG: no fonts beyond the viewer default, no scripts.
//! Rendering only reads reports; it never rewrites them.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::overthink::DetectionReport;
use crate::report::{self, CosineCell, LayerCurveRow, NormCsvRow, SweepCsvRow};
use crate::steering::LogitShiftReport;

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// Colormap end points for the heatmap, cosine -1 to +1.
const COLD: (u8, u8, u8) = (247, 251, 255);
const HOT: (u8, u8, u8) = (8, 48, 107);
pub const HEATMAP_MAX_COLOR: &str = "#08306b";

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        Self {
            x: padded_range(xs),
            y: padded_range(ys),
        }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x.0) / (self.x.1 - self.x.0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y.0) / (self.y.1 - self.y.0) * (H - 2.0 * MARGIN)
    }
}

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = (hi - lo) * 0.05;
    (lo - pad, hi + pad)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(title));
    s
}

fn axes(s: &mut String, f: &Frame, xlabel: &str, ylabel: &str) {
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line class="axis" x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line class="axis" x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    for (v, anchor) in [(f.x.0, "start"), (f.x.1, "end")] {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{}" text-anchor="{anchor}">{v:.3}</text>"#, f.px(v), y0 + 16.0);
    }
    for v in [f.y.0, f.y.1] {
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, x0 - 4.0, f.py(v) + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 12.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        escape(ylabel)
    );
}

fn polyline(s: &mut String, f: &Frame, pts: &[(f64, f64)], class: &str, color: &str) {
    let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", f.px(x), f.py(y))).collect();
    let _ = writeln!(
        s,
        r#"<polyline class="{class}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
        coords.join(" ")
    );
    for &(x, y) in pts {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, f.px(x), f.py(y));
    }
}

fn close(mut s: String) -> String {
    s.push_str("</svg>\n");
    s
}

/// Probe correlation by layer. Layers with undefined r are drawn at 0 and
/// marked hollow.
pub fn layer_curve_svg(rows: &[LayerCurveRow]) -> String {
    let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.layer as f64, r.pearson_r.unwrap_or(0.0))).collect();
    let f = Frame::new(pts.iter().map(|p| p.0), pts.iter().map(|p| p.1).chain([0.0, 1.0]));
    let mut s = open("Probe test correlation by layer");
    axes(&mut s, &f, "layer", "Pearson r");
    polyline(&mut s, &f, &pts, "curve", "#1f77b4");
    for r in rows.iter().filter(|r| r.pearson_r.is_none()) {
        let _ = writeln!(
            s,
            r##"<circle class="undefined" cx="{:.2}" cy="{:.2}" r="5" fill="white" stroke="#1f77b4"/>"##,
            f.px(r.layer as f64),
            f.py(0.0)
        );
    }
    close(s)
}

fn heat_color(c: f64) -> String {
    let t = ((c + 1.0) / 2.0).clamp(0.0, 1.0);
    let lerp = |a: u8, b: u8| (a as f64 + (b as f64 - a as f64) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(COLD.0, HOT.0), lerp(COLD.1, HOT.1), lerp(COLD.2, HOT.2))
}

/// One heatmap panel per layer present in the cells.
pub fn cosine_heatmap_svg(cells: &[CosineCell]) -> String {
    let mut by_layer: BTreeMap<usize, Vec<&CosineCell>> = BTreeMap::new();
    for c in cells {
        by_layer.entry(c.layer).or_default().push(c);
    }
    let mut s = open("Pairwise cosine of difficulty directions");
    let panels = by_layer.len().max(1);
    let panel_w = (W - 2.0 * 16.0) / panels as f64;
    let side = (panel_w - 12.0).min(H - 2.0 * MARGIN);
    for (k, (layer, cs)) in by_layer.iter().enumerate() {
        let levels: Vec<u32> = {
            let mut l: Vec<u32> = cs.iter().map(|c| c.row_level).chain(cs.iter().map(|c| c.col_level)).collect();
            l.sort_unstable();
            l.dedup();
            l
        };
        let n = levels.len() as f64;
        let cell = side / n;
        let x0 = 16.0 + k as f64 * panel_w;
        let y0 = MARGIN;
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">layer {layer}</text>"#, x0 + side / 2.0, y0 - 6.0);
        for c in cs {
            let i = levels.iter().position(|&l| l == c.row_level).unwrap_or(0) as f64;
            let j = levels.iter().position(|&l| l == c.col_level).unwrap_or(0) as f64;
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{:.2}" y="{:.2}" width="{cell:.2}" height="{cell:.2}" fill="{}"><title>{}-{}: {:.4}</title></rect>"#,
                x0 + j * cell,
                y0 + i * cell,
                heat_color(c.cosine),
                c.row_level,
                c.col_level,
                c.cosine
            );
        }
    }
    close(s)
}

/// Direction norms grouped by layer, one bar per target level.
pub fn norms_svg(rows: &[NormCsvRow]) -> String {
    let mut s = open("Direction norm by target level");
    let f = Frame::new([0.0, rows.len() as f64].into_iter(), rows.iter().map(|r| r.l2_norm).chain([0.0]));
    axes(&mut s, &f, "layer / target level", "L2 norm");
    let bar = (W - 2.0 * MARGIN) / rows.len().max(1) as f64 * 0.8;
    for (i, r) in rows.iter().enumerate() {
        let x = f.px(i as f64 + 0.1);
        let (top, base) = (f.py(r.l2_norm), f.py(0.0));
        let _ = writeln!(
            s,
            r##"<rect class="bar" x="{x:.2}" y="{:.2}" width="{bar:.2}" height="{:.2}" fill="#ff7f0e"><title>layer {} level {}: {:.4}</title></rect>"##,
            top.min(base),
            (base - top).abs(),
            r.layer,
            r.to_level,
            r.l2_norm
        );
    }
    close(s)
}

/// Dose-response: mean reasoning and answer tokens against lambda.
pub fn sweep_svg(rows: &[SweepCsvRow]) -> String {
    let mut sorted: Vec<&SweepCsvRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.lambda.total_cmp(&b.lambda));
    let reasoning: Vec<(f64, f64)> = sorted.iter().map(|r| (r.lambda, r.mean_reasoning_tokens)).collect();
    let answer: Vec<(f64, f64)> = sorted.iter().map(|r| (r.lambda, r.mean_answer_tokens)).collect();
    let f = Frame::new(
        reasoning.iter().map(|p| p.0),
        reasoning.iter().chain(&answer).map(|p| p.1).chain([0.0]),
    );
    let mut s = open("Steering dose-response");
    axes(&mut s, &f, "lambda", "mean tokens");
    polyline(&mut s, &f, &reasoning, "reasoning", "#d62728");
    polyline(&mut s, &f, &answer, "answer", "#2ca02c");
    close(s)
}

/// Mean `</think>` logit change per lambda with min/max whiskers, against
/// the random-token baseline.
pub fn logits_svg(report: &LogitShiftReport) -> String {
    let rows = &report.rows;
    let f = Frame::new(
        rows.iter().map(|r| r.lambda),
        rows.iter()
            .flat_map(|r| [r.end_think_delta.min, r.end_think_delta.max, r.baseline_mean_abs_delta])
            .chain([0.0]),
    );
    let mut s = open("End-of-reasoning logit shift at <think>");
    axes(&mut s, &f, "lambda", "delta logit");
    for r in rows {
        let x = f.px(r.lambda);
        let _ = writeln!(
            s,
            r##"<line class="whisker" x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#555"/>"##,
            f.py(r.end_think_delta.min),
            f.py(r.end_think_delta.max)
        );
    }
    let mean: Vec<(f64, f64)> = rows.iter().map(|r| (r.lambda, r.end_think_delta.mean)).collect();
    let base: Vec<(f64, f64)> = rows.iter().map(|r| (r.lambda, r.baseline_mean_abs_delta)).collect();
    polyline(&mut s, &f, &mean, "end_think", "#9467bd");
    polyline(&mut s, &f, &base, "baseline", "#7f7f7f");
    close(s)
}

/// Predicted length, vanilla against overthink, with the threshold.
pub fn overthink_svg(report: &DetectionReport) -> String {
    let xs = report.per_pair.iter().map(|p| p.predicted_vanilla);
    let ys = report.per_pair.iter().map(|p| p.predicted_overthink);
    let all: Vec<f64> = xs.clone().chain(ys.clone()).chain([report.threshold]).collect();
    let f = Frame::new(all.iter().copied(), all.iter().copied());
    let mut s = open("Predicted reasoning length: vanilla vs overthink");
    axes(&mut s, &f, "vanilla prediction", "overthink prediction");
    let (lo, hi) = (f.x.0.max(f.y.0), f.x.1.min(f.y.1));
    let _ = writeln!(
        s,
        r##"<line class="diagonal" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#aaa" stroke-dasharray="4"/>"##,
        f.px(lo),
        f.py(lo),
        f.px(hi),
        f.py(hi)
    );
    let _ = writeln!(
        s,
        r##"<line class="threshold" x1="{}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="#d62728"/>"##,
        MARGIN,
        f.py(report.threshold),
        W - MARGIN,
        f.py(report.threshold)
    );
    for p in &report.per_pair {
        let _ = writeln!(
            s,
            r##"<circle class="pair" cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4" fill-opacity="0.7"/>"##,
            f.px(p.predicted_vanilla),
            f.py(p.predicted_overthink)
        );
    }
    close(s)
}

/// Renders a chart for every known report found in `report_dir`.
pub fn emit_charts(report_dir: impl AsRef<Path>, out_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    emit_selected(report_dir, out_dir, &|_| true)
}

/// Like [`emit_charts`], restricted to report names accepted by `include`.
pub fn emit_selected(
    report_dir: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    include: &dyn Fn(&str) -> bool,
) -> Result<Vec<PathBuf>> {
    let (src, out) = (report_dir.as_ref(), out_dir.as_ref());
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut emit = |name: &str, svg: String| -> Result<()> {
        let p = out.join(name);
        std::fs::write(&p, svg)?;
        written.push(p);
        Ok(())
    };
    let present = |name: &str| include(name) && src.join(name).is_file();

    if present(report::LAYER_CURVE_CSV) {
        emit("layer_curve.svg", layer_curve_svg(&report::read_csv(src.join(report::LAYER_CURVE_CSV))?))?;
    }
    if present(report::COSINE_CSV) {
        emit("cosine_heatmap.svg", cosine_heatmap_svg(&report::read_csv(src.join(report::COSINE_CSV))?))?;
    }
    if present(report::NORMS_CSV) {
        emit("norms.svg", norms_svg(&report::read_csv(src.join(report::NORMS_CSV))?))?;
    }
    if present(report::SWEEP_CSV) {
        emit("sweep.svg", sweep_svg(&report::read_sweep_csv(src.join(report::SWEEP_CSV))?))?;
    }
    if present(report::LOGITS_JSON) {
        emit("logits.svg", logits_svg(&report::read_json(src.join(report::LOGITS_JSON))?))?;
    }
    if present(report::OVERTHINK_JSON) {
        emit("overthink.svg", overthink_svg(&report::read_json(src.join(report::OVERTHINK_JSON))?))?;
    }
    Ok(written)
}

/// Vertices of the first `<polyline class="{class}">` in an SVG.
pub fn polyline_points(svg: &str, class: &str) -> Option<Vec<(f64, f64)>> {
    let tag = format!(r#"<polyline class="{class}""#);
    let start = svg.find(&tag)?;
    let rest = &svg[start..];
    let p = rest.find("points=\"")? + "points=\"".len();
    let end = rest[p..].find('"')?;
    rest[p..p + end]
        .split_whitespace()
        .map(|pair| {
            let (x, y) = pair.split_once(',')?;
            Some((x.parse().ok()?, y.parse().ok()?))
        })
        .collect()
}
