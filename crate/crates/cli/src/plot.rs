//! Static SVG charts for `--plot`.

use std::fmt::Write as _;
use std::path::Path;

use crate::{CliError, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const PAD: f64 = 60.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

/// How a series is drawn.
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Mark {
    Points,
    Line,
}

pub struct Series<'a> {
    pub name: &'a str,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        return (lo - 0.5, hi + 0.5);
    }
    let m = 0.05 * (hi - lo);
    (lo - m, hi + m)
}

fn header(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
"#,
        W / 2.0,
        escape(title),
        W / 2.0,
        H - 12.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
    );
}

fn tick_labels(out: &mut String, (x0, x1): (f64, f64), (y0, y1): (f64, f64)) {
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let x = PAD + f * (W - 2.0 * PAD);
        let y = H - PAD - f * (H - 2.0 * PAD);
        let _ = writeln!(out, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{:.4}</text>"#, H - PAD + 16.0, x0 + f * (x1 - x0));
        let _ = writeln!(out, r#"<text x="{}" y="{y:.1}" text-anchor="end">{:.4}</text>"#, PAD - 4.0, y0 + f * (y1 - y0));
    }
}

fn save(path: &Path, mut svg: String) -> Result<()> {
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| CliError::Runtime(format!("writing {}: {e}", path.display())))
}

/// Scatter or line chart of one or more series on shared axes.
pub fn xy_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series<'_>], mark: Mark) -> Result<()> {
    let xr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)));
    let yr = range(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)));
    let px = |x: f64| PAD + (x - xr.0) / (xr.1 - xr.0) * (W - 2.0 * PAD);
    let py = |y: f64| H - PAD - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * PAD);
    let mut svg = String::new();
    header(&mut svg, title, x_label, y_label);
    tick_labels(&mut svg, xr, yr);
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts = s.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite());
        match mark {
            Mark::Points => {
                for &(x, y) in pts {
                    let _ = writeln!(svg, r#"<circle cx="{:.1}" cy="{:.1}" r="4" fill="{color}"/>"#, px(x), py(y));
                }
            }
            Mark::Line => {
                let d: Vec<String> = pts.map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
                let _ = writeln!(svg, r#"<polyline points="{}" fill="none" stroke="{color}"/>"#, d.join(" "));
            }
        }
        let ly = PAD + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<rect x="{}" y="{}" width="10" height="10" fill="{color}"/><text x="{}" y="{}">{}</text>"#,
            W - PAD - 120.0,
            ly - 9.0,
            W - PAD - 105.0,
            ly,
            escape(s.name)
        );
    }
    save(path, svg)
}

/// One bar per label.
pub fn bar_chart(path: &Path, title: &str, y_label: &str, bars: &[(String, f64)]) -> Result<()> {
    let top = bars.iter().map(|b| b.1).filter(|v| v.is_finite()).fold(0.0, f64::max);
    let top = if top > 0.0 { top * 1.1 } else { 1.0 };
    let mut svg = String::new();
    header(&mut svg, title, "", y_label);
    let slot = (W - 2.0 * PAD) / bars.len().max(1) as f64;
    for (i, (label, v)) in bars.iter().enumerate() {
        let h = (v.max(0.0) / top) * (H - 2.0 * PAD);
        let x = PAD + i as f64 * slot + 0.15 * slot;
        let _ = writeln!(
            svg,
            r#"<rect x="{x:.1}" y="{:.1}" width="{:.1}" height="{h:.1}" fill="{}"/>"#,
            H - PAD - h,
            0.7 * slot,
            COLORS[0]
        );
        let cx = x + 0.35 * slot;
        let _ = writeln!(svg, r#"<text x="{cx:.1}" y="{}" text-anchor="middle">{}</text>"#, H - PAD + 16.0, escape(label));
        let _ = writeln!(svg, r#"<text x="{cx:.1}" y="{:.1}" text-anchor="middle">{v:.5}</text>"#, H - PAD - h - 4.0);
    }
    save(path, svg)
}
