//! Self-contained SVG charts.

use std::fmt::Write as _;

use crate::data::format_timestamp;
use crate::similarity::z_normalize;
use crate::spc::{AnomalyPeriod, ControlChart};

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 320.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 40.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let (x1, y1) = (if x1 > x0 { x1 } else { x0 + 1.0 }, if y1 > y0 { y1 } else { y0 + 1.0 });
        Self { x0, x1, y0, y1 }
    }

    fn x(&self, v: f64) -> f64 {
        MARGIN_LEFT + (v - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM - (v - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{MARGIN_LEFT}" y="18" font-size="13">{}</text>"#, escape(title));
}

fn axes(out: &mut String, f: &Frame) {
    let (l, r) = (f.x(f.x0), f.x(f.x1));
    let (b, t) = (f.y(f.y0), f.y(f.y1));
    let _ = writeln!(
        out,
        r##"<path d="M{l:.1},{t:.1} L{l:.1},{b:.1} L{r:.1},{b:.1}" fill="none" stroke="#333"/>"##
    );
    for i in 0..=4 {
        let v = f.y0 + (f.y1 - f.y0) * i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            l - 4.0,
            f.y(v) + 4.0
        );
    }
    for (anchor, v) in [("start", f.x0), ("end", f.x1)] {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="{anchor}">{}</text>"#,
            f.x(v),
            b + 16.0,
            format_timestamp(v as i64)
        );
    }
}

fn polyline(out: &mut String, f: &Frame, xs: &[f64], ys: &[f64], color: &str, width: f64) {
    let mut points = String::new();
    for (x, y) in xs.iter().zip(ys) {
        let _ = write!(points, "{:.1},{:.1} ", f.x(*x), f.y(*y));
    }
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="{width}"/>"#,
        points.trim_end()
    );
}

fn hline(out: &mut String, f: &Frame, y: f64, color: &str, dash: &str, label: &str) {
    let _ = writeln!(
        out,
        r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-dasharray="{dash}"/>"#,
        f.x(f.x0),
        f.y(y),
        f.x(f.x1),
        f.y(y)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" fill="{color}" text-anchor="end">{label}</text>"#,
        f.x(f.x1) - 2.0,
        f.y(y) - 3.0
    );
}

/// Anomaly scores over time with center line, control limits and shaded periods.
pub fn control_chart_svg(chart: &ControlChart, window_starts: &[i64], scores: &[f64], periods: &[AnomalyPeriod]) -> String {
    let xs: Vec<f64> = window_starts.iter().map(|&t| t as f64).collect();
    let lo = scores.iter().copied().fold(chart.lcl.min(0.0), f64::min);
    let hi = scores.iter().copied().fold(chart.ucl, f64::max);
    let f = Frame::new(
        xs.first().copied().unwrap_or(0.0),
        xs.last().copied().unwrap_or(1.0),
        lo,
        hi * 1.05,
    );
    let mut out = String::new();
    header(&mut out, &format!("{} anomaly score ({}σ limits)", chart.feature, chart.k));
    for p in periods {
        let (a, b) = (f.x(p.start_timestamp as f64), f.x(p.end_timestamp as f64));
        let _ = writeln!(
            out,
            r##"<rect x="{a:.1}" y="{MARGIN_TOP}" width="{:.1}" height="{:.1}" fill="#d62728" fill-opacity="0.15"/>"##,
            (b - a).max(1.0),
            HEIGHT - MARGIN_TOP - MARGIN_BOTTOM
        );
    }
    axes(&mut out, &f);
    polyline(&mut out, &f, &xs, scores, PALETTE[0], 1.0);
    hline(&mut out, &f, chart.center_line, "#2ca02c", "4 2", "CL");
    hline(&mut out, &f, chart.ucl, "#d62728", "6 3", "UCL");
    hline(&mut out, &f, chart.lcl, "#7f7f7f", "6 3", "LCL");
    out.push_str("</svg>\n");
    out
}

/// Stat series and event series over one period, each z-normalized.
pub fn overlay_svg(title: &str, timestamps: &[i64], series: &[(String, Vec<f64>)]) -> String {
    let xs: Vec<f64> = timestamps.iter().map(|&t| t as f64).collect();
    let normalized: Vec<(&str, Vec<f64>)> = series.iter().map(|(n, s)| (n.as_str(), z_normalize(s))).collect();
    let (mut lo, mut hi) = (-1.0f64, 1.0f64);
    for (_, s) in &normalized {
        for &v in s {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let f = Frame::new(
        xs.first().copied().unwrap_or(0.0),
        xs.last().copied().unwrap_or(1.0),
        lo,
        hi,
    );
    let mut out = String::new();
    header(&mut out, title);
    axes(&mut out, &f);
    for (i, (name, s)) in normalized.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        polyline(&mut out, &f, &xs, s, color, if i == 0 { 2.0 } else { 1.0 });
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" fill="{color}">{}</text>"#,
            MARGIN_LEFT + 10.0,
            MARGIN_TOP + 12.0 * (i as f64 + 1.0),
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}
