//! Plain SVG line charts with confidence bands.
//!
//! Output depends only on the input data, so identical data gives identical
//! bytes.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 190.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Style {
    pub colour: &'static str,
    pub dashed: bool,
}

pub const FLC_COLOUR: &str = "#2ca02c";
pub const MPFC_COLOUR: &str = "#ff7f0e";
pub const MPC_COLOUR: &str = "#9467bd";
const OTHER_COLOURS: [&str; 4] = ["#1f77b4", "#d62728", "#8c564b", "#7f7f7f"];

/// Style implied by an architecture name inside `label`, if any.
pub fn style_for(label: &str) -> Option<Style> {
    let l = label.to_ascii_lowercase();
    let colour = if l.contains("flc") {
        FLC_COLOUR
    } else if l.contains("mpfc") {
        MPFC_COLOUR
    } else if l.contains("mpc") {
        MPC_COLOUR
    } else {
        return None;
    };
    Some(Style {
        colour,
        dashed: l.contains("decentralised"),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `(x, mean, lo, hi)` rows.
    pub points: Vec<(f64, f64, f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    /// Draw points with error bars instead of lines with bands.
    pub markers: bool,
    /// Straight line `y = slope·x + intercept` drawn across the x range.
    pub trend: Option<(f64, f64)>,
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - BOTTOM - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - TOP - BOTTOM)
    }
}

fn fmt(v: f64) -> String {
    format!("{:.2}", v)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn span(lo: f64, hi: f64) -> (f64, f64) {
    if hi > lo {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

/// Renders the chart. Errors if there is nothing finite to draw.
pub fn render(chart: &Chart) -> Result<String, String> {
    let finite = |v: &f64| v.is_finite();
    let xs: Vec<f64> = chart.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).filter(finite).collect();
    let ys: Vec<f64> = chart
        .series
        .iter()
        .flat_map(|s| s.points.iter().flat_map(|p| [p.1, p.2, p.3]))
        .filter(finite)
        .collect();
    if xs.is_empty() || ys.is_empty() {
        return Err("no data to plot".into());
    }
    let (x0, x1) = span(xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let (y0, y1) = span(ys.iter().copied().fold(f64::INFINITY, f64::min), ys.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    let frame = Frame { x0, x1, y0, y1 };

    let mut svg = String::new();
    let w = &mut svg;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(w, r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#, fmt((WIDTH - RIGHT + LEFT) / 2.0), escape(&chart.title)).unwrap();
    axes(w, &frame, chart);

    let mut unnamed = 0;
    for (n, series) in chart.series.iter().enumerate() {
        let style = style_for(&series.label).unwrap_or_else(|| {
            let colour = OTHER_COLOURS[unnamed % OTHER_COLOURS.len()];
            unnamed += 1;
            Style { colour, dashed: false }
        });
        let pts: Vec<_> = series.points.iter().filter(|p| p.0.is_finite() && p.1.is_finite()).collect();
        let dash = if style.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        if chart.markers {
            for p in &pts {
                let (x, lo, hi) = (frame.px(p.0), frame.py(p.2), frame.py(p.3));
                writeln!(w, r#"<line class="error-bar" x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="{3}"/>"#, fmt(x), fmt(lo), fmt(hi), style.colour).unwrap();
                writeln!(w, r#"<circle cx="{}" cy="{}" r="4" fill="{}"/>"#, fmt(x), fmt(frame.py(p.1)), style.colour).unwrap();
            }
        } else if !pts.is_empty() {
            let upper: Vec<String> = pts.iter().map(|p| format!("{},{}", fmt(frame.px(p.0)), fmt(frame.py(p.3)))).collect();
            let lower: Vec<String> = pts.iter().rev().map(|p| format!("{},{}", fmt(frame.px(p.0)), fmt(frame.py(p.2)))).collect();
            writeln!(w, r#"<polygon class="band" points="{} {}" fill="{}" fill-opacity="0.2" stroke="none"/>"#, upper.join(" "), lower.join(" "), style.colour).unwrap();
            let line: Vec<String> = pts.iter().map(|p| format!("{},{}", fmt(frame.px(p.0)), fmt(frame.py(p.1)))).collect();
            writeln!(w, r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.8"{dash}/>"#, line.join(" "), style.colour).unwrap();
        }
        let ly = TOP + 10.0 + 20.0 * n as f64;
        let lx = WIDTH - RIGHT + 15.0;
        writeln!(w, r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{}" stroke-width="2"{dash}/>"#, fmt(lx), fmt(ly), fmt(lx + 24.0), fmt(ly), style.colour).unwrap();
        writeln!(w, r#"<text x="{}" y="{}">{}</text>"#, fmt(lx + 30.0), fmt(ly + 4.0), escape(&series.label)).unwrap();
    }

    if let Some((slope, intercept)) = chart.trend {
        let (a, b) = (xs.iter().copied().fold(f64::INFINITY, f64::min), xs.iter().copied().fold(f64::NEG_INFINITY, f64::max));
        writeln!(
            w,
            r##"<line class="trend" x1="{}" y1="{}" x2="{}" y2="{}" stroke="#333333" stroke-dasharray="2 3"/>"##,
            fmt(frame.px(a)),
            fmt(frame.py(slope * a + intercept)),
            fmt(frame.px(b)),
            fmt(frame.py(slope * b + intercept))
        )
        .unwrap();
    }
    writeln!(w, "</svg>").unwrap();
    Ok(svg)
}

fn axes(w: &mut String, frame: &Frame, chart: &Chart) {
    let (bx0, bx1) = (LEFT, WIDTH - RIGHT);
    let (by0, by1) = (HEIGHT - BOTTOM, TOP);
    writeln!(w, r#"<g stroke="black" fill="none"><line x1="{bx0}" y1="{by0}" x2="{bx1}" y2="{by0}"/><line x1="{bx0}" y1="{by0}" x2="{bx0}" y2="{by1}"/></g>"#).unwrap();
    for t in 0..=4 {
        let f = t as f64 / 4.0;
        let x = frame.x0 + f * (frame.x1 - frame.x0);
        let y = frame.y0 + f * (frame.y1 - frame.y0);
        writeln!(w, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, fmt(frame.px(x)), fmt(by0 + 16.0), tick(x)).unwrap();
        writeln!(w, r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#, fmt(bx0 - 6.0), fmt(frame.py(y) + 4.0), tick(y)).unwrap();
    }
    writeln!(w, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, fmt((bx0 + bx1) / 2.0), fmt(HEIGHT - 10.0), escape(&chart.x_label)).unwrap();
    writeln!(
        w,
        r#"<text x="16" y="{0}" text-anchor="middle" transform="rotate(-90 16 {0})">{1}</text>"#,
        fmt((by0 + by1) / 2.0),
        escape(&chart.y_label)
    )
    .unwrap();
}

fn tick(v: f64) -> String {
    if v.abs() >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.3}").trim_end_matches('0').trim_end_matches('.').to_string()
    }
}
