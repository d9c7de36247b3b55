//! Minimal self-contained SVG figures: a grid of panels, each with axes,
//! tick labels, reference lines, and one polyline per series.  No external
//! resources, scripts, or stylesheets — the output is a single static file.

use std::fmt::Write as _;

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf", "#e377c2",
];

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Default)]
pub struct Panel {
    pub title: String,
    pub series: Vec<Series>,
    /// Horizontal reference line (e.g. the nominal level).
    pub hline: Option<f64>,
    /// Draw the y = x diagonal (calibration plots).
    pub diagonal: bool,
}

#[derive(Clone, Debug)]
pub struct Figure {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    /// Log-10 x axis (ticks at powers of ten); all x values must be positive.
    pub log_x: bool,
    pub panels: Vec<Panel>,
}

const PANEL_W: f64 = 380.0;
const PANEL_H: f64 = 300.0;
const PAD_L: f64 = 62.0;
const PAD_R: f64 = 16.0;
const PAD_T: f64 = 34.0;
const PAD_B: f64 = 46.0;
const HEADER_H: f64 = 58.0;
const COLUMNS: usize = 3;

fn esc(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Equally spaced "nice" ticks covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).abs().max(1e-12);
    let raw = span / 4.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| span / s <= 5.5)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut t = first;
    while t <= hi + 1e-9 * span {
        // Snap values like 0.30000000000000004 back to the grid.
        out.push((t / step).round() * step);
        t += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if a >= 0.01 && a < 10000.0 {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.0e}")
    }
}

struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    fn new() -> Self {
        Range { lo: f64::INFINITY, hi: f64::NEG_INFINITY }
    }
    fn add(&mut self, v: f64) {
        if v.is_finite() {
            self.lo = self.lo.min(v);
            self.hi = self.hi.max(v);
        }
    }
    fn padded(mut self) -> (f64, f64) {
        if self.lo > self.hi {
            return (0.0, 1.0);
        }
        if self.hi - self.lo < 1e-12 {
            let bump = self.lo.abs().max(1.0) * 0.1;
            self.lo -= bump;
            self.hi += bump;
        }
        let pad = (self.hi - self.lo) * 0.06;
        (self.lo - pad, self.hi + pad)
    }
}

/// Renders the figure; series colors are assigned by label in first-seen
/// order so a method keeps its color across panels.
pub fn render(fig: &Figure) -> String {
    let n = fig.panels.len().max(1);
    let cols = n.min(COLUMNS);
    let rows = n.div_ceil(cols);
    let width = cols as f64 * PANEL_W + 20.0;
    let height = HEADER_H + rows as f64 * PANEL_H + 10.0;

    let mut labels: Vec<&str> = Vec::new();
    for panel in &fig.panels {
        for s in &panel.series {
            if !labels.contains(&s.label.as_str()) {
                labels.push(&s.label);
            }
        }
    }
    let color_of = |label: &str| {
        let idx = labels.iter().position(|l| *l == label).unwrap_or(0);
        PALETTE[idx % PALETTE.len()]
    };

    let mut out = String::new();
    let _ = writeln!(
        out,
        r##"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.2}" height="{height:.2}" viewBox="0 0 {width:.2} {height:.2}" font-family="Helvetica, Arial, sans-serif">"##
    );
    let _ = writeln!(out, r##"<rect width="{width:.2}" height="{height:.2}" fill="white"/>"##);
    let _ = writeln!(
        out,
        r##"<text x="{:.2}" y="22" font-size="16" text-anchor="middle" fill="#222">{}</text>"##,
        width / 2.0,
        esc(&fig.title)
    );

    // Legend: one swatch per series label, centered under the title.
    let legend_w: f64 = labels.iter().map(|l| 34.0 + 7.2 * l.len() as f64).sum();
    let mut lx = (width - legend_w) / 2.0;
    for label in &labels {
        let color = color_of(label);
        let _ = writeln!(
            out,
            r##"<rect x="{lx:.2}" y="34" width="16" height="4" fill="{color}"/>"##
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="41" font-size="12" fill="#222">{}</text>"##,
            lx + 20.0,
            esc(label)
        );
        lx += 34.0 + 7.2 * label.len() as f64;
    }

    for (i, panel) in fig.panels.iter().enumerate() {
        let ox = (i % cols) as f64 * PANEL_W + 10.0;
        let oy = HEADER_H + (i / cols) as f64 * PANEL_H;
        let plot_w = PANEL_W - PAD_L - PAD_R;
        let plot_h = PANEL_H - PAD_T - PAD_B;

        let mut xr = Range::new();
        let mut yr = Range::new();
        for s in &panel.series {
            for &(x, y) in &s.points {
                xr.add(if fig.log_x { x.log10() } else { x });
                yr.add(y);
            }
        }
        if let Some(h) = panel.hline {
            yr.add(h);
        }
        // The y = x reference only makes sense when both axes share units
        // and scale, so it is skipped on a log x axis.
        let diagonal = panel.diagonal && !fig.log_x;
        if diagonal {
            yr.add(xr.lo);
            yr.add(xr.hi);
        }
        let (x0, x1) = xr.padded();
        let (y0, y1) = yr.padded();
        let sx = |x: f64| {
            let x = if fig.log_x { x.log10() } else { x };
            ox + PAD_L + (x - x0) / (x1 - x0) * plot_w
        };
        let sy = |y: f64| oy + PAD_T + plot_h - (y - y0) / (y1 - y0) * plot_h;

        let _ = writeln!(out, r##"<g>"##);
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle" fill="#222">{}</text>"##,
            ox + PAD_L + plot_w / 2.0,
            oy + PAD_T - 10.0,
            esc(&panel.title)
        );

        // Tick marks, grid lines, and labels.
        let x_ticks: Vec<f64> = if fig.log_x {
            let lo = x0.floor() as i32;
            let hi = x1.ceil() as i32;
            (lo..=hi)
                .map(|e| 10f64.powi(e))
                .filter(|v| v.log10() >= x0 && v.log10() <= x1)
                .collect()
        } else {
            ticks(x0, x1)
        };
        for t in &x_ticks {
            let x = sx(*t);
            let _ = writeln!(
                out,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#ddd" stroke-width="1"/>"##,
                oy + PAD_T,
                oy + PAD_T + plot_h
            );
            let _ = writeln!(
                out,
                r##"<text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle" fill="#444">{}</text>"##,
                oy + PAD_T + plot_h + 16.0,
                fmt_tick(*t)
            );
        }
        for t in ticks(y0, y1) {
            let y = sy(t);
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd" stroke-width="1"/>"##,
                ox + PAD_L,
                ox + PAD_L + plot_w
            );
            let _ = writeln!(
                out,
                r##"<text x="{:.2}" y="{:.2}" font-size="11" text-anchor="end" fill="#444">{}</text>"##,
                ox + PAD_L - 6.0,
                y + 4.0,
                fmt_tick(t)
            );
        }

        if let Some(h) = panel.hline {
            let y = sy(h);
            let _ = writeln!(
                out,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#999" stroke-width="1" stroke-dasharray="5,4"/>"##,
                ox + PAD_L,
                ox + PAD_L + plot_w
            );
        }
        if diagonal {
            let lo = x0.max(y0);
            let hi = x1.min(y1);
            if lo < hi {
                let _ = writeln!(
                    out,
                    r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999" stroke-width="1" stroke-dasharray="5,4"/>"##,
                    sx(lo),
                    sy(lo),
                    sx(hi),
                    sy(hi)
                );
            }
        }

        // Axes on top of the grid.
        let _ = writeln!(
            out,
            r##"<rect x="{:.2}" y="{:.2}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="#444" stroke-width="1"/>"##,
            ox + PAD_L,
            oy + PAD_T
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" fill="#222">{}</text>"##,
            ox + PAD_L + plot_w / 2.0,
            oy + PANEL_H - 10.0,
            esc(&fig.x_label)
        );
        let _ = writeln!(
            out,
            r##"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle" fill="#222" transform="rotate(-90 {:.2} {:.2})">{}</text>"##,
            ox + 16.0,
            oy + PAD_T + plot_h / 2.0,
            ox + 16.0,
            oy + PAD_T + plot_h / 2.0,
            esc(&fig.y_label)
        );

        for s in &panel.series {
            let color = color_of(&s.label);
            let mut pts = s.points.clone();
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            if pts.len() > 1 {
                let path: Vec<String> =
                    pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
                let _ = writeln!(
                    out,
                    r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.8"/>"##,
                    path.join(" ")
                );
            }
            for &(x, y) in &pts {
                let _ = writeln!(
                    out,
                    r##"<circle cx="{:.2}" cy="{:.2}" r="2.4" fill="{color}"/>"##,
                    sx(x),
                    sy(y)
                );
            }
        }
        let _ = writeln!(out, r##"</g>"##);
    }

    out.push_str("</svg>\n");
    out
}
