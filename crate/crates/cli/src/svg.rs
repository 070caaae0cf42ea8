//! Minimal SVG figures: panels of line overlays and point clouds.

use std::fmt::Write;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 48.0;
const FOOTER: f64 = 24.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Style {
    Line,
    Dashed,
    Points,
}

#[derive(Clone, Debug)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

impl Series {
    pub fn line(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            label: label.into(),
            points,
            style: Style::Line,
        }
    }

    pub fn dashed(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            style: Style::Dashed,
            ..Self::line(label, points)
        }
    }

    pub fn points(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Self {
            style: Style::Points,
            ..Self::line(label, points)
        }
    }

    /// Pairs `ys` with their indices.
    pub fn indexed(label: impl Into<String>, ys: &[f64], style: Style) -> Self {
        Self {
            label: label.into(),
            points: ys.iter().enumerate().map(|(i, &y)| (i as f64, y)).collect(),
            style,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

impl Panel {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            series: Vec::new(),
        }
    }

    pub fn with(mut self, s: Series) -> Self {
        self.series.push(s);
        self
    }
}

#[derive(Clone, Debug)]
pub struct Figure {
    pub title: String,
    pub columns: usize,
    pub panels: Vec<Panel>,
    pub config_hash: String,
    pub seed: u64,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn bounds(panel: &Panel) -> (f64, f64, f64, f64) {
    let mut b = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for s in &panel.series {
        for &(x, y) in &s.points {
            if x.is_finite() && y.is_finite() {
                b = (b.0.min(x), b.1.max(x), b.2.min(y), b.3.max(y));
            }
        }
    }
    if !b.0.is_finite() {
        return (0.0, 1.0, 0.0, 1.0);
    }
    let widen = |lo: f64, hi: f64| {
        if hi - lo > 1e-300 {
            let pad = 0.04 * (hi - lo);
            (lo - pad, hi + pad)
        } else {
            (lo - 0.5, hi + 0.5)
        }
    };
    let (x0, x1) = widen(b.0, b.1);
    let (y0, y1) = widen(b.2, b.3);
    (x0, x1, y0, y1)
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

fn render_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let (x0, x1, y0, y1) = bounds(panel);
    let (w, h) = (PANEL_W - 1.5 * MARGIN, PANEL_H - 1.5 * MARGIN);
    let (left, top) = (ox + MARGIN, oy + MARGIN * 0.75);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * w;
    let py = |y: f64| top + h - (y - y0) / (y1 - y0) * h;
    let _ = writeln!(
        out,
        r##"<rect x="{left:.2}" y="{top:.2}" width="{w:.2}" height="{h:.2}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="13">{}</text>"#,
        left + w / 2.0,
        top - 10.0,
        esc(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
        left + w / 2.0,
        top + h + 30.0,
        esc(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        left - 36.0,
        top + h / 2.0,
        left - 36.0,
        top + h / 2.0,
        esc(&panel.y_label)
    );
    for (v, anchor, x, y) in [
        (x0, "start", left, top + h + 14.0),
        (x1, "end", left + w, top + h + 14.0),
    ] {
        let _ = writeln!(
            out,
            r#"<text x="{x:.2}" y="{y:.2}" text-anchor="{anchor}" font-size="9">{}</text>"#,
            tick(v)
        );
    }
    for (v, y) in [(y0, top + h), (y1, top + 8.0)] {
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{y:.2}" text-anchor="end" font-size="9">{}</text>"#,
            left - 4.0,
            tick(v)
        );
    }
    for (k, s) in panel.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        match s.style {
            Style::Points => {
                for &(x, y) in s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}" fill-opacity="0.7"/>"#,
                        px(x),
                        py(y)
                    );
                }
            }
            Style::Line | Style::Dashed => {
                let mut path = String::new();
                let mut pen_down = false;
                for &(x, y) in &s.points {
                    if x.is_finite() && y.is_finite() {
                        let _ = write!(path, "{}{:.2},{:.2} ", if pen_down { "L" } else { "M" }, px(x), py(y));
                        pen_down = true;
                    } else {
                        pen_down = false;
                    }
                }
                let dash = if s.style == Style::Dashed {
                    r#" stroke-dasharray="5,3""#
                } else {
                    ""
                };
                let _ = writeln!(
                    out,
                    r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.2"{dash}/>"#,
                    path.trim_end()
                );
            }
        }
        let ly = top + 14.0 + 13.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{ly:.2}" text-anchor="end" font-size="10" fill="{color}">{}</text>"#,
            left + w - 6.0,
            esc(&s.label)
        );
    }
}

impl Figure {
    pub fn render(&self) -> String {
        let cols = self.columns.max(1).min(self.panels.len().max(1));
        let rows = self.panels.len().div_ceil(cols).max(1);
        let width = cols as f64 * PANEL_W;
        let height = rows as f64 * PANEL_H + 30.0 + FOOTER;
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif">"#
        );
        let _ = writeln!(
            out,
            "<desc>config_hash={} seed={}</desc>",
            esc(&self.config_hash),
            self.seed
        );
        let _ = writeln!(out, r##"<rect width="100%" height="100%" fill="#fff"/>"##);
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="15">{}</text>"#,
            width / 2.0,
            esc(&self.title)
        );
        for (i, panel) in self.panels.iter().enumerate() {
            let (r, c) = (i / cols, i % cols);
            render_panel(&mut out, panel, c as f64 * PANEL_W, 30.0 + r as f64 * PANEL_H);
        }
        let _ = writeln!(
            out,
            r##"<text x="6" y="{:.2}" font-size="9" fill="#666">config {} seed {}</text>"##,
            height - 8.0,
            esc(&self.config_hash),
            self.seed
        );
        out.push_str("</svg>\n");
        out
    }
}

/// Three panels projecting a 3D curve onto the coordinate planes.
pub fn plane_projections(label: &str, states: &[f64], columns: [&str; 3], style: Style) -> [Panel; 3] {
    let planes = [(0, 1), (0, 2), (1, 2)];
    planes.map(|(a, b)| {
        let pts = states.chunks_exact(3).map(|r| (r[a], r[b])).collect();
        Panel::new(format!("{}-{} plane", columns[a], columns[b]), columns[a], columns[b]).with(Series {
            label: label.to_string(),
            points: pts,
            style,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_metadata_and_series() {
        let fig = Figure {
            title: "t <1>".into(),
            columns: 2,
            panels: vec![
                Panel::new("a", "x", "y").with(Series::line("s", vec![(0.0, 1.0), (1.0, f64::NAN), (2.0, 3.0)])),
                Panel::new("b", "x", "y").with(Series::points("p", vec![(0.0, 0.0)])),
            ],
            config_hash: "abc".into(),
            seed: 4,
        };
        let svg = fig.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("<desc>config_hash=abc seed=4</desc>"));
        assert!(svg.contains("t &lt;1&gt;"));
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches(" M").count() + svg.matches("\"M").count(), 2);
    }
}
