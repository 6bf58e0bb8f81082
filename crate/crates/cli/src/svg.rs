// SPDX-License-Identifier: MIT OR Apache-2.0

//! Minimal SVG charts on a fixed 800x500 canvas. Output depends only on the
//! data, so bundles stay byte-for-byte reproducible.

use std::fmt::Write;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 500.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

pub const PALETTE: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Round step for about `target` ticks over `span`.
fn nice_step(span: f64, target: usize) -> f64 {
    if span <= 0.0 || !span.is_finite() {
        return 1.0;
    }
    let raw = span / target.max(1) as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let nice = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    nice * mag
}

fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let step = nice_step(hi - lo, target);
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut v = first;
    while v <= hi + step * 1e-9 {
        out.push(if v.abs() < step * 1e-9 { 0.0 } else { v });
        v += step;
    }
    out
}

fn tick_label(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    format!("{v:.decimals$}")
}

/// Data-space rectangle mapped onto the plot area.
#[derive(Debug, Clone, Copy)]
pub struct Frame {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        let (a, b) = self.x;
        let w = if b > a { b - a } else { 1.0 };
        LEFT + (x - a) / w * (WIDTH - LEFT - RIGHT)
    }

    fn py(&self, y: f64) -> f64 {
        let (a, b) = self.y;
        let h = if b > a { b - a } else { 1.0 };
        HEIGHT - BOTTOM - (y - a) / h * (HEIGHT - TOP - BOTTOM)
    }
}

pub struct Canvas {
    body: String,
    legend: Vec<(String, String, f64)>,
}

impl Canvas {
    pub fn new(title: &str) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/><text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#,
            (WIDTH - RIGHT + LEFT) / 2.0,
            esc(title)
        );
        Self {
            body,
            legend: Vec::new(),
        }
    }

    /// Axes with numeric ticks. `x_labels` replaces numeric x ticks with
    /// category labels at integer positions.
    pub fn axes(&mut self, frame: &Frame, x_title: &str, y_title: &str, x_labels: Option<&[String]>) {
        let b = &mut self.body;
        let (x0, x1) = (frame.px(frame.x.0), frame.px(frame.x.1));
        let (y0, y1) = (frame.py(frame.y.0), frame.py(frame.y.1));
        let _ = write!(
            b,
            r#"<g stroke="black" stroke-width="1"><line x1="{x0:.1}" y1="{y0:.1}" x2="{x1:.1}" y2="{y0:.1}"/><line x1="{x0:.1}" y1="{y0:.1}" x2="{x0:.1}" y2="{y1:.1}"/></g>"#
        );
        let ystep = nice_step(frame.y.1 - frame.y.0, 5);
        for v in ticks(frame.y.0, frame.y.1, 5) {
            let y = frame.py(v);
            let _ = write!(
                b,
                r##"<line x1="{:.1}" y1="{y:.1}" x2="{x1:.1}" y2="{y:.1}" stroke="#e0e0e0"/><text x="{:.1}" y="{:.1}" text-anchor="end" font-size="11">{}</text>"##,
                x0 + 1.0,
                x0 - 6.0,
                y + 4.0,
                tick_label(v, ystep)
            );
        }
        match x_labels {
            Some(labels) => {
                for (i, l) in labels.iter().enumerate() {
                    let x = frame.px(i as f64);
                    let _ = write!(
                        b,
                        r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
                        y0 + 16.0,
                        esc(l)
                    );
                }
            }
            None => {
                let xstep = nice_step(frame.x.1 - frame.x.0, 8);
                for v in ticks(frame.x.0, frame.x.1, 8) {
                    let x = frame.px(v);
                    let _ = write!(
                        b,
                        r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/><text x="{x:.1}" y="{:.1}" text-anchor="middle" font-size="11">{}</text>"#,
                        y0 + 4.0,
                        y0 + 16.0,
                        tick_label(v, xstep)
                    );
                }
            }
        }
        let _ = write!(
            b,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="13">{}</text><text x="18" y="{:.1}" text-anchor="middle" font-size="13" transform="rotate(-90 18 {:.1})">{}</text>"#,
            (x0 + x1) / 2.0,
            HEIGHT - 18.0,
            esc(x_title),
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            esc(y_title)
        );
    }

    pub fn polyline(&mut self, frame: &Frame, points: &[(f64, f64)], color: &str, markers: bool) {
        if points.is_empty() {
            return;
        }
        let coords: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", frame.px(x), frame.py(y)))
            .collect();
        let _ = write!(
            self.body,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            coords.join(" ")
        );
        if markers {
            for &(x, y) in points {
                self.circle(frame, x, y, 3.0, color, 1.0);
            }
        }
    }

    pub fn circle(&mut self, frame: &Frame, x: f64, y: f64, r: f64, color: &str, opacity: f64) {
        let _ = write!(
            self.body,
            r#"<circle cx="{:.1}" cy="{:.1}" r="{r:.1}" fill="{color}" fill-opacity="{opacity:.2}"/>"#,
            frame.px(x),
            frame.py(y)
        );
    }

    /// Bar centered at `x` with width `w` in data units.
    pub fn bar(&mut self, frame: &Frame, x: f64, w: f64, y: f64, color: &str) {
        let (l, r) = (frame.px(x - w / 2.0), frame.px(x + w / 2.0));
        let (top, base) = (frame.py(y), frame.py(frame.y.0.max(0.0)));
        let _ = write!(
            self.body,
            r#"<rect x="{l:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{color}"/>"#,
            r - l,
            (base - top).max(0.0)
        );
    }

    pub fn hband(&mut self, frame: &Frame, y_lo: f64, y_hi: f64, color: &str) {
        let (x0, x1) = (frame.px(frame.x.0), frame.px(frame.x.1));
        let (top, bottom) = (frame.py(y_hi), frame.py(y_lo));
        let _ = write!(
            self.body,
            r#"<rect x="{x0:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="{color}" fill-opacity="0.15"/>"#,
            x1 - x0,
            bottom - top
        );
    }

    pub fn note(&mut self, text: &str) {
        let _ = write!(
            self.body,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-size="14" fill="#666">{}</text>"##,
            (WIDTH - RIGHT + LEFT) / 2.0,
            HEIGHT / 2.0,
            esc(text)
        );
    }

    pub fn legend(&mut self, label: &str, color: &str, opacity: f64) {
        self.legend.push((label.to_string(), color.to_string(), opacity));
    }

    pub fn finish(mut self) -> String {
        let x = WIDTH - RIGHT + 16.0;
        for (i, (label, color, opacity)) in self.legend.iter().enumerate() {
            let y = TOP + 10.0 + 20.0 * i as f64;
            let _ = write!(
                self.body,
                r#"<rect x="{x:.1}" y="{:.1}" width="12" height="12" fill="{color}" fill-opacity="{opacity:.2}"/><text x="{:.1}" y="{:.1}" font-size="12">{}</text>"#,
                y - 10.0,
                x + 18.0,
                y,
                esc(label)
            );
        }
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">{}</svg>\n",
            self.body
        )
    }
}

/// Several named series against a shared numeric x axis.
pub fn line_chart(
    title: &str,
    x_title: &str,
    y_title: &str,
    series: &[(String, Vec<(f64, f64)>)],
    y_range: Option<(f64, f64)>,
) -> String {
    let mut c = Canvas::new(title);
    let xs = series.iter().flat_map(|s| s.1.iter().map(|p| p.0));
    let ys = series.iter().flat_map(|s| s.1.iter().map(|p| p.1));
    let (xmin, xmax) = bounds(xs, (0.0, 1.0));
    let (ymin, ymax) = y_range.unwrap_or_else(|| {
        let (lo, hi) = bounds(ys, (0.0, 1.0));
        (lo.min(0.0), if hi > lo { hi * 1.05 } else { lo + 1.0 })
    });
    let frame = Frame {
        x: (xmin, xmax),
        y: (ymin, ymax),
    };
    c.axes(&frame, x_title, y_title, None);
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        c.polyline(&frame, pts, color, true);
        c.legend(name, color, 1.0);
    }
    if series.iter().all(|s| s.1.is_empty()) {
        c.note("no data");
    }
    c.finish()
}

/// Grouped bars: one group per category, one bar per series.
pub fn bar_chart(
    title: &str,
    x_title: &str,
    y_title: &str,
    categories: &[String],
    series: &[(String, Vec<f64>)],
) -> String {
    let mut c = Canvas::new(title);
    let ymax = series
        .iter()
        .flat_map(|s| s.1.iter().copied())
        .fold(0.0, f64::max);
    let frame = Frame {
        x: (-0.5, categories.len() as f64 - 0.5),
        y: (0.0, if ymax > 0.0 { ymax * 1.05 } else { 1.0 }),
    };
    c.axes(&frame, x_title, y_title, Some(categories));
    let k = series.len().max(1) as f64;
    let w = 0.8 / k;
    for (si, (name, values)) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        for (ci, &v) in values.iter().enumerate() {
            let x = ci as f64 - 0.4 + w * (si as f64 + 0.5);
            c.bar(&frame, x, w * 0.9, v, color);
        }
        c.legend(name, color, 1.0);
    }
    if series.is_empty() {
        c.note("no data");
    }
    c.finish()
}

fn bounds(values: impl Iterator<Item = f64>, empty: (f64, f64)) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        empty
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}
