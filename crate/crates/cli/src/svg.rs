//! Static SVG decomposition figure. Output depends only on the inputs, with
//! coordinates written to two decimals.

use std::fmt::Write;

use nalgebra::DVector;

pub struct Panel<'a> {
    pub title: String,
    pub mean: &'a DVector<f64>,
    pub lower: &'a DVector<f64>,
    pub upper: &'a DVector<f64>,
    pub truth: Option<&'a DVector<f64>>,
}

const WIDTH: f64 = 720.0;
const PANEL_HEIGHT: f64 = 170.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 22.0;

struct Frame {
    top: f64,
    p: usize,
    lo: f64,
    hi: f64,
}

impl Frame {
    fn x(&self, i: usize) -> f64 {
        let span = (self.p.max(2) - 1) as f64;
        let t = if self.p == 1 { 0.5 } else { i as f64 / span };
        MARGIN_LEFT + t * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let inner = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
        self.top + MARGIN_TOP + (self.hi - v) / (self.hi - self.lo) * inner
    }
}

fn points(frame: &Frame, values: impl Iterator<Item = (usize, f64)>) -> String {
    values
        .map(|(i, v)| format!("{:.2},{:.2}", frame.x(i), frame.y(v)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One panel per entry, stacked top to bottom.
pub fn decomposition(panels: &[Panel]) -> String {
    let height = PANEL_HEIGHT * panels.len() as f64;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{height:.0}" viewBox="0 0 {WIDTH:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, panel) in panels.iter().enumerate() {
        let p = panel.mean.len();
        let mut lo = panel.lower.min().min(0.0);
        let mut hi = panel.upper.max().max(0.0);
        if let Some(t) = panel.truth {
            lo = lo.min(t.min());
            hi = hi.max(t.max());
        }
        if (hi - lo).is_nan() || hi - lo <= 1e-12 {
            lo -= 1.0;
            hi += 1.0;
        }
        let pad = 0.05 * (hi - lo);
        let frame = Frame {
            top: k as f64 * PANEL_HEIGHT,
            p,
            lo: lo - pad,
            hi: hi + pad,
        };
        let left = MARGIN_LEFT;
        let right = WIDTH - MARGIN_RIGHT;
        let top = frame.top + MARGIN_TOP;
        let bottom = frame.top + PANEL_HEIGHT - MARGIN_BOTTOM;
        let _ = writeln!(s, "<g>");
        let _ = writeln!(
            s,
            r#"<text x="{left:.2}" y="{:.2}" font-size="13">{}</text>"#,
            frame.top + 18.0,
            escape(&panel.title)
        );
        let _ = writeln!(
            s,
            r##"<rect x="{left:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#888"/>"##,
            right - left,
            bottom - top
        );
        for v in [frame.hi, frame.lo] {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#,
                left - 4.0,
                frame.y(v) + 4.0
            );
        }
        let _ = writeln!(
            s,
            r##"<line x1="{left:.2}" y1="{y:.2}" x2="{right:.2}" y2="{y:.2}" stroke="#999" stroke-dasharray="4 3"/>"##,
            y = frame.y(0.0)
        );
        let upper = points(&frame, panel.upper.iter().copied().enumerate());
        let lower = points(&frame, panel.lower.iter().copied().enumerate().rev());
        let _ = writeln!(
            s,
            r##"<polygon points="{upper} {lower}" fill="#4a7ebb" fill-opacity="0.25" stroke="none"/>"##
        );
        if let Some(t) = panel.truth {
            let _ = writeln!(
                s,
                r##"<polyline points="{}" fill="none" stroke="#c0392b" stroke-width="1.2"/>"##,
                points(&frame, t.iter().copied().enumerate())
            );
        }
        let _ = writeln!(
            s,
            r##"<polyline points="{}" fill="none" stroke="#1f3b73" stroke-width="1.5"/>"##,
            points(&frame, panel.mean.iter().copied().enumerate())
        );
        for (i, label) in [(0, "1".to_string()), (p.saturating_sub(1), p.to_string())] {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{label}</text>"#,
                frame.x(i),
                bottom + 14.0
            );
        }
        let _ = writeln!(s, "</g>");
    }
    s.push_str("</svg>\n");
    s
}
