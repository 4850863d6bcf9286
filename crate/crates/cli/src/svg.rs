//! Minimal static SVG charts: log/linear line plots with optional bands,
//! bar charts with error whiskers and scatter plots.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

pub fn color(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[derive(Debug, Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.filter(|v| v.is_finite() && (!log || *v > 0.0)) {
            let v = if log { v.log10() } else { v };
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        }
        if log {
            (lo, hi) = (lo.floor(), hi.ceil());
        }
        Axis { lo, hi, log }
    }

    fn unit(&self, v: f64) -> Option<f64> {
        if !v.is_finite() || (self.log && v <= 0.0) {
            return None;
        }
        let v = if self.log { v.log10() } else { v };
        Some((v - self.lo) / (self.hi - self.lo))
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo as i32, self.hi as i32);
            let stride = ((b - a) / 8).max(1);
            (a..=b).step_by(stride as usize).map(|e| (10f64.powi(e), format!("1e{e}"))).collect()
        } else {
            (0..=5)
                .map(|i| {
                    let v = self.lo + (self.hi - self.lo) * i as f64 / 5.0;
                    (v, fmt_num(v))
                })
                .collect()
        }
    }
}

fn fmt_num(v: f64) -> String {
    let a = v.abs();
    if a != 0.0 && !(1e-2..1e5).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.2}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Frame {
    x: Axis,
    y: Axis,
    out: String,
}

impl Frame {
    fn new(title: &str, x_label: &str, y_label: &str, x: Axis, y: Axis) -> Frame {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(out, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
        let mut f = Frame { x, y, out };
        f.axes(x_label, y_label);
        f
    }

    fn px(&self, v: f64) -> Option<f64> {
        self.x.unit(v).map(|u| LEFT + u * (W - LEFT - RIGHT))
    }

    fn py(&self, v: f64) -> Option<f64> {
        self.y.unit(v).map(|u| H - BOTTOM - u * (H - TOP - BOTTOM))
    }

    fn axes(&mut self, x_label: &str, y_label: &str) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, H - BOTTOM, TOP);
        let _ = writeln!(self.out, r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" stroke="black" fill="none"/>"#);
        for (v, label) in self.y.ticks() {
            if let Some(y) = self.py(v) {
                let _ = writeln!(
                    self.out,
                    r##"<line x1="{x0}" y1="{y:.1}" x2="{x1}" y2="{y:.1}" stroke="#ddd"/><text x="{}" y="{:.1}" text-anchor="end">{label}</text>"##,
                    x0 - 6.0,
                    y + 4.0
                );
            }
        }
        for (v, label) in self.x.ticks() {
            if let Some(x) = self.px(v) {
                let _ = writeln!(self.out, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{label}</text>"#, y0 + 16.0);
            }
        }
        let _ = writeln!(self.out, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, H - 16.0, esc(x_label));
        let _ = writeln!(
            self.out,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            esc(y_label)
        );
    }

    fn legend(&mut self, i: usize, name: &str, col: &str) {
        let y = TOP + 14.0 * i as f64 + 6.0;
        let x = W - RIGHT + 12.0;
        let _ = writeln!(
            self.out,
            r#"<rect x="{x}" y="{}" width="10" height="10" fill="{col}"/><text x="{}" y="{}">{}</text>"#,
            y - 8.0,
            x + 14.0,
            y + 1.0,
            esc(name)
        );
    }

    fn finish(mut self) -> String {
        self.out.push_str("</svg>\n");
        self.out
    }
}

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    /// Optional shaded `(x, lo, hi)` band drawn under the line.
    pub band: Vec<(f64, f64, f64)>,
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, log_y: bool, series: &[Series]) -> String {
    let xs = series.iter().flat_map(|s| s.points.iter().map(|p| p.0).chain(s.band.iter().map(|b| b.0)));
    let ys = series
        .iter()
        .flat_map(|s| s.points.iter().map(|p| p.1).chain(s.band.iter().flat_map(|b| [b.1, b.2])));
    let mut f = Frame::new(title, x_label, y_label, Axis::fit(xs, false), Axis::fit(ys, log_y));
    for (i, s) in series.iter().enumerate() {
        let col = color(i);
        let upper: Vec<(f64, f64)> = s.band.iter().filter_map(|b| Some((f.px(b.0)?, f.py(b.2)?))).collect();
        let lower: Vec<(f64, f64)> = s.band.iter().rev().filter_map(|b| Some((f.px(b.0)?, f.py(b.1)?))).collect();
        if upper.len() > 1 && lower.len() > 1 {
            let pts: Vec<String> = upper.iter().chain(&lower).map(|(x, y)| format!("{x:.1},{y:.1}")).collect();
            let _ = writeln!(f.out, r#"<polygon points="{}" fill="{col}" fill-opacity="0.2" stroke="none"/>"#, pts.join(" "));
        }
        // split the polyline wherever a point cannot be drawn
        let mut path = String::new();
        let mut pen_down = false;
        for &(x, y) in &s.points {
            match (f.px(x), f.py(y)) {
                (Some(px), Some(py)) => {
                    let _ = write!(path, "{}{px:.1} {py:.1} ", if pen_down { "L" } else { "M" });
                    pen_down = true;
                }
                _ => pen_down = false,
            }
        }
        if !path.is_empty() {
            let _ = writeln!(f.out, r#"<path d="{}" stroke="{col}" stroke-width="1.5" fill="none"/>"#, path.trim_end());
        }
        f.legend(i, &s.name, col);
    }
    f.finish()
}

#[derive(Debug, Clone)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    pub lo: f64,
    pub hi: f64,
    pub group: usize,
}

pub fn bar_chart(title: &str, y_label: &str, bars: &[Bar], groups: &[String]) -> String {
    let y = Axis { lo: 0.0, hi: 1.0, log: false };
    let x = Axis { lo: 0.0, hi: bars.len().max(1) as f64, log: false };
    let mut f = Frame::new(title, "", y_label, x, y);
    let slot = (W - LEFT - RIGHT) / bars.len().max(1) as f64;
    for (i, b) in bars.iter().enumerate() {
        let col = color(b.group);
        let x0 = LEFT + slot * i as f64 + slot * 0.15;
        let bw = slot * 0.7;
        let base = f.py(0.0).unwrap_or(H - BOTTOM);
        let top = f.py(b.value.clamp(0.0, 1.0)).unwrap_or(base);
        let _ = writeln!(f.out, r#"<rect x="{x0:.1}" y="{top:.1}" width="{bw:.1}" height="{:.1}" fill="{col}"/>"#, base - top);
        if let (Some(lo), Some(hi)) = (f.py(b.lo), f.py(b.hi)) {
            let cx = x0 + bw / 2.0;
            let _ = writeln!(f.out, r#"<path d="M{cx:.1} {lo:.1} L{cx:.1} {hi:.1} M{:.1} {lo:.1} L{:.1} {lo:.1} M{:.1} {hi:.1} L{:.1} {hi:.1}" stroke="black"/>"#,
                cx - 4.0, cx + 4.0, cx - 4.0, cx + 4.0);
        }
        let lx = x0 + bw / 2.0;
        let ly = H - BOTTOM + 12.0;
        let _ = writeln!(
            f.out,
            r#"<text x="{lx:.1}" y="{ly:.1}" text-anchor="end" font-size="9" transform="rotate(-35 {lx:.1} {ly:.1})">{}</text>"#,
            esc(&b.label)
        );
    }
    for (i, g) in groups.iter().enumerate() {
        f.legend(i, g, color(i));
    }
    f.finish()
}

#[derive(Debug, Clone)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub group: usize,
}

pub fn scatter_chart(title: &str, x_label: &str, y_label: &str, log_x: bool, points: &[Point], groups: &[String]) -> String {
    let x = Axis::fit(points.iter().map(|p| p.x), log_x);
    let y = Axis::fit(points.iter().map(|p| p.y), false);
    let mut f = Frame::new(title, x_label, y_label, x, y);
    for p in points {
        if let (Some(px), Some(py)) = (f.px(p.x), f.py(p.y)) {
            let _ = writeln!(f.out, r#"<circle cx="{px:.1}" cy="{py:.1}" r="3" fill="{}" fill-opacity="0.7"/>"#, color(p.group));
        }
    }
    for (i, g) in groups.iter().enumerate() {
        f.legend(i, g, color(i));
    }
    f.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn log_axis_skips_non_positive() {
        let s = Series { name: "a".into(), points: vec![(0.0, 1.0), (1.0, 0.0), (2.0, 100.0)], band: vec![] };
        let svg = line_chart("t", "x", "y", true, &[s]);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert!(svg.matches("M").count() >= 2);
    }

    #[test]
    fn rendering_is_deterministic() {
        let bars = vec![Bar { label: "q n=1".into(), value: 0.4, lo: 0.2, hi: 0.6, group: 0 }];
        assert_eq!(bar_chart("t", "y", &bars, &[]), bar_chart("t", "y", &bars, &[]));
    }

    #[test]
    fn labels_escaped() {
        let svg = scatter_chart("a<b", "x", "y", false, &[Point { x: 1.0, y: 2.0, group: 0 }], &["p&q".into()]);
        assert!(svg.contains("a&lt;b") && svg.contains("p&amp;q"));
    }
}
