//! Minimal self-contained SVG charts: lines, scatter points and shaded bands
//! with labelled axes, an optional right-hand axis and a legend.

use std::fmt::Write as _;

const WIDTH: f64 = 760.0;
const HEIGHT: f64 = 440.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 78.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 56.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Clone, Debug)]
pub enum SeriesKind {
    Line(Vec<(f64, f64)>),
    Points(Vec<(f64, f64)>),
    /// `(x, lower, upper)`
    Band(Vec<(f64, f64, f64)>),
}

#[derive(Clone, Debug)]
pub struct Series {
    pub name: String,
    pub kind: SeriesKind,
    /// Plot against the right-hand axis.
    pub right_axis: bool,
}

impl Series {
    pub fn line(name: impl Into<String>, pts: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            kind: SeriesKind::Line(pts),
            right_axis: false,
        }
    }

    pub fn points(name: impl Into<String>, pts: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            kind: SeriesKind::Points(pts),
            right_axis: false,
        }
    }

    pub fn band(name: impl Into<String>, pts: Vec<(f64, f64, f64)>) -> Self {
        Self {
            name: name.into(),
            kind: SeriesKind::Band(pts),
            right_axis: false,
        }
    }

    pub fn on_right(mut self) -> Self {
        self.right_axis = true;
        self
    }

    fn ys(&self) -> Vec<f64> {
        match &self.kind {
            SeriesKind::Line(p) | SeriesKind::Points(p) => p.iter().map(|q| q.1).collect(),
            SeriesKind::Band(p) => p.iter().flat_map(|q| [q.1, q.2]).collect(),
        }
    }

    fn xs(&self) -> Vec<f64> {
        match &self.kind {
            SeriesKind::Line(p) | SeriesKind::Points(p) => p.iter().map(|q| q.0).collect(),
            SeriesKind::Band(p) => p.iter().map(|q| q.0).collect(),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub y2_label: Option<String>,
    pub series: Vec<Series>,
    /// Fixed x range instead of the data extent.
    pub x_range: Option<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn extent(values: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values.filter(|v| v.is_finite()) {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if lo > hi {
        return None;
    }
    if hi - lo < 1e-12 {
        let pad = if lo.abs() > 1e-12 { lo.abs() * 0.05 } else { 1.0 };
        return Some((lo - pad, hi + pad));
    }
    let pad = 0.05 * (hi - lo);
    Some((lo - pad, hi + pad))
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag);
    let start = (lo / step).ceil() as i64;
    let end = (hi / step).floor() as i64;
    (start..=end).map(|k| k as f64 * step).collect()
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if !(1e-3..1e5).contains(&a) {
        format!("{v:.1e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

struct Scale {
    lo: f64,
    hi: f64,
    a: f64,
    b: f64,
}

impl Scale {
    fn map(&self, v: f64) -> f64 {
        self.a + (v - self.lo) / (self.hi - self.lo) * (self.b - self.a)
    }
}

impl Chart {
    pub fn new(title: impl Into<String>, x_label: impl Into<String>, y_label: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            x_label: x_label.into(),
            y_label: y_label.into(),
            ..Self::default()
        }
    }

    pub fn with_right_axis(mut self, label: impl Into<String>) -> Self {
        self.y2_label = Some(label.into());
        self
    }

    pub fn push(&mut self, s: Series) {
        self.series.push(s);
    }

    pub fn render(&self) -> String {
        let (x0, x1) = self
            .x_range
            .or_else(|| extent(self.series.iter().flat_map(|s| s.xs())))
            .unwrap_or((0.0, 1.0));
        let left_y = extent(self.series.iter().filter(|s| !s.right_axis).flat_map(|s| s.ys())).unwrap_or((0.0, 1.0));
        let right_y = extent(self.series.iter().filter(|s| s.right_axis).flat_map(|s| s.ys())).unwrap_or((0.0, 1.0));
        let sx = Scale {
            lo: x0,
            hi: x1,
            a: LEFT,
            b: WIDTH - RIGHT,
        };
        let sy = Scale {
            lo: left_y.0,
            hi: left_y.1,
            a: HEIGHT - BOTTOM,
            b: TOP,
        };
        let sy2 = Scale {
            lo: right_y.0,
            hi: right_y.1,
            a: HEIGHT - BOTTOM,
            b: TOP,
        };

        let mut o = String::new();
        let _ = writeln!(
            o,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(o, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
        let _ = writeln!(
            o,
            r#"<text class="title" x="{:.1}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            WIDTH / 2.0,
            escape(&self.title)
        );
        // frame and ticks
        let _ = writeln!(
            o,
            r##"<rect x="{LEFT}" y="{TOP}" width="{:.1}" height="{:.1}" fill="none" stroke="#333"/>"##,
            WIDTH - LEFT - RIGHT,
            HEIGHT - TOP - BOTTOM
        );
        for t in ticks(x0, x1) {
            let x = sx.map(t);
            let _ = writeln!(
                o,
                r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#333"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                HEIGHT - BOTTOM,
                HEIGHT - BOTTOM + 5.0,
                HEIGHT - BOTTOM + 19.0,
                fmt_tick(t)
            );
        }
        for t in ticks(sy.lo, sy.hi) {
            let y = sy.map(t);
            let _ = writeln!(
                o,
                r##"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                LEFT - 5.0,
                LEFT - 8.0,
                y + 4.0,
                fmt_tick(t)
            );
        }
        let _ = writeln!(
            o,
            r#"<text class="x-label" x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            (LEFT + WIDTH - RIGHT) / 2.0,
            HEIGHT - 14.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            o,
            r#"<text class="y-label" x="18" y="{:.1}" text-anchor="middle" transform="rotate(-90 18 {:.1})">{}</text>"#,
            (TOP + HEIGHT - BOTTOM) / 2.0,
            (TOP + HEIGHT - BOTTOM) / 2.0,
            escape(&self.y_label)
        );
        if let Some(label) = &self.y2_label {
            let xr = WIDTH - RIGHT;
            for t in ticks(sy2.lo, sy2.hi) {
                let y = sy2.map(t);
                let _ = writeln!(
                    o,
                    r##"<line x1="{xr:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#333"/><text x="{:.2}" y="{:.2}">{}</text>"##,
                    xr + 5.0,
                    xr + 8.0,
                    y + 4.0,
                    fmt_tick(t)
                );
            }
            let yc = (TOP + HEIGHT - BOTTOM) / 2.0;
            let _ = writeln!(
                o,
                r#"<text class="y2-label" x="{:.1}" y="{yc:.1}" text-anchor="middle" transform="rotate(90 {:.1} {yc:.1})">{}</text>"#,
                WIDTH - 16.0,
                WIDTH - 16.0,
                escape(label)
            );
        }

        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let ys = if s.right_axis { &sy2 } else { &sy };
            match &s.kind {
                SeriesKind::Line(p) => {
                    let pts: Vec<String> = p
                        .iter()
                        .filter(|q| q.1.is_finite())
                        .map(|q| format!("{:.2},{:.2}", sx.map(q.0), ys.map(q.1)))
                        .collect();
                    let _ = writeln!(
                        o,
                        r#"<polyline fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#,
                        pts.join(" ")
                    );
                }
                SeriesKind::Points(p) => {
                    for q in p.iter().filter(|q| q.1.is_finite()) {
                        let _ = writeln!(
                            o,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="2.2" fill="{color}" fill-opacity="0.7"/>"#,
                            sx.map(q.0),
                            ys.map(q.1)
                        );
                    }
                }
                SeriesKind::Band(p) => {
                    let upper = p.iter().map(|q| format!("{:.2},{:.2}", sx.map(q.0), ys.map(q.2)));
                    let lower = p.iter().rev().map(|q| format!("{:.2},{:.2}", sx.map(q.0), ys.map(q.1)));
                    let pts: Vec<String> = upper.chain(lower).collect();
                    let _ = writeln!(
                        o,
                        r#"<polygon fill="{color}" fill-opacity="0.18" stroke="none" points="{}"/>"#,
                        pts.join(" ")
                    );
                }
            }
        }

        // legend
        let lx = LEFT + 12.0;
        for (k, s) in self.series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let y = TOP + 16.0 + 16.0 * k as f64;
            let _ = writeln!(
                o,
                r#"<rect x="{lx:.1}" y="{:.1}" width="12" height="8" fill="{color}"/><text class="legend" x="{:.1}" y="{y:.1}">{}</text>"#,
                y - 8.0,
                lx + 18.0,
                escape(&s.name)
            );
        }
        o.push_str("</svg>\n");
        o
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_labels_and_legend() {
        let mut c = Chart::new("a_pm over the week", "hour of week", "probability").with_right_axis("runtime (ms)");
        c.push(Series::band("mean ± 2σ", vec![(0.0, 0.1, 0.3), (1.0, 0.2, 0.4)]));
        c.push(Series::line("posterior mean", vec![(0.0, 0.2), (1.0, 0.3)]));
        c.push(Series::points("empirical", vec![(0.5, 0.25)]));
        c.push(Series::line("runtime", vec![(0.0, 5.0), (1.0, 50.0)]).on_right());
        let svg = c.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains(">hour of week</text>"));
        assert!(svg.contains(">probability</text>"));
        assert!(svg.contains(">runtime (ms)</text>"));
        assert!(svg.contains("class=\"legend\""));
        assert!(svg.contains(">mean ± 2σ</text>"));
        assert!(svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn tick_values_are_round() {
        assert_eq!(ticks(0.0, 1.0), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert_eq!(fmt_tick(0.6000000000000001), "0.6");
        assert_eq!(fmt_tick(2.5e-5), "2.5e-5");
    }

    #[test]
    fn escapes_text() {
        let c = Chart::new("a < b & c", "x", "y");
        assert!(c.render().contains("a &lt; b &amp; c"));
    }
}
