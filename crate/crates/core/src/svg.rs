//! Minimal SVG plots. Every plot is written with a CSV sibling holding the
//! plotted coordinates (`series,x,y`).

use std::fmt::Write as _;
use std::path::Path;

use crate::survdata::format_float;
use crate::{Error, Result};

pub const EVENT_COLOR: &str = "#2ca02c";
pub const CENSORED_COLOR: &str = "#1f77b4";
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Mark {
    Points,
    Line,
    Step,
    Bars,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub color: String,
    pub mark: Mark,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Plot {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub series: Vec<Series>,
    /// Horizontal dashed guide lines.
    pub hlines: Vec<f64>,
    /// Draw the identity line.
    pub diagonal: bool,
}

impl Plot {
    pub fn new(title: &str, xlabel: &str, ylabel: &str) -> Self {
        Self { title: title.into(), xlabel: xlabel.into(), ylabel: ylabel.into(), ..Self::default() }
    }

    pub fn add(mut self, name: &str, color: &str, mark: Mark, points: Vec<(f64, f64)>) -> Self {
        self.series.push(Series {
            name: name.into(),
            color: color.into(),
            mark,
            points: points.into_iter().filter(|(x, y)| x.is_finite() && y.is_finite()).collect(),
        });
        self
    }

    fn bounds(&self) -> (f64, f64, f64, f64) {
        let pts = self.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if self.series.iter().any(|s| s.mark == Mark::Bars) {
            y0 = y0.min(0.0);
        }
        for &h in &self.hlines {
            y0 = y0.min(h);
            y1 = y1.max(h);
        }
        if !x0.is_finite() {
            return (0.0, 1.0, 0.0, 1.0);
        }
        if self.diagonal {
            let lo = x0.min(y0);
            let hi = x1.max(y1);
            (x0, x1, y0, y1) = (lo, hi, lo, hi);
        }
        let pad = |a: f64, b: f64| {
            let d = if b > a { (b - a) * 0.04 } else { 0.5 };
            (a - d, b + d)
        };
        let (x0, x1) = pad(x0, x1);
        let (y0, y1) = pad(y0, y1);
        (x0, x1, y0, y1)
    }

    pub fn to_svg(&self) -> String {
        let (x0, x1, y0, y1) = self.bounds();
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;
        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            esc(&self.title)
        );
        let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for v in ticks(x0, x1) {
            let x = sx(v);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                TOP + ph,
                TOP + ph + 5.0,
                TOP + ph + 18.0,
                tick_label(v)
            );
        }
        for v in ticks(y0, y1) {
            let y = sy(v);
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 5.0,
                LEFT - 8.0,
                y + 4.0,
                tick_label(v)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 12.0,
            esc(&self.xlabel)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            esc(&self.ylabel)
        );
        for &h in &self.hlines {
            let y = sy(h);
            let _ = writeln!(
                s,
                r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#888" stroke-dasharray="5,4"/>"##,
                LEFT + pw
            );
        }
        if self.diagonal {
            let (a, b) = (x0.max(y0), x1.min(y1));
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#888"/>"##,
                sx(a),
                sy(a),
                sx(b),
                sy(b)
            );
        }
        for ser in &self.series {
            match ser.mark {
                Mark::Points => {
                    for &(x, y) in &ser.points {
                        let _ = writeln!(
                            s,
                            r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#,
                            sx(x),
                            sy(y),
                            ser.color
                        );
                    }
                }
                Mark::Line | Mark::Step => {
                    let mut d = String::new();
                    let mut prev: Option<(f64, f64)> = None;
                    for &(x, y) in &ser.points {
                        match prev {
                            None => {
                                let _ = write!(d, "M{:.2},{:.2}", sx(x), sy(y));
                            }
                            Some(_) if ser.mark == Mark::Step => {
                                let _ = write!(d, " H{:.2} V{:.2}", sx(x), sy(y));
                            }
                            Some(_) => {
                                let _ = write!(d, " L{:.2},{:.2}", sx(x), sy(y));
                            }
                        }
                        prev = Some((x, y));
                    }
                    let _ = writeln!(s, r#"<path d="{d}" fill="none" stroke="{}" stroke-width="1.6"/>"#, ser.color);
                    if ser.mark == Mark::Line {
                        for &(x, y) in &ser.points {
                            let _ = writeln!(
                                s,
                                r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{}"/>"#,
                                sx(x),
                                sy(y),
                                ser.color
                            );
                        }
                    }
                }
                Mark::Bars => {
                    let width = bar_width(&ser.points);
                    for &(x, y) in &ser.points {
                        let (l, r) = (sx(x - width / 2.0), sx(x + width / 2.0));
                        let (top, base) = (sy(y), sy(0.0));
                        let _ = writeln!(
                            s,
                            r#"<rect x="{l:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="white"/>"#,
                            r - l,
                            base - top,
                            ser.color
                        );
                    }
                }
            }
        }
        for (i, ser) in self.series.iter().enumerate() {
            let y = TOP + 12.0 + 18.0 * i as f64;
            let x = LEFT + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{}" width="10" height="10" fill="{}"/><text x="{}" y="{y}">{}</text>"#,
                y - 9.0,
                ser.color,
                x + 15.0,
                esc(&ser.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("series,x,y\n");
        for ser in &self.series {
            for &(x, y) in &ser.points {
                let name = if ser.name.contains([',', '"']) {
                    format!("\"{}\"", ser.name.replace('"', "\"\""))
                } else {
                    ser.name.clone()
                };
                let _ = writeln!(s, "{name},{},{}", format_float(x), format_float(y));
            }
        }
        s
    }

    /// Write `<stem>.svg` and `<stem>.csv` into `dir`.
    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        for (ext, body) in [("svg", self.to_svg()), ("csv", self.to_csv())] {
            let path = dir.as_ref().join(format!("{stem}.{ext}"));
            std::fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

fn bar_width(points: &[(f64, f64)]) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    points.windows(2).map(|w| w[1].0 - w[0].0).fold(f64::INFINITY, f64::min)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.4}");
    s.trim_end_matches('0').trim_end_matches('.').to_owned()
}

/// Distinct colours for curve series.
pub fn palette(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Residual-vs-index scatter with event/censored colouring and +-3 guides.
pub fn residual_scatter(title: &str, z: &[Option<f64>], status: &[bool]) -> Plot {
    let pick = |want: bool| -> Vec<(f64, f64)> {
        z.iter()
            .zip(status)
            .enumerate()
            .filter_map(|(i, (z, &s))| z.filter(|_| s == want).map(|z| ((i + 1) as f64, z)))
            .collect()
    };
    let mut p = Plot::new(title, "index", "Z-residual").add("event", EVENT_COLOR, Mark::Points, pick(true)).add(
        "censored",
        CENSORED_COLOR,
        Mark::Points,
        pick(false),
    );
    p.hlines = vec![-3.0, 3.0];
    p
}

pub fn qq_plot(title: &str, coords: Vec<(f64, f64)>) -> Plot {
    let mut p = Plot::new(title, "theoretical quantile", "sample quantile").add(
        "residuals",
        CENSORED_COLOR,
        Mark::Points,
        coords,
    );
    p.diagonal = true;
    p
}

/// Histogram over `[lo, hi]` with equal-width bins, plotted at bin centres.
pub fn histogram(title: &str, xlabel: &str, values: &[f64], bins: usize, lo: f64, hi: f64) -> Plot {
    let bins = bins.max(1);
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values.iter().filter(|v| v.is_finite()) {
        let k = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[k] += 1;
    }
    let pts = counts.iter().enumerate().map(|(k, &c)| (lo + (k as f64 + 0.5) * width, c as f64)).collect();
    Plot::new(title, xlabel, "count").add("count", CENSORED_COLOR, Mark::Bars, pts)
}

/// Nelson-Aalen CHF of Cox-Snell residuals against the unit-exponential
/// reference line.
pub fn cs_chf_plot(title: &str, coords: Vec<(f64, f64)>) -> Plot {
    let mut p = Plot::new(title, "Cox-Snell residual", "cumulative hazard").add(
        "Nelson-Aalen",
        CENSORED_COLOR,
        Mark::Step,
        coords,
    );
    p.diagonal = true;
    p
}
