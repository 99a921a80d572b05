//! Static SVG snapshots: 1D histograms, 2D heat maps and scatters, line
//! plots and the sphere projection.

use std::path::Path;

use anyhow::{Context, Result};
use svg::node::element::{Circle, Description, Line, Polyline, Rectangle, Text};
use svg::Document;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 40.0;

/// Maps a data box onto the drawing area (y grows upwards).
struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        let widen = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
        let (x0, x1) = widen(x0, x1);
        let (y0, y1) = widen(y0, y1);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }
}

fn r(v: f64) -> f64 {
    (v * 100.0).round() / 100.0
}

fn base(title: &str, stamp: Option<&str>) -> Document {
    let mut doc = Document::new()
        .set("viewBox", (0, 0, W, H))
        .set("width", W)
        .set("height", H)
        .add(Rectangle::new().set("width", W).set("height", H).set("fill", "white"))
        .add(
            Text::new(title)
                .set("x", PAD)
                .set("y", PAD * 0.6)
                .set("font-family", "sans-serif")
                .set("font-size", 13),
        );
    if let Some(s) = stamp {
        doc = doc.add(Description::new().add(svg::node::Text::new(s)));
    }
    doc
}

fn axes(doc: Document, f: &Frame) -> Document {
    let line = |x1: f64, y1: f64, x2: f64, y2: f64| {
        Line::new().set("x1", r(x1)).set("y1", r(y1)).set("x2", r(x2)).set("y2", r(y2)).set("stroke", "black")
    };
    let label = |x: f64, y: f64, s: String, anchor: &str| {
        Text::new(s).set("x", r(x)).set("y", r(y)).set("font-family", "sans-serif").set("font-size", 10).set("text-anchor", anchor)
    };
    doc.add(line(PAD, H - PAD, W - PAD, H - PAD))
        .add(line(PAD, PAD, PAD, H - PAD))
        .add(label(PAD, H - PAD + 14.0, format!("{:.3}", f.x0), "start"))
        .add(label(W - PAD, H - PAD + 14.0, format!("{:.3}", f.x1), "end"))
        .add(label(PAD - 4.0, H - PAD, format!("{:.3}", f.y0), "end"))
        .add(label(PAD - 4.0, PAD + 4.0, format!("{:.3}", f.y1), "end"))
}

fn polyline(f: &Frame, xs: &[f64], ys: &[f64], color: &str) -> Polyline {
    let pts: Vec<String> = xs.iter().zip(ys).map(|(&x, &y)| format!("{},{}", r(f.px(x)), r(f.py(y)))).collect();
    Polyline::new().set("points", pts.join(" ")).set("fill", "none").set("stroke", color).set("stroke-width", 1.5)
}

/// Bars of `weights` at `xs`, with an optional potential overlaid on its own scale.
pub fn histogram_1d(xs: &[f64], weights: &[f64], potential: Option<&[f64]>, title: &str, stamp: Option<&str>) -> Document {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let top = weights.iter().copied().fold(0.0, f64::max);
    let f = Frame::new(lo, hi, 0.0, top);
    let bw = ((W - 2.0 * PAD) / xs.len().max(1) as f64).max(1.0);
    let mut doc = axes(base(title, stamp), &f);
    for (&x, &w) in xs.iter().zip(weights) {
        let (px, py) = (f.px(x), f.py(w));
        doc = doc.add(
            Rectangle::new()
                .set("x", r(px - bw / 2.0))
                .set("y", r(py))
                .set("width", r(bw))
                .set("height", r(H - PAD - py))
                .set("fill", "steelblue"),
        );
    }
    if let Some(v) = potential {
        let vlo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let vhi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let g = Frame::new(lo, hi, vlo, vhi);
        doc = doc.add(polyline(&g, xs, v, "darkorange"));
    }
    doc
}

/// Cell colors of an `n x n` grid (x fastest), darker for more mass.
pub fn heatmap_2d(n: usize, lo: f64, hi: f64, weights: &[f64], title: &str, stamp: Option<&str>) -> Document {
    let f = Frame::new(lo, hi, lo, hi);
    let top = weights.iter().copied().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let cw = (W - 2.0 * PAD) / n as f64;
    let ch = (H - 2.0 * PAD) / n as f64;
    let mut doc = axes(base(title, stamp), &f);
    for j in 0..n {
        for i in 0..n {
            let shade = (255.0 * (1.0 - weights[j * n + i] / top)).round() as u8;
            doc = doc.add(
                Rectangle::new()
                    .set("x", r(PAD + i as f64 * cw))
                    .set("y", r(H - PAD - (j + 1) as f64 * ch))
                    .set("width", r(cw))
                    .set("height", r(ch))
                    .set("fill", format!("rgb({shade},{shade},255)")),
            );
        }
    }
    doc
}

/// Particles in the plane.
pub fn scatter_2d(points: &[Vec<f64>], lo: f64, hi: f64, title: &str, stamp: Option<&str>) -> Document {
    let f = Frame::new(lo, hi, lo, hi);
    let mut doc = axes(base(title, stamp), &f);
    for p in points {
        doc = doc.add(Circle::new().set("cx", r(f.px(p[0]))).set("cy", r(f.py(p[1]))).set("r", 2.5).set("fill", "steelblue"));
    }
    doc
}

pub fn line_plot(xs: &[f64], ys: &[f64], title: &str, stamp: Option<&str>) -> Document {
    let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ylo = ys.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let yhi = ys.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let f = Frame::new(lo, hi, ylo, yhi);
    axes(base(title, stamp), &f).add(polyline(&f, xs, ys, "steelblue"))
}

/// Orthographic view of a path on the unit sphere along the third axis.
pub fn sphere_path(coords: &[[f64; 3]], title: &str, stamp: Option<&str>) -> Document {
    let f = Frame::new(-1.1, 1.1, -1.1, 1.1);
    let rim: Vec<(f64, f64)> = (0..=96).map(|k| (k as f64 * std::f64::consts::TAU / 96.0).sin_cos()).collect();
    let (rx, ry): (Vec<f64>, Vec<f64>) = rim.into_iter().unzip();
    let xs: Vec<f64> = coords.iter().map(|c| c[0]).collect();
    let ys: Vec<f64> = coords.iter().map(|c| c[1]).collect();
    let mut doc = base(title, stamp).add(polyline(&f, &rx, &ry, "lightgray")).add(polyline(&f, &xs, &ys, "steelblue"));
    if let (Some(a), Some(b)) = (coords.first(), coords.last()) {
        doc = doc
            .add(Circle::new().set("cx", r(f.px(a[0]))).set("cy", r(f.py(a[1]))).set("r", 3).set("fill", "green"))
            .add(Circle::new().set("cx", r(f.px(b[0]))).set("cy", r(f.py(b[1]))).set("r", 3).set("fill", "crimson"));
    }
    doc
}

pub fn save(path: &Path, doc: &Document) -> Result<()> {
    svg::save(path, doc).with_context(|| format!("writing {}", path.display()))
}
