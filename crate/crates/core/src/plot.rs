//! Accuracy curves as gnuplot data blocks and a minimal SVG line chart.

use std::fmt::Write as _;
use std::io::Write;

use crate::error::Result;
use crate::experiments::ResultRecord;

struct Curve {
    label: String,
    points: Vec<(f64, f64, f64, String)>,
}

/// Groups records by curve, in first-appearance order. Non-numeric sweep
/// values (modulation names) are placed at their index.
fn curves(records: &[ResultRecord]) -> Vec<Curve> {
    let numeric = records.iter().all(|r| r.value_f64().is_some());
    let mut categories: Vec<String> = Vec::new();
    let mut out: Vec<Curve> = Vec::new();
    for r in records {
        let x = if numeric {
            r.value_f64().unwrap_or(0.0)
        } else {
            match categories.iter().position(|c| *c == r.value) {
                Some(i) => i as f64,
                None => {
                    categories.push(r.value.clone());
                    (categories.len() - 1) as f64
                }
            }
        };
        let label = r.curve();
        let point = (x, r.accuracy, r.chance, r.value.clone());
        match out.iter_mut().find(|c| c.label == label) {
            Some(c) => c.points.push(point),
            None => out.push(Curve { label, points: vec![point] }),
        }
    }
    out
}

/// One block per curve separated by two blank lines (select with `index`).
/// Columns: x, accuracy, chance, raw sweep value.
pub fn write_plot_data<W: Write>(mut w: W, records: &[ResultRecord]) -> Result<()> {
    if let Some(first) = records.first() {
        writeln!(w, "# study {} param {}", first.study, first.param)?;
    }
    for (i, c) in curves(records).iter().enumerate() {
        if i > 0 {
            writeln!(w, "\n")?;
        }
        writeln!(w, "# curve {}", c.label)?;
        writeln!(w, "# x accuracy chance value")?;
        for (x, acc, chance, v) in &c.points {
            writeln!(w, "{x} {acc:.4} {chance} {v}")?;
        }
    }
    Ok(())
}

const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// Accuracy against the swept value, one polyline per curve, with the
/// chance level dashed. A log x axis is used for wide positive ranges.
pub fn svg_chart(records: &[ResultRecord], title: &str) -> String {
    let (w, h) = (640.0, 420.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let cs = curves(records);
    let xs: Vec<f64> = cs.iter().flat_map(|c| c.points.iter().map(|p| p.0)).collect();
    let (mut xmin, mut xmax) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if !xmin.is_finite() {
        (xmin, xmax) = (0.0, 1.0);
    }
    let log = xmin > 0.0 && xmax / xmin > 50.0;
    let tx = |x: f64| if log { x.log10() } else { x };
    let (lo, hi) = (tx(xmin), tx(xmax));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let px = |x: f64| left + (tx(x) - lo) / span * (w - left - right);
    let py = |y: f64| top + (1.0 - y) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, (w - right + left) / 2.0, escape(title));
    let (x0, x1, y0, y1) = (left, w - right, py(0.0), py(1.0));
    let _ = writeln!(s, r#"<path d="M{x0},{y1} L{x0},{y0} L{x1},{y0}" fill="none" stroke="black"/>"#);
    for i in 0..=5 {
        let v = i as f64 / 5.0;
        let y = py(v);
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{y}" x2="{x1}" y2="{y}" stroke="#ddd"/><text x="{}" y="{}" text-anchor="end">{v:.1}</text>"##, x0 - 6.0, y + 4.0);
    }
    if let Some(c) = cs.first() {
        for (x, _, _, v) in &c.points {
            let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, px(*x), y0 + 18.0, escape(v));
        }
    }
    if let Some(r) = records.first() {
        let name = if r.study == crate::experiments::Study::Arch { "s" } else { r.param.as_str() };
        let axis = if log { format!("{name} (log)") } else { name.to_string() };
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, (x0 + x1) / 2.0, h - 12.0, escape(&axis));
        let _ = writeln!(s, r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">accuracy</text>"#, (y0 + y1) / 2.0, (y0 + y1) / 2.0);
    }
    for (i, c) in cs.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = c.points.iter().map(|p| format!("{:.1},{:.1}", px(p.0), py(p.1))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, pts.join(" "));
        for p in &c.points {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{color}"/>"#, px(p.0), py(p.1));
        }
        let ly = top + 18.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#, x1 + 12.0, x1 + 32.0, x1 + 38.0, ly + 4.0, escape(&c.label));
    }
    // chance level, drawn from the first curve
    if let Some(c) = cs.first() {
        let pts: Vec<String> = c.points.iter().map(|p| format!("{:.1},{:.1}", px(p.0), py(p.2))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="gray" stroke-dasharray="4 3"/>"#, pts.join(" "));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
