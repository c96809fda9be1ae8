//! Minimal SVG line charts for flow curves and boundary traces.

use anyhow::{bail, Context, Result};
use std::fmt::Write;

/// A two-column table read from a CSV file; `#` lines are comments.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub x_label: String,
    pub y_label: String,
    pub points: Vec<(f64, f64)>,
}

/// Reads the first two columns of a CSV with a header row.
pub fn read_series(text: &str, y_column: Option<&str>) -> Result<Series> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header: Vec<&str> = lines.next().context("csv has no header row")?.split(',').map(str::trim).collect();
    if header.len() < 2 {
        bail!("csv needs at least two columns");
    }
    let yi = match y_column {
        Some(name) => header.iter().position(|h| *h == name).with_context(|| format!("csv has no column '{name}'"))?,
        None => 1,
    };
    let mut points = Vec::new();
    for (k, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let get = |i: usize| -> Result<f64> {
            cells.get(i).context("short row")?.parse::<f64>().with_context(|| format!("bad number in data row {}", k + 1))
        };
        points.push((get(0)?, get(yi)?));
    }
    if points.is_empty() {
        bail!("csv has no data rows");
    }
    Ok(Series { x_label: header[0].to_string(), y_label: header[yi].to_string(), points })
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

/// Line chart with markers, axis ticks and labels.
pub fn svg_line_chart(series: &Series, title: &str) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 420.0, 80.0, 20.0, 40.0, 50.0);
    let xs = series.points.iter().map(|p| p.0);
    let ys = series.points.iter().map(|p| p.1);
    let (mut x0, mut x1) = (xs.clone().fold(f64::INFINITY, f64::min), xs.fold(f64::NEG_INFINITY, f64::max));
    let (mut y0, mut y1) = (ys.clone().fold(f64::INFINITY, f64::min), ys.fold(f64::NEG_INFINITY, f64::max));
    if x1 - x0 <= 0.0 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let pad = if y1 - y0 > 0.0 { 0.05 * (y1 - y0) } else { 0.5 * y0.abs().max(1.0) };
    y0 -= pad;
    y1 += pad;
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| h - mb - (y - y0) / (y1 - y0) * (h - mt - mb);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{ml},{mt} L{ml},{} L{},{}" fill="none" stroke="black"/>"#,
        h - mb,
        w - mr,
        h - mb
    );
    for k in 0..=4 {
        let f = k as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            px(xv),
            h - mb + 16.0,
            fmt_tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            ml - 6.0,
            py(yv) + 4.0,
            fmt_tick(yv)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13">{}</text>"#,
        (ml + w - mr) / 2.0,
        h - 12.0,
        escape(&series.x_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 16 {})">{}</text>"#,
        (mt + h - mb) / 2.0,
        (mt + h - mb) / 2.0,
        escape(&series.y_label)
    );
    let pts: Vec<String> = series.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
    let _ = writeln!(s, r#"<polyline class="series" points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, pts.join(" "));
    for &(x, y) in &series.points {
        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="steelblue"/>"#, px(x), py(y));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
