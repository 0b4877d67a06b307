//! Calibration report: curve.json, curve.csv and two SVG scatter plots.
//!
//! Everything is rendered as text with fixed formatting so that identical
//! curves produce identical bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::Result;
use crate::io;
use crate::manifest;
use crate::protocol::{CalibrationCurve, CURVE_JSON};

pub const CURVE_CSV: &str = "curve.csv";
pub const FID_VS_NOISE_SVG: &str = "fid_vs_noise.svg";
pub const FID_VS_MPSD_SVG: &str = "fid_vs_mpsd.svg";

pub fn curve_csv(curve: &CalibrationCurve) -> String {
    let mut out = String::from("noise_percent,fid,mpsd,n_images\n");
    for p in &curve.points {
        writeln!(out, "{},{},{},{}", p.noise_percent, p.fid, p.mpsd, p.n_images).unwrap();
    }
    out
}

const WIDTH: f64 = 520.0;
const HEIGHT: f64 = 380.0;
const LEFT: f64 = 72.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const TICKS: usize = 5;

/// Axis range padded by 5 %; a degenerate range is widened around its value.
fn axis_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        let pad = (hi - lo) * 0.05;
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 1.0 } else { lo.abs() * 0.1 };
        (lo - pad, hi + pad)
    }
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if !(1e-3..1e5).contains(&a) {
        format!("{v:.2e}")
    } else if a >= 100.0 {
        format!("{v:.0}")
    } else if a >= 1.0 {
        format!("{v:.2}")
    } else {
        format!("{v:.4}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

struct Plot<'a> {
    title: &'a str,
    x_label: &'a str,
    y_label: &'a str,
    xs: Vec<f64>,
    ys: Vec<f64>,
    labels: Option<Vec<String>>,
    connect: bool,
}

fn render(plot: &Plot) -> String {
    let (x0, x1) = axis_range(&plot.xs);
    let (y0, y1) = axis_range(&plot.ys);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(s, r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(plot.title))
        .unwrap();
    writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
    )
    .unwrap();

    for i in 0..TICKS {
        let t = i as f64 / (TICKS - 1) as f64;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let (px, py) = (sx(xv), sy(yv));
        let base = TOP + ph;
        writeln!(s, r#"<line x1="{px:.2}" y1="{base:.2}" x2="{px:.2}" y2="{:.2}" stroke="black"/>"#, base + 5.0).unwrap();
        writeln!(s, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, base + 18.0, tick_label(xv)).unwrap();
        writeln!(s, r#"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/>"#, LEFT - 5.0).unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, py + 4.0, tick_label(yv))
            .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 14.0,
        escape(plot.x_label)
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(plot.y_label)
    )
    .unwrap();

    if plot.connect {
        let pts: Vec<String> = plot.xs.iter().zip(&plot.ys).map(|(&x, &y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        writeln!(s, r##"<polyline points="{}" fill="none" stroke="#1f77b4"/>"##, pts.join(" ")).unwrap();
    }
    for (i, (&x, &y)) in plot.xs.iter().zip(&plot.ys).enumerate() {
        let (px, py) = (sx(x), sy(y));
        writeln!(s, r##"<circle cx="{px:.2}" cy="{py:.2}" r="4" fill="#1f77b4"/>"##).unwrap();
        if let Some(labels) = &plot.labels {
            writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, px + 6.0, py - 6.0, escape(&labels[i])).unwrap();
        }
    }
    s.push_str("</svg>\n");
    s
}

pub fn fid_vs_noise_svg(curve: &CalibrationCurve) -> String {
    render(&Plot {
        title: "FID vs added noise",
        x_label: "noise level (% of 255)",
        y_label: "FID",
        xs: curve.points.iter().map(|p| p.noise_percent).collect(),
        ys: curve.points.iter().map(|p| p.fid).collect(),
        labels: None,
        connect: true,
    })
}

pub fn fid_vs_mpsd_svg(curve: &CalibrationCurve) -> String {
    render(&Plot {
        title: "FID vs mPSD",
        x_label: "mPSD",
        y_label: "FID",
        xs: curve.points.iter().map(|p| p.mpsd).collect(),
        ys: curve.points.iter().map(|p| p.fid).collect(),
        labels: Some(curve.points.iter().map(|p| format!("{}%", p.noise_percent)).collect()),
        connect: false,
    })
}

/// Writes the four report files into `out_dir` (created if missing) and
/// returns their paths.
pub fn emit_report(curve: &CalibrationCurve, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let json = out_dir.join(CURVE_JSON);
    manifest::write_json(&json, curve)?;
    let files = [
        (CURVE_CSV, curve_csv(curve)),
        (FID_VS_NOISE_SVG, fid_vs_noise_svg(curve)),
        (FID_VS_MPSD_SVG, fid_vs_mpsd_svg(curve)),
    ];
    let mut paths = vec![json];
    for (name, text) in files {
        let path = out_dir.join(name);
        io::write_file(&path, text.as_bytes())?;
        paths.push(path);
    }
    Ok(paths)
}
