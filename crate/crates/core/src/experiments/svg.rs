//! Log-log scatter plots with fitted lines as standalone SVG.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// `(slope, intercept)` of `ln y = intercept + slope · ln x`.
    pub fit: Option<(f64, f64)>,
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 24.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const TICKS: usize = 5;

struct Axis {
    lo: f64,
    hi: f64,
}

impl Axis {
    /// Range of `log10` values, padded by 5% (or ±0.5 decades when degenerate).
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v.log10());
            hi = hi.max(v.log10());
        }
        if hi - lo < 1e-12 {
            return Axis { lo: lo - 0.5, hi: hi + 0.5 };
        }
        let pad = 0.05 * (hi - lo);
        Axis {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn frac(&self, v: f64) -> f64 {
        (v.log10() - self.lo) / (self.hi - self.lo)
    }

    fn tick(&self, i: usize) -> f64 {
        10f64.powf(self.lo + (self.hi - self.lo) * i as f64 / (TICKS - 1) as f64)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Render the series; every coordinate must be positive.
pub fn render_svg(series: &[Series], x_label: &str, y_label: &str) -> Result<String> {
    if series.is_empty() || series.iter().all(|s| s.points.is_empty()) {
        return Err(Error::InvalidArgument("nothing to plot".into()));
    }
    let all = || series.iter().flat_map(|s| s.points.iter().copied());
    if all().any(|(x, y)| !(x > 0.0 && y > 0.0) || !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidArgument("log-log plot needs positive finite points".into()));
    }
    let xa = Axis::new(all().map(|p| p.0));
    let ya = Axis::new(all().map(|p| p.1));
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let px = |x: f64| LEFT + xa.frac(x) * pw;
    let py = |y: f64| TOP + (1.0 - ya.frac(y)) * ph;

    let mut s = String::new();
    let w = &mut s;
    writeln!(w, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(w, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(w, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#).unwrap();
    for i in 0..TICKS {
        let (tx, ty) = (xa.tick(i), ya.tick(i));
        let (gx, gy) = (px(tx), py(ty));
        writeln!(w, r##"<line x1="{gx:.2}" y1="{:.2}" x2="{gx:.2}" y2="{:.2}" stroke="#999"/>"##, TOP + ph, TOP + ph + 5.0).unwrap();
        writeln!(w, r#"<text x="{gx:.2}" y="{:.2}" text-anchor="middle">{tx:.3e}</text>"#, TOP + ph + 18.0).unwrap();
        writeln!(w, r##"<line x1="{:.2}" y1="{gy:.2}" x2="{LEFT}" y2="{gy:.2}" stroke="#999"/>"##, LEFT - 5.0).unwrap();
        writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{ty:.3e}</text>"#, LEFT - 8.0, gy + 4.0).unwrap();
    }
    writeln!(w, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{} (log scale)</text>"#, LEFT + pw / 2.0, HEIGHT - 12.0, escape(x_label)).unwrap();
    writeln!(
        w,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{} (log scale)</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    )
    .unwrap();

    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        for &(x, y) in &ser.points {
            writeln!(w, r#"<circle cx="{:.2}" cy="{:.2}" r="3.5" fill="{color}"/>"#, px(x), py(y)).unwrap();
        }
        let mut xs: Vec<f64> = ser.points.iter().map(|p| p.0).collect();
        xs.sort_by(f64::total_cmp);
        let line: Vec<(f64, f64)> = match ser.fit {
            Some((slope, intercept)) if xs.len() >= 2 => [xs[0], xs[xs.len() - 1]]
                .iter()
                .map(|&x| (x, (intercept + slope * x.ln()).exp()))
                .collect(),
            _ if xs.len() >= 2 => {
                let mut pts = ser.points.clone();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                pts
            }
            _ => Vec::new(),
        };
        if !line.is_empty() {
            let coords: Vec<String> = line.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
            writeln!(w, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, coords.join(" ")).unwrap();
        }
        let ly = TOP + 16.0 + 18.0 * k as f64;
        let lx = LEFT + pw - 170.0;
        writeln!(w, r#"<line x1="{lx:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#, ly - 4.0, lx + 20.0, ly - 4.0).unwrap();
        let label = match ser.fit {
            Some((slope, _)) => format!("{} (slope {slope:.3})", ser.label),
            None => ser.label.clone(),
        };
        writeln!(w, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 26.0, escape(&label)).unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_svg(series: &[Series], x_label: &str, y_label: &str, path: &Path) -> Result<()> {
    std::fs::write(path, render_svg(series, x_label, y_label)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> Vec<Series> {
        vec![
            Series {
                label: "l2_sq".into(),
                points: vec![(128.0, 0.05), (256.0, 0.04), (512.0, 0.031), (1024.0, 0.025)],
                fit: Some((-0.33, -1.4)),
            },
            Series {
                label: "excess <adv>".into(),
                points: vec![(128.0, 0.2), (256.0, 0.15), (512.0, 0.12), (1024.0, 0.1)],
                fit: None,
            },
        ]
    }

    #[test]
    fn one_point_gives_one_marker() {
        let s = render_svg(
            &[Series {
                label: "a".into(),
                points: vec![(10.0, 1.0)],
                fit: None,
            }],
            "n",
            "y",
        )
        .unwrap();
        assert_eq!(s.matches("<circle").count(), 1);
        assert_eq!(s.matches("<polyline").count(), 0);
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
    }

    #[test]
    fn two_series_two_polylines_and_legend() {
        let s = render_svg(&fixture(), "n", "risk").unwrap();
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.contains("l2_sq (slope -0.330)"));
        assert!(s.contains("excess &lt;adv&gt;"));
    }

    #[test]
    fn matches_golden_file() {
        let s = render_svg(&fixture(), "n", "risk").unwrap();
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/golden_plot.svg");
        if std::env::var_os("ADVLAB_BLESS").is_some() {
            std::fs::write(path, &s).unwrap();
        }
        assert_eq!(s, std::fs::read_to_string(path).unwrap());
    }

    #[test]
    fn rejects_empty_and_nonpositive() {
        assert!(render_svg(&[], "x", "y").is_err());
        let bad = Series {
            label: "b".into(),
            points: vec![(1.0, 0.0)],
            fit: None,
        };
        assert!(render_svg(&[bad], "x", "y").is_err());
    }
}
